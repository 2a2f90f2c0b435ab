"""Flat ``section.key = value`` experiment configuration.

One assignment per line, ``#`` starts a comment, list values are comma
separated. Unknown keys are rejected so typos fail loudly. See the README for
the full key list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import ConfigParseError

ALGORITHMS = ("gd", "agd", "pprs")
DEFAULT_GRID = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not finite")
    return value


def _list(conv: Callable[[str], object]) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        return tuple(conv(part.strip()) for part in text.split(",") if part.strip())

    return parse


# key -> (parser, ExperimentConfig attribute)
_KEYS: dict[str, tuple[Callable[[str], object], str]] = {
    "objective.name": (str, "objective"),
    "objective.d": (int, "d"),
    "objective.L": (_float, "L"),
    "objective.lambda": (_float, "lam"),
    "objective.stages": (int, "stages"),
    "objective.radius": (_float, "radius"),
    "objective.beta": (_float, "beta"),
    "objective.seed": (int, "objective_seed"),
    "grid.lr": (_list(_float), "lr"),
    "grid.gamma": (_list(_float), "gamma"),
    "grid.K": (_list(int), "K"),
    "smoothing.gamma": (_list(_float), "gamma"),
    "smoothing.samples": (_list(int), "K"),
    "agd.mu": (_float, "agd_mu"),
    "pprs.mu": (_float, "pprs_mu"),
    "experiment.algorithms": (_list(str), "algorithms"),
    "experiment.deltas": (_list(int), "deltas"),
    "experiment.budget": (int, "budget"),
    "experiment.iterations": (int, "iterations"),
    "experiment.seeds": (_list(int), "seeds"),
    "experiment.tau": (int, "tau"),
    "experiment.out": (str, "out"),
    "clarke.every": (int, "clarke_every"),
    "clarke.radius": (_float, "clarke_radius"),
    "clarke.samples": (int, "clarke_samples"),
}


@dataclass
class ExperimentConfig:
    objective: str = "margin_attack"
    d: int = 64
    L: float = 1.0
    lam: float = 300.0
    stages: int | None = None
    radius: float = 1.0
    beta: float = 1.0
    objective_seed: int = 0
    lr: tuple[float, ...] = DEFAULT_GRID
    gamma: tuple[float, ...] = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
    K: tuple[int, ...] = (2, 10, 100)
    agd_mu: float = 0.99
    pprs_mu: float = 0.0
    algorithms: tuple[str, ...] = ALGORITHMS
    deltas: tuple[int, ...] = ()
    budget: int | None = None
    iterations: int | None = None
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    tau: int = 0
    out: str = "results"
    clarke_every: int = 0
    clarke_radius: float = 0.1
    clarke_samples: int = 64
    source: str = field(default="<defaults>", compare=False)

    def validate(self) -> "ExperimentConfig":
        def bad(msg):
            raise ConfigParseError(f"{self.source}: {msg}")

        for name in ("lr", "gamma", "K", "algorithms", "seeds"):
            if not getattr(self, name):
                bad(f"{name} grid is empty")
        if any(a not in ALGORITHMS for a in self.algorithms):
            bad(f"algorithms must be among {', '.join(ALGORITHMS)}")
        if any(v <= 0 for v in self.lr + self.gamma):
            bad("learning rates and gammas must be positive")
        if any(k < 1 for k in self.K) or any(dl < 1 for dl in self.deltas):
            bad("K and deltas must be >= 1")
        if self.d < 1:
            bad("objective.d must be >= 1")
        if self.budget is not None and self.iterations is not None:
            bad("set experiment.budget or experiment.iterations, not both")
        if (self.budget is not None and self.budget < 1) or (self.iterations is not None and self.iterations < 1):
            bad("budget and iterations must be >= 1")
        if not 0 <= self.agd_mu < 1 or not 0 <= self.pprs_mu < 1:
            bad("momentum must lie in [0, 1)")
        if self.tau < 0 or self.clarke_every < 0:
            bad("tau and clarke.every must be >= 0")
        return self


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cfg = ExperimentConfig(source=source)
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        where = f"{source}:{lineno}"
        if not sep:
            raise ConfigParseError(f"{where}: expected 'section.key = value', got {raw.strip()!r}")
        if key not in _KEYS:
            raise ConfigParseError(f"{where}: unknown key {key!r}")
        conv, attr = _KEYS[key]
        # aliases share their target, so repeating either spelling is a duplicate
        if attr in seen:
            raise ConfigParseError(f"{where}: duplicate key {key!r}")
        seen.add(attr)
        try:
            setattr(cfg, attr, conv(value))
        except ValueError as exc:
            raise ConfigParseError(f"{where}: bad value for {key}: {exc}") from None
    return cfg.validate()


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config(text, source=str(path))
