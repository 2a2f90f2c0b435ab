"""PPRS and the naive sequential GD / AGD baselines, timed in pipeline slots."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidEpsilon, NonFiniteGradient
from .pipeline import nse_time
from .smoothing import SmoothingConfig, clarke_min_norm, smoothed_gradient

Array = np.ndarray


def _ceil(x: float) -> int:
    # guard against 18 / 0.3**2 = 200.00000000000003 style rounding
    return math.ceil(round(x, 9))


@dataclass(frozen=True)
class PPRSConfig:
    iterations: int
    samples: int
    eta: float
    gamma: float
    momentum: float | tuple[float, ...] = 0.0
    seed: int = 0
    delta: int | None = None  # pipeline depth; defaults to the graph depth
    tau: int = 0
    clarke_every: int = 0  # 0 disables the Clarke diagnostic
    clarke_radius: float = 0.1
    clarke_samples: int = 64

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not isinstance(self.momentum, (int, float)):
            object.__setattr__(self, "momentum", tuple(float(m) for m in self.momentum))
            if len(self.momentum) < self.iterations:
                raise ValueError("momentum schedule shorter than the iteration count")

    def mu(self, t: int) -> float:
        return float(self.momentum) if isinstance(self.momentum, (int, float)) else self.momentum[t]


@dataclass
class IterationRow:
    iteration: int
    simulated_time: int
    loss: float
    best_loss: float
    grad_est_norm: float = math.nan
    clarke_min_norm: float = math.nan


@dataclass
class RunRecord:
    algorithm: str
    config: dict
    seed: int
    rows: list[IterationRow] = field(default_factory=list)
    final: Array | None = None
    diverged: bool = False

    @property
    def losses(self) -> Array:
        return np.array([r.loss for r in self.rows])

    @property
    def times(self) -> Array:
        return np.array([r.simulated_time for r in self.rows])

    @property
    def final_loss(self) -> float:
        return self.rows[-1].loss

    @property
    def best_loss(self) -> float:
        return self.rows[-1].best_loss

    def clarke_history(self) -> list[tuple[int, float]]:
        return [(r.simulated_time, r.clarke_min_norm) for r in self.rows if not math.isnan(r.clarke_min_norm)]


class _Recorder:
    def __init__(self, record: RunRecord):
        self.record = record
        self.best = math.inf

    def add(self, t: int, time: int, loss: float, grad_norm: float = math.nan, clarke: float = math.nan) -> bool:
        """Append a row; returns False (and flags divergence) on a non-finite loss."""
        if not math.isfinite(loss):
            self.record.diverged = True
            return False
        self.best = min(self.best, loss)
        self.record.rows.append(IterationRow(t, time, loss, self.best, grad_norm, clarke))
        return True


def lambda_sequence(T: int) -> tuple[Array, Array]:
    """lambda_0..lambda_T and the momentum coefficients mu_0..mu_{T-1}.

    lambda_0 = 0 and lambda_t = (1 + sqrt(1 + 4 lambda_{t-1}^2)) / 2. The
    momentum is read one index later, mu_t = (lambda_{t+1} - 1) / lambda_{t+2},
    so mu_0 = 0 rather than -1.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    lam = np.zeros(T + 2)
    for t in range(1, T + 2):
        lam[t] = (1.0 + math.sqrt(1.0 + 4.0 * lam[t - 1] ** 2)) / 2.0
    mu = (lam[1 : T + 1] - 1.0) / lam[2 : T + 2]
    return lam[: T + 1], mu


def theorem3_params(L: float, R: float, d: int, T: int, seed: int = 0) -> PPRSConfig:
    """Convex non-smooth schedule: K = ceil((T+1)/sqrt d), eta = R d^-1/4 / (L (T+1)).

    gamma is set to R d^-1/4 / (T+1) so that the smoothing gap gamma L sqrt(d)
    is of the same order as the optimization error term.
    """
    if min(L, R) <= 0 or d < 1 or T < 1:
        raise ValueError("need L, R > 0, d >= 1, T >= 1")
    return PPRSConfig(
        iterations=T,
        samples=_ceil((T + 1) / math.sqrt(d)),
        eta=R * d ** -0.25 / (L * (T + 1)),
        gamma=R * d ** -0.25 / (T + 1),
        momentum=tuple(lambda_sequence(T)[1]),
        seed=seed,
    )


def theorem3_error_bound(L: float, R: float, d: int, T: int, K: int) -> float:
    return 3 * L * R * d ** 0.25 / (T + 1) + L * R * d ** -0.25 / (2 * K)


def theorem4_params(L: float, D: float, d: int, r: float, epsilon: float, seed: int = 0) -> PPRSConfig:
    """Non-convex schedule reaching a Clarke r-stationary point of norm epsilon."""
    if min(L, r) <= 0 or D < 0 or d < 1:
        raise ValueError("need L, r > 0, D >= 0, d >= 1")
    if not 0 < epsilon < 3 * L:
        raise InvalidEpsilon(f"epsilon must lie in (0, 3L) = (0, {3 * L}), got {epsilon}")
    gamma = r / math.sqrt(4 * math.log(3 * L / epsilon) + 2 * math.log(2 * math.e) * d)
    return PPRSConfig(
        iterations=_ceil(36 * L * (D + 2 * gamma * L * math.sqrt(d)) / (gamma * epsilon**2)),
        samples=_ceil(18 * L**2 / epsilon**2),
        eta=gamma / L,
        gamma=gamma,
        momentum=0.0,
        seed=seed,
    )


def _config_echo(config: PPRSConfig) -> dict:
    out = asdict(config)
    if not isinstance(config.momentum, (int, float)):
        out["momentum"] = "schedule"
    return out


def pprs_run(objective, config: PPRSConfig) -> RunRecord:
    """Accelerated descent on the Gaussian smoothing of ``objective``.

    Each iteration pipelines K perturbed gradients (2(K + depth - 1) slots),
    steps y = x - eta G and extrapolates x = (1 + mu) y - mu y_prev.
    Returns y_T as ``record.final``.
    """
    delta = config.delta if config.delta is not None else objective.depth
    smoothing = SmoothingConfig(config.gamma, config.samples, config.seed)
    record = RunRecord("pprs", _config_echo(config), config.seed)
    rec = _Recorder(record)

    def clarke(point, t):
        if config.clarke_every and t % config.clarke_every == 0:
            est = clarke_min_norm(
                objective, point, config.clarke_radius, config.clarke_samples, seed=(config.seed, t)
            )
            return est.min_norm
        return math.nan

    x = objective.initial_point
    y = x.copy()
    now = 0
    rec.add(0, now, objective.value(y), clarke=clarke(y, 0))
    for t in range(config.iterations):
        try:
            g, elapsed = smoothed_gradient(objective, x, smoothing, pipeline=delta, iteration=t, tau=config.tau)
        except NonFiniteGradient:
            record.diverged = True
            break
        y_next = x - config.eta * g
        mu = config.mu(t)
        x = (1.0 + mu) * y_next - mu * y
        y = y_next
        now += elapsed
        if not rec.add(t + 1, now, objective.value(y), float(np.linalg.norm(g)), clarke(y, t + 1)):
            break
    record.final = y
    return record


def gd_run(objective, eta: float, T: int, delta: int | None = None, theta0: Array | None = None, tau: int = 0) -> RunRecord:
    """Subgradient descent, one sequential gradient (2 * depth slots) per step."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if T < 1:
        raise ValueError("T must be >= 1")
    delta = delta if delta is not None else objective.depth
    cost = nse_time(delta, tau)
    record = RunRecord("gd", {"eta": eta, "iterations": T, "delta": delta, "tau": tau}, 0)
    rec = _Recorder(record)
    theta = objective.initial_point if theta0 is None else np.asarray(theta0, dtype=np.float64).copy()
    loss, g = objective.value_and_gradient(theta)
    rec.add(0, 0, loss)
    for t in range(T):
        theta = theta - eta * g
        loss, g_next = objective.value_and_gradient(theta)
        if not rec.add(t + 1, (t + 1) * cost, loss, float(np.linalg.norm(g))):
            break
        g = g_next
    record.final = theta
    return record


def agd_run(
    objective,
    eta: float,
    mu: float | Sequence[float],
    T: int,
    delta: int | None = None,
    theta0: Array | None = None,
    tau: int = 0,
) -> RunRecord:
    """Nesterov's method with constant (or scheduled) momentum, sequential gradients."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if T < 1:
        raise ValueError("T must be >= 1")
    if isinstance(mu, (int, float)):
        if not 0 <= mu < 1:
            raise ValueError("mu must lie in [0, 1)")
        mus = [float(mu)] * T
        mu_echo = float(mu)
    else:
        mus = [float(m) for m in mu]
        if len(mus) < T:
            raise ValueError("momentum schedule shorter than T")
        mu_echo = "schedule"
    delta = delta if delta is not None else objective.depth
    cost = nse_time(delta, tau)
    record = RunRecord("agd", {"eta": eta, "mu": mu_echo, "iterations": T, "delta": delta, "tau": tau}, 0)
    rec = _Recorder(record)
    x = objective.initial_point if theta0 is None else np.asarray(theta0, dtype=np.float64).copy()
    y = x.copy()
    rec.add(0, 0, objective.value(y))
    for t in range(T):
        g = objective.gradient(x)
        if not np.all(np.isfinite(g)):
            record.diverged = True
            break
        y_next = x - eta * g
        x = (1.0 + mus[t]) * y_next - mus[t] * y
        y = y_next
        if not rec.add(t + 1, (t + 1) * cost, objective.value(y), float(np.linalg.norm(g))):
            break
    record.final = y
    return record
