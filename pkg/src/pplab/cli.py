"""Experiment runner: grids of GD / AGD / PPRS runs, schedule export and plots.

    pplab run --config exp.cfg [--out DIR] [--seeds 0,1,2]
    pplab schedule --mode bubbling --delta 4 --k 4
    pplab plot --in DIR/records.csv --axis simulated_time
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import objectives as objs
from .config import ExperimentConfig, load_config
from .errors import EmptyRecords, ObjectiveUnknown, OutputUnwritable, PPLabError
from .optimizers import PPRSConfig, RunRecord, agd_run, gd_run, pprs_run
from .pipeline import bubbling_time, make_schedule, nse_time, schedule_csv

CSV_COLUMNS = (
    "run_id", "algorithm", "delta", "K", "gamma", "eta", "seed", "iteration",
    "simulated_time", "loss", "best_loss", "grad_est_norm", "clarke_min_norm", "diverged",
)
SUMMARY_COLUMNS = ("algorithm", "delta", "K", "gamma", "eta", "mean_best_loss", "runs", "diverged_runs", "selected")


# --------------------------------------------------------------------------
# objectives by name


def _margin_attack(cfg: ExperimentConfig):
    return objs.desk_attack_objective(cfg.d, lam=cfg.lam, seed=cfg.objective_seed)


OBJECTIVES = {
    "margin_attack": _margin_attack,
    "linf": lambda cfg: objs.linf_objective(cfg.d, cfg.L, cfg.radius),
    "quadratic": lambda cfg: objs.quadratic_objective(cfg.d, cfg.beta),
    "fig1": lambda cfg: objs.fig1_objective(),
}


def build_objective(cfg: ExperimentConfig):
    try:
        factory = OBJECTIVES[cfg.objective]
    except KeyError:
        raise ObjectiveUnknown(
            f"unknown objective {cfg.objective!r} (known: {', '.join(sorted(OBJECTIVES))})"
        ) from None
    return factory(cfg)


# --------------------------------------------------------------------------
# grid enumeration


@dataclass(frozen=True)
class RunSpec:
    algorithm: str
    delta: int
    eta: float
    iterations: int
    K: int | None = None
    gamma: float | None = None
    seed: int | None = None  # None for the deterministic baselines

    @property
    def run_id(self) -> str:
        parts = [self.algorithm, f"d{self.delta}"]
        if self.K is not None:
            parts.append(f"K{self.K}")
        parts.append(f"lr{self.eta:g}")
        if self.gamma is not None:
            parts.append(f"g{self.gamma:g}")
        if self.seed is not None:
            parts.append(f"s{self.seed}")
        return "-".join(parts)


def _iterations(cfg: ExperimentConfig, cost: int) -> int:
    if cfg.budget is None:
        return cfg.iterations or 100
    t = cfg.budget // cost
    if t < 1:
        raise PPLabError(f"budget {cfg.budget} is below one iteration ({cost} slots)")
    return t


def enumerate_grid(cfg: ExperimentConfig, delta: int, seeds: Sequence[int] | None = None) -> list[RunSpec]:
    """All runs for one depth: lr x gamma x K x seeds for PPRS, lr for GD and AGD.

    GD and AGD consume no randomness, so each learning rate runs once.
    """
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    specs = []
    for algo in cfg.algorithms:
        if algo == "pprs":
            for k in cfg.K:
                t = _iterations(cfg, bubbling_time(delta, k, cfg.tau))
                for lr in cfg.lr:
                    for gamma in cfg.gamma:
                        specs.extend(RunSpec(algo, delta, lr, t, k, gamma, s) for s in seeds)
        else:
            t = _iterations(cfg, nse_time(delta, cfg.tau))
            specs.extend(RunSpec(algo, delta, lr, t) for lr in cfg.lr)
    return specs


def execute(spec: RunSpec, objective, cfg: ExperimentConfig) -> RunRecord:
    if spec.algorithm == "gd":
        return gd_run(objective, spec.eta, spec.iterations, delta=spec.delta, tau=cfg.tau)
    if spec.algorithm == "agd":
        return agd_run(objective, spec.eta, cfg.agd_mu, spec.iterations, delta=spec.delta, tau=cfg.tau)
    config = PPRSConfig(
        iterations=spec.iterations,
        samples=spec.K,
        eta=spec.eta,
        gamma=spec.gamma,
        momentum=cfg.pprs_mu,
        seed=spec.seed,
        delta=spec.delta,
        tau=cfg.tau,
        clarke_every=cfg.clarke_every,
        clarke_radius=cfg.clarke_radius,
        clarke_samples=cfg.clarke_samples,
    )
    return pprs_run(objective, config)


# --------------------------------------------------------------------------
# CSV and summary


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_csv(results: Iterable[tuple[RunSpec, RunRecord]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for spec, rec in results:
        flag = int(rec.diverged)
        for row in rec.rows:
            clarke = None if math.isnan(row.clarke_min_norm) else row.clarke_min_norm
            w.writerow([_cell(v) for v in (
                spec.run_id, spec.algorithm, spec.delta, spec.K, spec.gamma, spec.eta, spec.seed,
                row.iteration, row.simulated_time, float(row.loss), float(row.best_loss),
                row.grad_est_norm, clarke, flag,
            )])
    return buf.getvalue()


@dataclass(frozen=True)
class Outcome:
    """What the summary needs from one run."""

    algorithm: str
    delta: int
    K: int | None
    gamma: float | None
    eta: float
    best_loss: float
    diverged: bool


def summarize(outcomes: Iterable[Outcome]) -> list[dict]:
    """Mean best-iterate loss per grid point; flags the best point per (algorithm, delta).

    PPRS is additionally reported per K. Ties go to the smaller learning rate,
    then the smaller gamma.
    """
    groups: dict[tuple, list[Outcome]] = defaultdict(list)
    for o in outcomes:
        groups[(o.algorithm, o.delta, o.K, o.gamma, o.eta)].append(o)
    rows = []
    for (algo, delta, k, gamma, eta), runs in groups.items():
        rows.append({
            "algorithm": algo, "delta": delta, "K": k, "gamma": gamma, "eta": eta,
            "mean_best_loss": sum(r.best_loss for r in runs) / len(runs),
            "runs": len(runs), "diverged_runs": sum(r.diverged for r in runs), "selected": "",
        })

    def rank(row):
        return (row["mean_best_loss"], row["eta"], row["gamma"] if row["gamma"] is not None else 0.0)

    rows.sort(key=lambda r: (r["algorithm"], r["delta"], -1 if r["K"] is None else r["K"], *rank(r)))
    best_by_algo: dict[tuple, dict] = {}
    best_by_k: dict[tuple, dict] = {}
    for row in rows:
        a = (row["algorithm"], row["delta"])
        if a not in best_by_algo or rank(row) < rank(best_by_algo[a]):
            best_by_algo[a] = row
        if row["K"] is not None:
            b = (*a, row["K"])
            if b not in best_by_k or rank(row) < rank(best_by_k[b]):
                best_by_k[b] = row
    for row in best_by_k.values():
        row["selected"] = "best_for_K"
    for row in best_by_algo.values():
        row["selected"] = "best"
    return rows


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def atomic_write(path: Path, data: str | bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OutputUnwritable(f"cannot write {path}: {exc.strerror or exc}") from None


# --------------------------------------------------------------------------
# run


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    seeds: Sequence[int] | None = None,
    log=None,
) -> tuple[list[tuple[RunSpec, RunRecord]], list[dict]]:
    """Execute every grid point for every depth and write records.csv and summary.csv."""
    out = Path(out_dir if out_dir is not None else cfg.out)
    base = build_objective(cfg)
    deltas = cfg.deltas or (cfg.stages or base.depth,)
    # fail before the expensive part if the output cannot be created
    atomic_write(out / "records.csv", ",".join(CSV_COLUMNS) + "\n")
    results = []
    for delta in deltas:
        objective = base if base.depth == delta else objs.chain_partition(base, delta)
        specs = enumerate_grid(cfg, delta, seeds)
        for n, spec in enumerate(specs, start=1):
            rec = execute(spec, objective, cfg)
            results.append((spec, rec))
            if log:
                log(f"[{n}/{len(specs)}] {spec.run_id}: best {rec.best_loss:.6g}{' (diverged)' if rec.diverged else ''}")
    rows = summarize(
        Outcome(s.algorithm, s.delta, s.K, s.gamma, s.eta, r.best_loss, r.diverged) for s, r in results
    )
    atomic_write(out / "records.csv", records_csv(results))
    atomic_write(out / "summary.csv", summary_csv(rows))
    return results, rows


# --------------------------------------------------------------------------
# plots


def read_records(path: str | Path) -> dict[str, dict]:
    """records.csv -> run_id -> {spec fields, 'rows': [(iteration, time, loss)]}."""
    runs: dict[str, dict] = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise EmptyRecords(f"cannot read {path}: {exc.strerror or exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise EmptyRecords(f"{path} is not a records file")
        for row in reader:
            run = runs.setdefault(row["run_id"], {
                "algorithm": row["algorithm"],
                "delta": int(row["delta"]),
                "K": int(row["K"]) if row["K"] else None,
                "gamma": float(row["gamma"]) if row["gamma"] else None,
                "eta": float(row["eta"]),
                "seed": int(row["seed"]) if row["seed"] else None,
                "diverged": row["diverged"] == "1",
                "rows": [],
            })
            run["rows"].append((int(row["iteration"]), int(row["simulated_time"]),
                                float(row["loss"]), float(row["best_loss"])))
    return runs


def plot_records(path: str | Path, axis: str = "simulated_time", out_dir: str | Path | None = None) -> list[Path]:
    """One SVG per depth with the best grid point of GD, AGD and PPRS (per K).

    Thin lines are individual seeds, thick lines their mean.
    """
    if axis not in ("simulated_time", "iterations"):
        raise PPLabError(f"axis must be 'simulated_time' or 'iterations', got {axis!r}")
    runs = read_records(path)
    if not runs:
        raise EmptyRecords(f"{path} holds no runs")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "pplab"

    rows = summarize(
        Outcome(r["algorithm"], r["delta"], r["K"], r["gamma"], r["eta"], r["rows"][-1][3], r["diverged"])
        for r in runs.values()
    )
    picked = [r for r in rows if r["selected"] == "best" and r["algorithm"] != "pprs"]
    picked += [r for r in rows if r["selected"] in ("best", "best_for_K") and r["algorithm"] == "pprs"]
    out = Path(out_dir) if out_dir is not None else Path(path).parent
    tag = "time" if axis == "simulated_time" else "iteration"
    written = []
    for delta in sorted({r["delta"] for r in picked}):
        fig, ax = plt.subplots(figsize=(6, 4))
        colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        col = 0 if axis == "iterations" else 1
        for i, choice in enumerate(r for r in picked if r["delta"] == delta):
            color = colors[i % len(colors)]
            members = [
                run for run in runs.values()
                if (run["algorithm"], run["delta"], run["K"], run["gamma"], run["eta"])
                == (choice["algorithm"], delta, choice["K"], choice["gamma"], choice["eta"])
            ]
            label = choice["algorithm"].upper()
            if choice["K"] is not None:
                label += f" K={choice['K']} lr={choice['eta']:g} gamma={choice['gamma']:g}"
            else:
                label += f" lr={choice['eta']:g}"
            if len(members) > 1:
                for m in members:
                    ax.plot([r[col] for r in m["rows"]], [r[2] for r in m["rows"]],
                            lw=0.5, alpha=0.35, color=color)
            # diverged seeds stop early; average over the common prefix
            n = min(len(m["rows"]) for m in members)
            xs = [r[col] for r in members[0]["rows"][:n]]
            ys = [sum(m["rows"][j][2] for m in members) / len(members) for j in range(n)]
            ax.plot(xs, ys, lw=1.8, label=label, color=color)
        ax.set_xlabel("iteration" if axis == "iterations" else "simulated time (slots)")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.set_title(f"depth {delta}")
        ax.legend(fontsize=7)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
        target = out / f"loss_vs_{tag}_delta{delta}.svg"
        atomic_write(target, buf.getvalue())
        written.append(target)
    return written


# --------------------------------------------------------------------------
# entry point


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pplab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides experiment.out)")
    p.add_argument("--seeds", type=_seed_list, help="comma separated seeds (overrides experiment.seeds)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("schedule", help="export a pipeline schedule as CSV")
    p.add_argument("--mode", required=True)
    p.add_argument("--delta", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--tau", type=int, default=0)
    p.add_argument("--out", help="write to this file instead of stdout")

    p = sub.add_parser("plot", help="plot loss curves from records.csv")
    p.add_argument("--in", dest="path", required=True)
    p.add_argument("--axis", choices=("simulated_time", "iterations"), default="simulated_time")
    p.add_argument("--out", help="directory for the SVG files (default: next to the CSV)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
            _, rows = run_experiment(cfg, args.out, args.seeds, log=log)
            for row in rows:
                if row["selected"] == "best":
                    k = "" if row["K"] is None else f" K={row['K']} gamma={row['gamma']:g}"
                    print(f"{row['algorithm']:>4} delta={row['delta']}{k} lr={row['eta']:g} "
                          f"mean best loss {row['mean_best_loss']:.6g}")
        elif args.command == "schedule":
            if min(args.delta, args.k, args.m) < 1 or args.tau < 0:
                raise PPLabError("delta, k and m must be >= 1 and tau >= 0")
            text = schedule_csv(make_schedule(args.mode, args.delta, args.k, args.m, args.tau))
            if args.out:
                atomic_write(Path(args.out), text)
            else:
                sys.stdout.write(text)
        else:
            for path in plot_records(args.path, args.axis, args.out):
                print(path)
    except (PPLabError, OSError) as exc:
        print(f"pplab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
