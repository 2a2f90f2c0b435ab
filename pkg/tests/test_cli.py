import csv
import io
import os

import pytest

from pplab import cli
from pplab.config import ExperimentConfig, parse_config
from pplab.errors import ConfigParseError, EmptyRecords, ObjectiveUnknown, OutputUnwritable

SMALL = """
# tiny linf grid
objective.name = linf
objective.d = 4
objective.radius = 1.0
grid.lr = 1e-2, 1e-3
grid.gamma = 1e-2
grid.K = 2, 4
experiment.deltas = 3, 5
experiment.budget = 120
experiment.seeds = 0, 1
clarke.every = 5
clarke.samples = 8
"""

FULL_GRID = """
objective.name = linf
objective.d = 4
grid.lr = 1e-3, 1e-4, 1e-5, 1e-6, 1e-7
grid.gamma = 1e-3, 1e-4, 1e-5, 1e-6, 1e-7
grid.K = 2, 10, 100
experiment.deltas = 20, 200
experiment.budget = 119600
experiment.seeds = 0
"""


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --------------------------------------------------------------------------
# config


def test_parse_small_config():
    cfg = parse_config(SMALL)
    assert cfg.objective == "linf" and cfg.d == 4
    assert cfg.lr == (1e-2, 1e-3) and cfg.K == (2, 4)
    assert cfg.deltas == (3, 5) and cfg.seeds == (0, 1)
    assert cfg.agd_mu == 0.99 and cfg.lam == 300.0


def test_full_grid_enumeration():
    cfg = parse_config(FULL_GRID)
    for delta in (20, 200):
        specs = cli.enumerate_grid(cfg, delta)
        assert sum(s.algorithm == "pprs" for s in specs) == 5 * 5 * 3
        assert sum(s.algorithm == "gd" for s in specs) == 5
        assert sum(s.algorithm == "agd" for s in specs) == 5
    specs = cli.enumerate_grid(cfg, 200)
    t = {s.K: s.iterations for s in specs if s.algorithm == "pprs"}
    assert t == {2: 119600 // 402, 10: 119600 // 418, 100: 119600 // 598}
    assert {s.iterations for s in specs if s.algorithm == "gd"} == {299}


@pytest.mark.parametrize("text, fragment", [
    ("grid.lr =", "lr grid is empty"),
    ("objective.nme = linf", "unknown key"),
    ("objective.d 4", "expected"),
    ("objective.d = four", "bad value"),
    ("grid.lr = 1e-3\ngrid.lr = 1e-4", "duplicate"),
    ("grid.gamma = 1e-3\nsmoothing.gamma = 1e-4", "duplicate"),
    ("grid.lr = -1", "positive"),
    ("experiment.algorithms = sgd", "algorithms"),
    ("experiment.budget = 10\nexperiment.iterations = 5", "not both"),
    ("agd.mu = 1.0", "momentum"),
    ("grid.gamma = nan", "bad value"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigParseError, match=fragment):
        parse_config(text)


def test_smoothing_aliases():
    cfg = parse_config("smoothing.gamma = 0.5, 0.25\nsmoothing.samples = 3")
    assert cfg.gamma == (0.5, 0.25) and cfg.K == (3,)


def test_config_error_names_file_and_line(tmp_path):
    p = write(tmp_path, "# header\nobjective.d = 4\ngrid.K = two\n")
    with pytest.raises(ConfigParseError, match=r"exp\.cfg:3"):
        cli.load_config(p)


def test_unknown_objective(tmp_path):
    cfg = parse_config("objective.name = alexnet")
    with pytest.raises(ObjectiveUnknown, match="alexnet"):
        cli.run_experiment(cfg, tmp_path)


# --------------------------------------------------------------------------
# run


def test_run_writes_schema_and_is_deterministic(tmp_path):
    cfg = parse_config(SMALL)
    cli.run_experiment(cfg, tmp_path / "a")
    cli.run_experiment(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "records.csv").read_bytes()
    assert a == (tmp_path / "b" / "records.csv").read_bytes()
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.decode())))
    assert tuple(rows[0].keys()) == cli.CSV_COLUMNS
    pprs = [r for r in rows if r["algorithm"] == "pprs"]
    assert any(r["clarke_min_norm"] for r in pprs)
    # 2 deltas x (2 lr x 1 gamma x 2 K x 2 seeds PPRS runs + 2 GD + 2 AGD)
    assert len({r["run_id"] for r in rows}) == 2 * (8 + 2 + 2)
    # simulated time is iteration x per-iteration cost
    for r in rows:
        delta, t = int(r["delta"]), int(r["iteration"])
        cost = 2 * (int(r["K"]) + delta - 1) if r["K"] else 2 * delta
        assert int(r["simulated_time"]) == t * cost
        assert int(r["simulated_time"]) <= 120


def test_seed_override(tmp_path):
    cfg = parse_config(SMALL)
    results, _ = cli.run_experiment(cfg, tmp_path, seeds=[7])
    assert {s.seed for s, _ in results if s.algorithm == "pprs"} == {7}


def test_divergent_runs_are_kept(tmp_path):
    cfg = parse_config("""
objective.name = quadratic
objective.d = 3
grid.lr = 5.0
grid.gamma = 1e-3
grid.K = 1
experiment.algorithms = pprs
experiment.deltas = 2
experiment.iterations = 2000
experiment.seeds = 0
""")
    cli.run_experiment(cfg, tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "records.csv")))
    assert rows and all(r["diverged"] == "1" for r in rows)


def test_summary_tie_break():
    outcomes = [
        cli.Outcome("pprs", 20, 10, 1e-3, 1e-3, 0.5, False),
        cli.Outcome("pprs", 20, 10, 1e-4, 1e-3, 0.5, False),
        cli.Outcome("pprs", 20, 10, 1e-5, 1e-4, 0.5, False),
        cli.Outcome("pprs", 20, 10, 1e-6, 1e-4, 0.7, False),
        cli.Outcome("gd", 20, None, None, 1e-3, 0.9, False),
        cli.Outcome("gd", 20, None, None, 1e-5, 0.9, False),
    ]
    rows = cli.summarize(outcomes)
    best = {r["algorithm"]: r for r in rows if r["selected"] == "best"}
    assert (best["pprs"]["eta"], best["pprs"]["gamma"]) == (1e-4, 1e-5)
    assert best["gd"]["eta"] == 1e-5
    # reordering the input changes nothing
    assert cli.summarize(reversed(outcomes)) == rows


def test_summary_averages_over_seeds():
    rows = cli.summarize([
        cli.Outcome("pprs", 5, 2, 0.1, 0.1, 1.0, False),
        cli.Outcome("pprs", 5, 2, 0.1, 0.1, 3.0, True),
    ])
    assert rows[0]["mean_best_loss"] == 2.0 and rows[0]["runs"] == 2 and rows[0]["diverged_runs"] == 1


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputUnwritable):
        cli.run_experiment(parse_config(SMALL), blocker / "sub")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    cli.atomic_write(tmp_path / "x.csv", "a,b\n")
    cli.atomic_write(tmp_path / "x.csv", "c,d\n")
    assert os.listdir(tmp_path) == ["x.csv"]
    assert (tmp_path / "x.csv").read_text() == "c,d\n"


# --------------------------------------------------------------------------
# command line


def test_main_run_and_plot(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "res"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    printed = capsys.readouterr().out
    assert "pprs" in printed and "gd" in printed
    assert cli.main(["plot", "--in", str(out / "records.csv"), "--axis", "simulated_time"]) == 0
    assert sorted(p.name for p in out.glob("*.svg")) == ["loss_vs_time_delta3.svg", "loss_vs_time_delta5.svg"]
    svg = (out / "loss_vs_time_delta3.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "simulated time" in svg
    assert cli.main(["plot", "--in", str(out / "records.csv"), "--axis", "iterations"]) == 0
    assert "iteration" in (out / "loss_vs_iteration_delta3.svg").read_text()


def test_plot_is_deterministic(tmp_path):
    cfg = parse_config(SMALL)
    cli.run_experiment(cfg, tmp_path)
    a = cli.plot_records(tmp_path / "records.csv", out_dir=tmp_path / "p1")
    b = cli.plot_records(tmp_path / "records.csv", out_dir=tmp_path / "p2")
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_plot_empty_records(tmp_path):
    p = tmp_path / "records.csv"
    p.write_text(",".join(cli.CSV_COLUMNS) + "\n")
    with pytest.raises(EmptyRecords):
        cli.plot_records(p)
    assert cli.main(["plot", "--in", str(p)]) != 0


def test_schedule_subcommand(capsys):
    assert cli.main(["schedule", "--mode", "bubbling", "--delta", "4", "--k", "4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "unit,slot,kind,microbatch"
    assert len(lines) - 1 == 32 and max(int(x.split(",")[1]) for x in lines[1:]) == 14
    assert cli.main(["schedule", "--mode", "nse", "--delta", "3"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) - 1 == 6
    assert cli.main(["schedule", "--mode", "gpipe", "--delta", "2", "--m", "3", "--k", "1"]) == 0
    assert max(int(x.split(",")[1]) for x in capsys.readouterr().out.strip().splitlines()[1:]) == 8


def test_errors_exit_nonzero_with_one_line(tmp_path, capsys):
    assert cli.main(["schedule", "--mode", "zigzag", "--delta", "3"]) != 0
    err = capsys.readouterr().err.strip()
    assert err.startswith("pplab: error:") and "\n" not in err
    bad = write(tmp_path, "grid.lr =\n")
    assert cli.main(["run", "--config", str(bad)]) != 0
    assert capsys.readouterr().err.count("\n") == 1
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) != 0
    unknown = write(tmp_path, "objective.name = resnet\n", "u.cfg")
    assert cli.main(["run", "--config", str(unknown), "--out", str(tmp_path / "o")]) != 0
    assert "resnet" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-m", "pplab", "schedule", "--mode", "nse", "--delta", "2"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.splitlines()[0] == "unit,slot,kind,microbatch"


def test_default_config_grid():
    cfg = ExperimentConfig().validate()
    assert cfg.lr == (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
    assert cfg.gamma == cfg.lr
    assert cfg.K == (2, 10, 100)
    assert cfg.lam == 300.0 and cfg.agd_mu == 0.99 and cfg.pprs_mu == 0.0
