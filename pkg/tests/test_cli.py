import numpy as np
import pytest

from upside import cli
from upside.config import ExperimentConfig, parse_seeds, parse_text, parse_value
from upside.algo import ConfigError
from upside.model import load_model, save_model
from upside.records import read_csv

FAST_CFG = """\
# quick wall-free run
env.maze = wallfree
algo.hidden = 32
algo.k_steps = 3000
algo.k_discr = 60
algo.k_pol = 10
algo.J = 4
algo.k_initial = 300
algo.t_max = 8_000
run.seeds = 0
eval.finetune_budget = 400
eval.goal_buckets = 2
eval.goals_per_bucket = 1
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "fast.cfg"
    p.write_text(FAST_CFG)
    return p


def trailer_ok(path):
    lines = path.read_text().splitlines()
    return lines[-1].startswith("# config_hash=") and "," in lines[0]


def test_parse_values():
    assert parse_value("3") == 3 and parse_value("1_000") == 1000
    assert parse_value("0.5") == 0.5 and parse_value("yes") is True and parse_value("none") is None
    assert parse_value("bottleneck") == "bottleneck"
    assert parse_seeds("0, 1,2") == [0, 1, 2]
    with pytest.raises(ConfigError):
        parse_seeds("a,b")
    assert parse_text("a.b = 1 # note\n\n# c\n")["a"] == {"b": 1}
    with pytest.raises(ConfigError):
        parse_text("novalue")
    with pytest.raises(ConfigError):
        parse_text("nosection = 1")


def test_config_rejects_unknown_keys(tmp_path):
    for bad in ("algo.nope = 1", "env.size = 3", "run.what = 1", "eval.x = 1", "misc.a = 1"):
        p = tmp_path / "bad.cfg"
        p.write_text(bad)
        with pytest.raises(ConfigError):
            ExperimentConfig.load(p)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.cfg")
    cfg = ExperimentConfig.from_sections({"env": {"maze": "nowhere"}})
    with pytest.raises(ConfigError):
        cfg.validate()


def test_usage_errors_exit_2(tmp_path, capsys):
    assert cli.main([]) == 2
    assert cli.main(["pretrain", "--variant", "unknown", "--out", str(tmp_path)]) == 2
    assert cli.main(["pretrain", "--maze", "atlantis", "--out", str(tmp_path)]) == 2
    assert cli.main(["eval", str(tmp_path / "none.npz"), "--out", str(tmp_path)]) == 2
    assert cli.main(["render", str(tmp_path), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_runtime_failure_exits_3(tmp_path):
    bad = tmp_path / "model.npz"
    bad.write_bytes(b"not a model")
    assert cli.main(["eval", str(bad), "--out", str(tmp_path)]) == 3


def test_theory_command(tmp_path, capsys):
    assert cli.main(["theory", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "0.918 -> 1.000" in text and "counterexamples: 0" in text
    rows = read_csv(tmp_path / "theory.csv")
    assert len(rows) == 16 and trailer_ok(tmp_path / "theory.csv")


def test_goals_command(tmp_path, monkeypatch):
    monkeypatch.setenv("UPSIDE_OUT", str(tmp_path / "env_out"))
    assert cli.main(["goals", "--maze", "bottleneck", "--out", str(tmp_path / "ignored")]) == 0
    rows = read_csv(tmp_path / "env_out" / "goals_bottleneck.csv")
    assert len(rows) == 42
    assert (tmp_path / "env_out" / "goals_bottleneck.svg").exists()
    assert not (tmp_path / "ignored").exists()


def test_pretrain_eval_render(tmp_path, cfg_file, capsys):
    out = tmp_path / "runs"
    assert cli.main(["pretrain", "--config", str(cfg_file), "--out", str(out)]) == 0
    d = out / "upside" / "seed0"
    for name in ("model.npz", "events.csv", "rollouts.csv", "curve.svg"):
        assert (d / name).exists(), name
    assert not (d / "events.partial.csv").exists()
    assert trailer_ok(d / "events.csv") and trailer_ok(d / "rollouts.csv")
    assert (out / "upside" / "selected.txt").read_text().startswith("seed=0")
    first = (d / "events.csv").read_bytes()

    # a second invocation skips the finished seed; --fresh reproduces it byte for byte
    mtime = (d / "model.npz").stat().st_mtime_ns
    assert cli.main(["pretrain", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert (d / "model.npz").stat().st_mtime_ns == mtime
    assert cli.main(["pretrain", "--config", str(cfg_file), "--out", str(out), "--fresh"]) == 0
    assert (d / "events.csv").read_bytes() == first

    ev = tmp_path / "eval"
    assert cli.main(["eval", str(out), "--config", str(cfg_file), "--out", str(ev), "--mode", "all"]) == 0
    cov = read_csv(ev / "coverage.csv")
    assert len(cov) == 1 and int(cov[0]["buckets"]) >= 1
    mi = read_csv(ev / "mi.csv")
    assert len(mi) == 1 and mi[0]["base"] == "e"
    goals = read_csv(ev / "goals.csv")
    assert len(goals) == 2
    assert all(0.0 <= float(r["value"]) <= 1.0 for r in goals)
    for name in ("coverage.csv", "mi.csv", "goals.csv"):
        assert trailer_ok(ev / name)
    summary = (ev / "summary.txt").read_text()
    assert "buckets:" in summary and "(±" in summary
    assert (ev / "coverage_upside_seed0.svg").exists()

    rd = tmp_path / "render"
    assert cli.main(["render", str(d / "model.npz"), "--out", str(rd)]) == 0
    pol = rd / "policies_upside_seed0.svg"
    tree = rd / "tree_upside_seed0.svg"
    assert pol.read_text().startswith("<?xml") and tree.exists()
    # colours and element ids are stable across re-renders
    first_svg = pol.read_bytes()
    assert cli.main(["render", str(d / "model.npz"), "--out", str(rd)]) == 0
    assert pol.read_bytes() == first_svg


def test_multiple_seeds_give_independent_records(tmp_path, cfg_file):
    out = tmp_path / "runs"
    assert cli.main(["pretrain", "--config", str(cfg_file), "--out", str(out), "--seed", "0,1",
                     "--budget", "4000"]) == 0
    a = (out / "upside" / "seed0" / "events.csv").read_text()
    b = (out / "upside" / "seed1" / "events.csv").read_text()
    assert a != b
    assert load_model(out / "upside" / "seed1" / "model.npz").seed == 1


def test_root_only_coverage_row(tmp_path, root_model):
    path = save_model(root_model, tmp_path / "root" / "model.npz")
    assert cli.main(["eval", str(path), "--out", str(tmp_path), "--mode", "coverage"]) == 0
    rows = read_csv(tmp_path / "coverage.csv")
    assert len(rows) == 1 and rows[0]["buckets"] == "1"
    assert np.isfinite(float(rows[0]["buckets_with_diffusing"]))
