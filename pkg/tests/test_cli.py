import csv
import json

import numpy as np
import pytest

from qdsg.algorithm import BetaClampWarning
from qdsg.cli import CAP_SENTINEL, cmd_graph, cmd_run, cmd_sweep_bits, main
from qdsg.config import ExperimentConfig, ScheduleSpec, config_from_dict, parse_config
from qdsg.errors import ConfigError
from qdsg.graph import read_adjacency
from qdsg.metrics import CSV_COLUMNS
from qdsg.problems import ProblemInstance, RegressionData, make_objective, solve_reference
from qdsg.quantizer import BoxDomain

SMALL = dict(n=6, d=2, radius=0.8, rounds=40, ref_iterations=5000, seeds=[0])


def write_config(tmp_path, **doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_empty_config_gives_defaults(tmp_path):
    cfg = parse_config(write_config(tmp_path))
    assert (cfg.n, cfg.d, cfg.radius, cfg.rounds) == (50, 10, 0.4, 10_000)
    assert cfg.bits == (8,) and cfg.seeds == (0,)
    assert cfg.schedule == ScheduleSpec("convex_rate")
    assert cfg.m == 12 and cfg.round_cap == 200_000


@pytest.mark.parametrize("doc, field", [
    ({"schedule": {"kind": "asymptotic", "s": 0.5}}, "schedule.s"),
    ({"bits": 0}, "bits"),
    ({"bits": []}, "bits"),
    ({"n": 1}, "n"),
    ({"rounds": 0}, "rounds"),
    ({"seeds": []}, "seeds"),
    ({"loss_kind": "huber"}, "loss_kind"),
    ({"radius": -1}, "radius"),
    ({"mode": "gossip"}, "mode"),
    ({"colour": 3}, "colour"),
])
def test_invalid_values_named(tmp_path, doc, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(write_config(tmp_path, **doc))


def test_malformed_and_missing(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(bad)
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.json")


def test_schedule_forms():
    assert config_from_dict({"schedule": "asymptotic"}).schedule.kind == "asymptotic"
    sched_cfg = config_from_dict({"schedule": {"kind": "strongly_convex", "a": 2.0}}).schedule
    with pytest.warns(BetaClampWarning):
        sched = sched_cfg.resolve(mu=1.0, sigma2=0.5)
    assert sched.a == 2.0 and sched.b == pytest.approx(2.0)
    assert config_from_dict({"bits": 6}).bits == (6,)


def test_graph_report(tmp_path, capsys):
    cfg = ExperimentConfig(n=2, radius=2.0)
    report = cmd_graph(cfg, tmp_path / "g.txt")
    assert report["edges"] == 1 and report["sigma2"] == pytest.approx(0.0, abs=1e-15)
    assert report["spectral_gap"] == pytest.approx(1.0)
    out = capsys.readouterr().out
    assert "sigma2:" in out and "attempts: 1" in out


def test_graph_repeatable(tmp_path):
    cfg = ExperimentConfig(n=50, radius=0.4, instance_seed=3)
    cmd_graph(cfg, tmp_path / "a.txt")
    cmd_graph(cfg, tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert read_adjacency(tmp_path / "a.txt").n == 50


def test_exit_codes(tmp_path, capsys):
    sparse = write_config(tmp_path, n=50, radius=0.01, max_attempts=5)
    assert main(["graph", "--config", str(sparse), "--out", str(tmp_path / "g.txt")]) == 3
    assert "5 attempts" in capsys.readouterr().err
    bad = write_config(tmp_path, bits=0)
    assert main(["run", "--config", str(bad)]) == 1
    ok = write_config(tmp_path, n=3, d=1, radius=2.0)
    assert main(["graph", "--config", str(ok), "--out", str(tmp_path / "g.txt")]) == 0


def test_solve_ref_writes_problem(tmp_path, capsys):
    cfg = write_config(tmp_path, n=3, d=2, radius=2.0, ref_iterations=20_000)
    for out in ("p1", "p2"):
        assert main(["solve-ref", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    ref1 = json.loads((tmp_path / "p1" / "reference.json").read_text())
    ref2 = json.loads((tmp_path / "p2" / "reference.json").read_text())
    assert ref1["f_star"] == ref2["f_star"]
    assert (tmp_path / "p1" / "problem.json").exists()
    assert "f_star:" in capsys.readouterr().out


def test_run_csv_schema(tmp_path):
    cfg = config_from_dict(dict(SMALL, rounds=1))
    rows = read_rows(cmd_run(cfg, tmp_path / "r.csv"))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + 2  # checkpoints 0 and 1
    assert all(len(r) == len(CSV_COLUMNS) for r in rows)
    assert all(r[-1] != "" for r in rows[1:])  # bound column filled for convex_rate
    meta = json.loads((tmp_path / "r.csv.meta.json").read_text())
    assert meta["schedule"] == {"kind": "convex_rate"} and meta["beta_clamped"] is False


def test_run_two_seeds_and_bits(tmp_path):
    cfg = config_from_dict(dict(SMALL, seeds=[5, 2], bits=[4, 8]))
    rows = read_rows(cmd_run(cfg, tmp_path / "r.csv"))[1:]
    order = []
    for r in rows:
        key = (r[3], r[1])
        if key not in order:
            order.append(key)
    assert order == [("4", "5"), ("4", "2"), ("8", "5"), ("8", "2")]
    first = [r[4:] for r in rows if r[1] == "5" and r[3] == "4"]
    second = [r[4:] for r in rows if r[1] == "2" and r[3] == "4"]
    assert len(first) == len(second) and first != second


def test_run_dsg_mode(tmp_path):
    cfg_path = write_config(tmp_path, **SMALL)
    out = tmp_path / "d.csv"
    assert main(["run", "--config", str(cfg_path), "--mode", "dsg", "--seed", "7", "--out", str(out)]) == 0
    rows = read_rows(out)[1:]
    assert {r[2] for r in rows} == {"dsg"} and {r[1] for r in rows} == {"7"}
    assert all(r[6] == "" and r[-1] == "" for r in rows)


def test_run_deterministic_across_threads(tmp_path):
    cfg = config_from_dict(dict(SMALL, seeds=[0, 1, 2], bits=[3, 6]))
    a = cmd_run(cfg, tmp_path / "a.csv", workers=1).read_bytes()
    b = cmd_run(cfg, tmp_path / "b.csv", workers=3).read_bytes()
    assert a == b


def test_run_gap_decreases_on_default_instance(tmp_path):
    cfg = ExperimentConfig(ref_iterations=100_000, checkpoints=(0, 10_000))
    rows = read_rows(cmd_run(cfg, tmp_path / "r.csv"))[1:]
    gap0, gap_final = float(rows[0][9]), float(rows[-1][9])
    assert gap_final <= gap0 / 5


def test_sweep_bits(tmp_path):
    cfg = config_from_dict(dict(SMALL, bits=[16, 32], seeds=[0, 1], schedule="asymptotic",
                                threshold=0.5, round_cap=20_000))
    out = cmd_sweep_bits(cfg, tmp_path / "s.csv")
    rows = read_rows(out)
    assert rows[0] == ["bits", "seed", "iterations_to_threshold"]
    its = {(int(b), int(s)): int(k) for b, s, k in rows[1:]}
    assert list(its) == [(16, 0), (16, 1), (32, 0), (32, 1)]
    for s in (0, 1):
        assert its[(16, s)] > 0
        assert abs(its[(16, s)] - its[(32, s)]) <= 0.1 * its[(32, s)]
    meta = json.loads((tmp_path / "s.csv.meta.json").read_text())
    assert meta["criterion"] == "relative" and meta["threshold_rule"].startswith("worst node")


def test_sweep_cap_sentinel(tmp_path):
    cfg = config_from_dict(dict(SMALL, bits=[4], threshold=1e-9, round_cap=30))
    rows = read_rows(cmd_sweep_bits(cfg, tmp_path / "s.csv"))
    assert int(rows[1][2]) == CAP_SENTINEL


def test_sweep_absolute_fallback(tmp_path, monkeypatch):
    # the absolute loss fits the three points on the line b = 0.3 a exactly, so f* = 0
    import qdsg.cli as cli_mod

    original = cli_mod.build_instance

    def exact_instance(cfg, with_reference=True):
        inst = original(cfg, with_reference=False)
        box = BoxDomain.uniform(1, -1, 1, 8)
        objs = [make_objective("absolute", RegressionData(np.array([[a]]), np.array([0.3 * a])), box)
                for a in (0.5, 1.0, 2.0)]
        P = ProblemInstance(objs, box)
        solve_reference(P, 200_000)
        return cli_mod.Instance(inst.network, inst.mixing, P)

    monkeypatch.setattr(cli_mod, "build_instance", exact_instance)
    cfg = config_from_dict(dict(SMALL, n=3, d=1, radius=2.0, loss_kind="absolute", bits=[8],
                                abs_epsilon=0.5, round_cap=5000))
    out = cmd_sweep_bits(cfg, tmp_path / "s.csv")
    meta = json.loads((tmp_path / "s.csv.meta.json").read_text())
    assert meta["criterion"] == "absolute" and meta["threshold"] == 0.5
    assert int(read_rows(out)[1][2]) >= 0
