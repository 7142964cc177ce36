import copy
import csv
import json

import numpy as np
import pytest

from kband import cli, harness
from kband.harness import (ConfigError, build_replication, run_experiment, run_replication, sweep,
                           validate_config, write_experiment, write_run)

BASE = {
    "environment": {"function": {"type": "synthetic"}, "d": 2, "n_points": 15,
                    "kernel": {"type": "se", "lengthscale": 0.2}, "v": 0.1, "sigma": 0.01},
    "algorithm": {"name": "dpbe", "alpha": 0.7, "C": 1.6},
    "run": {"T": 300, "seeds": [0, 1, 2], "parallelism": 1},
}


def cfg_with(**patch):
    cfg = copy.deepcopy(BASE)
    for path, value in patch.items():
        node = cfg
        *head, last = path.split("__")
        for key in head:
            node = node.setdefault(key, {})
        node[last] = value
    return cfg


def test_defaults_filled():
    cfg = validate_config({"environment": {"function": {"type": "synthetic"}, "kernel": {"type": "se"}},
                           "algorithm": {"name": "dpbe"}, "run": {"T": 10}})
    assert cfg["run"]["seeds"] == list(range(20))
    assert cfg["environment"]["d"] == 3 and cfg["environment"]["n_points"] == 100
    assert cfg["privacy"] == {"model": "none"}


@pytest.mark.parametrize("cfg", [
    cfg_with(extra=1),
    cfg_with(environment__colour="red"),
    cfg_with(algorithm__name="thompson"),
    cfg_with(algorithm__C=1.0),
    cfg_with(run__T=0),
    cfg_with(environment__kernel__nu=1.0),
    cfg_with(algorithm__name="dp_dpbe"),
    cfg_with(privacy={"model": "central", "epsilon": 1.0}),
    cfg_with(privacy={"model": "central", "epsilon": 1.0, "delta": 1e-6}),
    cfg_with(algorithm__name="bpe", run__T=3),
    cfg_with(environment__function={"type": "benchmark"}),
    cfg_with(environment__sigma=0.0, environment__v=0.0),
])
def test_invalid_configs_rejected(cfg):
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_world_depends_on_seed_only():
    a = build_replication(validate_config(BASE), 5)
    b = build_replication(validate_config(cfg_with(algorithm__alpha=0.4)), 5)
    np.testing.assert_array_equal(a.pop.D.points, b.pop.D.points)
    np.testing.assert_array_equal(a.pop.f_values, b.pop.f_values)
    c = build_replication(validate_config(BASE), 6)
    assert not np.array_equal(a.pop.D.points, c.pop.D.points)


def test_single_round_run():
    cfg = validate_config(cfg_with(run__T=1))
    m = run_replication(cfg, 0)
    rep = build_replication(cfg, 0)
    f = rep.pop.f_values
    assert m.T == 1 and len(m.phases) == 1
    assert m.total_regret == pytest.approx(f.max() - f[m.actions[0]])


def _read(path):
    return path.read_bytes()


def test_outputs_bit_identical(tmp_path):
    for name in ("a", "b"):
        write_experiment(run_experiment(BASE), tmp_path / name)
    for rel in ("seed_1/rounds.csv", "seed_1/phases.csv", "aggregate.csv"):
        assert _read(tmp_path / "a" / rel) == _read(tmp_path / "b" / rel)


def test_csv_contents_consistent(tmp_path):
    m = run_replication(validate_config(BASE), 0)
    write_run(m, tmp_path)
    with open(tmp_path / "rounds.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 300
    assert list(rows[0]) == ["round", "action", "inst_regret", "cum_regret"]
    with open(tmp_path / "phases.csv") as fh:
        phases = list(csv.DictReader(fh))
    assert list(phases[0]) == ["phase", "T_l", "U_l", "H_l", "actions", "active", "cost", "sigma_n"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert sum(int(p["cost"]) for p in phases) == summary["total_cost"]
    assert float(rows[-1]["cum_regret"]) == pytest.approx(summary["total_regret"])


def test_aggregates_recomputable(tmp_path):
    res = run_experiment(BASE)
    write_experiment(res, tmp_path)
    agg = json.loads((tmp_path / "aggregate.json").read_text())
    totals = [json.loads((tmp_path / f"seed_{s}" / "summary.json").read_text())["total_regret"] for s in (0, 1, 2)]
    assert agg["mean_total_regret"] == pytest.approx(np.mean(totals))
    mean, std = res.cum_regret_band()
    assert mean[-1] == pytest.approx(np.mean(totals))


def test_single_value_sweep_matches_experiment():
    rows, results = sweep(BASE, "alpha", [0.7])
    agg = run_experiment(BASE).aggregate()
    assert rows[0]["mean_final_regret"] == agg["mean_total_regret"]
    assert rows[0]["mean_cost"] == agg["mean_total_cost"]
    assert rows[0]["n_runs"] == 3


def test_sweep_rejects_unknown_param():
    with pytest.raises(ConfigError):
        sweep(BASE, "sigma", [0.1])


@pytest.mark.parametrize("name", ["gp_ucb", "bpe", "dpbe_fixed", "dpbe_nobatching"])
def test_every_algorithm_runs(name):
    m = run_replication(validate_config(cfg_with(algorithm__name=name)), 0)
    assert m.T == 300 and m.algorithm == name


def test_private_algorithms_run():
    priv = {"model": "shuffle", "epsilon": 15.0, "delta": 1e-6}
    m = run_replication(validate_config(cfg_with(algorithm__name="dp_dpbe", privacy=priv)), 0)
    assert m.T == 300 and "clip_events" in m.extra


def test_benchmark_and_tabular_worlds(tmp_path):
    m = run_replication(validate_config(cfg_with(environment__function={"type": "benchmark", "name": "six_hump_camel"})), 0)
    assert m.T == 300
    n = 6
    vals = tmp_path / "v.csv"
    vals.write_text("index,value\n" + "".join(f"{i},{np.sin(i)}\n" for i in range(n)))
    K = tmp_path / "k.csv"
    A = np.random.default_rng(0).normal(size=(n, n))
    np.savetxt(K, A @ A.T / n + np.eye(n) * 0.1, delimiter=",")
    cfg = cfg_with(environment={"function": {"type": "tabular", "values_path": str(vals)},
                                "kernel": {"type": "empirical", "matrix_path": str(K)}})
    m = run_replication(validate_config(cfg), 0)
    assert m.T == 300


def test_worker_count_honors_env(monkeypatch):
    cfg = validate_config(cfg_with(run__parallelism=8))
    monkeypatch.setenv("KBAND_THREADS", "2")
    assert harness._worker_count(cfg, 10) == 2
    monkeypatch.setenv("KBAND_THREADS", "junk")
    assert harness._worker_count(cfg, 10) == 8
    assert harness._worker_count(cfg, 3) == 3


def test_parallel_equals_serial():
    serial = run_experiment(BASE)
    parallel = run_experiment(cfg_with(run__parallelism=2))
    for a, b in zip(serial.runs, parallel.runs):
        np.testing.assert_array_equal(a.actions, b.actions)


def _write_cfg(tmp_path, cfg):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_cli_run_ok(tmp_path, capsys):
    code = cli.main(["run", "--config", _write_cfg(tmp_path, BASE), "--out", str(tmp_path / "o"), "--seeds", "0,1"])
    assert code == 0
    assert (tmp_path / "o" / "seed_1" / "rounds.csv").exists()
    assert json.loads(capsys.readouterr().out)["n_runs"] == 2


def test_cli_sweep_ok(tmp_path):
    code = cli.main(["sweep", "--config", _write_cfg(tmp_path, BASE), "--param", "alpha",
                     "--values", "0.5,0.7", "--out", str(tmp_path / "s"), "--seeds", "0"])
    assert code == 0
    with open(tmp_path / "s" / "sweep.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_cli_config_errors(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["run", "--config", _write_cfg(tmp_path, cfg_with(bogus=1))]) == 2
    assert cli.main(["sweep", "--config", _write_cfg(tmp_path, BASE), "--param", "sigma", "--values", "1"]) == 2
    assert cli.main(["frobnicate"]) == 2


def test_cli_replication_failure(tmp_path, monkeypatch):
    real = harness.run_dpbe

    def flaky(cfg, pop, *a, **kw):
        if pop.D.points[0, 0] == first_point:
            raise FloatingPointError("synthetic failure")
        return real(cfg, pop, *a, **kw)

    first_point = build_replication(validate_config(BASE), 1).pop.D.points[0, 0]
    monkeypatch.setattr(harness, "run_dpbe", flaky)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", _write_cfg(tmp_path, BASE), "--out", str(out)]) == 3
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["failed_seeds"] == [1] and agg["n_runs"] == 2
