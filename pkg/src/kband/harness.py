"""Experiment orchestration: config validation, seeded replications, aggregation and CSV output."""
from __future__ import annotations

import copy
import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .baselines import run_bpe, run_dpbe_fixed, run_dpbe_nobatching, run_gp_ucb
from .dpbe import DpbeConfig, run_dpbe
from .environment import (Benchmark, Tabular, UserPopulation, load_tabular_csv,
                          make_synthetic, sample_decision_set)
from .kernels import DecisionSet, KernelError, load_matrix_csv, make_kernel
from .metrics import RunMetrics
from .privacy import PrivacyBudget, make_privatizer

__all__ = [
    "SCHEMA_VERSION",
    "CONFIG_SCHEMA",
    "ALGORITHMS",
    "SWEEP_PARAMS",
    "ConfigError",
    "ExperimentResult",
    "load_config",
    "validate_config",
    "build_replication",
    "run_replication",
    "run_experiment",
    "sweep",
    "write_run",
    "write_experiment",
    "write_sweep",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ALGORITHMS = ("dpbe", "dp_dpbe", "gp_ucb", "bpe", "dpbe_fixed", "dpbe_nobatching")
SWEEP_PARAMS = ("alpha", "epsilon", "C", "lengthscale")
ROUND_COLUMNS = ("round", "action", "inst_regret", "cum_regret")
PHASE_COLUMNS = ("phase", "T_l", "U_l", "H_l", "actions", "active", "cost", "sigma_n")

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_opt_pos = {"type": ["number", "null"], "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["environment", "algorithm", "run"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "environment": {
            "type": "object",
            "additionalProperties": False,
            "required": ["function", "kernel"],
            "properties": {
                "function": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type"],
                    "properties": {
                        "type": {"enum": ["synthetic", "benchmark", "tabular"]},
                        "name": {"enum": ["sphere", "six_hump_camel", "michalewicz"]},
                        "values_path": {"type": "string"},
                    },
                },
                "d": {"type": "integer", "minimum": 1},
                "n_points": {"type": "integer", "minimum": 1},
                "points_path": {"type": "string"},
                "kernel": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type"],
                    "properties": {
                        "type": {"enum": ["se", "matern", "linear", "empirical"]},
                        "lengthscale": _pos,
                        "nu": {"enum": [0.5, 1.5, 2.5]},
                        "matrix_path": {"type": "string"},
                    },
                },
                "v": _nonneg,
                "sigma": _nonneg,
                "rkhs_norm": _opt_pos,
            },
        },
        "algorithm": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": list(ALGORITHMS)},
                "alpha": _pos,
                "C": {"type": "number", "exclusiveMinimum": 1},
                "beta": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "lam": _opt_pos,
                "gamma_T": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "privacy": {
            "type": "object",
            "additionalProperties": False,
            "required": ["model"],
            "properties": {
                "model": {"enum": ["none", "central", "local", "shuffle"]},
                "epsilon": _pos,
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "delta1": _pos,
                "delta2": _pos,
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T"],
            "properties": {
                "T": {"type": "integer", "minimum": 1},
                "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "parallelism": {"type": ["integer", "null"], "minimum": 1},
            },
        },
    },
}


class ConfigError(ValueError):
    """The experiment config is malformed or inconsistent."""


def validate_config(cfg: dict) -> dict:
    """Check against the schema plus cross-field rules; returns a copy with defaults filled."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("schema_version", SCHEMA_VERSION)
    cfg.setdefault("privacy", {"model": "none"})
    env, alg, priv, run = cfg["environment"], cfg["algorithm"], cfg["privacy"], cfg["run"]
    run.setdefault("seeds", list(range(20)))
    fn = env["function"]
    kind = env["kernel"]["type"]
    if fn["type"] == "benchmark" and "name" not in fn:
        raise ConfigError("environment/function: benchmark needs a name")
    if fn["type"] == "tabular" and "values_path" not in fn:
        raise ConfigError("environment/function: tabular needs values_path")
    if fn["type"] != "tabular":
        env.setdefault("d", 3)
        env.setdefault("n_points", 100)
    if fn["type"] == "synthetic" and kind == "empirical":
        raise ConfigError("environment: a synthetic function cannot use an empirical kernel")
    if kind == "empirical" and "matrix_path" not in env["kernel"]:
        raise ConfigError("environment/kernel: empirical kernel needs matrix_path")
    if kind == "matern" and "nu" not in env["kernel"]:
        env["kernel"]["nu"] = 2.5
    env.setdefault("v", 0.1)
    env.setdefault("sigma", 0.01)
    if priv["model"] != "none":
        for key in ("epsilon", "delta"):
            if key not in priv:
                raise ConfigError(f"privacy: model {priv['model']} needs {key}")
    if alg["name"] == "dp_dpbe" and priv["model"] == "none":
        raise ConfigError("algorithm dp_dpbe needs a privacy model other than none")
    if priv["model"] != "none" and alg["name"] not in ("dp_dpbe", "dpbe_fixed"):
        raise ConfigError(f"algorithm {alg['name']} does not take a privacy model")
    if alg["name"] == "bpe" and run["T"] < 4:
        raise ConfigError("bpe needs T >= 4")
    try:
        if priv["model"] != "none":
            PrivacyBudget(priv["epsilon"], priv["delta"], priv.get("delta1"), priv.get("delta2"))
        _dpbe_config(cfg, 1.0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return validate_config(raw)


@dataclass
class Replication:
    pop: UserPopulation
    dpbe_cfg: DpbeConfig
    privacy_seed: np.random.SeedSequence
    reference_seed: np.random.SeedSequence


def _decision_points(env: dict, rng) -> np.ndarray:
    if "points_path" in env:
        return np.loadtxt(env["points_path"], delimiter=",", ndmin=2)
    if env["function"]["type"] == "tabular" or env["kernel"]["type"] == "empirical":
        return None
    return sample_decision_set(env["n_points"], env["d"], rng).points


def build_replication(cfg: dict, seed: int) -> Replication:
    """Construct the seeded world for one replication. Streams are split per purpose so
    the function and decision set depend on the seed only, not on the algorithm."""
    env, alg = cfg["environment"], cfg["algorithm"]
    s_fn, s_points, s_pop, s_priv, s_ref = np.random.SeedSequence(seed).spawn(5)
    try:
        points = _decision_points(env, np.random.default_rng(s_points))
        fn = env["function"]
        if fn["type"] == "tabular":
            values = load_tabular_csv(fn["values_path"])
            if points is None:
                points = np.arange(len(values), dtype=float)[:, None]
        elif points is None:
            n = len(load_matrix_csv(env["kernel"]["matrix_path"]))
            points = np.arange(n, dtype=float)[:, None]
        D = DecisionSet(points)
        kernel = make_kernel(env["kernel"], D.points)
        if fn["type"] == "synthetic":
            f = make_synthetic(D.d, kernel, np.random.default_rng(s_fn))
        elif fn["type"] == "benchmark":
            f = Benchmark(fn["name"], D.points)
        else:
            if len(values) != len(D):
                raise ConfigError("tabular values do not match the decision set size")
            f = Tabular(values, D.points)
    except (KernelError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    B = env.get("rkhs_norm") or f.rkhs_norm
    try:
        dcfg = _dpbe_config(cfg, B)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    pop = UserPopulation(f, kernel, D, env["v"], env["sigma"], np.random.default_rng(s_pop))
    return Replication(pop, dcfg, s_priv, s_ref)


def _dpbe_config(cfg: dict, B: float) -> DpbeConfig:
    env, alg = cfg["environment"], cfg["algorithm"]
    return DpbeConfig(
        T=cfg["run"]["T"],
        alpha=alg.get("alpha", 0.7),
        C=alg.get("C", 1.6),
        sigma=env["sigma"],
        v=env["v"],
        rkhs_norm=B,
        beta=alg.get("beta"),
        lam=alg.get("lam"),
        gamma_T=alg.get("gamma_T"),
    )


def run_replication(cfg: dict, seed: int) -> RunMetrics:
    rep = build_replication(cfg, seed)
    name = cfg["algorithm"]["name"]
    priv = make_privatizer(cfg.get("privacy"), rep.privacy_seed)
    if name in ("dpbe", "dp_dpbe"):
        m = run_dpbe(rep.dpbe_cfg, rep.pop, priv, algorithm=name)
    elif name == "gp_ucb":
        m = run_gp_ucb(rep.dpbe_cfg, rep.pop)
    elif name == "bpe":
        m = run_bpe(rep.dpbe_cfg, rep.pop)
    elif name == "dpbe_nobatching":
        m = run_dpbe_nobatching(rep.dpbe_cfg, rep.pop)
    elif name == "dpbe_fixed":
        # the reference sees the same world but its own user draws
        ref_pop = UserPopulation(rep.pop.f, rep.pop.kernel, rep.pop.D, rep.pop.v, rep.pop.sigma,
                                 np.random.default_rng(rep.reference_seed))
        ref_priv = make_privatizer(cfg.get("privacy"), rep.reference_seed.spawn(1)[0])
        reference = run_dpbe(rep.dpbe_cfg, ref_pop, ref_priv)
        m = run_dpbe_fixed(rep.dpbe_cfg, rep.pop, reference, priv)
        m.extra["reference_cost"] = reference.total_cost
    else:  # unreachable after validation
        raise ConfigError(f"unknown algorithm {name!r}")
    m.seed = seed
    return m


@dataclass
class ExperimentResult:
    runs: list[RunMetrics]
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def cum_regret_band(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard deviation of cumulative regret at each round."""
        R = np.array([m.cum_regret for m in self.runs])
        return R.mean(axis=0), R.std(axis=0)

    def aggregate(self) -> dict:
        out = {"n_runs": len(self.runs), "failed_seeds": sorted(self.failures)}
        for key in ("total_regret", "total_cost", "wall_clock"):
            vals = np.array([m.summary()[key] for m in self.runs], dtype=float)
            out[f"mean_{key}"] = float(vals.mean()) if len(vals) else float("nan")
            out[f"std_{key}"] = float(vals.std()) if len(vals) else float("nan")
        return out


def _worker_count(cfg: dict, n_jobs: int) -> int:
    n = cfg["run"].get("parallelism") or os.cpu_count() or 1
    cap = os.environ.get("KBAND_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer KBAND_THREADS=%r", cap)
    return max(1, min(n, n_jobs))


def _safe_run(args):
    cfg, seed = args
    try:
        return seed, run_replication(cfg, seed), None
    except ConfigError:
        raise
    except Exception as exc:  # one bad seed must not sink the others
        return seed, None, f"{type(exc).__name__}: {exc}"


def run_experiment(cfg: dict, seeds=None) -> ExperimentResult:
    """Run every seed (default from the config) and collect results in seed order."""
    cfg = validate_config(cfg)
    seeds = list(cfg["run"]["seeds"] if seeds is None else seeds)
    jobs = [(cfg, s) for s in seeds]
    workers = _worker_count(cfg, len(jobs))
    if workers == 1:
        outcomes = [_safe_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(_safe_run, jobs))
    result = ExperimentResult([])
    for seed, m, err in outcomes:
        if err is None:
            result.runs.append(m)
        else:
            log.error("seed %d failed: %s", seed, err)
            result.failures[seed] = err
    return result


def _set_param(cfg: dict, param: str, value) -> dict:
    cfg = copy.deepcopy(cfg)
    if param == "alpha":
        cfg["algorithm"]["alpha"] = value
    elif param == "C":
        cfg["algorithm"]["C"] = value
    elif param == "epsilon":
        cfg.setdefault("privacy", {"model": "none"})["epsilon"] = value
    elif param == "lengthscale":
        cfg["environment"]["kernel"]["lengthscale"] = value
    else:
        raise ConfigError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    return cfg


def sweep(cfg: dict, param: str, values, seeds=None) -> tuple[list[dict], list[ExperimentResult]]:
    """One aggregate row per value: mean final regret, mean cost, mean wall-clock."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    rows, results = [], []
    for value in values:
        res = run_experiment(_set_param(cfg, param, value), seeds)
        agg = res.aggregate()
        rows.append({
            param: value,
            "mean_final_regret": agg["mean_total_regret"],
            "std_final_regret": agg["std_total_regret"],
            "mean_cost": agg["mean_total_cost"],
            "mean_wall_clock": agg["mean_wall_clock"],
            "n_runs": agg["n_runs"],
        })
        results.append(res)
    return rows, results


# -- output ------------------------------------------------------------------------

def write_run(m: RunMetrics, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rounds = np.arange(1, m.T + 1)
    cum = m.cum_regret
    with open(out / "rounds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROUND_COLUMNS)
        for r, a, ir, cr in zip(rounds, m.actions, m.inst_regret, cum):
            w.writerow((int(r), int(a), repr(float(ir)), repr(float(cr))))
    with open(out / "phases.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PHASE_COLUMNS)
        for p in m.phases:
            w.writerow((p.phase, p.T_l, p.U_l, p.H_l, p.actions, p.active, p.cost, repr(p.sigma_n)))
    with open(out / "summary.json", "w") as fh:
        json.dump(m.summary(), fh, indent=2, sort_keys=True)


def write_experiment(res: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for m in res.runs:
        write_run(m, out / f"seed_{m.seed}")
    if res.runs:
        mean, std = res.cum_regret_band()
        with open(out / "aggregate.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("round", "mean_cum_regret", "std_cum_regret"))
            for r, (a, b) in enumerate(zip(mean, std), start=1):
                w.writerow((r, repr(float(a)), repr(float(b))))
    agg = res.aggregate()
    agg["failures"] = {str(k): v for k, v in res.failures.items()}
    with open(out / "aggregate.json", "w") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)


def write_sweep(rows: list[dict], out_dir, param: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = [param, "mean_final_regret", "std_final_regret", "mean_cost", "mean_wall_clock", "n_runs"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
