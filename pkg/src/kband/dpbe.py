"""Phased elimination with batched max-variance exploration and averaged user feedback."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .environment import UserPopulation, communication_cost, phase_feedback
from .kernels import info_gain_curve
from .metrics import PhaseRecord, RunMetrics
from .posterior import BatchedPosterior, default_lambda
from .privacy import NoPrivacy, PrivacyContext, Privatizer

__all__ = [
    "DpbeConfig",
    "PhaseState",
    "participants_in_phase",
    "plan_phase",
    "confidence_width",
    "eliminate",
    "batch_count_bound",
    "max_variance_bound",
    "run_dpbe",
]

log = logging.getLogger(__name__)


@dataclass
class DpbeConfig:
    """Agent parameters. ``sigma`` and ``v`` are standard deviations, not variances."""

    T: int
    alpha: float = 0.7
    C: float = 1.6
    sigma: float = 0.01
    v: float = 1.0
    rkhs_norm: float = 1.0
    beta: float | None = None
    lam: float | None = None
    gamma_T: float | None = None
    check_bounds: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.C > 1:
            raise ValueError("C must exceed 1")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.sigma < 0 or self.v < 0:
            raise ValueError("sigma and v must be non-negative")
        if self.lam is None and default_lambda(self.sigma, self.v) <= 0:
            raise ValueError("sigma = 0 needs an explicit lam")

    def resolved_lam(self) -> float:
        return float(self.lam) if self.lam is not None else default_lambda(self.sigma, self.v)

    def resolved_beta(self, n_points: int) -> float:
        return float(self.beta) if self.beta is not None else 1.0 / (n_points * self.T)


@dataclass
class PhaseState:
    l: int
    t_l: int
    T_l: int
    active: np.ndarray                       # indices into the decision set
    posterior: BatchedPosterior
    batches: list = field(default_factory=list)   # (index, count) in play order
    variance: np.ndarray | None = None       # posterior variance over the active set after planning

    @property
    def H_l(self) -> int:
        return len(self.batches)

    def schedule(self) -> list[tuple[int, int]]:
        """Batches merged per action, in order of first appearance."""
        merged: dict[int, int] = {}
        for a, c in self.batches:
            merged[a] = merged.get(a, 0) + c
        return list(merged.items())


def participants_in_phase(alpha: float, l: int) -> int:
    x = 2.0 ** (alpha * l)
    # guard against 2**7.000000000000001 style round-off pushing the ceiling up
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * x else math.ceil(x)


def plan_phase(state: PhaseState, points: np.ndarray, C: float, horizon: int, kxx: np.ndarray | None = None):
    """Fill the phase with batches of the current max-variance action.

    ``points`` holds the coordinates of the whole decision set; ``state.active``
    indexes into it. Each batch repeats its action floor((C^2-1)/var) times (at
    least once) and stops at the phase or horizon end.
    """
    if len(state.active) == 0:
        raise ValueError("active set is empty")
    pts = points[state.active]
    budget = min(state.T_l, horizon - state.t_l)
    var = state.posterior.variance(pts) if kxx is None else np.array(kxx, dtype=float)
    c2m1 = C * C - 1.0
    tau = 0
    while tau < budget:
        j = int(np.argmax(var))  # first maximum, i.e. lowest index
        if var[j] > 0:
            count = max(1, math.floor(c2m1 / var[j]))
        else:
            count = budget - tau
        count = min(count, budget - tau)
        state.posterior.append(pts[j], count)
        state.batches.append((int(state.active[j]), count))
        tau += count
        var = state.posterior.variance(pts)
    state.variance = var
    return state.batches


def confidence_width(variance, kxx, n_users: int, *, beta: float, v: float, rkhs_norm: float,
                     sigma_n: float = 0.0) -> np.ndarray:
    """Per-action width: user bias + averaged noise + approximation + privacy terms."""
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    variance = np.clip(np.asarray(variance, dtype=float), 0.0, None)
    kxx = np.asarray(kxx, dtype=float)
    lb = math.log(1.0 / beta)
    bias = np.sqrt(2.0 * v * v * kxx * lb / n_users)
    noise = np.sqrt(2.0 * variance * lb / n_users)
    approx = rkhs_norm * np.sqrt(variance)
    priv = math.sqrt(2.0 * sigma_n**2 * lb)
    return bias + noise + approx + priv


def eliminate(mu, width) -> np.ndarray:
    """Boolean mask of survivors: upper bound reaches the best lower bound."""
    mu = np.asarray(mu, dtype=float)
    width = np.asarray(width, dtype=float)
    threshold = np.max(mu - width)
    return mu + width >= threshold


def _ratio_sq(C: float, lam: float) -> float:
    # squared variance-ratio constant within one batch; equals C^2 once lam >= 1
    return max(C * C, 1.0 + (C * C - 1.0) / lam)


def batch_count_bound(C: float, lam: float, gamma: float) -> float:
    """Upper bound on batches per phase given the phase's information gain."""
    return 4.0 * lam * _ratio_sq(C, lam) / (C * C - 1.0) * gamma


def max_variance_bound(C: float, lam: float, gamma: float, T_l: int) -> float:
    """Upper bound on the largest posterior std over the active set at phase end."""
    return math.sqrt(2.0 * lam * _ratio_sq(C, lam) * gamma / T_l)


def run_dpbe(cfg: DpbeConfig, pop: UserPopulation, privatizer: Privatizer | None = None,
             n_users_fn: Callable[[int], int] | None = None, algorithm: str = "dpbe",
             on_phase: Callable | None = None) -> RunMetrics:
    """Run the phased agent for ``cfg.T`` rounds against ``pop``.

    ``n_users_fn(l)`` overrides the participant count of phase ``l``.
    ``on_phase(state, mu, width, keep)`` is called after each elimination step,
    with ``mu``, ``width`` and ``keep`` aligned to ``state.active``.
    """
    privatizer = privatizer or NoPrivacy()
    D = pop.D
    n = len(D)
    T = cfg.T
    lam = cfg.resolved_lam()
    beta = cfg.resolved_beta(n)
    kxx_all = np.diagonal(pop.gram).copy()
    kappa2 = float(kxx_all.max())
    if cfg.C**2 - 1 < kappa2:
        log.warning("C^2 - 1 = %.3g is below kappa^2 = %.3g; single-round batches will be forced",
                    cfg.C**2 - 1, kappa2)
    n_users_fn = n_users_fn or (lambda l: participants_in_phase(cfg.alpha, l))

    # information gain is a fixed input of the run, computed before the clock starts
    curve = None
    gamma_T = cfg.gamma_T
    if cfg.check_bounds or (gamma_T is None and not isinstance(privatizer, NoPrivacy)):
        curve = info_gain_curve(pop.kernel, D.points, T, lam)
        if gamma_T is None:
            gamma_T = float(curve[T])
    ctx = PrivacyContext(kappa2, cfg.sigma**2, cfg.rkhs_norm, cfg.C, gamma_T or 0.0)

    f = pop.f_values
    played = np.empty(T, dtype=np.int64)
    phases: list[PhaseRecord] = []
    active = np.arange(n)
    t, l, T_l = 0, 1, 1
    start = time.perf_counter()
    while t < T:
        state = PhaseState(l, t, T_l, active, BatchedPosterior(pop.kernel, lam))
        plan_phase(state, D.points, cfg.C, T, kxx=kxx_all[active])
        rounds = 0
        for a, c in state.batches:
            played[t + rounds: t + rounds + c] = a
            rounds += c
        schedule = state.schedule()
        n_users = n_users_fn(l)
        values = pop.sample_values(n_users)
        Y = phase_feedback(values, schedule, cfg.sigma, pop.rng)
        ybar, sigma_n = privatizer.privatize(Y, ctx)
        pts = D.points[active]
        mu = state.posterior.mean(pts, ybar)
        w = confidence_width(state.variance, kxx_all[active], n_users, beta=beta, v=cfg.v,
                             rkhs_norm=cfg.rkhs_norm, sigma_n=sigma_n)
        keep = eliminate(mu, w)
        if curve is not None:
            _soft_checks(cfg, lam, curve, state, rounds)
        if on_phase is not None:
            on_phase(state, mu, w, keep)
        phases.append(PhaseRecord(l, T_l, rounds, n_users, state.H_l, len(schedule), len(active),
                                  communication_cost(n_users, len(schedule)), float(sigma_n)))
        active = active[keep]
        t += rounds
        l += 1
        T_l *= 2
    elapsed = time.perf_counter() - start

    inst = f.max() - f[played]
    extra = {}
    if hasattr(privatizer, "clip_events"):
        extra["clip_events"] = privatizer.clip_events
    if gamma_T is not None:
        extra["gamma_T"] = gamma_T
    return RunMetrics(algorithm, played, inst, phases, elapsed, extra=extra)


def _soft_checks(cfg: DpbeConfig, lam: float, curve: np.ndarray, state: PhaseState, rounds: int):
    gamma = float(curve[min(rounds, len(curve) - 1)])
    hb = batch_count_bound(cfg.C, lam, gamma)
    if state.H_l > hb + 1e-9:
        log.warning("phase %d: %d batches exceeds the bound %.3g", state.l, state.H_l, hb)
    vb = max_variance_bound(cfg.C, lam, gamma, rounds)
    top = math.sqrt(float(np.max(state.variance)))
    if top > vb + 1e-9:
        log.warning("phase %d: max posterior std %.3g exceeds %.3g", state.l, top, vb)
