"""Comparison algorithms: GP-UCB, batched pure exploration, and two ablations of the phased agent."""
from __future__ import annotations

import math
import time

import numpy as np

from .dpbe import DpbeConfig, confidence_width, eliminate, run_dpbe, participants_in_phase
from .environment import UserPopulation, communication_cost
from .kernels import info_gain_curve
from .metrics import PhaseRecord, RunMetrics
from .posterior import FiniteSetPosterior
from .privacy import Privatizer

__all__ = [
    "effective_noise",
    "run_gp_ucb",
    "bpe_batch_sizes",
    "run_bpe",
    "fixed_participants",
    "run_dpbe_fixed",
    "run_dpbe_nobatching",
]


def effective_noise(cfg: DpbeConfig, kappa2: float) -> float:
    """Variance of one fresh user's observation around f: noise plus local bias."""
    return cfg.sigma**2 + cfg.v**2 * kappa2


def _one_user_reward(pop: UserPopulation, i: int, kxx_i: float) -> float:
    # a one-time user observed once: only the marginal of its local function at i matters
    z = pop.rng.standard_normal(2)
    return float(pop.f_values[i] + pop.v * math.sqrt(kxx_i) * z[0] + pop.sigma * z[1])


def run_gp_ucb(cfg: DpbeConfig, pop: UserPopulation) -> RunMetrics:
    """Upper-confidence-bound selection with one fresh user per round."""
    n = len(pop.D)
    T = cfg.T
    kxx = np.diagonal(pop.gram).copy()
    lam = effective_noise(cfg, float(kxx.max()))
    sd_eff = math.sqrt(lam)
    log_inv = math.log(1.0 / cfg.resolved_beta(n))
    curve = info_gain_curve(pop.kernel, pop.D.points, T, lam)

    post = FiniteSetPosterior(pop.gram, lam)
    played = np.empty(T, dtype=np.int64)
    start = time.perf_counter()
    for t in range(T):
        width = cfg.rkhs_norm + math.sqrt(2.0 * (curve[t] + 1.0 + log_inv)) * sd_eff
        i = int(np.argmax(post.mu + width * np.sqrt(post.variance())))
        post.observe(i, _one_user_reward(pop, i, kxx[i]))
        played[t] = i
    elapsed = time.perf_counter() - start

    phases = [PhaseRecord(t + 1, 1, 1, 1, 1, 1, n, 1) for t in range(T)]
    f = pop.f_values
    return RunMetrics("gp_ucb", played, f.max() - f[played], phases, elapsed)


def bpe_batch_sizes(T: int) -> list[int]:
    """Batch lengths: N_i = ceil(sqrt(T sqrt(N_{i-1}))), N_0 = 1, last batch runs to T.

    The number of batches is max(2, ceil(ln ln T)).
    """
    if T < 4:
        raise ValueError("T must be >= 4")
    count = max(2, math.ceil(math.log(math.log(T))))
    sizes, prev, used = [], 1, 0
    for _ in range(count - 1):
        size = min(math.ceil(math.sqrt(T * math.sqrt(prev))), T - used - 1)
        if size < 1:
            break
        sizes.append(size)
        used += size
        prev = size
    sizes.append(T - used)
    return sizes


def run_bpe(cfg: DpbeConfig, pop: UserPopulation) -> RunMetrics:
    """Batched pure exploration: max-variance rounds within a batch, elimination between batches."""
    n = len(pop.D)
    kxx = np.diagonal(pop.gram).copy()
    lam = effective_noise(cfg, float(kxx.max()))
    mult = cfg.rkhs_norm + math.sqrt(2.0 * math.log(1.0 / cfg.resolved_beta(n)))

    played = np.empty(cfg.T, dtype=np.int64)
    phases = []
    active = np.arange(n)
    t = 0
    start = time.perf_counter()
    for b, size in enumerate(bpe_batch_sizes(cfg.T), start=1):
        post = FiniteSetPosterior(pop.gram[np.ix_(active, active)], lam)
        sums = np.zeros(len(active))
        for _ in range(size):
            j = int(np.argmax(post.variance()))
            i = int(active[j])
            sums[j] += _one_user_reward(pop, i, kxx[i])
            post.observe(j)
            played[t] = i
            t += 1
        mu = post.mean_from_sums(sums)
        keep = eliminate(mu, mult * np.sqrt(post.variance()))
        phases.append(PhaseRecord(b, size, size, size, size, 1, len(active), communication_cost(size, 1)))
        active = active[keep]
    elapsed = time.perf_counter() - start

    f = pop.f_values
    return RunMetrics("bpe", played, f.max() - f[played], phases, elapsed)


def fixed_participants(reference: RunMetrics) -> int:
    """Constant participant count matching a reference run's feedback-weighted mean."""
    if not reference.phases:
        raise ValueError("reference run has no phases")
    num = sum(p.U_l * p.actions for p in reference.phases)
    den = sum(p.actions for p in reference.phases)
    return num // den


def run_dpbe_fixed(cfg: DpbeConfig, pop: UserPopulation, reference: RunMetrics,
                   privatizer: Privatizer | None = None) -> RunMetrics:
    if reference is None:
        raise ValueError("a reference run is required")
    U = fixed_participants(reference)
    m = run_dpbe(cfg, pop, privatizer, n_users_fn=lambda l: U, algorithm="dpbe_fixed")
    m.extra["fixed_participants"] = U
    return m


def run_dpbe_nobatching(cfg: DpbeConfig, pop: UserPopulation) -> RunMetrics:
    """Phased elimination choosing the max-variance action every round, no batching.

    Users report one value per round of the phase. The per-round posterior is
    kept over the active set with rank-one updates.
    """
    n = len(pop.D)
    T = cfg.T
    lam = cfg.resolved_lam()
    beta = cfg.resolved_beta(n)
    kxx = np.diagonal(pop.gram).copy()

    played = np.empty(T, dtype=np.int64)
    phases = []
    active = np.arange(n)
    t, l, T_l = 0, 1, 1
    start = time.perf_counter()
    while t < T:
        budget = min(T_l, T - t)
        post = FiniteSetPosterior(pop.gram[np.ix_(active, active)], lam)
        counts = np.zeros(len(active))
        for r in range(budget):
            j = int(np.argmax(post.variance()))
            post.observe(j)
            counts[j] += 1
            played[t + r] = active[j]
        n_users = participants_in_phase(cfg.alpha, l)
        vals = pop.sample_values(n_users)[:, active]
        # summed per-round averages: counts * user mean plus the averaged noise of every round
        noise = pop.rng.standard_normal(len(active)) * cfg.sigma * np.sqrt(counts / n_users)
        sums = counts * vals.mean(axis=0) + noise
        mu = post.mean_from_sums(sums)
        w = confidence_width(post.variance(), kxx[active], n_users, beta=beta, v=cfg.v,
                             rkhs_norm=cfg.rkhs_norm)
        keep = eliminate(mu, w)
        phases.append(PhaseRecord(l, T_l, budget, n_users, budget, budget, len(active),
                                  communication_cost(n_users, budget)))
        active = active[keep]
        t += budget
        l += 1
        T_l *= 2
    elapsed = time.perf_counter() - start

    f = pop.f_values
    return RunMetrics("dpbe_nobatching", played, f.max() - f[played], phases, elapsed)
