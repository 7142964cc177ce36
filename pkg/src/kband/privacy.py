"""Privatizers for aggregated feedback: Gaussian (central, local) and shuffle-model bit sums."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PrivacyBudget",
    "PrivacyContext",
    "ShuffleParams",
    "gaussian_user_scale",
    "central_sigma",
    "local_sigma",
    "central_privatize",
    "local_privatize",
    "clip_bound",
    "clip_rows",
    "shuffle_params",
    "shuffle_randomize",
    "shuffle_bits",
    "shuffle_analyze",
    "shuffle_roundtrip",
    "shuffle_variance",
    "shuffle_sigma_n",
    "Privatizer",
    "NoPrivacy",
    "CentralPrivatizer",
    "LocalPrivatizer",
    "ShufflePrivatizer",
    "make_privatizer",
]


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    delta1: float | None = None
    delta2: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        d1 = self.delta / 2 if self.delta1 is None else self.delta1
        d2 = self.delta - d1 if self.delta2 is None else self.delta2
        if d1 <= 0 or d2 <= 0:
            raise ValueError("delta1 and delta2 must be positive")
        if not math.isclose(d1 + d2, self.delta, rel_tol=1e-9):
            raise ValueError("delta1 + delta2 must equal delta")
        object.__setattr__(self, "delta1", d1)
        object.__setattr__(self, "delta2", d2)


@dataclass(frozen=True)
class PrivacyContext:
    """Problem constants a privatizer needs beyond the feedback itself."""

    kappa2: float
    sigma2: float
    rkhs_norm: float
    C: float
    gamma_T: float


def gaussian_user_scale(kappa2, sigma2, H, epsilon, delta1, delta2) -> float:
    """Gaussian-mechanism scale for one user's H-dimensional averaged feedback."""
    if delta1 <= 0 or delta2 <= 0:
        raise ValueError("delta1 and delta2 must be positive")
    sens2 = 2.0 * (kappa2 + sigma2) * H * math.log(2.0 * H / delta1)
    return 2.0 * math.sqrt(sens2 * math.log(1.25 / delta2)) / epsilon


def central_sigma(kappa2, sigma2, H, n_users, epsilon, delta1, delta2) -> float:
    return gaussian_user_scale(kappa2, sigma2, H, epsilon, delta1, delta2) / n_users


def local_sigma(kappa2, sigma2, H, epsilon, delta1, delta2) -> float:
    return gaussian_user_scale(kappa2, sigma2, H, epsilon, delta1, delta2)


def central_privatize(ybar, n_users, kappa2, sigma2, epsilon, delta1, delta2, rng):
    """Add server-side Gaussian noise to the averaged feedback vector."""
    ybar = np.asarray(ybar, dtype=float)
    s = central_sigma(kappa2, sigma2, len(ybar), n_users, epsilon, delta1, delta2)
    return ybar + s * rng.standard_normal(ybar.shape)


def local_privatize(y, kappa2, sigma2, epsilon, delta1, delta2, rng):
    """Add user-side Gaussian noise to one user's (or each row's) feedback vector."""
    y = np.asarray(y, dtype=float)
    s = local_sigma(kappa2, sigma2, y.shape[-1], epsilon, delta1, delta2)
    return y + s * rng.standard_normal(y.shape)


# -- shuffle model -------------------------------------------------------------

@dataclass(frozen=True)
class ShuffleParams:
    eps_hat: float
    g: int      # granularity of the fixed-point encoding
    b: int      # noise bits per user and coordinate
    p: float    # success probability of each noise bit
    s: int
    n_users: int


def shuffle_params(s: int, n_users: int, epsilon: float, delta2: float) -> ShuffleParams:
    if s < 1 or n_users < 1:
        raise ValueError("s and n_users must be positive")
    eps_hat = epsilon / (18.0 * math.sqrt(math.log(2.0 / delta2)))
    lg = math.log(4.0 * s / delta2)
    g_real = max(eps_hat * math.sqrt(n_users) / (6.0 * math.sqrt(5.0 * lg)), math.sqrt(s), 10.0)
    g = math.ceil(g_real)  # a bit count must be whole
    b = math.ceil(180.0 * g * g * lg / (eps_hat**2 * n_users))
    p = 90.0 * g * g * lg / (b * eps_hat**2 * n_users)
    if not 0.0 <= p <= 1.0:
        raise AssertionError(f"p={p} outside [0, 1]")
    return ShuffleParams(eps_hat, g, b, p, s, n_users)


def clip_bound(rkhs_norm, kappa2, sigma2, H, delta1) -> float:
    """L2 bound on one user's feedback vector that holds with probability 1 - delta1."""
    return (rkhs_norm * math.sqrt(kappa2) * math.sqrt(H)
            + math.sqrt(2.0 * (kappa2 + sigma2) * H * math.log(2.0 * H / delta1)))


def clip_rows(Y, bound: float) -> tuple[np.ndarray, int]:
    """Scale rows with L2 norm above ``bound`` back onto the ball; returns (rows, clipped count)."""
    Y = np.array(Y, dtype=float, ndmin=2)
    norms = np.linalg.norm(Y, axis=1)
    over = norms > bound
    if np.any(over):
        Y[over] *= (bound / norms[over])[:, None]
    return Y, int(over.sum())


def shuffle_randomize(Y, delta: float, params: ShuffleParams, rng) -> np.ndarray:
    """Local randomizer: number of one-bits each user emits per coordinate, shape (U, s)."""
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)):
        raise ValueError("non-finite feedback")
    x = (Y + delta) * params.g / (2.0 * delta)
    # round-off can push a clipped value a hair outside [0, g]
    x = np.clip(x, 0.0, params.g)
    base = np.floor(x)
    gamma1 = rng.random(x.shape) < (x - base)
    gamma2 = rng.binomial(params.b, params.p, size=x.shape)
    return base.astype(np.int64) + gamma1 + gamma2


def shuffle_bits(ones: np.ndarray, params: ShuffleParams, rng, materialize: bool = False):
    """Shuffler: pool every user's bits per coordinate and permute them.

    Returns one permuted 0/1 array per coordinate when ``materialize`` is set.
    Otherwise returns only the per-coordinate one-counts, which is all the
    analyzer reads and is invariant under the permutation.
    """
    ones = np.asarray(ones)
    if not materialize:
        return ones.sum(axis=0)
    width = params.g + params.b
    slots = np.arange(width)
    out = []
    for j in range(ones.shape[1]):
        bits = (slots[None, :] < ones[:, j][:, None]).ravel().astype(np.uint8)
        out.append(rng.permutation(bits))
    return out


def shuffle_analyze(shuffled, delta: float, params: ShuffleParams) -> np.ndarray:
    """Analyzer: debiased average of the shifted, fixed-point encoded inputs."""
    if isinstance(shuffled, list):
        totals = np.array([int(bits.sum()) for bits in shuffled], dtype=float)
    else:
        totals = np.asarray(shuffled, dtype=float)
    U = params.n_users
    z = (2.0 * delta / (params.g * U)) * (totals - params.b * U * params.p)
    return z - delta


def shuffle_roundtrip(Y, delta: float, params: ShuffleParams, rng, shuffle_rng=None,
                      materialize: bool = False) -> tuple[np.ndarray, int]:
    """Clip, randomize, shuffle and analyze; returns (estimated average, clipped users)."""
    Y, clipped = clip_rows(Y, delta)
    ones = shuffle_randomize(Y, delta, params, rng)
    shuffled = shuffle_bits(ones, params, shuffle_rng if shuffle_rng is not None else rng, materialize)
    return shuffle_analyze(shuffled, delta, params), clipped


def shuffle_variance(params: ShuffleParams, delta: float, rounding_var: float | None = None) -> float:
    """Per-coordinate variance of the analyzer output around the true average.

    ``rounding_var`` is the summed Bernoulli rounding variance over users; the
    default is its worst case of 1/4 per user.
    """
    U = params.n_users
    if rounding_var is None:
        rounding_var = 0.25 * U
    scale = 2.0 * delta / (params.g * U)
    return scale**2 * (rounding_var + U * params.b * params.p * (1.0 - params.p))


def shuffle_sigma_n(params: ShuffleParams, delta: float, C: float, gamma_T: float,
                    rounding_var: float | None = None) -> float:
    return math.sqrt(shuffle_variance(params, delta, rounding_var)) * math.sqrt(2.0 * C * C * gamma_T)


# -- privatizer objects used by the agent -----------------------------------

class Privatizer:
    """Maps per-user feedback (U, H) to an aggregated vector plus its width term sigma_n."""

    model = "none"

    def privatize(self, Y: np.ndarray, ctx: PrivacyContext) -> tuple[np.ndarray, float]:
        raise NotImplementedError


class NoPrivacy(Privatizer):
    model = "none"

    def privatize(self, Y, ctx=None):
        return np.asarray(Y, dtype=float).mean(axis=0), 0.0


class CentralPrivatizer(Privatizer):
    model = "central"

    def __init__(self, budget: PrivacyBudget, rng):
        self.budget = budget
        self.rng = rng

    def privatize(self, Y, ctx):
        U, H = Y.shape
        b = self.budget
        s = central_sigma(ctx.kappa2, ctx.sigma2, H, U, b.epsilon, b.delta1, b.delta2)
        out = Y.mean(axis=0) + s * self.rng.standard_normal(H)
        return out, s * math.sqrt(2.0 * ctx.C**2 * ctx.gamma_T)


class LocalPrivatizer(Privatizer):
    model = "local"

    def __init__(self, budget: PrivacyBudget, rng):
        self.budget = budget
        self.rng = rng

    def privatize(self, Y, ctx):
        U, H = Y.shape
        b = self.budget
        noisy = local_privatize(Y, ctx.kappa2, ctx.sigma2, b.epsilon, b.delta1, b.delta2, self.rng)
        s = local_sigma(ctx.kappa2, ctx.sigma2, H, b.epsilon, b.delta1, b.delta2)
        return noisy.mean(axis=0), math.sqrt(2.0 * ctx.C**2 * s**2 * ctx.gamma_T / U)


class ShufflePrivatizer(Privatizer):
    model = "shuffle"

    def __init__(self, budget: PrivacyBudget, rng, shuffle_rng, materialize: bool = False):
        self.budget = budget
        self.rng = rng
        self.shuffle_rng = shuffle_rng
        self.materialize = materialize
        self.clip_events = 0

    def privatize(self, Y, ctx):
        U, H = Y.shape
        b = self.budget
        delta = clip_bound(ctx.rkhs_norm, ctx.kappa2, ctx.sigma2, H, b.delta1)
        params = shuffle_params(H, U, b.epsilon, b.delta2)
        out, clipped = shuffle_roundtrip(Y, delta, params, self.rng, self.shuffle_rng, self.materialize)
        self.clip_events += clipped
        return out, shuffle_sigma_n(params, delta, ctx.C, ctx.gamma_T)


def make_privatizer(block: dict | None, seed: np.random.SeedSequence) -> Privatizer:
    """Build from ``{model, epsilon, delta, delta1?, delta2?}``; ``None`` means no privacy.

    Noise and the shuffler's permutation get separate streams spawned from ``seed``.
    """
    if not block or block.get("model", "none") == "none":
        return NoPrivacy()
    budget = PrivacyBudget(block["epsilon"], block["delta"], block.get("delta1"), block.get("delta2"))
    noise_rng, shuffle_rng = (np.random.default_rng(s) for s in seed.spawn(2))
    model = block["model"]
    if model == "central":
        return CentralPrivatizer(budget, noise_rng)
    if model == "local":
        return LocalPrivatizer(budget, noise_rng)
    if model == "shuffle":
        return ShufflePrivatizer(budget, noise_rng, shuffle_rng)
    raise ValueError(f"unknown privacy model {model!r}")
