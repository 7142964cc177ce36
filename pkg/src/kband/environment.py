"""Simulated world: global reward functions, biased users and noisy feedback."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .kernels import DecisionSet, Kernel, _as_points, cholesky_jitter

__all__ = [
    "GlobalFunction",
    "SyntheticRKHS",
    "Benchmark",
    "Tabular",
    "make_synthetic",
    "sphere",
    "six_hump_camel",
    "michalewicz",
    "sample_decision_set",
    "Participant",
    "UserPopulation",
    "observe",
    "phase_feedback",
    "communication_cost",
    "load_tabular_csv",
]


class GlobalFunction:
    """Population-level reward. ``f(X)`` returns one value per row of X."""

    rkhs_norm: float = 1.0

    def __call__(self, X) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError


class SyntheticRKHS(GlobalFunction):
    """f(x) = sum_i a_i k(c_i, x) with norm sqrt(a^T K_cc a)."""

    def __init__(self, centers, coeffs, kernel: Kernel):
        self.centers = _as_points(centers)
        self.coeffs = np.asarray(coeffs, dtype=float).ravel()
        if len(self.coeffs) != len(self.centers):
            raise ValueError("one coefficient per center")
        self.kernel = kernel
        q = float(self.coeffs @ kernel.gram(self.centers) @ self.coeffs)
        self.rkhs_norm = float(np.sqrt(max(q, 0.0)))

    def __call__(self, X):
        return self.kernel(_as_points(X), self.centers) @ self.coeffs


def make_synthetic(d: int, kernel: Kernel, rng: np.random.Generator, m: int | None = None) -> SyntheticRKHS:
    """Random RKHS element: 30*d uniform centers in the unit cube, coefficients in [-1, 1]."""
    if d < 1:
        raise ValueError("d must be >= 1")
    m = 30 * d if m is None else m
    centers = rng.uniform(0.0, 1.0, size=(m, d))
    coeffs = rng.uniform(-1.0, 1.0, size=m)
    return SyntheticRKHS(centers, coeffs, kernel)


def sphere(x) -> np.ndarray:
    x = _as_points(x)
    return np.sum(x * x, axis=1)


def six_hump_camel(x) -> np.ndarray:
    x = _as_points(x)
    if x.shape[1] != 2:
        raise ValueError("six-hump camel is two-dimensional")
    x1, x2 = x[:, 0], x[:, 1]
    return (4 - 2.1 * x1**2 + x1**4 / 3) * x1**2 + x1 * x2 + (-4 + 4 * x2**2) * x2**2


def michalewicz(x, m: int = 10) -> np.ndarray:
    x = _as_points(x)
    i = np.arange(1, x.shape[1] + 1)
    return -np.sum(np.sin(x) * np.sin(i * x**2 / np.pi) ** (2 * m), axis=1)


# native domain as (low, high) per coordinate, given d
_BENCHMARKS = {
    "sphere": (sphere, lambda d: (np.full(d, -1.0), np.full(d, 1.0))),
    "six_hump_camel": (six_hump_camel, lambda d: (np.array([-3.0, -2.0]), np.array([3.0, 2.0]))),
    "michalewicz": (michalewicz, lambda d: (np.zeros(d), np.full(d, np.pi))),
}


class Benchmark(GlobalFunction):
    """Minimization benchmark turned into a reward on the unit cube.

    Unit-cube inputs are mapped affinely to the native domain, the benchmark is
    negated (so its minimum becomes the best reward) and the result is rescaled
    so its extremes over ``points`` are -1 and +1.
    """

    def __init__(self, name: str, points, rkhs_norm: float = 1.0):
        if name not in _BENCHMARKS:
            raise ValueError(f"unknown benchmark {name!r}")
        self.name = name
        P = _as_points(points)
        self._fn, dom = _BENCHMARKS[name]
        self.low, self.high = dom(P.shape[1])
        if len(self.low) != P.shape[1]:
            raise ValueError(f"{name} needs d={len(self.low)}")
        raw = -self._fn(self.to_native(P))
        self._lo, self._hi = float(raw.min()), float(raw.max())
        self.rkhs_norm = float(rkhs_norm)

    def to_native(self, X) -> np.ndarray:
        X = _as_points(X)
        if X.shape[1] != len(self.low):
            raise ValueError("dimension mismatch")
        if np.any(X < 0.0) or np.any(X > 1.0):
            raise ValueError("benchmark inputs must lie in the unit cube")
        return self.low + X * (self.high - self.low)

    def __call__(self, X):
        raw = -self._fn(self.to_native(X))
        span = self._hi - self._lo
        if span == 0:
            return np.zeros(len(raw))
        return 2.0 * (raw - self._lo) / span - 1.0


class Tabular(GlobalFunction):
    """Reward given directly as a value per decision-set point."""

    def __init__(self, values, points, rkhs_norm: float | None = None):
        self.values = np.asarray(values, dtype=float).ravel()
        P = _as_points(points)
        if len(P) != len(self.values):
            raise ValueError("one value per point")
        self._index = {p.tobytes(): i for i, p in enumerate(P)}
        self.rkhs_norm = float(np.max(np.abs(self.values))) if rkhs_norm is None else float(rkhs_norm)

    def __call__(self, X):
        X = _as_points(X)
        try:
            idx = [self._index[x.tobytes()] for x in X]
        except KeyError as exc:
            raise ValueError("tabular function queried outside its point set") from exc
        return self.values[idx]


def load_tabular_csv(path) -> np.ndarray:
    """Read (index, value) rows, header optional; returns values ordered by index."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            try:
                rows.append((int(rec[0]), float(rec[1])))
            except ValueError:
                if rows:
                    raise
                continue  # header
    idx = np.array([r[0] for r in rows])
    if sorted(idx.tolist()) != list(range(len(rows))):
        raise ValueError("tabular indices must be 0..n-1")
    out = np.empty(len(rows))
    out[idx] = [r[1] for r in rows]
    return out


def sample_decision_set(n: int, d: int, rng: np.random.Generator) -> DecisionSet:
    return DecisionSet(rng.uniform(0.0, 1.0, size=(n, d)))


@dataclass
class Participant:
    id: int
    values: np.ndarray  # local reward at every decision-set point


def observe(p: Participant, i: int, sigma: float, rng: np.random.Generator) -> float:
    """One noisy local reward of participant ``p`` at action index ``i``."""
    return float(p.values[i] + sigma * rng.standard_normal())


class UserPopulation:
    """Unbounded pool of one-time users whose local rewards are GP(f, v^2 k) draws on D."""

    def __init__(self, f: GlobalFunction, kernel: Kernel, D: DecisionSet, v: float, sigma: float,
                 rng: np.random.Generator):
        if v < 0 or sigma < 0:
            raise ValueError("v and sigma must be non-negative")
        self.f = f
        self.kernel = kernel
        self.D = D
        self.v = float(v)
        self.sigma = float(sigma)
        self.rng = rng
        self.f_values = np.asarray(f(D.points), dtype=float)
        self.gram = kernel.gram(D.points)
        self._chol = cholesky_jitter(self.v**2 * self.gram) if self.v > 0 else None
        self._next_id = 0

    def sample_values(self, n: int) -> np.ndarray:
        """(n, |D|) matrix of fresh local reward vectors."""
        if n < 1:
            raise ValueError("need at least one participant")
        if self._chol is None:
            return np.tile(self.f_values, (n, 1))
        z = self.rng.standard_normal((n, len(self.f_values)))
        return self.f_values + z @ self._chol.T

    def sample_participants(self, n: int) -> list[Participant]:
        vals = self.sample_values(n)
        out = [Participant(self._next_id + k, vals[k]) for k in range(n)]
        self._next_id += n
        return out


def phase_feedback(values: np.ndarray | list[Participant], schedule, sigma: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Per-user averaged feedback for a merged schedule of (action index, count).

    Entry (u, j) is the mean of ``count_j`` noisy observations of user u at action j.
    The mean of n Gaussian observations is drawn directly as value + N(0, sigma^2/n).
    """
    if isinstance(values, list):
        values = np.array([p.values for p in values])
    idx = np.array([a for a, _ in schedule], dtype=int)
    counts = np.array([c for _, c in schedule], dtype=float)
    noise = rng.standard_normal((values.shape[0], len(idx))) * (sigma / np.sqrt(counts))
    return values[:, idx] + noise


def communication_cost(n_participants: int, n_scalars: int) -> int:
    """Scalars uploaded in one phase: every participant sends one value per action."""
    return int(n_participants) * int(n_scalars)
