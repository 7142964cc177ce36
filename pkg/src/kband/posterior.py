"""Gaussian-process posteriors: per-round, batch-weighted and finite-set incremental forms."""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .kernels import Kernel, _as_points, cholesky_jitter

__all__ = ["BatchedPosterior", "StandardPosterior", "FiniteSetPosterior", "default_lambda"]


def default_lambda(sigma: float, v: float = 1.0) -> float:
    """Regularizer: sigma^2, or sigma^2 / v^2 when a bias scale other than 1 is set."""
    if v in (0.0, 1.0):
        return sigma**2
    return sigma**2 / v**2


class BatchedPosterior:
    """Posterior variance/mean built from distinct actions with repetition weights.

    Each action ``a_i`` was played ``w_i`` times; the regularized Gram is
    ``K_AA + lam * diag(1 / w)``. Re-appending an action that is already present
    (bitwise-equal coordinates) adds to its weight instead of creating a new row.
    """

    def __init__(self, kernel: Kernel, lam: float):
        if not lam > 0:
            raise ValueError("lam must be positive")
        self.kernel = kernel
        self.lam = float(lam)
        self._actions: list[np.ndarray] = []
        self._weights: list[int] = []
        self._slot: dict[bytes, int] = {}
        self._chol: np.ndarray | None = None
        self._A: np.ndarray | None = None

    def __len__(self):
        return len(self._actions)

    @property
    def actions(self) -> np.ndarray:
        if not self._actions:
            return np.empty((0, 0))
        return np.array(self._actions)

    @property
    def weights(self) -> np.ndarray:
        return np.array(self._weights, dtype=int)

    def append(self, a, count: int) -> "BatchedPosterior":
        count = int(count)
        if count < 1:
            raise ValueError("count must be at least 1")
        a = np.asarray(a, dtype=float).ravel()
        key = a.tobytes()
        if key in self._slot:
            self._weights[self._slot[key]] += count
        else:
            self._slot[key] = len(self._actions)
            self._actions.append(a.copy())
            self._weights.append(count)
        self._refresh()
        return self

    def _refresh(self):
        A = np.array(self._actions)
        w = np.array(self._weights, dtype=float)
        M = self.kernel.gram(A) + np.diag(self.lam / w)
        self._A = A
        self._chol = cholesky_jitter(M)

    def variance(self, X) -> np.ndarray:
        """Posterior variance at each row of X (prior variance if nothing appended)."""
        X = _as_points(X)
        kxx = self.kernel.diag(X)
        if not self._actions:
            return kxx
        V = solve_triangular(self._chol, self.kernel(self._A, X), lower=True)
        return np.clip(kxx - np.einsum("ij,ij->j", V, V), 0.0, None)

    def mean(self, X, ybar) -> np.ndarray:
        """Posterior mean at each row of X given per-action averaged feedback."""
        X = _as_points(X)
        ybar = np.asarray(ybar, dtype=float).ravel()
        if len(ybar) != len(self._actions):
            raise ValueError(f"expected {len(self._actions)} feedback values, got {len(ybar)}")
        if not self._actions:
            return np.zeros(len(X))
        coef = cho_solve((self._chol, True), ybar)
        return self.kernel(X, self._A) @ coef


class StandardPosterior:
    """Plain per-round posterior: history of points (repeats allowed) and observations."""

    def __init__(self, kernel: Kernel, lam: float, X=None, y=None):
        if not lam > 0:
            raise ValueError("lam must be positive")
        self.kernel = kernel
        self.lam = float(lam)
        self.X: list[np.ndarray] = []
        self.y: list[float] = []
        if X is not None:
            for x, v in zip(_as_points(X), np.asarray(y, dtype=float)):
                self.add(x, v)

    def add(self, x, y: float):
        self.X.append(np.asarray(x, dtype=float).ravel())
        self.y.append(float(y))

    def mean_var(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = _as_points(X)
        kxx = self.kernel.diag(X)
        if not self.X:
            return np.zeros(len(X)), kxx
        H = np.array(self.X)
        L = cholesky_jitter(self.kernel.gram(H) + self.lam * np.eye(len(H)))
        kHx = self.kernel(H, X)
        mu = kHx.T @ cho_solve((L, True), np.array(self.y))
        V = solve_triangular(L, kHx, lower=True)
        var = np.clip(kxx - np.einsum("ij,ij->j", V, V), 0.0, None)
        return mu, var


class FiniteSetPosterior:
    """Posterior over the function values on a fixed finite set of points.

    One observation at a time via the rank-one covariance update, which gives the
    same mean and variance as ``StandardPosterior`` restricted to those points,
    at O(n^2) per observation regardless of history length.
    """

    def __init__(self, gram: np.ndarray, lam: float):
        if not lam > 0:
            raise ValueError("lam must be positive")
        self.cov = np.array(gram, dtype=float)
        self.mu = np.zeros(len(self.cov))
        self.lam = float(lam)

    def observe(self, i: int, y: float | None = None):
        """Condition on one noisy observation at point ``i``; ``y=None`` updates variance only."""
        col = self.cov[:, i].copy()
        s = self.lam + max(col[i], 0.0)
        if y is not None:
            self.mu += col * ((y - self.mu[i]) / s)
        self.cov -= np.outer(col, col) / s

    def variance(self) -> np.ndarray:
        return np.clip(np.diagonal(self.cov), 0.0, None)

    def mean_from_sums(self, sums: np.ndarray) -> np.ndarray:
        """Posterior mean given per-point sums of all observations absorbed so far.

        Uses mean = cov_post @ sums / lam, valid when ``observe`` was called once per
        observation (with or without values).
        """
        return self.cov @ np.asarray(sums, dtype=float) / self.lam
