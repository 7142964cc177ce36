"""Covariance functions, Gram assembly and greedy information-gain estimates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "Kernel",
    "SquaredExponential",
    "Matern",
    "Linear",
    "Empirical",
    "DecisionSet",
    "KernelError",
    "FactorizationError",
    "amplitude",
    "cholesky_jitter",
    "info_gain_curve",
    "empirical_info_gain",
    "make_kernel",
    "load_matrix_csv",
]

JITTER_REL = 1e-10
JITTER_DOUBLINGS = 8


class KernelError(ValueError):
    """Bad kernel parameters or points the kernel cannot evaluate."""


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky failed even after escalating the diagonal jitter."""


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise KernelError(f"expected a 2-d array of points, got shape {X.shape}")
    return X


class Kernel:
    """Base class. Subclasses implement ``__call__(X, Y)`` returning the cross matrix."""

    name = "kernel"

    def __call__(self, X, Y) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def diag(self, X) -> np.ndarray:
        X = _as_points(X)
        return np.array([self(x, x)[0, 0] for x in X])

    def eval(self, x, x2) -> float:
        """Scalar k(x, x2)."""
        return float(self(x, x2)[0, 0])

    def gram(self, X) -> np.ndarray:
        X = _as_points(X)
        if len(X) == 0:
            raise KernelError("gram needs at least one point")
        K = self(X, X)
        # exact symmetry, cdist can leave round-off asymmetry
        return 0.5 * (K + K.T)

    @staticmethod
    def _check_dims(X, Y):
        X, Y = _as_points(X), _as_points(Y)
        if X.shape[1] != Y.shape[1]:
            raise KernelError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        return X, Y


@dataclass(frozen=True)
class SquaredExponential(Kernel):
    lengthscale: float = 0.2
    name = "se"

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise KernelError("lengthscale must be positive")

    def __call__(self, X, Y):
        X, Y = self._check_dims(X, Y)
        sq = cdist(X, Y, "sqeuclidean")
        return np.exp(-0.5 * sq / self.lengthscale**2)

    def diag(self, X):
        return np.ones(len(_as_points(X)))


@dataclass(frozen=True)
class Matern(Kernel):
    """Matern kernel for half-integer smoothness 1/2, 3/2 and 5/2."""

    lengthscale: float = 0.2
    nu: float = 2.5
    name = "matern"

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise KernelError("lengthscale must be positive")
        if self.nu not in (0.5, 1.5, 2.5):
            raise KernelError(f"Matern smoothness must be 0.5, 1.5 or 2.5, got {self.nu}")

    def __call__(self, X, Y):
        X, Y = self._check_dims(X, Y)
        r = cdist(X, Y, "euclidean") / self.lengthscale
        if self.nu == 0.5:
            return np.exp(-r)
        if self.nu == 1.5:
            s = np.sqrt(3.0) * r
            return (1.0 + s) * np.exp(-s)
        s = np.sqrt(5.0) * r
        return (1.0 + s + s * s / 3.0) * np.exp(-s)

    def diag(self, X):
        return np.ones(len(_as_points(X)))


@dataclass(frozen=True)
class Linear(Kernel):
    name = "linear"

    def __call__(self, X, Y):
        X, Y = self._check_dims(X, Y)
        return X @ Y.T

    def diag(self, X):
        X = _as_points(X)
        return np.einsum("ij,ij->i", X, X)


@dataclass(frozen=True, eq=False)
class Empirical(Kernel):
    """Kernel given as a fixed matrix over an indexed point set.

    ``points`` defaults to the indices ``0..n-1`` as one-dimensional points.
    """

    matrix: np.ndarray
    points: np.ndarray | None = None
    _index: dict = field(init=False, repr=False, compare=False)
    name = "empirical"

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise KernelError(f"empirical kernel matrix must be square, got {M.shape}")
        if not np.allclose(M, M.T, atol=1e-12, rtol=0):
            raise KernelError("empirical kernel matrix is not symmetric")
        n = M.shape[0]
        P = np.arange(n, dtype=float)[:, None] if self.points is None else _as_points(self.points)
        if len(P) != n:
            raise KernelError(f"{len(P)} points for a {n}x{n} matrix")
        object.__setattr__(self, "matrix", 0.5 * (M + M.T))
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "_index", {p.tobytes(): i for i, p in enumerate(P)})

    def indices(self, X) -> np.ndarray:
        X = _as_points(X)
        if X.shape[1] != self.points.shape[1]:
            raise KernelError(f"dimension mismatch: {X.shape[1]} vs {self.points.shape[1]}")
        try:
            return np.array([self._index[x.tobytes()] for x in X], dtype=int)
        except KeyError as exc:
            raise KernelError("point is not in the empirical kernel's index set") from exc

    def __call__(self, X, Y):
        return self.matrix[np.ix_(self.indices(X), self.indices(Y))]

    def diag(self, X):
        i = self.indices(X)
        return self.matrix[i, i]


@dataclass(frozen=True, eq=False)
class DecisionSet:
    """Finite ordered set of distinct actions, stored as an (n, d) array."""

    points: np.ndarray

    def __post_init__(self):
        P = _as_points(self.points).copy()
        P.setflags(write=False)
        if len(P) == 0:
            raise ValueError("decision set is empty")
        if len({p.tobytes() for p in P}) != len(P):
            raise ValueError("decision set points must be distinct")
        object.__setattr__(self, "points", P)

    def __len__(self):
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1]


def amplitude(kernel: Kernel, X) -> float:
    """kappa^2 = max_x k(x, x) over the given points."""
    return float(np.max(kernel.diag(X)))


def cholesky_jitter(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding relative jitter only if the plain factorization fails."""
    K = np.asarray(K, dtype=float)
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    n = K.shape[0]
    scale = np.trace(K) / n if n else 0.0
    jitter = JITTER_REL * (scale if scale > 0 else 1.0)
    eye = np.eye(n)
    for _ in range(JITTER_DOUBLINGS + 1):
        try:
            return np.linalg.cholesky(K + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise FactorizationError(f"Cholesky failed with jitter up to {jitter / 2:.3g}")


def info_gain_curve(kernel: Kernel, points, t_max: int, lam: float) -> np.ndarray:
    """Greedy information gain for every budget 0..t_max.

    Each step picks the point of largest posterior variance (repeats allowed) and
    adds 1/2 log(1 + var/lam), which is the log-det increment of that choice.
    Works on the posterior covariance over ``points`` with rank-one updates.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    cov = np.array(kernel.gram(points), dtype=float)
    out = np.zeros(t_max + 1)
    acc = 0.0
    for t in range(1, t_max + 1):
        d = np.diagonal(cov)
        i = int(np.argmax(d))
        var = max(float(d[i]), 0.0)
        acc += 0.5 * np.log1p(var / lam)
        out[t] = acc
        col = cov[:, i].copy()
        cov -= np.outer(col, col) / (lam + var)
    return out


def empirical_info_gain(kernel: Kernel, points, t: int, lam: float, max_t: int | None = None) -> float:
    """Greedy lower estimate of the maximum information gain after ``t`` picks.

    ``max_t`` caps the supported budget; it defaults to ten picks per point.
    """
    n = len(_as_points(points))
    cap = 10 * n if max_t is None else int(max_t)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t > cap:
        raise ValueError(f"t={t} exceeds the supported budget {cap}")
    if t == 0:
        return 0.0
    return float(info_gain_curve(kernel, points, t, lam)[t])


def load_matrix_csv(path) -> np.ndarray:
    M = np.loadtxt(path, delimiter=",", ndmin=2)
    return M


def make_kernel(cfg: dict, points=None) -> Kernel:
    """Build a kernel from a config block ``{type, lengthscale?, nu?, matrix_path?}``."""
    kind = cfg.get("type")
    if kind == "se":
        return SquaredExponential(float(cfg.get("lengthscale", 0.2)))
    if kind == "matern":
        return Matern(float(cfg.get("lengthscale", 0.2)), float(cfg.get("nu", 2.5)))
    if kind == "linear":
        return Linear()
    if kind == "empirical":
        path = cfg.get("matrix_path")
        if not path:
            raise KernelError("empirical kernel needs matrix_path")
        return Empirical(load_matrix_csv(path), points)
    raise KernelError(f"unknown kernel type {kind!r}")
