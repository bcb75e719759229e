"""Label-assisted regression (LAG).

Each class is clustered into ``L`` groups; every training sample gets a soft
membership vector over its own class's centers (zeros for the other classes);
a least-squares affine map then takes attribute vectors to these ``M * L``
dimensional targets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, InsufficientDataError
from .rng import stream

RCOND = 1e-10


@dataclass
class LagUnit:
    centers: np.ndarray  # (M*L, n), class-major
    omega: float
    regression: np.ndarray  # (M*L, n+1); last column is the bias
    M: int
    L: int

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        self.regression = np.ascontiguousarray(self.regression, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.centers.shape[1]

    @property
    def out_dim(self) -> int:
        return self.M * self.L


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_pp_init(X: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    J = X.shape[0]
    chosen = [int(rng.integers(J))]
    d2 = _sq_dists(X, X[chosen])[:, 0]
    for _ in range(1, L):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(J, p=d2 / total))
        else:
            # every point coincides with a chosen center
            idx = next(i for i in range(J) if i not in chosen)
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[[idx]])[:, 0])
    return X[chosen].copy()


def kmeans(X: np.ndarray, L: int, rng: np.random.Generator,
           max_iter: int = 300, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from a k-means++ start.

    Returns ``(centers, assignment)``. Equidistant points go to the lowest
    center index; a cluster that empties keeps its previous center.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < L:
        raise InsufficientDataError(f"cannot form {L} clusters from {X.shape[0]} samples")
    centers = kmeans_pp_init(X, L, rng)
    assign = np.argmin(_sq_dists(X, centers), axis=1)
    for _ in range(max_iter):
        new = centers.copy()
        for l in range(L):
            members = assign == l
            if members.any():
                new[l] = X[members].mean(axis=0)
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        assign = np.argmin(_sq_dists(X, centers), axis=1)
        if shift < tol:
            break
    return centers, assign


def soft_assoc(x: np.ndarray, centers: np.ndarray, omega: float) -> np.ndarray:
    """Softmax of ``-omega * distance`` from ``x`` (or each row of ``x``) to the centers."""
    if omega <= 0:
        raise ConfigError(f"omega must be positive, got {omega}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    d = np.sqrt(_sq_dists(np.atleast_2d(x), np.asarray(centers, dtype=np.float64)))
    z = -omega * (d - d.min(axis=1, keepdims=True))
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def prob_targets(X: np.ndarray, labels: np.ndarray, centers: np.ndarray,
                 M: int, L: int, omega: float) -> np.ndarray:
    T = np.zeros((X.shape[0], M * L))
    for m in range(M):
        rows = labels == m
        if rows.any():
            T[rows, m * L:(m + 1) * L] = soft_assoc(X[rows], centers[m * L:(m + 1) * L], omega)
    return T


def affine_lstsq(X: np.ndarray, T: np.ndarray, rcond: float = RCOND) -> np.ndarray:
    """Minimum-norm least-squares affine map ``T ~ X @ A.T + b``; returns ``[A | b]``.

    Columns are centred before the SVD-based solve so a large common offset in
    the inputs does not swamp the rank decision.
    """
    mu = X.mean(axis=0)
    Xc = X - mu
    W, *_ = np.linalg.lstsq(Xc, T - T.mean(axis=0), rcond=rcond)
    A = W.T
    b = T.mean(axis=0) - A @ mu
    return np.hstack([A, b[:, None]])


def fit_lag(features: np.ndarray, labels, L: int = 3, omega: float = 10.0,
            seed: int = 0, M: int | None = None, key: tuple = ()) -> LagUnit:
    """Cluster each class, build soft targets and solve the regression.

    Class ``m`` is clustered with the random stream ``(seed, *key, m)``.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise DimensionError(f"features must be (J, n) with J={labels.size}, got {X.shape}")
    if omega <= 0:
        raise ConfigError(f"omega must be positive, got {omega}")
    if L < 1:
        raise ConfigError("L must be >= 1")
    M = M or max(2, int(labels.max()) + 1)
    centers = np.zeros((M * L, X.shape[1]))
    for m in range(M):
        Xm = X[labels == m]
        if Xm.shape[0] < L:
            raise InsufficientDataError(f"class {m} has {Xm.shape[0]} samples, fewer than L={L}")
        centers[m * L:(m + 1) * L], _ = kmeans(Xm, L, stream(seed, *key, m))
    T = prob_targets(X, labels, centers, M, L, omega)
    return LagUnit(centers, float(omega), affine_lstsq(X, T), M, L)


def apply_lag(unit: LagUnit, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != unit.n:
        raise DimensionError(f"expected features of length {unit.n}, got {X.shape[1]}")
    return X @ unit.regression[:, :-1].T + unit.regression[:, -1]
