"""Saab transform: a constant DC anchor, PCA anchors on the DC-free residual, and a
shared bias that keeps responses on training data non-negative."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, InsufficientDataError

# eigenvalues below these floors (relative to the leading eigenvalue and to the
# squared mean offset) are rounding noise and are zeroed
_NOISE_FLOOR = 1e-12
_OFFSET_FLOOR = 1e-24


@dataclass(frozen=True)
class EnergyPolicy:
    threshold: float = 0.98
    max_filters: int | None = None

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError(f"energy threshold must lie in (0, 1], got {self.threshold}")
        if self.max_filters is not None and self.max_filters < 0:
            raise ConfigError("max_filters must be non-negative")


@dataclass
class SaabFilterBank:
    n: int
    ac_anchors: np.ndarray  # (F-1, n)
    ac_eigenvalues: np.ndarray  # (F-1,), descending
    bias: float
    spectrum: np.ndarray = field(default_factory=lambda: np.zeros(0))  # all AC eigenvalues

    def __post_init__(self):
        # one memory layout, so a reloaded bank takes the same BLAS path
        self.ac_anchors = np.ascontiguousarray(self.ac_anchors, dtype=np.float64)
        self.ac_eigenvalues = np.ascontiguousarray(self.ac_eigenvalues, dtype=np.float64)
        self.spectrum = np.ascontiguousarray(self.spectrum, dtype=np.float64)

    @property
    def F(self) -> int:
        return 1 + self.ac_anchors.shape[0]

    @property
    def dc_anchor(self) -> np.ndarray:
        return np.full(self.n, 1.0 / np.sqrt(self.n))

    @property
    def anchors(self) -> np.ndarray:
        """All anchors as rows, DC first."""
        return np.vstack([self.dc_anchor[None, :], self.ac_anchors])


class SaabMoments:
    """Streaming mean / scatter accumulator for window vectors.

    Batches are centred on their own mean before forming the scatter matrix and
    merged with the pairwise update, which stays accurate when the vectors sit
    on a large common offset (the bias of an earlier stage).
    """

    def __init__(self, n: int):
        self.n = n
        self.count = 0
        self.mean = np.zeros(n)
        self.scatter = np.zeros((n, n))
        self.max_norm = 0.0

    def update(self, rows: np.ndarray, fit_rows: np.ndarray | None = None) -> "SaabMoments":
        """Add a batch. ``fit_rows`` (a subsample of ``rows``) feeds the covariance
        when given; the bias always sees every row."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.n:
            raise DimensionError(f"expected rows of length {self.n}, got shape {rows.shape}")
        if rows.shape[0] == 0:
            return self
        self.max_norm = max(self.max_norm, float(np.sqrt(np.einsum("ij,ij->i", rows, rows).max())))
        src = rows if fit_rows is None else np.asarray(fit_rows, dtype=np.float64)
        m = src.mean(axis=0)
        c = src - m
        self._merge(src.shape[0], m, c.T @ c)
        return self

    def merge(self, other: "SaabMoments") -> "SaabMoments":
        if other.n != self.n:
            raise DimensionError("cannot merge moments of different length")
        self.max_norm = max(self.max_norm, other.max_norm)
        if other.count:
            self._merge(other.count, other.mean, other.scatter)
        return self

    def _merge(self, nb: int, mb: np.ndarray, sb: np.ndarray) -> None:
        na = self.count
        if na == 0:
            self.count, self.mean, self.scatter = nb, mb.copy(), sb.copy()
            return
        tot = na + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / tot)
        self.scatter = self.scatter + sb + np.outer(delta, delta) * (na * nb / tot)
        self.count = tot

    @property
    def covariance(self) -> np.ndarray:
        return self.scatter / self.count


def dc_complement(n: int) -> np.ndarray:
    """Orthonormal basis (n, n-1) of the subspace orthogonal to the DC anchor.

    Columns 2..n of the Householder reflection that maps e1 onto the DC anchor.
    """
    a0 = np.full(n, 1.0 / np.sqrt(n))
    u = a0.copy()
    u[0] -= 1.0
    nu = np.linalg.norm(u)
    if nu == 0.0:
        return np.zeros((n, 0))
    u /= nu
    H = np.eye(n) - 2.0 * np.outer(u, u)
    return H[:, 1:]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry positive, ties to the lowest index
    mags = np.round(np.abs(vectors), 12)
    idx = np.argmax(mags, axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def select_count(eigenvalues: np.ndarray, threshold: float) -> int:
    """Smallest number of leading eigenvalues whose share of the total reaches ``threshold``."""
    if eigenvalues.size == 0:
        return 0
    csum = np.cumsum(eigenvalues)
    if csum[-1] <= 0.0:
        return 0
    frac = csum / csum[-1]
    return int(np.searchsorted(frac, threshold - 1e-12, side="left")) + 1


def bank_from_moments(moments: SaabMoments, policy: EnergyPolicy) -> SaabFilterBank:
    n = moments.n
    if moments.count < 2:
        raise InsufficientDataError(f"need at least 2 samples to fit a Saab bank, got {moments.count}")
    Q = dc_complement(n)
    if Q.shape[1] == 0:
        return SaabFilterBank(n, np.zeros((0, n)), np.zeros(0), moments.max_norm, np.zeros(0))
    cov_ac = Q.T @ moments.covariance @ Q
    cov_ac = 0.5 * (cov_ac + cov_ac.T)
    w, V = np.linalg.eigh(cov_ac)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    floor = _NOISE_FLOOR * max(float(w[0]), 0.0) + _OFFSET_FLOOR * float(moments.mean @ moments.mean)
    w = np.where(w > floor, w, 0.0)
    n_ac = select_count(w, policy.threshold)
    if policy.max_filters is not None:
        n_ac = min(n_ac, policy.max_filters)
    n_ac = min(n_ac, n - 1)
    anchors = _fix_signs((Q @ V[:, :n_ac]).T) if n_ac else np.zeros((0, n))
    return SaabFilterBank(n, anchors, w[:n_ac].copy(), moments.max_norm, w)


def fit_saab(samples: np.ndarray, policy: EnergyPolicy | None = None) -> SaabFilterBank:
    """Fit a bank on a ``(J, n)`` matrix of flattened windows."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise DimensionError(f"samples must be a 2-D matrix, got shape {samples.shape}")
    if samples.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {samples.shape[0]}")
    if not np.all(np.isfinite(samples)):
        raise DimensionError("samples contain non-finite values")
    moments = SaabMoments(samples.shape[1]).update(samples)
    return bank_from_moments(moments, policy or EnergyPolicy())


def apply_saab(bank: SaabFilterBank, samples: np.ndarray) -> np.ndarray:
    """Project rows onto the DC and AC anchors and add the bias: ``(J, F)``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != bank.n:
        raise DimensionError(f"expected rows of length {bank.n}, got shape {samples.shape}")
    return samples @ bank.anchors.T + bank.bias


def energy_curve(bank: SaabFilterBank) -> list[tuple[int, float]]:
    """Cumulative AC energy fraction after each filter over the full spectrum."""
    spec = bank.spectrum if bank.spectrum.size else bank.ac_eigenvalues
    if spec.size == 0:
        return []
    csum = np.cumsum(spec)
    if csum[-1] <= 0:
        return []
    frac = csum / csum[-1]
    return [(i + 1, float(f)) for i, f in enumerate(frac)]
