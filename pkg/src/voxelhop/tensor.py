"""Dense volume primitives: window extraction, max pooling and aggregation pooling.

Volumes are row-major ``(s1, s2, k, c)`` arrays with a square horizontal plane.
A single-channel *slab* is ``(S, S, K)``. Inside the cascade the vertical axis
carries a feature group: ``K = Kv * group`` where ``Kv`` counts vertical voxel
positions and ``group`` is the number of filters per position, stored
contiguously. ``group=1`` is the plain case.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError


@dataclass(frozen=True)
class WindowSpec:
    s: int
    k: int
    stride: int = 1

    def __post_init__(self):
        if self.s < 1 or self.k < 1:
            raise DimensionError(f"window sizes must be >= 1, got s={self.s}, k={self.k}")
        if self.stride != 1:
            raise DimensionError("only stride 1 is supported")


POOL_MODES = ("horizontal", "full", "none")


@dataclass(frozen=True)
class PoolSpec:
    mode: str = "horizontal"
    group: int = 1

    def __post_init__(self):
        if self.mode not in POOL_MODES:
            raise DimensionError(f"unknown pool mode {self.mode!r}")
        if self.group < 1:
            raise DimensionError("pool group must be >= 1")


def validate_volume(x) -> np.ndarray:
    """Check the Volume4D invariants and return the data as a float array."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"volume must be 4-D (S, S, K, C), got shape {x.shape}")
    if x.shape[0] != x.shape[1]:
        raise DimensionError(f"horizontal dims must be equal, got {x.shape[:2]}")
    if min(x.shape) < 1:
        raise DimensionError(f"empty volume {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise DimensionError("volume contains non-finite values")
    return x


def _as_slab(vol) -> np.ndarray:
    vol = np.asarray(vol)
    if vol.ndim == 4:
        if vol.shape[3] != 1:
            raise DimensionError(f"expected a single-channel slab, got {vol.shape[3]} channels")
        vol = vol[..., 0]
    if vol.ndim != 3:
        raise DimensionError(f"slab must be (S, S, K), got shape {vol.shape}")
    if vol.shape[0] != vol.shape[1]:
        raise DimensionError(f"horizontal dims must be equal, got {vol.shape[:2]}")
    return vol


def _grouped(slab: np.ndarray, group: int) -> np.ndarray:
    S, _, K = slab.shape
    if group < 1 or K % group:
        raise DimensionError(f"vertical extent {K} is not a multiple of group {group}")
    return slab.reshape(S, S, K // group, group)


def window_count(S: int, K: int, spec: WindowSpec, group: int = 1) -> int:
    return (S - spec.s + 1) ** 2 * (K // group - spec.k // group + 1)


def extract_windows(vol, spec: WindowSpec, group: int = 1) -> np.ndarray:
    """Flatten every ``s x s x k`` neighbourhood of a slab into one row.

    Rows follow window origins in lexicographic ``(s1, s2, k)`` order and each
    row is the window in the same order. With ``group > 1`` vertical origins
    advance one voxel position (``group`` flat entries) at a time and ``spec.k``
    must be a multiple of ``group``.
    """
    slab = _as_slab(vol)
    S, _, K = slab.shape
    if spec.k % group:
        raise DimensionError(f"window height {spec.k} is not a multiple of group {group}")
    g = _grouped(slab, group)
    v = spec.k // group
    if spec.s > S or v > g.shape[2]:
        raise DimensionError(
            f"window {spec.s}x{spec.s}x{spec.k} does not fit in slab {S}x{S}x{K}"
        )
    view = sliding_window_view(g, (spec.s, spec.s, v, group))
    n_rows = view.shape[0] * view.shape[1] * view.shape[2]
    return view.reshape(n_rows, spec.s * spec.s * spec.k)


def _block_max(arr: np.ndarray, axis: int, size: int, partial: bool = False) -> np.ndarray:
    n = arr.shape[axis]
    if size == 1:
        return arr
    if n % size and not partial:
        raise DimensionError(f"extent {n} is not divisible by pooling size {size}")
    if size > n:
        raise DimensionError(f"pooling size {size} exceeds extent {n}")
    starts = np.arange(0, n, size)
    return np.maximum.reduceat(arr, starts, axis=axis)


def maxpool(vol, spec: PoolSpec) -> np.ndarray:
    """Non-overlapping max pooling of a slab.

    ``horizontal`` pools 2x2x1. ``full`` pools 2x2 horizontally and two
    adjacent vertical positions, keeping the per-filter group: output entry
    ``f`` of a block is the max of entry ``f`` over the 2x2x2 positions.
    ``none`` returns the slab unchanged.
    """
    slab = _as_slab(vol)
    if spec.mode == "none":
        return slab
    if slab.shape[0] % 2:
        raise DimensionError(f"horizontal extent {slab.shape[0]} is odd")
    out = _block_max(slab, 0, 2)
    out = _block_max(out, 1, 2)
    if spec.mode == "full":
        g = _grouped(out, spec.group)
        if g.shape[2] % 2:
            raise DimensionError(
                f"vertical extent {slab.shape[2]} is not divisible by 2*group={2 * spec.group}"
            )
        g = _block_max(g, 2, 2)
        out = g.reshape(g.shape[0], g.shape[1], -1)
    return out


def aggregate_pool(vol, ratio_h: int, ratio_v: int, group: int = 1, partial: bool = False) -> np.ndarray:
    """Block-max a slab down to ``P x P x Q`` positions (times ``group``).

    ``P = S / ratio_h`` and ``Q = Kv / ratio_v``. With ``partial=True`` the last
    block along an axis may be short, giving ``ceil`` sizes instead of an error.
    """
    # a ratio of 1 is only allowed on one axis; (1, 1) would be an identity
    if min(ratio_h, ratio_v) < 1 or max(ratio_h, ratio_v) < 2:
        raise DimensionError(f"illegal aggregation ratios ({ratio_h}, {ratio_v})")
    slab = _as_slab(vol)
    out = _block_max(slab, 0, ratio_h, partial)
    out = _block_max(out, 1, ratio_h, partial)
    g = _block_max(_grouped(out, group), 2, ratio_v, partial)
    return g.reshape(g.shape[0], g.shape[1], -1)


def global_pool(vol, group: int = 1) -> np.ndarray:
    """Max over the whole horizontal plane and all vertical positions: ``1 x 1 x group``."""
    g = _grouped(_as_slab(vol), group)
    return g.max(axis=(0, 1, 2)).reshape(1, 1, group)


@dataclass(frozen=True)
class AggregationSpec:
    """How one stage's attribute slab is summarised before feature selection.

    ``mode="ratio"`` block-maxes by ``ratio_h`` horizontally and ``ratio_v``
    vertically (``partial`` allows a short trailing block); ``mode="global"``
    reduces the whole slab to one position.
    """

    ratio_h: int = 4
    ratio_v: int = 4
    partial: bool = False
    mode: str = "ratio"

    def __post_init__(self):
        if self.mode not in ("ratio", "global"):
            raise DimensionError(f"unknown aggregation mode {self.mode!r}")

    def output_dims(self, S: int, Kv: int) -> tuple[int, int]:
        """``(P, Q)`` for an ``S x S x Kv`` input, or DimensionError."""
        if self.mode == "global":
            return 1, 1
        if min(self.ratio_h, self.ratio_v) < 1 or max(self.ratio_h, self.ratio_v) < 2:
            raise DimensionError(f"illegal aggregation ratios ({self.ratio_h}, {self.ratio_v})")
        dims = []
        for n, r in ((S, self.ratio_h), (Kv, self.ratio_v)):
            if r > n:
                raise DimensionError(f"aggregation ratio {r} exceeds extent {n}")
            if n % r and not self.partial:
                raise DimensionError(f"extent {n} is not divisible by aggregation ratio {r}")
            dims.append(-(-n // r))
        return dims[0], dims[1]

    def apply(self, vol, group: int = 1) -> np.ndarray:
        if self.mode == "global":
            return global_pool(vol, group)
        return aggregate_pool(vol, self.ratio_h, self.ratio_v, group, self.partial)
