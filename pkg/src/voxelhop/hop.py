"""Cascaded channel-wise VoxelHop stages: window extraction, Saab, max pooling.

Each channel runs through its own chain of Saab banks. Stage outputs are kept
as grouped arrays ``(S, S, Kv, F)``: ``Kv`` vertical positions each carrying the
``F`` responses of the stage's filters. A stage's window covers ``v``
consecutive vertical positions of the previous output (``k = v * F_prev``).
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, InsufficientDataError
from .saab import EnergyPolicy, SaabFilterBank, SaabMoments, apply_saab, bank_from_moments
from .tensor import AggregationSpec, PoolSpec, WindowSpec, extract_windows, maxpool

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageConfig:
    s: int = 3
    v: int = 3
    energy: EnergyPolicy = field(default_factory=EnergyPolicy)
    pool: str = "horizontal"

    def __post_init__(self):
        if self.s < 1 or self.v < 1:
            raise ConfigError(f"stage window sizes must be >= 1, got s={self.s}, v={self.v}")
        PoolSpec(self.pool)


@dataclass
class HopCascade:
    stages: list[StageConfig]
    banks: list[list[SaabFilterBank]]  # [stage][channel]
    input_dims: tuple[int, int, int]  # (S0, K0, C)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def channels(self) -> int:
        return self.input_dims[2]


# -- single stage ----------------------------------------------------------------

def _windows(slab: np.ndarray, cfg: StageConfig) -> np.ndarray:
    S, _, Kv, F = slab.shape
    return extract_windows(slab.reshape(S, S, Kv * F), WindowSpec(cfg.s, cfg.v * F), group=F)


def _fit_rows(rows: np.ndarray, row_cap: int | None) -> np.ndarray | None:
    if row_cap is None or rows.shape[0] <= row_cap:
        return None
    return rows[:: math.ceil(rows.shape[0] / row_cap)]


def fit_stage_bank(slabs: Sequence[np.ndarray], cfg: StageConfig,
                   row_cap: int | None = None) -> SaabFilterBank:
    """Fit one Saab bank on the windows of every slab, one slab at a time."""
    if len(slabs) == 0:
        raise InsufficientDataError("no training slabs")
    shape = slabs[0].shape
    moments = None
    for slab in slabs:
        if slab.shape != shape:
            raise DimensionError(f"inconsistent sample dims {slab.shape} vs {shape}")
        rows = _windows(slab, cfg)
        if moments is None:
            moments = SaabMoments(rows.shape[1])
        moments.update(rows, _fit_rows(rows, row_cap))
    return bank_from_moments(moments, cfg.energy)


def stage_forward(bank: SaabFilterBank, slab: np.ndarray,
                  cfg: StageConfig) -> tuple[np.ndarray, np.ndarray]:
    """Transform one grouped slab; returns ``(pre_pool, pooled)``, both grouped."""
    S, _, Kv, F = slab.shape
    rows = _windows(slab, cfg)
    So, Ko = S - cfg.s + 1, Kv - cfg.v + 1
    out = apply_saab(bank, rows).reshape(So, So, Ko, bank.F)
    pooled = maxpool(out.reshape(So, So, Ko * bank.F), PoolSpec(cfg.pool, bank.F))
    return out, pooled.reshape(pooled.shape[0], pooled.shape[1], -1, bank.F)


def fit_stage(slabs: Sequence[np.ndarray], cfg: StageConfig,
              row_cap: int | None = None) -> tuple[SaabFilterBank, list[np.ndarray]]:
    """Fit a bank on one channel's slabs across all samples and return it with
    the pooled outputs. Plain ``(S, S, K)`` slabs are treated as ``F = 1``."""
    slabs = [as_grouped(s) for s in slabs]
    bank = fit_stage_bank(slabs, cfg, row_cap)
    return bank, [stage_forward(bank, s, cfg)[1] for s in slabs]


def as_grouped(slab: np.ndarray) -> np.ndarray:
    slab = np.asarray(slab, dtype=np.float64)
    if slab.ndim == 3:
        return slab[..., None]
    if slab.ndim != 4:
        raise DimensionError(f"expected a 3-D or grouped 4-D slab, got shape {slab.shape}")
    return slab


# -- cascade -----------------------------------------------------------------------

Sink = Callable[[int, int, int, np.ndarray], None]


def fit_cascade(volumes: Sequence[np.ndarray], stages: Sequence[StageConfig],
                sink: Sink | None = None, row_cap: int | None = None,
                workers: int = 1) -> HopCascade:
    """Fit every stage of every channel, feedforward.

    ``sink(stage, sample, channel, pre_pool)`` receives each pre-pool output as it
    is produced, so callers can aggregate without keeping all outputs alive.
    Channels are independent; with ``workers > 1`` up to that many run
    concurrently (peak memory grows accordingly), otherwise one after another.
    The result does not depend on ``workers``.
    """
    if not stages:
        raise ConfigError("a cascade needs at least one stage")
    if len(volumes) < 2:
        raise InsufficientDataError("need at least 2 training volumes")
    shape = volumes[0].shape
    for vol in volumes:
        if vol.shape != shape:
            raise DimensionError(f"inconsistent sample dims {vol.shape} vs {shape}")
    S0, _, K0, C = shape
    report = plan_shapes((S0, K0, C), stages)
    if not report.ok:
        raise ConfigError(report.reason, report)

    def channel(c: int) -> list[SaabFilterBank]:
        current = [np.asarray(v[..., c], dtype=np.float64)[..., None] for v in volumes]
        fitted = []
        for i, cfg in enumerate(stages):
            bank = fit_stage_bank(current, cfg, row_cap)
            log.debug("stage %d channel %d: F=%d n=%d", i + 1, c, bank.F, bank.n)
            fitted.append(bank)
            for j, slab in enumerate(current):
                out, pooled = stage_forward(bank, slab, cfg)
                if sink is not None:
                    sink(i, j, c, out)
                current[j] = pooled
        return fitted

    workers = max(1, min(workers, C))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            per_channel = list(ex.map(channel, range(C)))
    else:
        per_channel = [channel(c) for c in range(C)]
    banks = [[per_channel[c][i] for c in range(C)] for i in range(len(stages))]
    return HopCascade(list(stages), banks, (S0, K0, C))


def iter_cascade(cascade: HopCascade, x: np.ndarray, channel: int):
    """Yield the pre-pool output of each stage for one channel of one volume."""
    slab = np.asarray(x[..., channel], dtype=np.float64)[..., None]
    for cfg, banks in zip(cascade.stages, cascade.banks):
        out, slab = stage_forward(banks[channel], slab, cfg)
        yield out


def apply_cascade(cascade: HopCascade, x: np.ndarray) -> list[list[np.ndarray]]:
    """Per-stage, per-channel pre-pool attribute arrays ``(S_i, S_i, Kv_i, F_i)``."""
    x = np.asarray(x)
    S0, K0, C = cascade.input_dims
    if x.shape != (S0, S0, K0, C):
        raise DimensionError(f"volume shape {x.shape} does not match training dims {(S0, S0, K0, C)}")
    per_stage: list[list[np.ndarray]] = [[] for _ in cascade.stages]
    for c in range(C):
        for i, out in enumerate(iter_cascade(cascade, x, c)):
            per_stage[i].append(out)
    return per_stage


# -- shape planning ----------------------------------------------------------------

@dataclass
class StagePlan:
    stage: int
    in_S: int
    in_Kv: int
    in_F: str
    s: int
    v: int
    out_S: int | None = None
    out_Kv: int | None = None
    pool: str = "none"
    pooled_S: int | None = None
    pooled_Kv: int | None = None
    agg_P: int | None = None
    agg_Q: int | None = None

    @property
    def out_F(self) -> str:
        return f"F{self.stage}"


@dataclass
class ShapePlan:
    channels: int
    rows: list[StagePlan]
    failed_stage: int | None = None
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.failed_stage is None

    def table(self) -> list[tuple[str, str, str]]:
        """Rows of (input size, layer type, filter shape) in the layout of a
        per-stage structure table, symbolic in the filter counts."""
        C = self.channels
        out = []
        for r in self.rows:
            out.append((f"[{r.in_S}x{r.in_S}x({r.in_Kv}x{r.in_F})]x{C}", "M-VoxelHop",
                        f"[{r.out_F} kernels of {r.s}x{r.s}x{r.v}]x{C}"))
            if r.out_S is None:
                break
            pool = {"horizontal": "(2x2x1)-(1x1x1)",
                    "full": f"(2x2x2{r.out_F})-(1x1x{r.out_F})",
                    "none": "-"}[r.pool]
            out.append((f"[{r.out_S}x{r.out_S}x({r.out_Kv}x{r.out_F})]x{C}",
                        "MaxPool" if r.pool != "none" else "Output", pool))
        return out

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "failed_stage": self.failed_stage,
            "reason": self.reason,
            "channels": self.channels,
            "stages": [dict(vars(r), out_F=r.out_F) for r in self.rows],
            "table": [list(t) for t in self.table()],
        }


def plan_shapes(input_dims: tuple[int, int, int], stages: Sequence[StageConfig],
                aggregation: Sequence[AggregationSpec] | None = None) -> ShapePlan:
    """Trace dims through the cascade without touching data.

    Filter counts are data dependent and stay symbolic (``F1``, ``F2``, ...).
    Reports the first stage whose window, pooling or aggregation does not fit.
    """
    S, Kv, C = input_dims
    plan = ShapePlan(C, [])
    if aggregation is not None and len(aggregation) != len(stages):
        plan.failed_stage, plan.reason = 1, (
            f"{len(aggregation)} aggregation entries for {len(stages)} stages")
        return plan
    F = "1"
    for i, cfg in enumerate(stages, start=1):
        row = StagePlan(i, S, Kv, F, cfg.s, cfg.v, pool=cfg.pool)
        plan.rows.append(row)

        def fail(msg):
            plan.failed_stage, plan.reason = i, f"stage {i}: {msg}"
            return plan

        if cfg.s > S or cfg.v > Kv:
            return fail(f"window {cfg.s}x{cfg.s}x{cfg.v} does not fit input {S}x{S}x{Kv}")
        row.out_S, row.out_Kv = S - cfg.s + 1, Kv - cfg.v + 1
        if aggregation is not None:
            try:
                row.agg_P, row.agg_Q = aggregation[i - 1].output_dims(row.out_S, row.out_Kv)
            except DimensionError as e:
                return fail(f"aggregation: {e}")
        if cfg.pool == "none":
            row.pooled_S, row.pooled_Kv = row.out_S, row.out_Kv
        else:
            if row.out_S % 2:
                return fail(f"max pooling needs an even horizontal extent, got {row.out_S}")
            if cfg.pool == "full" and row.out_Kv % 2:
                return fail(f"full max pooling needs an even vertical extent, got {row.out_Kv}")
            row.pooled_S = row.out_S // 2
            row.pooled_Kv = row.out_Kv // 2 if cfg.pool == "full" else row.out_Kv
        S, Kv, F = row.pooled_S, row.pooled_Kv, row.out_F
    return plan
