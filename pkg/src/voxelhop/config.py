"""Run configuration: JSON schema, defaults and bundled presets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .errors import ConfigError, DimensionError
from .hop import ShapePlan, StageConfig, plan_shapes
from .saab import EnergyPolicy
from .select import SUMMARIES
from .tensor import AggregationSpec

PRESETS = ("standard", "ci")


@dataclass
class RunConfig:
    stages: list[StageConfig] = field(default_factory=list)
    aggregation: list[AggregationSpec] = field(default_factory=list)
    keep_fraction: float = 0.6
    L: int = 3
    omega: float = 10.0
    seed: int = 0
    repeats: int = 1
    bins: int = 16
    summary: str = "mean"
    row_cap: int | None = None

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("config needs at least one stage")
        if len(self.aggregation) != len(self.stages):
            raise ConfigError(
                f"{len(self.aggregation)} aggregation entries for {len(self.stages)} stages")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ConfigError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if self.omega <= 0:
            raise ConfigError("omega must be positive")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.summary not in SUMMARIES:
            raise ConfigError(f"summary must be one of {SUMMARIES}")
        if self.row_cap is not None and self.row_cap < 1:
            raise ConfigError("row_cap must be positive")

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def plan(self, input_dims: tuple[int, int, int]) -> ShapePlan:
        return plan_shapes(input_dims, self.stages, self.aggregation)

    def validate(self, input_dims: tuple[int, int, int]) -> ShapePlan:
        plan = self.plan(input_dims)
        if not plan.ok:
            raise ConfigError(f"illegal configuration: {plan.reason}", plan)
        return plan

    def with_energy(self, threshold: float) -> "RunConfig":
        stages = [replace(s, energy=replace(s.energy, threshold=threshold)) for s in self.stages]
        return replace(self, stages=stages)

    def to_dict(self) -> dict:
        stages = []
        for s in self.stages:
            d = {"s": s.s, "v": s.v, "energy_threshold": s.energy.threshold, "pool_mode": s.pool}
            if s.energy.max_filters is not None:
                d["max_filters"] = s.energy.max_filters
            stages.append(d)
        agg = []
        for a in self.aggregation:
            if a.mode == "global":
                agg.append("global")
            else:
                agg.append({"ratio_h": a.ratio_h, "ratio_v": a.ratio_v, "partial": a.partial})
        return {
            "stages": stages,
            "aggregation": agg,
            "keep_fraction": self.keep_fraction,
            "L": self.L,
            "omega": self.omega,
            "seed": self.seed,
            "repeats": self.repeats,
            "bins": self.bins,
            "summary": self.summary,
            "row_cap": self.row_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            stages = [
                StageConfig(
                    s=int(st["s"]),
                    v=int(st["v"]),
                    energy=EnergyPolicy(float(st.get("energy_threshold", 0.98)),
                                        st.get("max_filters")),
                    pool=st.get("pool_mode", "horizontal"),
                )
                for st in d["stages"]
            ]
            agg = []
            for a in d.get("aggregation", []):
                if a == "global" or (isinstance(a, dict) and a.get("mode") == "global"):
                    agg.append(AggregationSpec(mode="global"))
                else:
                    agg.append(AggregationSpec(int(a["ratio_h"]), int(a["ratio_v"]),
                                               bool(a.get("partial", False))))
            known = {"keep_fraction", "L", "omega", "seed", "repeats", "bins", "summary", "row_cap"}
            extra = {k: d[k] for k in known if k in d}
            return cls(stages=stages, aggregation=agg, **extra)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError, DimensionError) as e:
            raise ConfigError(f"malformed config: {e}") from e

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("voxelhop.presets").joinpath(f"{name}.json").read_text()


def load_config(path_or_preset: str | Path) -> RunConfig:
    """Read a config file, or a bundled preset by name."""
    if str(path_or_preset) in PRESETS:
        return RunConfig.from_json(preset_text(str(path_or_preset)))
    try:
        text = Path(path_or_preset).read_text()
    except OSError as e:
        raise FileNotFoundError(f"cannot read config {path_or_preset}: {e}") from e
    return RunConfig.from_json(text)


def standard_config() -> RunConfig:
    return load_config("standard")


def ci_config() -> RunConfig:
    return load_config("ci")
