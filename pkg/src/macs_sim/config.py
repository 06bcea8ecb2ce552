"""Strict JSON run configuration.

Unknown keys are rejected at every level. Only ``seed`` is required, so
``{"seed": 1}`` is a complete config. Seeds of the workload, gate and
calibration sections default to values derived from the top-level seed and
are written out explicitly in the resolved config.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .capacity import CapacityParams
from .core import Topology, build_topology
from .dispatch import DispatchParams, KeepRule, Policy, RerouteScope
from .entropy import EntropyParams, NormScope
from .errors import MacsError, ParseError, RangeError, UnknownFieldError
from .sim import ComputeMode, LatencyModel
from .workload import GateSpec, VisualEntropyProfile, WorkloadSpec

U64 = Field(ge=0, lt=2**64)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)


class TopologySection(_Section):
    num_experts: int = Field(8, ge=1)
    num_devices: int = Field(2, ge=1)


class RoutingSection(_Section):
    k: int = Field(2, ge=1)


class VisualEntropySection(_Section):
    foreground_fraction: float = Field(0.3, ge=0.0, le=1.0)
    fg_logit_scale: float = Field(4.0, gt=0.0)
    bg_logit_scale: float = Field(0.5, gt=0.0)


class WorkloadSection(_Section):
    num_text: int = Field(64, ge=0)
    num_visual: int = Field(448, ge=0)
    feature_dim: int = Field(64, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    visual_entropy_profile: VisualEntropySection = VisualEntropySection()
    groups: int = Field(4, ge=1)
    text_logit_scale: float = Field(2.0, gt=0.0)


class GateSection(_Section):
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    hotspot_experts: Tuple[int, ...] = (0,)
    hotspot_mass: float = Field(0.8, ge=0.0, lt=1.0)
    visual_experts: Tuple[int, ...] = ()
    text_experts: Tuple[int, ...] = ()
    affinity_bonus: float = 0.0
    logit_noise: float = Field(1.0, ge=0.0)
    feature_coupling: float = Field(1.0, ge=0.0)


class EntropySection(_Section):
    delta_semantic: float = Field(1.5, gt=0.0)
    epsilon: float = Field(1e-6, gt=0.0)
    norm_scope: NormScope = NormScope.PER_GROUP


class CapacitySection(_Section):
    gamma0: float = Field(1.0, gt=0.0)
    rho: float = Field(0.6, ge=0.0, le=2.0)
    c_min: float = Field(1.0, gt=0.0)


class DispatchSection(_Section):
    policies: Tuple[Policy, ...] = Field(tuple(Policy), min_length=1)
    eta: float = Field(0.5, ge=0.0, le=1.0)
    reroute_scope: RerouteScope = RerouteScope.LOCAL
    expansion: bool = True
    keep_rule: KeepRule = KeepRule.GATE_DESC


class LatencySection(_Section):
    cost_per_token_compute: float = Field(1.0, ge=0.0)
    cost_per_crossdev_token: float = Field(0.01, ge=0.0)
    cost_per_result_token: float = Field(0.01, ge=0.0)
    compute_mode: ComputeMode = ComputeMode.PER_EXPERT_MAX


class MemorySection(_Section):
    layers: int = Field(48, ge=1)
    hidden_dim: Optional[int] = Field(None, ge=1)
    bytes_per_value: int = Field(2, ge=1)


class CalibrationSection(_Section):
    samples_per_modality: int = Field(8192, ge=1)
    threshold: float = Field(0.1, gt=0.0)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    memory: MemorySection = MemorySection()


class OutputSection(_Section):
    dir: str = "out"
    formats: Tuple[Literal["json", "csv"], ...] = Field(("json", "csv"), min_length=1)


class RunConfig(_Section):
    seed: int = U64
    topology: TopologySection = TopologySection()
    routing: RoutingSection = RoutingSection()
    workload: WorkloadSection = WorkloadSection()
    gates: GateSection = GateSection()
    entropy: EntropySection = EntropySection()
    capacity: CapacitySection = CapacitySection()
    dispatch: DispatchSection = DispatchSection()
    latency: LatencySection = LatencySection()
    calibration: CalibrationSection = CalibrationSection()
    output: OutputSection = OutputSection()

    # -- conversions to library parameter objects ---------------------------

    def build_topology(self) -> Topology:
        return build_topology(self.topology.num_experts, self.topology.num_devices)

    def workload_spec(self) -> WorkloadSpec:
        w = self.workload
        return WorkloadSpec(
            num_text=w.num_text,
            num_visual=w.num_visual,
            feature_dim=w.feature_dim,
            seed=w.seed,
            visual_entropy_profile=VisualEntropyProfile(**w.visual_entropy_profile.model_dump()),
            groups=w.groups,
            text_logit_scale=w.text_logit_scale,
        )

    def gate_spec(self) -> GateSpec:
        return GateSpec(num_experts=self.topology.num_experts, **self.gates.model_dump())

    def entropy_params(self) -> EntropyParams:
        return EntropyParams(**self.entropy.model_dump())

    def capacity_params(self) -> CapacityParams:
        return CapacityParams(**self.capacity.model_dump())

    def dispatch_params(self, policy: Policy) -> DispatchParams:
        d = self.dispatch
        return DispatchParams(policy=policy, eta=d.eta, reroute_scope=d.reroute_scope,
                              expansion=d.expansion)

    def latency_model(self) -> LatencyModel:
        return LatencyModel(**self.latency.model_dump())

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"

    def with_value(self, section: str, name: str, value) -> "RunConfig":
        """Copy with one field replaced, re-validated from scratch."""
        doc = self.model_dump(mode="json")
        doc[section][name] = value
        return parse_config(json.dumps(doc))


def _resolve(cfg: RunConfig) -> RunConfig:
    seed = cfg.seed
    upd = {}
    if cfg.workload.seed is None:
        upd["workload"] = cfg.workload.model_copy(update={"seed": seed})
    if cfg.gates.seed is None:
        upd["gates"] = cfg.gates.model_copy(update={"seed": seed})
    if cfg.calibration.seed is None:
        upd["calibration"] = cfg.calibration.model_copy(update={"seed": (seed + 1) % 2**64})
    return cfg.model_copy(update=upd) if upd else cfg


def _check_cross_fields(cfg: RunConfig) -> None:
    """Constraints spanning sections; raised as RangeError with a field path."""
    checks = [
        ("topology", cfg.build_topology),
        ("workload", lambda: cfg.workload_spec().validate()),
        ("gates", lambda: cfg.gate_spec().validate()),
    ]
    for path, fn in checks:
        try:
            fn()
        except MacsError as exc:
            raise RangeError(str(exc), path) from None
    if cfg.routing.k > cfg.topology.num_experts:
        raise RangeError("k cannot exceed num_experts", "routing.k")


def _loc(err) -> str:
    return ".".join(str(p) for p in err["loc"])


_RANGE_TYPES = {"greater_than", "greater_than_equal", "less_than", "less_than_equal",
                "too_short", "too_long", "enum", "literal_error"}


def parse_config(text: str) -> RunConfig:
    """Parse, validate and resolve a JSON config document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object")
    try:
        cfg = RunConfig.model_validate_json(text)
    except ValidationError as exc:
        errs = exc.errors()
        for err in errs:
            if err["type"] == "extra_forbidden":
                raise UnknownFieldError("unknown field", _loc(err)) from None
        err = errs[0]
        cls = RangeError if err["type"] in _RANGE_TYPES else ParseError
        raise cls(err["msg"], _loc(err)) from None
    cfg = _resolve(cfg)
    _check_cross_fields(cfg)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def reference_config_text() -> str:
    return resources.files("macs_sim").joinpath("data/reference.json").read_text(encoding="utf-8")


def reference_config() -> RunConfig:
    """The shipped skewed reference workload (seed 42, gamma0 0.5)."""
    return parse_config(reference_config_text())


SWEEP_AXES = {
    "gamma0": ("capacity", "gamma0"),
    "rho": ("capacity", "rho"),
    "delta_semantic": ("entropy", "delta_semantic"),
}
