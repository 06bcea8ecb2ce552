"""Expert-parallel latency model.

A layer runs in three stages. Dispatch sends every top-k slot from the
token's origin device to its routed expert's device. Capacity is enforced
on arrival, and a cross-device reroute costs one more hop. Compute is
bounded by the slowest expert, or by the busiest device. Aggregate sends
results of served slots back along the reverse path.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from .core import Topology
from .dispatch import Assignment, SlotStatus
from .errors import MacsError, UnresolvedSlotError


class ComputeMode(str, enum.Enum):
    PER_EXPERT_MAX = "per_expert_max"
    PER_DEVICE_SUM = "per_device_sum"


@dataclass(frozen=True)
class LatencyModel:
    cost_per_token_compute: float = 1.0
    cost_per_crossdev_token: float = 0.01
    cost_per_result_token: float = 0.01
    compute_mode: ComputeMode = ComputeMode.PER_EXPERT_MAX

    def __post_init__(self):
        if min(self.cost_per_token_compute, self.cost_per_crossdev_token,
               self.cost_per_result_token) < 0:
            raise MacsError("latency costs must be >= 0")


@dataclass(frozen=True)
class LatencyBreakdown:
    dispatch: float
    compute: float
    aggregate: float

    @property
    def total(self) -> float:
        return self.dispatch + self.compute + self.aggregate

    @property
    def communication(self) -> float:
        return self.dispatch + self.aggregate

    def to_dict(self) -> dict:
        return {"dispatch": self.dispatch, "compute": self.compute,
                "aggregate": self.aggregate, "total": self.total}


@dataclass(frozen=True)
class ImbalanceStats:
    max: float
    mean: float
    max_over_mean: float
    histogram: Tuple[float, ...]

    def to_dict(self) -> dict:
        return {"max": self.max, "mean": self.mean, "max_over_mean": self.max_over_mean,
                "histogram": list(self.histogram)}


def expert_loads(assignment: Assignment, num_experts: int) -> Tuple[Tuple[int, ...], Tuple[float, ...]]:
    """Raw counts and effective loads at each slot's terminal expert."""
    raw = [0] * num_experts
    eff = [0.0] * num_experts
    for s in assignment.slots:
        if s.status is SlotStatus.DROPPED:
            continue
        if s.status not in (SlotStatus.ADMITTED, SlotStatus.REROUTED) or s.target is None:
            raise UnresolvedSlotError(f"slot ({s.token}, {s.rank}) has no terminal status")
        raw[s.target] += 1
        eff[s.target] += s.weight
    return tuple(raw), tuple(eff)


def origin_device(token_id: int, topology: Topology) -> int:
    return token_id % topology.num_devices


def compute_latency(raw_counts: Sequence[int], topology: Topology, model: LatencyModel) -> float:
    if len(raw_counts) != topology.num_experts:
        raise MacsError("need one load per expert")
    if ComputeMode(model.compute_mode) is ComputeMode.PER_EXPERT_MAX:
        busiest = max(raw_counts)
    else:
        busiest = max(sum(raw_counts[e] for e in topology.experts_on(d))
                      for d in range(topology.num_devices))
    return model.cost_per_token_compute * busiest


def crossing_counts(
    assignment: Assignment, topology: Topology, origins: Optional[Sequence[int]] = None
) -> Tuple[int, int]:
    """(dispatch hops, aggregate hops) that cross a device boundary."""
    out_hops = back_hops = 0
    for s in assignment.slots:
        src = origins[s.token] if origins is not None else origin_device(s.token, topology)
        routed_dev = topology.device_of(s.expert)
        first = int(src != routed_dev)
        second = 0
        if s.status is SlotStatus.REROUTED:
            second = int(topology.device_of(s.target) != routed_dev)
        out_hops += first + second
        if s.status is not SlotStatus.DROPPED:
            back_hops += first + second
    return out_hops, back_hops


def layer_latency(
    assignment: Assignment,
    topology: Topology,
    model: LatencyModel = LatencyModel(),
    origins: Optional[Sequence[int]] = None,
) -> LatencyBreakdown:
    raw, _ = expert_loads(assignment, topology.num_experts)
    out_hops, back_hops = crossing_counts(assignment, topology, origins)
    return LatencyBreakdown(
        dispatch=model.cost_per_crossdev_token * out_hops,
        compute=compute_latency(raw, topology, model),
        aggregate=model.cost_per_result_token * back_hops,
    )


def speedup(baseline: LatencyBreakdown, treated: LatencyBreakdown) -> float:
    if treated.total <= 0:
        raise ZeroDivisionError("treated latency must be positive")
    return baseline.total / treated.total


def imbalance_stats(loads: Sequence[float]) -> ImbalanceStats:
    if not loads:
        raise MacsError("need at least one expert")
    mx = max(loads)
    mean = sum(loads) / len(loads)
    ratio = mx / mean if mean > 0 else 1.0
    return ImbalanceStats(float(mx), float(mean), float(ratio), tuple(float(x) for x in loads))
