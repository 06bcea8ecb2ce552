"""Static and modality-adaptive expert capacities."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

from .core import Token
from .errors import EmptyBatchError, MacsError


class ExpertClass(str, enum.Enum):
    VISUAL = "visual"
    TEXT = "text"
    SHARED = "shared"


@dataclass(frozen=True)
class CapacityParams:
    gamma0: float = 1.0
    rho: float = 0.6
    c_min: float = 1.0

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise MacsError("gamma0 must be > 0")
        if not 0.0 <= self.rho <= 2.0:
            raise MacsError("rho must lie in [0, 2]")
        if not self.c_min > 0:
            raise MacsError("c_min must be > 0")


@dataclass(frozen=True)
class CapacityPlan:
    c_base: float
    capacities: Tuple[float, ...]
    r_v: float

    @property
    def count_capacity(self) -> int:
        """Whole-token budget used by the count-based baselines."""
        return count_capacity(self.c_base)


def base_capacity(num_tokens: int, k: int, num_experts: int, gamma0: float) -> float:
    return gamma0 * num_tokens * k / num_experts


def count_capacity(c_base: float) -> int:
    return max(1, math.floor(c_base))


def effective_visual_ratio(tokens: Sequence[Token]) -> float:
    if not tokens:
        raise EmptyBatchError("cannot compute a visual ratio for an empty batch")
    vis, total = [], []
    for t in tokens:
        if t.weight is None:
            raise MacsError(f"token {t.id} has no semantic weight yet")
        total.append(t.weight)
        if t.is_visual:
            vis.append(t.weight)
    return math.fsum(vis) / math.fsum(total)


def modality_bias(expert_class: ExpertClass) -> int:
    return {ExpertClass.VISUAL: 1, ExpertClass.TEXT: -1, ExpertClass.SHARED: 0}[
        ExpertClass(expert_class)
    ]


def adaptive_capacity(c_base: float, rho: float, bias: int, r_v: float, c_min: float) -> float:
    return max(c_min, c_base * (1.0 + rho * bias * (r_v - 0.5)))


def plan_capacities(
    tokens: Sequence[Token],
    k: int,
    classes: Sequence[ExpertClass],
    params: CapacityParams,
) -> CapacityPlan:
    """Capacities for one dispatched batch; ``classes`` has one entry per expert."""
    c_base = base_capacity(len(tokens), k, len(classes), params.gamma0)
    r_v = effective_visual_ratio(tokens)
    caps = tuple(
        adaptive_capacity(c_base, params.rho, modality_bias(c), r_v, params.c_min)
        for c in classes
    )
    return CapacityPlan(c_base, caps, r_v)
