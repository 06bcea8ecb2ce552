"""Shared domain types, expert-parallel topology and top-k routing."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import BadKError, MacsError, NonDivisibleError, NonFiniteError

GATE_SUM_TOL = 1e-6


class Modality(str, enum.Enum):
    TEXT = "text"
    VISUAL = "visual"


@dataclass(frozen=True, eq=False)
class Token:
    """One routed unit.

    ``entropy`` is only set for visual tokens once the entropy pipeline has
    run; ``weight`` is 1.0 for text from construction and ``None`` for visual
    tokens until weighted.
    """

    id: int
    modality: Modality
    feature: np.ndarray
    group_id: int = -1
    entropy: Optional[float] = None
    weight: Optional[float] = None

    def __post_init__(self):
        if self.id < 0:
            raise MacsError(f"token id must be non-negative, got {self.id}")
        feat = np.asarray(self.feature, dtype=np.float64)
        if feat.ndim != 1 or feat.size == 0:
            raise MacsError("token feature must be a non-empty vector")
        if not np.all(np.isfinite(feat)):
            raise NonFiniteError(f"token {self.id} has a non-finite feature")
        feat = feat.copy()
        feat.setflags(write=False)
        object.__setattr__(self, "feature", feat)
        if self.modality is Modality.TEXT:
            if self.weight is None:
                object.__setattr__(self, "weight", 1.0)
            elif self.weight != 1.0:
                raise MacsError("text tokens always carry weight 1.0")
        if self.weight is not None and not (0.0 < self.weight <= 1.0):
            raise MacsError(f"weight must lie in (0, 1], got {self.weight}")
        if self.entropy is not None and self.entropy < 0:
            raise MacsError("entropy must be >= 0")

    @property
    def is_visual(self) -> bool:
        return self.modality is Modality.VISUAL


@dataclass(frozen=True)
class Topology:
    num_experts: int
    num_devices: int

    @property
    def experts_per_device(self) -> int:
        return self.num_experts // self.num_devices

    def device_of(self, expert: int) -> int:
        if not 0 <= expert < self.num_experts:
            raise IndexError(f"expert {expert} out of range")
        return expert // self.experts_per_device

    def experts_on(self, device: int) -> range:
        per = self.experts_per_device
        return range(device * per, (device + 1) * per)


def build_topology(num_experts: int, num_devices: int) -> Topology:
    """Contiguous block placement: experts ``[d*N/D, (d+1)*N/D)`` live on device ``d``."""
    if num_devices < 1 or num_experts < num_devices:
        raise MacsError(
            f"need num_experts >= num_devices >= 1, got {num_experts}, {num_devices}"
        )
    if num_experts % num_devices:
        raise NonDivisibleError(
            f"{num_experts} experts cannot be split evenly over {num_devices} devices"
        )
    return Topology(num_experts, num_devices)


@dataclass(frozen=True)
class RoutingDecision:
    token_id: int
    chosen: Tuple[Tuple[int, float], ...] = field(default_factory=tuple)

    @property
    def experts(self) -> Tuple[int, ...]:
        return tuple(e for e, _ in self.chosen)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def check_gates(gates: np.ndarray) -> np.ndarray:
    """Validate a gate vector (1-D) or a per-token gate matrix (2-D)."""
    g = np.asarray(gates, dtype=np.float64)
    if g.ndim not in (1, 2) or g.shape[-1] == 0:
        raise MacsError(f"bad gate shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gates contain non-finite values")
    if np.any(g < 0):
        raise MacsError("gates must be non-negative")
    sums = g.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > GATE_SUM_TOL):
        raise MacsError("gate vectors must sum to 1")
    return g


def top_k_route(gates: Sequence[float], k: int, token_id: int = 0) -> RoutingDecision:
    """Pick the ``k`` largest gates; ties go to the smaller expert index."""
    g = check_gates(gates)
    if g.ndim != 1:
        raise MacsError("top_k_route takes a single gate vector")
    n = g.shape[0]
    if not 1 <= k <= n:
        raise BadKError(f"k must be in [1, {n}], got {k}")
    # stable sort on -g keeps index order among equal values
    order = np.argsort(-g, kind="stable")[:k]
    return RoutingDecision(token_id, tuple((int(j), float(g[j])) for j in order))


def route_batch(gates: np.ndarray, k: int, token_ids: Sequence[int]) -> list:
    """Vectorised :func:`top_k_route` over a token-by-expert gate matrix."""
    g = check_gates(gates)
    n = g.shape[1]
    if not 1 <= k <= n:
        raise BadKError(f"k must be in [1, {n}], got {k}")
    order = np.argsort(-g, axis=1, kind="stable")[:, :k]
    vals = np.take_along_axis(g, order, axis=1)
    return [
        RoutingDecision(int(tid), tuple(zip(o, v)))
        for tid, o, v in zip(token_ids, order.tolist(), vals.tolist())
    ]
