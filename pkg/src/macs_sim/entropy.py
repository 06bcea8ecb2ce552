"""Entropy-weighted token load.

Visual tokens are scored by the Shannon entropy of ``softmax(feature)``;
entropies are z-scored per image (or per batch) and squashed through a
sigmoid so that flat, high-entropy background tokens weigh less than sharp
foreground ones. Text tokens always weigh 1.0.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .core import Modality, Token
from .errors import EmptyGroupError, LengthMismatchError, MacsError, NonFiniteError


class NormScope(str, enum.Enum):
    PER_GROUP = "per_group"
    PER_BATCH = "per_batch"


@dataclass(frozen=True)
class EntropyParams:
    delta_semantic: float = 1.5
    epsilon: float = 1e-6
    norm_scope: NormScope = NormScope.PER_GROUP

    def __post_init__(self):
        if not self.delta_semantic > 0:
            raise MacsError("delta_semantic must be > 0")
        if not self.epsilon > 0:
            raise MacsError("epsilon must be > 0")


def shannon_entropy(feature: Sequence[float]) -> float:
    """Entropy in nats of ``softmax(feature)``."""
    z = np.asarray(feature, dtype=np.float64)
    if z.size == 0:
        raise MacsError("feature must be non-empty")
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("feature contains NaN or inf")
    z = z - z.max()
    # log p = z - logsumexp(z); avoids log(0) for underflowed entries
    log_norm = math.log(np.exp(z).sum())
    log_p = z - log_norm
    p = np.exp(log_p)
    h = float(-(p * log_p).sum())
    return max(h, 0.0)


def normalize_entropy(
    entropies: Sequence[float],
    scope_groups: Sequence[int],
    params: EntropyParams,
) -> List[float]:
    """Z-score entropies within each group using the population std."""
    if len(entropies) != len(scope_groups):
        raise LengthMismatchError("entropies and groups differ in length")
    h = np.asarray(entropies, dtype=np.float64)
    if h.size == 0:
        raise EmptyGroupError("no entropies to normalize")
    if params.norm_scope is NormScope.PER_BATCH:
        keys = np.zeros(len(h), dtype=np.int64)
    else:
        keys = np.asarray(scope_groups, dtype=np.int64)
    out = np.empty_like(h)
    members: Dict[int, List[int]] = {}
    for i, g in enumerate(keys.tolist()):
        members.setdefault(g, []).append(i)
    for idx in members.values():
        vals = h[idx]
        mu = vals.mean()
        sigma = vals.std()
        out[idx] = (vals - mu) / (sigma + params.epsilon)
    return out.tolist()


def semantic_weight(modality: Modality, normalized_entropy: float, params: EntropyParams) -> float:
    if modality is Modality.TEXT:
        return 1.0
    if not math.isfinite(normalized_entropy):
        raise NonFiniteError("normalized entropy must be finite")
    x = params.delta_semantic * normalized_entropy
    # 1 / (1 + e^x), written to stay in (0, 1] without overflow
    if x >= 0:
        e = math.exp(-x)
        w = e / (1.0 + e)
    else:
        w = 1.0 / (1.0 + math.exp(x))
    # tiny positive floor keeps the (0, 1] invariant for extreme inputs
    return max(w, 5e-324)


def effective_load(weights: Iterable[float]) -> float:
    return math.fsum(weights)


def apply_semantic_weights(tokens: Sequence[Token], params: EntropyParams) -> List[Token]:
    """Return copies of ``tokens`` with entropy (visual only) and weight set."""
    vis = [t for t in tokens if t.is_visual]
    by_id = {}
    if vis:
        ent = [shannon_entropy(t.feature) for t in vis]
        norm = normalize_entropy(ent, [t.group_id for t in vis], params)
        for t, h, hn in zip(vis, ent, norm):
            by_id[t.id] = dataclasses.replace(
                t, entropy=h, weight=semantic_weight(Modality.VISUAL, hn, params)
            )
    return [by_id.get(t.id, t) for t in tokens]


@dataclass
class LoadLedger:
    """Per-expert effective load and raw token count.

    Mutable by design: a dispatch run owns its ledger and is the only writer.
    """

    effective: List[float]
    raw: List[int]

    @classmethod
    def empty(cls, num_experts: int) -> "LoadLedger":
        return cls([0.0] * num_experts, [0] * num_experts)

    def charge(self, expert: int, weight: float) -> None:
        self.effective[expert] += weight
        self.raw[expert] += 1

    @property
    def num_experts(self) -> int:
        return len(self.raw)
