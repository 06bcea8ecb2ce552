"""Deterministic synthetic multimodal workloads.

Randomness comes from numpy's counter-based Philox generator keyed by
``(seed, stream)`` through a ``SeedSequence``, so every generator below is a
pure function of its inputs and reproduces bit-for-bit across platforms.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .calibration import RoutingLog
from .core import Modality, Token, route_batch, softmax
from .errors import SpecInvalidError

_STREAM_BATCH = 0
_STREAM_GATES = 1
_STREAM_ROUTER = 2


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *stream])))


@dataclass(frozen=True)
class VisualEntropyProfile:
    """Foreground tokens get large-scale features (sharp softmax, low
    entropy); background tokens get small-scale ones (flat, high entropy)."""

    foreground_fraction: float = 0.3
    fg_logit_scale: float = 4.0
    bg_logit_scale: float = 0.5


@dataclass(frozen=True)
class WorkloadSpec:
    num_text: int = 64
    num_visual: int = 448
    feature_dim: int = 64
    seed: int = 0
    visual_entropy_profile: VisualEntropyProfile = VisualEntropyProfile()
    groups: int = 4
    text_logit_scale: float = 2.0

    def validate(self) -> None:
        p = self.visual_entropy_profile
        if self.num_text < 0 or self.num_visual < 0:
            raise SpecInvalidError("token counts must be non-negative")
        if self.num_text + self.num_visual < 1:
            raise SpecInvalidError("a batch needs at least one token")
        if self.feature_dim < 1:
            raise SpecInvalidError("feature_dim must be positive")
        if not 0 <= self.seed < 2**64:
            raise SpecInvalidError("seed must be a 64-bit unsigned integer")
        if not 0.0 <= p.foreground_fraction <= 1.0:
            raise SpecInvalidError("foreground_fraction must lie in [0, 1]")
        if not p.fg_logit_scale > p.bg_logit_scale > 0:
            raise SpecInvalidError("need fg_logit_scale > bg_logit_scale > 0")
        if not self.text_logit_scale > 0:
            raise SpecInvalidError("text_logit_scale must be > 0")
        if self.num_visual and not 1 <= self.groups <= self.num_visual:
            raise SpecInvalidError("groups must lie in [1, num_visual]")


@dataclass(frozen=True)
class GateSpec:
    num_experts: int = 8
    seed: int = 0
    hotspot_experts: Tuple[int, ...] = (0,)
    hotspot_mass: float = 0.0
    visual_experts: Tuple[int, ...] = ()
    text_experts: Tuple[int, ...] = ()
    affinity_bonus: float = 0.0
    logit_noise: float = 1.0
    feature_coupling: float = 1.0

    def validate(self) -> None:
        if self.num_experts < 1:
            raise SpecInvalidError("num_experts must be positive")
        if not 0.0 <= self.hotspot_mass < 1.0:
            raise SpecInvalidError("hotspot_mass must lie in [0, 1)")
        for name in ("hotspot_experts", "visual_experts", "text_experts"):
            idx = getattr(self, name)
            if any(not 0 <= j < self.num_experts for j in idx):
                raise SpecInvalidError(f"{name} has an index outside [0, {self.num_experts})")
        if self.hotspot_mass > 0 and not self.hotspot_experts:
            raise SpecInvalidError("hotspot_mass > 0 needs at least one hotspot expert")
        if self.logit_noise < 0 or self.feature_coupling < 0:
            raise SpecInvalidError("logit_noise and feature_coupling must be >= 0")


def gen_batch_with_labels(spec: WorkloadSpec) -> Tuple[List[Token], np.ndarray]:
    """Like :func:`gen_batch`, also returning the per-visual-token foreground mask."""
    spec.validate()
    prof = spec.visual_entropy_profile
    rng = make_rng(spec.seed, _STREAM_BATCH)
    d = spec.feature_dim
    text = spec.text_logit_scale * rng.standard_normal((spec.num_text, d))
    vis = rng.standard_normal((spec.num_visual, d))
    n_fg = int(round(prof.foreground_fraction * spec.num_visual))
    fg = np.zeros(spec.num_visual, dtype=bool)
    fg[rng.permutation(spec.num_visual)[:n_fg]] = True
    vis *= np.where(fg, prof.fg_logit_scale, prof.bg_logit_scale)[:, None]

    tokens = [Token(i, Modality.TEXT, text[i]) for i in range(spec.num_text)]
    if spec.num_visual:
        blocks = np.array_split(np.arange(spec.num_visual), spec.groups)
        group_of = np.empty(spec.num_visual, dtype=np.int64)
        for g, blk in enumerate(blocks):
            group_of[blk] = g
        base = spec.num_text
        tokens += [
            Token(base + j, Modality.VISUAL, vis[j], group_id=int(group_of[j]))
            for j in range(spec.num_visual)
        ]
    return tokens, fg


def gen_batch(spec: WorkloadSpec) -> List[Token]:
    return gen_batch_with_labels(spec)[0]


def _logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=1, keepdims=True)))[:, 0]


def gen_gates(tokens: Sequence[Token], spec: GateSpec, stream: int = 0) -> np.ndarray:
    """Token-by-expert gate matrix.

    Logits are Gaussian noise plus a fixed random projection of the
    normalised feature (so centroids carry routing signal), plus modality
    affinity bonuses. For visual tokens the hotspot experts then receive the
    smallest logit bonus that lifts their combined gate mass to at least
    ``hotspot_mass``.
    """
    spec.validate()
    if not tokens:
        return np.zeros((0, spec.num_experts))
    feats = np.stack([t.feature for t in tokens])
    n = spec.num_experts
    router = make_rng(spec.seed, _STREAM_ROUTER).standard_normal((n, feats.shape[1]))
    noise = make_rng(spec.seed, _STREAM_GATES, stream).standard_normal((len(tokens), n))
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    unit = feats / np.where(norms == 0, 1.0, norms)
    logits = spec.logit_noise * noise + spec.feature_coupling * unit @ router.T

    visual = np.array([t.is_visual for t in tokens])
    if spec.affinity_bonus:
        for mask, experts in ((visual, spec.visual_experts), (~visual, spec.text_experts)):
            if experts and mask.any():
                cols = np.zeros(n, dtype=bool)
                cols[list(experts)] = True
                logits[np.ix_(mask, cols)] += spec.affinity_bonus

    hot = np.zeros(n, dtype=bool)
    hot[list(spec.hotspot_experts)] = True
    if spec.hotspot_mass > 0 and visual.any() and not hot.all():
        h = spec.hotspot_mass
        sub = logits[visual]
        need = np.log(h / (1.0 - h)) + _logsumexp(sub[:, ~hot]) - _logsumexp(sub[:, hot])
        sub[:, hot] += np.maximum(need, 0.0)[:, None]
        logits[visual] = sub
    return softmax(logits, axis=1)


def gen_calibration_log(
    num_text: int,
    num_visual: int,
    gate_spec: GateSpec,
    k: int,
    seed: int,
    template: Optional[WorkloadSpec] = None,
) -> RoutingLog:
    """Route a fresh modality-tagged sample through the synthetic router."""
    if num_text < 1 or num_visual < 1:
        raise SpecInvalidError("calibration needs at least one sample per modality")
    spec = dataclasses.replace(
        template or WorkloadSpec(), num_text=num_text, num_visual=num_visual, seed=seed, groups=1
    )
    tokens = gen_batch(spec)
    gates = gen_gates(tokens, gate_spec, stream=1)
    decisions = route_batch(gates, k, [t.id for t in tokens])
    return RoutingLog(
        visual=np.array([t.is_visual for t in tokens]),
        features=np.stack([t.feature for t in tokens]),
        experts=np.array([d.experts for d in decisions], dtype=np.int64),
        num_experts=gate_spec.num_experts,
    )
