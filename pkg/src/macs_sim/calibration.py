"""Offline expert calibration: modality activation frequencies, expert
classes, semantic centroids and their memory footprint."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .capacity import ExpertClass
from .core import Modality, Topology
from .errors import EmptyModalityError, LengthMismatchError, MacsError


@dataclass(frozen=True, eq=False)
class RoutingLog:
    """Column-oriented routing log.

    ``visual[i]`` flags the modality of entry ``i``, ``features[i]`` is its
    hidden vector and ``experts[i]`` the ``k`` distinct experts it was routed to.
    """

    visual: np.ndarray
    features: np.ndarray
    experts: np.ndarray
    num_experts: int

    def __post_init__(self):
        visual = np.asarray(self.visual, dtype=bool)
        feats = np.asarray(self.features, dtype=np.float64)
        experts = np.asarray(self.experts, dtype=np.int64)
        n = visual.shape[0]
        if feats.ndim != 2 or feats.shape[0] != n or experts.ndim != 2 or experts.shape[0] != n:
            raise LengthMismatchError("log columns disagree in length")
        if experts.size and (experts.min() < 0 or experts.max() >= self.num_experts):
            raise MacsError("expert index out of range in routing log")
        srt = np.sort(experts, axis=1)
        if experts.shape[1] > 1 and np.any(srt[:, 1:] == srt[:, :-1]):
            raise MacsError("routing log entries must name distinct experts")
        object.__setattr__(self, "visual", visual)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "experts", experts)

    @property
    def k(self) -> int:
        return self.experts.shape[1]

    def __len__(self) -> int:
        return self.visual.shape[0]

    @classmethod
    def from_entries(cls, entries, num_experts: int) -> "RoutingLog":
        """Build from ``(modality, feature, experts)`` triples."""
        entries = list(entries)
        if not entries:
            raise MacsError("routing log needs at least one entry")
        return cls(
            visual=np.array([Modality(m) is Modality.VISUAL for m, _, _ in entries]),
            features=np.array([np.asarray(f, dtype=np.float64) for _, f, _ in entries]),
            experts=np.array([list(e) for _, _, e in entries]),
            num_experts=num_experts,
        )


@dataclass(frozen=True, eq=False)
class ExpertProfile:
    expert_id: int
    device_id: int
    expert_class: ExpertClass
    f_vis: float
    f_txt: float
    delta_spec: float
    centroid: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "expert_id": self.expert_id,
            "device_id": self.device_id,
            "class": self.expert_class.value,
            "f_vis": self.f_vis,
            "f_txt": self.f_txt,
            "delta_spec": self.delta_spec,
            "centroid": None if self.centroid is None else [float(x) for x in self.centroid],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertProfile":
        c = d.get("centroid")
        return cls(
            expert_id=int(d["expert_id"]),
            device_id=int(d["device_id"]),
            expert_class=ExpertClass(d["class"]),
            f_vis=float(d["f_vis"]),
            f_txt=float(d["f_txt"]),
            delta_spec=float(d["delta_spec"]),
            centroid=None if c is None else np.asarray(c, dtype=np.float64),
        )


def activation_frequency(log: RoutingLog, modality: Modality) -> np.ndarray:
    mask = log.visual if Modality(modality) is Modality.VISUAL else ~log.visual
    n = int(mask.sum())
    if n == 0:
        raise EmptyModalityError(f"routing log has no {Modality(modality).value} entries")
    counts = np.bincount(log.experts[mask].ravel(), minlength=log.num_experts)
    return counts / n


def classify_experts(
    f_vis: Sequence[float], f_txt: Sequence[float], threshold: float = 0.1
) -> List[ExpertClass]:
    if len(f_vis) != len(f_txt):
        raise LengthMismatchError("f_vis and f_txt differ in length")
    if not threshold > 0:
        raise MacsError("threshold must be > 0")
    out = []
    for fv, ft in zip(f_vis, f_txt):
        delta = fv - ft
        if delta >= threshold:
            out.append(ExpertClass.VISUAL)
        elif delta <= -threshold:
            out.append(ExpertClass.TEXT)
        else:
            out.append(ExpertClass.SHARED)
    return out


def compute_centroids(log: RoutingLog) -> List[Optional[np.ndarray]]:
    """Mean feature per expert; ``None`` for experts nobody was routed to."""
    n, d = log.features.shape
    sums = np.zeros((log.num_experts, d))
    counts = np.zeros(log.num_experts, dtype=np.int64)
    for col in range(log.k):
        np.add.at(sums, log.experts[:, col], log.features)
        counts += np.bincount(log.experts[:, col], minlength=log.num_experts)
    return [sums[j] / counts[j] if counts[j] else None for j in range(log.num_experts)]


def centroid_memory_bytes(layers: int, experts: int, hidden: int, bytes_per_value: int) -> int:
    # python ints are arbitrary precision, so the product cannot overflow
    for name, v in (("layers", layers), ("experts", experts), ("hidden", hidden),
                    ("bytes_per_value", bytes_per_value)):
        if int(v) != v or v < 1:
            raise MacsError(f"{name} must be a positive integer, got {v}")
    return int(layers) * int(experts) * int(hidden) * int(bytes_per_value)


def calibrate(log: RoutingLog, topology: Topology, threshold: float = 0.1) -> List[ExpertProfile]:
    if log.num_experts != topology.num_experts:
        raise LengthMismatchError("routing log and topology disagree on expert count")
    f_vis = activation_frequency(log, Modality.VISUAL)
    f_txt = activation_frequency(log, Modality.TEXT)
    classes = classify_experts(f_vis, f_txt, threshold)
    centroids = compute_centroids(log)
    return [
        ExpertProfile(
            expert_id=j,
            device_id=topology.device_of(j),
            expert_class=classes[j],
            f_vis=float(f_vis[j]),
            f_txt=float(f_txt[j]),
            delta_spec=float(f_vis[j]) - float(f_txt[j]),
            centroid=centroids[j],
        )
        for j in range(topology.num_experts)
    ]


def profiles_to_json(profiles: Sequence[ExpertProfile], **meta) -> str:
    doc = dict(meta)
    doc["experts"] = [p.to_dict() for p in profiles]
    return json.dumps(doc, indent=2) + "\n"


def profiles_from_json(text: str) -> List[ExpertProfile]:
    doc = json.loads(text)
    return [ExpertProfile.from_dict(d) for d in doc["experts"]]
