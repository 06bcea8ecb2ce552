"""Capacity-constrained token dispatch.

Four families of policy share one event substrate:

* ``vanilla``: every top-k slot is admitted, no capacity.
* ``cai_drop``: whole-token capacity per expert, highest gates kept.
* ``cai_expanded``: as ``cai_drop`` but overflow falls back to the next-best
  expert (by raw gate, any device) that still has room.
* ``macs`` / ``macs_no_expand``: entropy-weighted admission against adaptive
  capacities, semantic rerouting of overflow and a retention-ordered
  fail-safe drop.

All runs are sequential and deterministic; a run owns its ledger and event
log exclusively.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .calibration import ExpertProfile
from .capacity import CapacityPlan
from .core import Token, Topology, check_gates, route_batch
from .entropy import LoadLedger
from .errors import MacsError, PlanMismatchError


class Policy(str, enum.Enum):
    VANILLA = "vanilla"
    CAI_DROP = "cai_drop"
    CAI_EXPANDED = "cai_expanded"
    MACS = "macs"
    MACS_NO_EXPAND = "macs_no_expand"


class RerouteScope(str, enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"
    NONE = "none"


class KeepRule(str, enum.Enum):
    GATE_DESC = "gate_desc"
    ARRIVAL = "arrival"


class SlotStatus(str, enum.Enum):
    ADMITTED = "admitted"
    REROUTED = "rerouted"
    DROPPED = "dropped"


@dataclass(frozen=True)
class DispatchParams:
    policy: Policy = Policy.MACS
    eta: float = 0.5
    reroute_scope: RerouteScope = RerouteScope.LOCAL
    expansion: bool = True

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise MacsError("eta must lie in [0, 1]")


@dataclass(frozen=True)
class Slot:
    """One (token, top-k rank) pair and where it ended up.

    ``expert`` is the expert the router picked; ``target`` the expert that
    processes the slot (``None`` when dropped). ``seq`` is excluded from
    equality so assignments from different policies compare slot-for-slot.
    """

    token: int
    rank: int
    expert: int
    gate: float
    weight: float
    status: SlotStatus
    target: Optional[int]
    seq: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    token: int
    rank: int
    from_expert: int
    to_expert: Optional[int]
    gate: float
    weight: float
    retention: Optional[float] = None
    score: Optional[float] = None

    def to_dict(self) -> dict:
        d = {"seq": self.seq, "kind": self.kind, "token": self.token, "rank": self.rank,
             "from": self.from_expert}
        if self.to_expert is not None:
            d["to"] = self.to_expert
        d["gate"] = self.gate
        d["weight"] = self.weight
        if self.retention is not None:
            d["retention"] = self.retention
        if self.score is not None:
            d["score"] = self.score
        return d


@dataclass(frozen=True)
class Assignment:
    slots: Tuple[Slot, ...]

    def for_token(self, token: int) -> Tuple[Slot, ...]:
        return tuple(s for s in self.slots if s.token == token)

    def count(self, status: SlotStatus) -> int:
        return sum(1 for s in self.slots if s.status is status)


@dataclass(frozen=True)
class DispatchEvents:
    events: Tuple[Event, ...]
    admitted: int
    rerouted: int
    dropped: int
    retained_gate_mass: float
    dropped_gate_mass: float

    @property
    def total(self) -> int:
        return self.admitted + self.rerouted + self.dropped

    def to_jsonl(self, **extra) -> str:
        lines = []
        for ev in self.events:
            d = dict(extra)
            d.update(ev.to_dict())
            lines.append(json.dumps(d))
        return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class DispatchResult:
    assignment: Assignment
    events: DispatchEvents
    ledger: LoadLedger


class _Run:
    """Mutable bookkeeping for a single dispatch run."""

    def __init__(self, num_experts: int):
        self.ledger = LoadLedger.empty(num_experts)
        self.events: List[Event] = []
        self.slots: Dict[Tuple[int, int], Slot] = {}
        self.held: Dict[int, Set[int]] = {}

    def _record(self, kind, token, rank, src, dst, gate, weight, retention, score, status):
        seq = len(self.events)
        self.events.append(Event(seq, kind, token, rank, src, dst, gate, weight, retention, score))
        self.slots[(token, rank)] = Slot(token, rank, src, gate, weight, status, dst, seq)
        if dst is not None:
            self.ledger.charge(dst, weight)
            self.held.setdefault(token, set()).add(dst)

    def admit(self, token, rank, expert, gate, weight, retention=None):
        self._record("admit", token, rank, expert, expert, gate, weight, retention, None,
                     SlotStatus.ADMITTED)

    def reroute(self, token, rank, src, dst, gate, weight, retention=None, score=None):
        self._record("reroute", token, rank, src, dst, gate, weight, retention, score,
                     SlotStatus.REROUTED)

    def drop(self, token, rank, expert, gate, weight, retention=None):
        self._record("drop", token, rank, expert, None, gate, weight, retention, None,
                     SlotStatus.DROPPED)

    def holds(self, token: int) -> Set[int]:
        return self.held.get(token, set())

    def finish(self) -> DispatchResult:
        slots = tuple(self.slots[key] for key in sorted(self.slots))
        kept = [s.gate for s in slots if s.status is not SlotStatus.DROPPED]
        lost = [s.gate for s in slots if s.status is SlotStatus.DROPPED]
        events = DispatchEvents(
            events=tuple(self.events),
            admitted=sum(1 for s in slots if s.status is SlotStatus.ADMITTED),
            rerouted=sum(1 for s in slots if s.status is SlotStatus.REROUTED),
            dropped=len(lost),
            retained_gate_mass=math.fsum(kept),
            dropped_gate_mass=math.fsum(lost),
        )
        return DispatchResult(Assignment(slots), events, self.ledger)


def _prepare(tokens: Sequence[Token], gates, k: int):
    g = check_gates(gates)
    if g.ndim != 2 or g.shape[0] != len(tokens):
        raise MacsError("need one gate vector per token")
    for t in tokens:
        if t.weight is None:
            raise MacsError(f"token {t.id} has no semantic weight yet")
    decisions = route_batch(g, k, [t.id for t in tokens])
    return g, decisions


def dispatch_vanilla(tokens: Sequence[Token], gates, k: int, topology: Topology) -> DispatchResult:
    _, decisions = _prepare(tokens, gates, k)
    run = _Run(topology.num_experts)
    for tok, dec in zip(tokens, decisions):
        for rank, (e, g) in enumerate(dec.chosen):
            run.admit(tok.id, rank, e, g, tok.weight)
    return run.finish()


def _count_phase(run, tokens, decisions, capacity_int, keep_rule):
    """Admit per expert in keep-rule order; return the overflowing slots."""
    if capacity_int < 1:
        raise MacsError("capacity_int must be >= 1")
    slots = [
        (tok.id, rank, e, g, tok.weight)
        for tok, dec in zip(tokens, decisions)
        for rank, (e, g) in enumerate(dec.chosen)
    ]
    if KeepRule(keep_rule) is KeepRule.GATE_DESC:
        slots.sort(key=lambda s: (-s[3], s[0], s[1]))
    else:
        slots.sort(key=lambda s: (s[0], s[1]))
    overflow = []
    for s in slots:
        tid, rank, e, g, w = s
        if run.ledger.raw[e] < capacity_int:
            run.admit(tid, rank, e, g, w)
        else:
            overflow.append(s)
    return overflow


def dispatch_capped_count(
    tokens: Sequence[Token],
    gates,
    k: int,
    capacity_int: int,
    keep_rule: KeepRule = KeepRule.GATE_DESC,
    num_experts: Optional[int] = None,
) -> DispatchResult:
    g, decisions = _prepare(tokens, gates, k)
    run = _Run(num_experts or g.shape[1])
    for tid, rank, e, gate, w in _count_phase(run, tokens, decisions, capacity_int, keep_rule):
        run.drop(tid, rank, e, gate, w)
    return run.finish()


def dispatch_cai_expanded(
    tokens: Sequence[Token], gates, k: int, capacity_int: int, topology: Topology
) -> DispatchResult:
    g, decisions = _prepare(tokens, gates, k)
    run = _Run(topology.num_experts)
    overflow = _count_phase(run, tokens, decisions, capacity_int, KeepRule.GATE_DESC)
    pos = {t.id: i for i, t in enumerate(tokens)}
    for tid, rank, e, gate, w in overflow:
        row = g[pos[tid]]
        held = run.holds(tid)
        for cand in np.argsort(-row, kind="stable").tolist():
            if cand == e or cand in held:
                continue
            if run.ledger.raw[cand] < capacity_int:
                run.reroute(tid, rank, e, cand, gate, w)
                break
        else:
            run.drop(tid, rank, e, gate, w)
    return run.finish()


def retention_score(weight: float, gates: Sequence[float]) -> float:
    return weight * float(np.max(gates))


def cosine_similarity(a, b) -> float:
    """Cosine of two vectors; 0 when either is missing or has zero norm."""
    if a is None or b is None:
        return 0.0
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def reroute_score(feature, gate: float, centroid, eta: float) -> float:
    if not 0.0 <= eta <= 1.0:
        raise MacsError("eta must lie in [0, 1]")
    return (1.0 - eta) * gate + eta * cosine_similarity(feature, centroid)


def centroid_similarities(features: np.ndarray, centroids: Sequence[Optional[np.ndarray]]) -> np.ndarray:
    """Token-by-expert cosine matrix; columns of absent centroids are zero."""
    f = np.asarray(features, dtype=np.float64)
    out = np.zeros((f.shape[0], len(centroids)))
    fn = np.linalg.norm(f, axis=1)
    fn[fn == 0] = np.inf
    for j, c in enumerate(centroids):
        if c is None:
            continue
        c = np.asarray(c, dtype=np.float64)
        cn = np.linalg.norm(c)
        if cn == 0:
            continue
        out[:, j] = (f @ c) / (fn * cn)
    return out


def local_reroute(
    weight: float,
    gates: Sequence[float],
    similarities: Sequence[float],
    origin: int,
    ledger: LoadLedger,
    capacities: Sequence[float],
    topology: Topology,
    eta: float,
    scope: RerouteScope = RerouteScope.LOCAL,
    exclude: Iterable[int] = (),
    allowed: Optional[Iterable[int]] = None,
) -> Tuple[Optional[int], Optional[float]]:
    """Best reroute target for an overflowing slot, with its score.

    ``similarities[j]`` is the cosine between the token feature and expert
    ``j``'s centroid (0 for absent centroids). A candidate must fit the whole
    token weight: ``load + weight <= capacity``.
    """
    scope = RerouteScope(scope)
    if scope is RerouteScope.NONE:
        return None, None
    if scope is RerouteScope.LOCAL:
        pool = topology.experts_on(topology.device_of(origin))
    else:
        pool = range(topology.num_experts)
    skip = set(exclude)
    skip.add(origin)
    allow = None if allowed is None else set(allowed)
    best, best_score = None, None
    eff = ledger.effective
    for c in pool:
        if c in skip or (allow is not None and c not in allow):
            continue
        if eff[c] + weight > capacities[c]:
            continue
        s = (1.0 - eta) * gates[c] + eta * similarities[c]
        if best_score is None or s > best_score:
            best, best_score = c, s
    return best, best_score


def dispatch_macs(
    tokens: Sequence[Token],
    gates,
    k: int,
    plan: CapacityPlan,
    topology: Topology,
    profiles: Sequence[ExpertProfile],
    params: DispatchParams = DispatchParams(),
) -> DispatchResult:
    """Entropy-weighted admission with semantic rerouting and fail-safe drop.

    Slots are processed once, globally, in descending retention score (ties:
    token id, then rank). A slot is admitted if its expert still fits the
    token weight, otherwise rerouted to the best-scoring candidate with room,
    otherwise dropped. A reroute never targets an expert that already holds
    the token or that a later slot of the same token is routed to. After an
    expert's first drop it is sealed: later
    (lower-retention) contenders for it are dropped too, so the drop set at
    each expert is exactly its lowest-retention tail.
    """
    n = topology.num_experts
    if len(plan.capacities) != n:
        raise PlanMismatchError(f"plan has {len(plan.capacities)} capacities for {n} experts")
    if len(profiles) != n:
        raise PlanMismatchError(f"{len(profiles)} profiles for {n} experts")
    g, decisions = _prepare(tokens, gates, k)
    policy = Policy(params.policy)
    expand = params.expansion and policy is not Policy.MACS_NO_EXPAND

    sims = centroid_similarities(
        np.stack([t.feature for t in tokens]), [p.centroid for p in profiles]
    ).tolist()
    rows = g.tolist()
    caps = list(plan.capacities)

    slots = []
    for i, (tok, dec) in enumerate(zip(tokens, decisions)):
        r = tok.weight * max(rows[i])
        for rank, (e, gate) in enumerate(dec.chosen):
            slots.append((r, tok.id, rank, e, gate, i))
    slots.sort(key=lambda s: (-s[0], s[1], s[2]))

    run = _Run(n)
    sealed: Set[int] = set()
    for r, tid, rank, e, gate, i in slots:
        w = tokens[i].weight
        if e not in sealed and run.ledger.effective[e] + w <= caps[e]:
            run.admit(tid, rank, e, gate, w, retention=r)
            continue
        if e not in sealed:
            target, score = local_reroute(
                w, rows[i], sims[i], e, run.ledger, caps, topology, params.eta,
                params.reroute_scope,
                exclude=run.holds(tid) | set(decisions[i].experts[rank + 1:]),
                allowed=None if expand else decisions[i].experts,
            )
            if target is not None:
                run.reroute(tid, rank, e, target, gate, w, retention=r, score=score)
                continue
        sealed.add(e)
        run.drop(tid, rank, e, gate, w, retention=r)
    return run.finish()


def dispatch(
    params: DispatchParams,
    tokens: Sequence[Token],
    gates,
    k: int,
    plan: CapacityPlan,
    topology: Topology,
    profiles: Sequence[ExpertProfile],
) -> DispatchResult:
    """Run whichever policy ``params.policy`` names."""
    policy = Policy(params.policy)
    if policy is Policy.VANILLA:
        return dispatch_vanilla(tokens, gates, k, topology)
    if policy is Policy.CAI_DROP:
        return dispatch_capped_count(tokens, gates, k, plan.count_capacity,
                                     num_experts=topology.num_experts)
    if policy is Policy.CAI_EXPANDED:
        return dispatch_cai_expanded(tokens, gates, k, plan.count_capacity, topology)
    return dispatch_macs(tokens, gates, k, plan, topology, profiles, params)
