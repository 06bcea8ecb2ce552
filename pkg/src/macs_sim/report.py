"""End-to-end runs: calibrate, generate, dispatch every policy, simulate,
and write byte-deterministic reports."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .calibration import ExpertProfile, calibrate, centroid_memory_bytes, profiles_to_json
from .capacity import CapacityPlan, plan_capacities
from .config import SWEEP_AXES, RunConfig
from .core import Token, Topology
from .dispatch import DispatchResult, Policy, dispatch
from .entropy import apply_semantic_weights
from .errors import MacsError
from .sim import ImbalanceStats, LatencyBreakdown, expert_loads, imbalance_stats, layer_latency, speedup
from .workload import gen_batch, gen_calibration_log, gen_gates

SCHEMA_VERSION = 1

METRIC_COLUMNS = [
    "schema_version", "policy", "drop_rate", "reroute_rate", "retained_gate_mass_fraction",
    "max_load", "mean_load", "max_over_mean", "dispatch_latency", "compute_latency",
    "aggregate_latency", "total_latency", "speedup_vs_vanilla", "r_v", "c_base",
    "count_capacity", "capacities",
]


@dataclass(frozen=True)
class RunMetrics:
    policy: Policy
    drop_rate: float
    reroute_rate: float
    retained_gate_mass_fraction: float
    imbalance: ImbalanceStats
    latency: LatencyBreakdown
    speedup_vs_vanilla: float
    r_v: float
    c_base: float
    count_capacity: int
    capacities: Tuple[float, ...]
    raw_loads: Tuple[int, ...]
    effective_loads: Tuple[float, ...]

    def row(self) -> Dict[str, str]:
        im, lat = self.imbalance, self.latency
        return {
            "schema_version": str(SCHEMA_VERSION),
            "policy": self.policy.value,
            "drop_rate": _fmt(self.drop_rate),
            "reroute_rate": _fmt(self.reroute_rate),
            "retained_gate_mass_fraction": _fmt(self.retained_gate_mass_fraction),
            "max_load": _fmt(im.max),
            "mean_load": _fmt(im.mean),
            "max_over_mean": _fmt(im.max_over_mean),
            "dispatch_latency": _fmt(lat.dispatch),
            "compute_latency": _fmt(lat.compute),
            "aggregate_latency": _fmt(lat.aggregate),
            "total_latency": _fmt(lat.total),
            "speedup_vs_vanilla": _fmt(self.speedup_vs_vanilla),
            "r_v": _fmt(self.r_v),
            "c_base": _fmt(self.c_base),
            "count_capacity": str(self.count_capacity),
            "capacities": ";".join(_fmt(c) for c in self.capacities),
        }

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.value,
            "drop_rate": self.drop_rate,
            "reroute_rate": self.reroute_rate,
            "retained_gate_mass_fraction": self.retained_gate_mass_fraction,
            "imbalance": self.imbalance.to_dict(),
            "latency": self.latency.to_dict(),
            "speedup_vs_vanilla": self.speedup_vs_vanilla,
            "r_v": self.r_v,
            "c_base": self.c_base,
            "count_capacity": self.count_capacity,
            "capacities": list(self.capacities),
            "raw_loads": list(self.raw_loads),
            "effective_loads": list(self.effective_loads),
        }


@dataclass(frozen=True)
class Workload:
    """Everything a dispatch needs, built once per config."""

    topology: Topology
    profiles: Tuple[ExpertProfile, ...]
    tokens: Tuple[Token, ...]
    gates: np.ndarray


@dataclass(frozen=True)
class RunOutcome:
    config: RunConfig
    workload: Workload
    plan: CapacityPlan
    results: Dict[Policy, DispatchResult]
    metrics: Dict[Policy, RunMetrics]


def _fmt(x) -> str:
    # repr gives the shortest string that round-trips the float
    return repr(float(x))


def run_calibration(cfg: RunConfig, topology: Topology) -> List[ExpertProfile]:
    c = cfg.calibration
    log = gen_calibration_log(
        c.samples_per_modality, c.samples_per_modality, cfg.gate_spec(), cfg.routing.k,
        c.seed, template=cfg.workload_spec(),
    )
    return calibrate(log, topology, c.threshold)


def build_workload(cfg: RunConfig, profiles=None) -> Workload:
    topology = cfg.build_topology()
    if profiles is None:
        profiles = run_calibration(cfg, topology)
    tokens = apply_semantic_weights(gen_batch(cfg.workload_spec()), cfg.entropy_params())
    gates = gen_gates(tokens, cfg.gate_spec())
    return Workload(topology, tuple(profiles), tuple(tokens), gates)


def _metrics(policy, result, plan, workload, cfg, baseline) -> RunMetrics:
    total = result.events.total
    raw, eff = expert_loads(result.assignment, workload.topology.num_experts)
    lat = layer_latency(result.assignment, workload.topology, cfg.latency_model())
    mass = result.events.retained_gate_mass + result.events.dropped_gate_mass
    return RunMetrics(
        policy=policy,
        drop_rate=result.events.dropped / total,
        reroute_rate=result.events.rerouted / total,
        retained_gate_mass_fraction=result.events.retained_gate_mass / mass if mass else 1.0,
        imbalance=imbalance_stats(raw),
        latency=lat,
        speedup_vs_vanilla=speedup(baseline, lat) if lat.total > 0 else float("inf"),
        r_v=plan.r_v,
        c_base=plan.c_base,
        count_capacity=plan.count_capacity,
        capacities=plan.capacities,
        raw_loads=raw,
        effective_loads=eff,
    )


def run_policies(cfg: RunConfig, workload: Workload) -> RunOutcome:
    k = cfg.routing.k
    plan = plan_capacities(
        workload.tokens, k, [p.expert_class for p in workload.profiles], cfg.capacity_params()
    )

    def one(policy):
        return dispatch(cfg.dispatch_params(policy), workload.tokens, workload.gates, k, plan,
                        workload.topology, workload.profiles)

    vanilla = one(Policy.VANILLA)
    baseline = layer_latency(vanilla.assignment, workload.topology, cfg.latency_model())
    results, metrics = {}, {}
    for policy in cfg.dispatch.policies:
        res = vanilla if policy is Policy.VANILLA else one(policy)
        results[policy] = res
        metrics[policy] = _metrics(policy, res, plan, workload, cfg, baseline)
    return RunOutcome(cfg, workload, plan, results, metrics)


# -- file emitters -------------------------------------------------------------


def metrics_csv(rows: Sequence[Dict[str, str]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def heatmap_csv(outcome: RunOutcome) -> str:
    policies = list(outcome.metrics)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["expert"] + [p.value for p in policies])
    for j in range(outcome.workload.topology.num_experts):
        w.writerow([j] + [outcome.metrics[p].raw_loads[j] for p in policies])
    return buf.getvalue()


def events_jsonl(outcome: RunOutcome) -> str:
    return "".join(res.events.to_jsonl(policy=p.value) for p, res in outcome.results.items())


def report_json(outcome: RunOutcome) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": outcome.config.model_dump(mode="json"),
        "calibration": [
            {"expert_id": p.expert_id, "class": p.expert_class.value, "delta_spec": p.delta_spec}
            for p in outcome.workload.profiles
        ],
        "r_v": outcome.plan.r_v,
        "c_base": outcome.plan.c_base,
        "capacities": list(outcome.plan.capacities),
        "policies": {p.value: m.to_dict() for p, m in outcome.metrics.items()},
    }
    return json.dumps(doc, indent=2) + "\n"


def _write(outdir: str, name: str, text: str) -> str:
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def cmd_run(cfg: RunConfig) -> RunOutcome:
    outcome = run_policies(cfg, build_workload(cfg))
    outdir = cfg.output.dir
    os.makedirs(outdir, exist_ok=True)
    _write(outdir, "config.resolved.json", cfg.to_json())
    if "json" in cfg.output.formats:
        _write(outdir, "report.json", report_json(outcome))
    if "csv" in cfg.output.formats:
        rows = [m.row() for m in outcome.metrics.values()]
        _write(outdir, "metrics.csv", metrics_csv(rows, METRIC_COLUMNS))
    _write(outdir, "events.jsonl", events_jsonl(outcome))
    _write(outdir, "loads_heatmap.csv", heatmap_csv(outcome))
    return outcome


def sweep(cfg: RunConfig, axis: str, values: Sequence[float]) -> List[Dict[str, str]]:
    """Rows of RunMetrics columns, one per (value, policy), seed held fixed."""
    if axis not in SWEEP_AXES:
        raise MacsError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    if len(values) < 2:
        raise MacsError("a sweep needs at least two values")
    section, name = SWEEP_AXES[axis]
    cells = [cfg.with_value(section, name, float(v)) for v in values]
    profiles = run_calibration(cfg, cfg.build_topology())
    base = None if axis == "delta_semantic" else build_workload(cfg, profiles)
    rows = []
    for v, cell in zip(values, cells):
        wl = base if base is not None else build_workload(cell, profiles)
        outcome = run_policies(cell, wl)
        for m in outcome.metrics.values():
            row = {"axis": axis, "value": _fmt(v)}
            row.update(m.row())
            rows.append(row)
    return rows


SWEEP_COLUMNS = ["axis", "value"] + METRIC_COLUMNS


def cmd_sweep(cfg: RunConfig, axis: str, values: Sequence[float]) -> str:
    text = metrics_csv(sweep(cfg, axis, values), SWEEP_COLUMNS)
    os.makedirs(cfg.output.dir, exist_ok=True)
    _write(cfg.output.dir, "config.resolved.json", cfg.to_json())
    _write(cfg.output.dir, f"sweep_{axis}.csv", text)
    return text


def memory_line(cfg: RunConfig) -> str:
    m = cfg.calibration.memory
    hidden = m.hidden_dim or cfg.workload.feature_dim
    n = cfg.topology.num_experts
    total = centroid_memory_bytes(m.layers, n, hidden, m.bytes_per_value)
    return (f"centroid memory: {total} bytes "
            f"(layers={m.layers}, experts={n}, hidden={hidden}, bytes_per_value={m.bytes_per_value})")


def cmd_calibrate(cfg: RunConfig) -> str:
    topology = cfg.build_topology()
    profiles = run_calibration(cfg, topology)
    c = cfg.calibration
    doc = profiles_to_json(
        profiles, num_experts=topology.num_experts, num_devices=topology.num_devices,
        k=cfg.routing.k, threshold=c.threshold, samples_per_modality=c.samples_per_modality,
        seed=c.seed,
    )
    os.makedirs(cfg.output.dir, exist_ok=True)
    _write(cfg.output.dir, "calibration.json", doc)
    return doc
