"""Deterministic simulator for capacity-managed Mixture-of-Experts routing
under expert parallelism: entropy-weighted load, modality-adaptive capacity
and local semantic rerouting, next to vanilla and count-based baselines."""

from .capacity import (
    CapacityParams,
    CapacityPlan,
    ExpertClass,
    adaptive_capacity,
    base_capacity,
    effective_visual_ratio,
    modality_bias,
    plan_capacities,
)
from .calibration import (
    ExpertProfile,
    RoutingLog,
    activation_frequency,
    calibrate,
    centroid_memory_bytes,
    classify_experts,
    compute_centroids,
)
from .config import RunConfig, load_config, parse_config, reference_config
from .core import Modality, RoutingDecision, Token, Topology, build_topology, top_k_route
from .dispatch import (
    DispatchParams,
    KeepRule,
    Policy,
    RerouteScope,
    SlotStatus,
    dispatch,
    dispatch_cai_expanded,
    dispatch_capped_count,
    dispatch_macs,
    dispatch_vanilla,
    local_reroute,
    reroute_score,
    retention_score,
)
from .entropy import (
    EntropyParams,
    LoadLedger,
    NormScope,
    apply_semantic_weights,
    effective_load,
    normalize_entropy,
    semantic_weight,
    shannon_entropy,
)
from .report import build_workload, cmd_calibrate, cmd_run, cmd_sweep, run_policies, sweep
from .sim import (
    ComputeMode,
    LatencyBreakdown,
    LatencyModel,
    expert_loads,
    imbalance_stats,
    layer_latency,
    speedup,
)
from .workload import GateSpec, VisualEntropyProfile, WorkloadSpec, gen_batch, gen_calibration_log, gen_gates

__version__ = "0.1.0"
