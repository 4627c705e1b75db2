"""Calibration framework: alternate dynamic and heterogeneous blocks.

The loop over framework iterations c runs the dynamic branch whenever
``c mod (dyn_iters + het_iters) < dyn_iters`` and the heterogeneous branch
otherwise, with the other parameter group frozen in place.  Agent clustering
runs exactly once before the loop.  Every simulation evaluation lands in the
audit trail scored by total MAPE (the common cross-phase metric), and the
reported best combination is the trail's argmin with earliest-entry ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import SearchStrategy
from .bayesopt import HeterogeneousCalibrator, HeterogeneousStepRecord
from .clustering import CLUSTERING_MODES, build_assignment, cluster_agents
from .errors import DimensionError, ParameterRangeError
from .metrics import mape
from .regimes import (
    GENERATION_RULES,
    CandidateSet,
    DynamicCalibrator,
    initial_candidates,
)
from .rng import child_seed, make_rng, replication_seed
from .wealth import (
    AgentTrace,
    DynamicSchedule,
    HeterogeneousAssignment,
    ValidationData,
    WealthModelConfig,
    run_simulation,
)

_TAG_INIT_CAND, _TAG_INIT_HET, _TAG_CLUSTER = 41, 43, 47


@dataclass
class ParameterSpec:
    name: str
    low: float
    high: float
    kind: str  # "dynamic" | "heterogeneous"

    def __post_init__(self) -> None:
        if self.kind not in ("dynamic", "heterogeneous"):
            raise ParameterRangeError(f"unknown parameter kind {self.kind!r}")
        if self.high <= self.low:
            raise ParameterRangeError(f"empty range for {self.name}")


def wealth_parameters() -> list[ParameterSpec]:
    return [
        ParameterSpec("wealth_income", 0.0, 2.0, "dynamic"),
        ParameterSpec("wealth_consumption", 0.0, 1.0, "heterogeneous"),
    ]


@dataclass
class FrameworkConfig:
    """Everything one calibration run needs besides the validation data."""

    model: WealthModelConfig = field(default_factory=WealthModelConfig)
    parameters: list[ParameterSpec] = field(default_factory=wealth_parameters)
    total_iterations: int = 200       # C_cal
    dyn_iterations: int = 2           # C_dyn, per block
    het_iterations: int = 3           # C_het, per block
    n_replications: int = 10          # R
    n_candidates: int = 3             # I
    n_regimes: int = 3                # K_dyn
    clustering_mode: str = "given"    # given | parametric | nonparametric
    n_clusters: int = 2               # K_het (given/parametric modes)
    latent_dim: int = 4
    vae_epochs: int = 200
    concentration: float = 1.0
    gibbs_sweeps: int = 150
    rule: str = "mode-selection"
    strategy: SearchStrategy = field(default_factory=SearchStrategy)
    candidate_init: str = "random"    # random | spread
    master_seed: int = 0
    # optional pinned starting values (None means random initialization);
    # with a zero-length opposite block these stay fixed for the whole run
    initial_schedule_values: np.ndarray | None = None
    initial_het_values: np.ndarray | None = None

    def validate(self) -> None:
        self.model.validate()
        if self.dyn_iterations < 0 or self.het_iterations < 0:
            raise ParameterRangeError("block lengths must be >= 0")
        if self.dyn_iterations + self.het_iterations < 1:
            raise ParameterRangeError("dyn_iterations + het_iterations must be >= 1")
        if self.total_iterations < 0:
            raise ParameterRangeError("total_iterations must be >= 0")
        if min(self.n_replications, self.n_candidates, self.n_regimes) < 1:
            raise ParameterRangeError("R, I and K_dyn must be positive")
        if self.rule not in GENERATION_RULES:
            raise ParameterRangeError(f"unknown rule {self.rule!r}")
        if self.clustering_mode not in CLUSTERING_MODES:
            raise ParameterRangeError(f"unknown clustering mode {self.clustering_mode!r}")
        if not self.dynamic_specs() or not self.heterogeneous_specs():
            raise ParameterRangeError("need at least one parameter of each kind")

    def dynamic_specs(self) -> list[ParameterSpec]:
        return [p for p in self.parameters if p.kind == "dynamic"]

    def heterogeneous_specs(self) -> list[ParameterSpec]:
        return [p for p in self.parameters if p.kind == "heterogeneous"]

    def dynamic_ranges(self) -> np.ndarray:
        return np.array([[p.low, p.high] for p in self.dynamic_specs()])

    def heterogeneous_ranges(self) -> np.ndarray:
        return np.array([[p.low, p.high] for p in self.heterogeneous_specs()])

    def is_dynamic_phase(self, c: int) -> bool:
        period = self.dyn_iterations + self.het_iterations
        return (c % period) < self.dyn_iterations


@dataclass
class TrailEntry:
    """One scored simulation evaluation (either phase)."""

    iteration: int
    phase: str              # "dynamic" | "heterogeneous"
    label: str              # candidate index or acquisition branch
    total_mape: float
    neg_log_lik: float
    schedule: np.ndarray    # (n_dyn, T) snapshot
    het_vector: np.ndarray  # flattened (K, n_het) snapshot
    per_stat_mape: np.ndarray


@dataclass
class MetricsReport:
    per_stat_mape: np.ndarray
    stat_names: tuple[str, ...]
    total_mape: float
    dynamic_mae: float | None
    heterogeneous_euclidean: float | None
    best_iteration: int
    best_phase: str


@dataclass
class CalibrationState:
    candidates: CandidateSet
    het_vector: np.ndarray
    assignment: HeterogeneousAssignment
    trail: list[TrailEntry] = field(default_factory=list)
    dynamic_records: list[dict] = field(default_factory=list)
    het_records: list[HeterogeneousStepRecord] = field(default_factory=list)
    iteration: int = 0
    clustering_runs: int = 0
    clustering_artifacts: object | None = None  # ClusteringResult when learned

    def best_entry(self) -> TrailEntry:
        if not self.trail:
            raise DimensionError("no evaluations recorded yet")
        errors = np.array([e.total_mape for e in self.trail])
        return self.trail[int(np.argmin(errors))]  # argmin takes the earliest tie


def select_best(state: CalibrationState) -> TrailEntry:
    """Lowest-total-MAPE evaluation across both phases (earliest tie wins)."""
    return state.best_entry()


@dataclass
class FrameworkResult:
    report: MetricsReport
    state: CalibrationState
    best: TrailEntry


def _initial_assignment(config: FrameworkConfig,
                        validation: ValidationData):
    """Run the clustering component once (Alg.-1 line-3 equivalent)."""
    het_ranges = config.heterogeneous_ranges()
    if config.clustering_mode == "given":
        midpoints = het_ranges.mean(axis=1)
        assignment = HeterogeneousAssignment(
            np.tile(midpoints, (config.n_clusters, 1)), het_ranges,
            cluster_of_agent=None,
        )
        return assignment, None

    # reference runs with neutral single-cluster parameters supply the
    # agent traces for representation learning
    neutral = HeterogeneousAssignment(
        het_ranges.mean(axis=1)[None, :], het_ranges, cluster_of_agent=None)
    schedule = DynamicSchedule(
        np.tile(config.dynamic_ranges().mean(axis=1)[:, None], (1, config.model.horizon)),
        config.dynamic_ranges(),
    )
    base = child_seed(config.master_seed, _TAG_CLUSTER)
    acc = None
    for r in range(config.n_replications):
        result = run_simulation(config.model, schedule, neutral,
                                replication_seed(base, r))
        acc = result.agents.values if acc is None else acc + result.agents.values
    traces = AgentTrace(acc / config.n_replications)
    clustering = cluster_agents(
        traces, het_ranges, mode=config.clustering_mode,
        n_clusters=config.n_clusters, latent_dim=config.latent_dim,
        vae_epochs=config.vae_epochs, concentration=config.concentration,
        gibbs_sweeps=config.gibbs_sweeps, seed=base,
    )
    return clustering.assignment, clustering


def run_framework(
    config: FrameworkConfig,
    validation: ValidationData,
    reference_schedule: DynamicSchedule | None = None,
    reference_het_values: np.ndarray | None = None,
    snapshot_path: str | Path | None = None,
) -> FrameworkResult:
    """Run the full alternating calibration and report the best combination."""
    config.validate()
    try:
        return _run_framework_inner(config, validation, reference_schedule,
                                    reference_het_values)
    except Exception as exc:
        if snapshot_path is not None:
            Path(snapshot_path).write_text(json.dumps(
                {"error": repr(exc), "master_seed": config.master_seed}))
        raise


def _run_framework_inner(config, validation, reference_schedule, reference_het_values):
    assignment, clustering_artifacts = _initial_assignment(config, validation)

    if config.initial_schedule_values is not None:
        pinned = DynamicSchedule(np.asarray(config.initial_schedule_values, dtype=float),
                                 config.dynamic_ranges())
        candidates = CandidateSet([pinned] * config.n_candidates, iteration=0)
    else:
        candidates = initial_candidates(
            config.dynamic_ranges(), config.n_candidates, config.model.horizon,
            child_seed(config.master_seed, _TAG_INIT_CAND), kind=config.candidate_init,
        )
    dyn_cal = DynamicCalibrator(
        config.model, validation, config.n_replications, config.n_regimes,
        config.rule, config.master_seed,
    )
    het_cal = HeterogeneousCalibrator(
        config.model, validation, assignment, config.n_replications,
        config.strategy, config.master_seed,
    )
    if config.initial_het_values is not None:
        het_vector = np.asarray(config.initial_het_values, dtype=float).ravel()
    else:
        rng = make_rng(child_seed(config.master_seed, _TAG_INIT_HET))
        het_vector = rng.uniform(het_cal.bounds[:, 0], het_cal.bounds[:, 1],
                                 het_cal.bounds.shape[0])

    state = CalibrationState(candidates, het_vector, assignment,
                             clustering_runs=1,
                             clustering_artifacts=clustering_artifacts)
    dyn_best_schedule: DynamicSchedule | None = None
    dyn_iteration = 0

    for c in range(config.total_iterations):
        state.iteration = c
        if config.is_dynamic_phase(c):
            frozen = assignment.with_values(state.het_vector)
            out = dyn_cal.step(state.candidates, frozen, dyn_iteration)
            best_idx, best_mape = None, np.inf
            for i, schedule in enumerate(state.candidates.schedules):
                per_stat, total = mape(out.sim_means[:, :, i], validation.stats)
                state.trail.append(TrailEntry(
                    iteration=c, phase="dynamic", label=f"candidate-{i}",
                    total_mape=total, neg_log_lik=float(out.neg_log_lik[i]),
                    schedule=schedule.values.copy(),
                    het_vector=state.het_vector.copy(),
                    per_stat_mape=per_stat,
                ))
                if total < best_mape:
                    best_idx, best_mape = i, total
            dyn_best_schedule = state.candidates.schedules[best_idx]
            _record_dynamic(state, c, out)
            state.candidates = out.next_candidates
            dyn_iteration += 1
        else:
            schedule = dyn_best_schedule or state.candidates.schedules[0]
            record, next_vector, mean_trace = het_cal.step(state.het_vector, schedule, c)
            per_stat, total = mape(mean_trace, validation.stats)
            state.trail.append(TrailEntry(
                iteration=c, phase="heterogeneous", label=record.branch,
                total_mape=total, neg_log_lik=np.nan,
                schedule=schedule.values.copy(),
                het_vector=np.asarray(record.vector, dtype=float),
                per_stat_mape=per_stat,
            ))
            state.het_records.append(record)
            state.het_vector = next_vector

    best = select_best(state)
    report = MetricsReport(
        per_stat_mape=best.per_stat_mape,
        stat_names=validation.names,
        total_mape=best.total_mape,
        dynamic_mae=None if reference_schedule is None else float(
            np.abs(best.schedule - reference_schedule.values).mean()),
        heterogeneous_euclidean=None if reference_het_values is None else float(
            np.linalg.norm(best.het_vector - np.asarray(reference_het_values).ravel())),
        best_iteration=best.iteration,
        best_phase=best.phase,
    )
    return FrameworkResult(report=report, state=state, best=best)


def _record_dynamic(state: CalibrationState, c: int, out) -> None:
    """Flatten one dynamic step into per-(candidate, param, block) rows."""
    inference = out.inference
    for i in range(out.sim_means.shape[2]):
        for u, (block, per_param) in enumerate(
                zip(inference.merged.blocks, inference.posteriors)):
            signature = "|".join(str(s) for s in inference.merged.signatures[u])
            for n, post in enumerate(per_param):
                state.dynamic_records.append({
                    "iter": c,
                    "candidate": i,
                    "neg_log_lik": float(out.neg_log_lik[i]),
                    "regime_signature": signature,
                    "param": n,
                    "block": u,
                    "alpha": post.alpha,
                    "beta": post.beta,
                })
