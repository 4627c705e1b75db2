"""Wealth-distribution agent-based model with calibration hooks.

A population of agents forages on a toroidal grid.  Each timestep every agent
harvests the wealth of its cell (split equally among co-located agents), pays
a consumption cost, and moves greedily to the richest cell within its vision.
Cells then regrow wealth proportional to the time-varying income level.

Two calibration hooks control the dynamics:

* ``wealth income`` -- a dynamic (per-timestep) multiplier on cell regrowth,
  the first row of a :class:`DynamicSchedule`;
* ``wealth consumption`` -- a heterogeneous (per-cluster) multiplier on the
  base metabolism, the first column of a :class:`HeterogeneousAssignment`.

Consumption has a flat part (cluster value times base metabolism) plus a
proportional part (``wealth_decay`` times current wealth).  The decay term
bounds the memory of agent wealth to roughly ``1 / wealth_decay`` steps, so
the summary statistics respond to the income level of the recent window
rather than to its full cumulative history.

Runs are pure functions of ``(config, schedule, assignment, seed)``: the same
inputs produce bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterRangeError
from .rng import make_rng, replication_seed

STAT_NAMES = (
    "high_class_wealth_avg",
    "middle_class_wealth_avg",
    "low_class_wealth_avg",
    "gini_index",
)


@dataclass
class WealthModelConfig:
    """Static model setup; the calibrated parameters live outside it."""

    grid_width: int = 10
    grid_height: int = 10
    num_agents: int = 100
    horizon: int = 50
    vision: int = 1
    base_metabolism: float = 0.4
    base_regrowth: float = 1.2
    wealth_decay: float = 0.25
    max_cell_wealth: float = 10.0
    initial_wealth_range: tuple[float, float] = (2.0, 10.0)
    rng_seed: int = 0

    def validate(self) -> None:
        if self.grid_width < 1 or self.grid_height < 1:
            raise DimensionError("grid dimensions must be positive")
        if self.num_agents < 1:
            raise DimensionError("num_agents must be positive")
        if self.horizon < 1:
            raise DimensionError("horizon must be >= 1")
        if self.vision < 1:
            raise ParameterRangeError("vision must be a positive cell radius")
        if self.base_metabolism < 0 or self.base_regrowth < 0:
            raise ParameterRangeError("metabolism and regrowth must be >= 0")
        if not 0.0 <= self.wealth_decay < 1.0:
            raise ParameterRangeError("wealth_decay must lie in [0, 1)")
        if self.max_cell_wealth <= 0:
            raise ParameterRangeError("max_cell_wealth must be positive")
        lo, hi = self.initial_wealth_range
        if lo < 0 or hi < lo:
            raise ParameterRangeError(
                f"initial_wealth_range must satisfy 0 <= low <= high, got {(lo, hi)}"
            )


@dataclass
class DynamicSchedule:
    """Per-timestep values for each dynamic parameter.

    ``values`` has one row per dynamic parameter and one column per timestep;
    ``ranges`` holds the declared [min, max] box per parameter.
    """

    values: np.ndarray
    ranges: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DimensionError("schedule values must be a (n_params, horizon) matrix")
        self.ranges = np.atleast_2d(np.asarray(self.ranges, dtype=float))
        if self.ranges.shape != (self.values.shape[0], 2):
            raise DimensionError(
                f"schedule ranges must be (n_params, 2), got {self.ranges.shape}"
            )

    @property
    def n_params(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def validate(self) -> None:
        lo = self.ranges[:, 0][:, None]
        hi = self.ranges[:, 1][:, None]
        if np.any(self.values < lo) or np.any(self.values > hi):
            raise ParameterRangeError("schedule values outside declared ranges")

    @classmethod
    def constant(cls, value: float, horizon: int, value_range=(0.0, 2.0)) -> "DynamicSchedule":
        return cls(np.full((1, horizon), float(value)), np.array([value_range]))


@dataclass
class HeterogeneousAssignment:
    """Per-cluster values for each heterogeneous parameter.

    ``values`` has one row per cluster and one column per parameter.  When
    ``cluster_of_agent`` is given it maps each agent id to a cluster; when it
    is ``None`` agents are split at simulation start by descending initial
    wealth into ``n_clusters`` near-equal groups (cluster 0 = wealthiest),
    re-evaluated per seed.
    """

    values: np.ndarray
    ranges: np.ndarray
    cluster_of_agent: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.ranges = np.atleast_2d(np.asarray(self.ranges, dtype=float))
        if self.ranges.shape != (self.values.shape[1], 2):
            raise DimensionError(
                f"assignment ranges must be (n_params, 2), got {self.ranges.shape}"
            )
        if self.cluster_of_agent is not None:
            self.cluster_of_agent = np.asarray(self.cluster_of_agent, dtype=int)

    @property
    def n_clusters(self) -> int:
        return self.values.shape[0]

    @property
    def n_params(self) -> int:
        return self.values.shape[1]

    def validate(self, num_agents: int | None = None) -> None:
        lo = self.ranges[:, 0][None, :]
        hi = self.ranges[:, 1][None, :]
        if np.any(self.values < lo) or np.any(self.values > hi):
            raise ParameterRangeError("assignment values outside declared ranges")
        if self.cluster_of_agent is not None:
            labels = self.cluster_of_agent
            if num_agents is not None and labels.shape != (num_agents,):
                raise DimensionError(
                    f"cluster_of_agent must have one label per agent, got {labels.shape}"
                )
            if labels.min(initial=0) < 0 or labels.max(initial=0) >= self.n_clusters:
                raise ParameterRangeError("cluster labels outside [0, n_clusters)")

    def with_values(self, flat_values: np.ndarray) -> "HeterogeneousAssignment":
        """Copy of this assignment with a new (flattened) value matrix."""
        values = np.asarray(flat_values, dtype=float).reshape(self.values.shape)
        return HeterogeneousAssignment(values, self.ranges, self.cluster_of_agent)


@dataclass
class SummaryTrace:
    """Per-timestep summary statistics (one row per statistic)."""

    stats: np.ndarray
    names: tuple[str, ...] = STAT_NAMES

    def __post_init__(self) -> None:
        self.stats = np.asarray(self.stats, dtype=float)
        if self.stats.ndim != 2 or self.stats.shape[0] != len(self.names):
            raise DimensionError("summary stats must be (n_stats, horizon)")


@dataclass
class AgentTrace:
    """Agent-level state trajectories, shape (agents, attributes, horizon)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise DimensionError("agent trace must be (agents, attributes, horizon)")


@dataclass
class ValidationData:
    """Target summary statistics plus the provenance of their generation."""

    stats: np.ndarray
    names: tuple[str, ...] = STAT_NAMES
    replications: int = 1
    master_seed: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.stats = np.asarray(self.stats, dtype=float)


@dataclass
class SimulationResult:
    summary: SummaryTrace
    agents: AgentTrace
    cluster_of_agent: np.ndarray
    # per-step wealth accounting (for the conservation check)
    harvested: np.ndarray
    consumed: np.ndarray
    floor_loss: np.ndarray


def _gini_ascending(ranked: np.ndarray) -> float:
    """Gini index of an already ascending-sorted nonnegative vector."""
    total = ranked.sum()
    if total <= 0.0:
        return 0.0
    n = ranked.size
    weights = 2.0 * np.arange(1, n + 1) - n - 1.0
    return float((weights * ranked).sum() / (n * total))


def gini(wealths: np.ndarray) -> float:
    """Relative mean absolute difference of a nonnegative wealth vector.

    Equals ``sum_ij |w_i - w_j| / (2 n^2 mean)``; scale invariant; defined as
    0 for an all-zero vector.
    """
    w = np.asarray(wealths, dtype=float)
    if w.size == 0:
        raise DimensionError("gini of an empty vector is undefined")
    if np.any(w < 0):
        raise ParameterRangeError("gini requires nonnegative wealths")
    return _gini_ascending(np.sort(w))


def _tercile_sizes(n: int) -> tuple[int, int, int]:
    top = math.ceil(n / 3)
    middle = n - 2 * top
    return top, middle, top


def summarize(wealths: np.ndarray) -> np.ndarray:
    """Class wealth averages (high/middle/low tercile) plus the Gini index.

    Terciles are taken over a descending sort with stable (agent-id) tie
    breaks; top and bottom get ceil(n/3) agents each.  For n = 4 the middle
    tercile is empty and its average is defined as the midpoint of the top
    and bottom class averages, preserving high >= middle >= low.
    """
    w = np.asarray(wealths, dtype=float)
    if w.size < 3:
        raise DimensionError("summarize requires at least 3 agents")
    order = np.argsort(-w, kind="stable")
    ranked = w[order]
    top, middle, _ = _tercile_sizes(w.size)
    high = float(ranked[:top].mean())
    low = float(ranked[w.size - top:].mean())
    if middle > 0:
        mid = float(ranked[top:top + middle].mean())
    else:
        mid = 0.5 * (high + low)
    return np.array([high, mid, low, _gini_ascending(ranked[::-1])])


def split_by_rank(values: np.ndarray, n_groups: int) -> np.ndarray:
    """Labels 0..n_groups-1 by descending value, near-equal group sizes.

    Group 0 holds the largest values; ties are broken by index so the split
    is deterministic.  Used for the a-priori "top share of initial wealth"
    clustering.
    """
    values = np.asarray(values, dtype=float)
    order = np.argsort(-values, kind="stable")
    labels = np.empty(values.size, dtype=int)
    bounds = np.linspace(0, values.size, n_groups + 1).round().astype(int)
    for g in range(n_groups):
        labels[order[bounds[g]:bounds[g + 1]]] = g
    return labels


def _neighbor_offsets(vision: int) -> tuple[np.ndarray, np.ndarray]:
    """Moore-neighborhood offsets ordered ring-by-ring, clockwise from north,
    with the agent's own cell last (the movement tie-break order)."""
    offsets = []
    for dr in range(-vision, vision + 1):
        for dc in range(-vision, vision + 1):
            if dr == 0 and dc == 0:
                continue
            ring = max(abs(dr), abs(dc))
            angle = math.atan2(dc, -dr) % (2.0 * math.pi)
            offsets.append((ring, angle, dr, dc))
    offsets.sort()
    offsets.append((0, 0.0, 0, 0))  # self-cell last
    dr = np.array([o[2] for o in offsets], dtype=int)
    dc = np.array([o[3] for o in offsets], dtype=int)
    return dr, dc


_NEIGHBOR_TABLES: dict[tuple[int, int, int], np.ndarray] = {}


def _neighbor_table(height: int, width: int, vision: int) -> np.ndarray:
    """Flat cell index -> candidate destination cells in tie-break order,
    on a torus.  Cached per (height, width, vision)."""
    key = (height, width, vision)
    table = _NEIGHBOR_TABLES.get(key)
    if table is None:
        dr, dc = _neighbor_offsets(vision)
        rows, cols = np.divmod(np.arange(height * width), width)
        cand_rows = (rows[:, None] + dr[None, :]) % height
        cand_cols = (cols[:, None] + dc[None, :]) % width
        table = cand_rows * width + cand_cols
        _NEIGHBOR_TABLES[key] = table
    return table


def run_simulation(
    config: WealthModelConfig,
    schedule: DynamicSchedule,
    assignment: HeterogeneousAssignment,
    seed: int | None = None,
) -> SimulationResult:
    """Run one seeded simulation and collect summary and agent traces.

    Step order: harvest (equal split among co-located agents, cell drops to
    zero), consume (cluster value times base metabolism plus wealth_decay
    times current wealth, floored at zero), move (greedy to the richest cell
    within vision, ties broken by the fixed neighbor order), regrow
    (income[t] * regrowth, capped at max_cell_wealth).  Summary statistics
    are recorded after each full step.
    """
    config.validate()
    schedule.validate()
    if schedule.horizon != config.horizon:
        raise DimensionError(
            f"schedule covers {schedule.horizon} steps, config expects {config.horizon}"
        )
    if schedule.n_params != 1:
        raise DimensionError("the wealth model takes exactly one dynamic parameter")
    if assignment.n_params != 1:
        raise DimensionError("the wealth model takes exactly one heterogeneous parameter")
    assignment.validate(config.num_agents)

    rng = make_rng(config.rng_seed if seed is None else seed)
    n_cells = config.grid_width * config.grid_height
    n_agents = config.num_agents
    horizon = config.horizon
    width = config.grid_width

    # Cells all start half full and agents on distinct cells where possible:
    # replication noise then comes from the initial wealth draw and the
    # placement pattern only, which keeps the evaluation noise floor low
    # enough for the parameter effects to be identifiable.
    cell_wealth = np.full(n_cells, config.max_cell_wealth / 2.0)
    if n_agents <= n_cells:
        cell_idx = rng.choice(n_cells, n_agents, replace=False)
    else:
        cell_idx = rng.integers(0, n_cells, n_agents)
    lo, hi = config.initial_wealth_range
    wealth = rng.uniform(lo, hi, n_agents)

    if assignment.cluster_of_agent is not None:
        cluster = assignment.cluster_of_agent
    else:
        cluster = split_by_rank(wealth, assignment.n_clusters)
    consumption = assignment.values[cluster, 0] * config.base_metabolism

    neighbors = _neighbor_table(config.grid_height, width, config.vision)
    income = schedule.values[0] * config.base_regrowth
    decay = config.wealth_decay

    stats = np.empty((len(STAT_NAMES), horizon))
    agent_trace = np.empty((n_agents, 1, horizon))
    harvested = np.empty(horizon)
    consumed = np.empty(horizon)
    floor_loss = np.empty(horizon)
    take = np.arange(n_agents)

    for t in range(horizon):
        # harvest: cell wealth split equally among co-located agents
        occupancy = np.bincount(cell_idx, minlength=n_cells)
        share = cell_wealth[cell_idx] / occupancy[cell_idx]
        wealth += share
        cell_wealth[cell_idx] = 0.0
        harvested[t] = share.sum()

        # consume (flat + proportional), floored at zero (no agent death)
        due = consumption + decay * wealth
        after = wealth - due
        np.maximum(after, 0.0, out=after)
        consumed[t] = due.sum()
        floor_loss[t] = due.sum() - (wealth - after).sum()
        wealth = after

        # move to the richest cell within vision (self-cell last in tie order)
        cand_idx = neighbors[cell_idx]
        best = np.argmax(cell_wealth[cand_idx], axis=1)
        cell_idx = cand_idx[take, best]

        # regrow, capped
        cell_wealth += income[t]
        np.minimum(cell_wealth, config.max_cell_wealth, out=cell_wealth)

        stats[:, t] = summarize(wealth)
        agent_trace[:, 0, t] = wealth

    return SimulationResult(
        summary=SummaryTrace(stats),
        agents=AgentTrace(agent_trace),
        cluster_of_agent=cluster,
        harvested=harvested,
        consumed=consumed,
        floor_loss=floor_loss,
    )


def mean_summary(
    config: WealthModelConfig,
    schedule: DynamicSchedule,
    assignment: HeterogeneousAssignment,
    replications: int,
    master_seed: int,
) -> np.ndarray:
    """Element-wise mean of the summary trace over seeded replications."""
    if replications < 1:
        raise DimensionError("replications must be >= 1")
    acc = np.zeros((len(STAT_NAMES), config.horizon))
    for r in range(replications):
        result = run_simulation(config, schedule, assignment, replication_seed(master_seed, r))
        acc += result.summary.stats
    return acc / replications


def generate_validation(
    config: WealthModelConfig,
    schedule: DynamicSchedule,
    assignment: HeterogeneousAssignment,
    replications: int,
    master_seed: int,
) -> ValidationData:
    """Replication-averaged summary trace used as the calibration target."""
    stats = mean_summary(config, schedule, assignment, replications, master_seed)
    return ValidationData(
        stats=stats,
        replications=replications,
        master_seed=master_seed,
        provenance={
            "schedule": schedule.values.tolist(),
            "assignment": assignment.values.tolist(),
        },
    )


def synthetic_schedule(horizon: int = 50, high: float = 1.5, low: float = 0.5,
                       period: int = 10, value_range=(0.0, 2.0)) -> DynamicSchedule:
    """Square-wave income schedule: ``high`` for the first period, then
    alternating every ``period`` steps (the benchmark's synthetic setting)."""
    blocks = np.arange(horizon) // period
    values = np.where(blocks % 2 == 0, high, low)[None, :]
    return DynamicSchedule(values, np.array([value_range]))


def synthetic_assignment(top_value: float = 0.9, bottom_value: float = 0.1,
                         value_range=(0.0, 1.0)) -> HeterogeneousAssignment:
    """Two-cluster consumption: wealth-rank split, top half vs bottom half."""
    return HeterogeneousAssignment(
        values=np.array([[top_value], [bottom_value]]),
        ranges=np.array([value_range]),
        cluster_of_agent=None,
    )
