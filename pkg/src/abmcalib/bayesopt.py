"""Heterogeneous-parameter calibration loop: evaluate, log, refit, propose.

Each step runs the simulation R times at the current cluster-value vector
(with the best dynamic schedule frozen), scores the replication-averaged
trace by total MAPE against the validation data, appends the observation to
the evaluation log, refits the surrogate once enough records exist, and asks
the acquisition portfolio for the next vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acquisition import SearchStrategy, propose_next
from .errors import DimensionError, ParameterRangeError
from .gp import GaussianProcessSurrogate, KernelHyperparams, fit_gp
from .metrics import total_mape
from .rng import child_seed, replication_seed
from .wealth import (
    DynamicSchedule,
    HeterogeneousAssignment,
    ValidationData,
    WealthModelConfig,
    run_simulation,
)

GP_REFIT_MIN_RECORDS = 5

_TAG_HET_SIM, _TAG_PROPOSE = 23, 29


@dataclass
class EvaluationLog:
    """Accumulated (parameter vector, error) observations for the surrogate."""

    bounds: np.ndarray  # (D, 2)
    xs: list[np.ndarray] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))

    def __len__(self) -> int:
        return len(self.errors)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def append(self, x: np.ndarray, error: float) -> None:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise DimensionError(f"vector has {x.size} entries, log expects {self.dim}")
        if np.any(x < self.bounds[:, 0] - 1e-12) or np.any(x > self.bounds[:, 1] + 1e-12):
            raise ParameterRangeError("vector outside the declared bounds box")
        if not np.isfinite(error):
            raise ParameterRangeError("error must be finite")
        self.xs.append(x)
        self.errors.append(float(error))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.xs), np.array(self.errors)

    def best(self) -> tuple[np.ndarray, float]:
        idx = int(np.argmin(self.errors))
        return self.xs[idx], self.errors[idx]


def default_hyper(errors: np.ndarray, dim: int) -> KernelHyperparams:
    """Fixed fallback hyperparameters used before the first refit."""
    errors = np.asarray(errors, dtype=float)
    signal = float(errors.var()) if errors.size >= 2 and errors.var() > 0 else 1.0
    return KernelHyperparams(signal, np.full(dim, 0.3), 1e-4)


@dataclass
class HeterogeneousStepRecord:
    iteration: int
    branch: str
    vector: np.ndarray
    error: float
    best_so_far: float
    gp_loglik: float


@dataclass
class HeterogeneousCalibrator:
    """Surrogate-based calibration of the per-cluster parameter matrix.

    The parameter space is the flattened (cluster, parameter) value matrix;
    bounds repeat each parameter's declared range per cluster.
    """

    config: WealthModelConfig
    validation: ValidationData
    assignment: HeterogeneousAssignment
    n_replications: int
    strategy: SearchStrategy
    master_seed: int

    def __post_init__(self) -> None:
        ranges = self.assignment.ranges
        self.bounds = np.tile(ranges, (self.assignment.n_clusters, 1))
        self.log = EvaluationLog(self.bounds)
        self.gp: GaussianProcessSurrogate | None = None
        self._het_iteration = 0
        self._incoming_branch = "random"  # what produced the vector under evaluation

    def evaluate(self, vector: np.ndarray, schedule: DynamicSchedule,
                 eval_seed: int) -> tuple[float, np.ndarray]:
        """Mean-over-replications total MAPE at the given value vector."""
        assignment = self.assignment.with_values(vector)
        acc = None
        for r in range(self.n_replications):
            result = run_simulation(self.config, schedule, assignment,
                                    replication_seed(eval_seed, r))
            acc = result.summary.stats if acc is None else acc + result.summary.stats
        mean_trace = acc / self.n_replications
        return total_mape(mean_trace, self.validation.stats), mean_trace

    def step(self, vector: np.ndarray, schedule: DynamicSchedule,
             framework_iteration: int) -> tuple[HeterogeneousStepRecord, np.ndarray, np.ndarray]:
        """One Alg.-3-style iteration.

        Returns the log record, the proposed next vector, and the mean trace
        of this evaluation (for cross-phase bookkeeping).
        """
        c = self._het_iteration
        error, mean_trace = self.evaluate(
            vector, schedule,
            child_seed(self.master_seed, _TAG_HET_SIM, framework_iteration))
        self.log.append(vector, error)

        gp_loglik = np.nan
        if len(self.log) >= GP_REFIT_MIN_RECORDS:
            xs, errs = self.log.as_arrays()
            previous = self.gp.hyper_ if self.gp is not None else None
            self.gp = fit_gp(xs, errs, previous=previous,
                             seed=child_seed(self.master_seed, 31, c))
            gp_loglik = self.gp.log_marginal_likelihood_
        elif len(self.log) >= 2 and self.gp is None:
            xs, errs = self.log.as_arrays()
            self.gp = GaussianProcessSurrogate(
                hyper=default_hyper(errs, self.log.dim), optimize=False
            ).fit(xs, errs)

        best_x, best_err = self.log.best()
        history, _ = self.log.as_arrays()
        next_vector, next_branch = propose_next(
            self.gp, best_err, self.strategy, c, self.bounds,
            seed=child_seed(self.master_seed, _TAG_PROPOSE, framework_iteration),
            incumbent=best_x, history=history,
        )
        self._het_iteration += 1
        record = HeterogeneousStepRecord(
            iteration=c, branch=self._incoming_branch,
            vector=np.asarray(vector, dtype=float),
            error=error, best_so_far=best_err, gp_loglik=gp_loglik,
        )
        self._incoming_branch = next_branch
        return record, next_vector, mean_trace

    def initial_vector(self, seed: int | None = None) -> np.ndarray:
        """Uniform draw in the bounds box (the random bootstrap phase)."""
        from .rng import make_rng

        rng = make_rng(self.master_seed if seed is None else seed)
        return rng.uniform(self.bounds[:, 0], self.bounds[:, 1], self.bounds.shape[0])
