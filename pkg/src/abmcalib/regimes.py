"""Dynamic-parameter calibration through hidden-regime detection.

One calibration iteration maintains I candidate schedules, scores each
timestep of each candidate by the Gaussian likelihood of the validation data
under the replication-averaged simulation output, labels timesteps with a
per-candidate hidden Markov model over the simulation-vs-validation
deviations, intersects the labelings into merged regimes, fits a Beta
posterior per merged regime from likelihood-weighted normalized parameter
values, and draws the next candidate set from those posteriors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, polygamma

from .errors import DimensionError, ParameterRangeError
from .hmm import fit_hmm_group
from .rng import child_seed, make_rng, replication_seed
from .wealth import (
    DynamicSchedule,
    HeterogeneousAssignment,
    ValidationData,
    WealthModelConfig,
    run_simulation,
)

GENERATION_RULES = ("by-time", "by-regime", "mode-selection", "random")

SD_FRACTION = 0.1
SD_FLOOR = 1e-6
UNIT_CLIP = 1e-4
POOR_FIT_DECAY = 0.9

# seed-stream tags so simulation, regime detection and generation decorrelate
_TAG_SIM, _TAG_HMM, _TAG_GEN = 11, 13, 17


@dataclass
class CandidateSet:
    """The I concurrently maintained dynamic-parameter schedules."""

    schedules: list[DynamicSchedule]
    iteration: int = 0

    def __post_init__(self) -> None:
        if not self.schedules:
            raise DimensionError("candidate set must hold at least one schedule")
        first = self.schedules[0]
        for s in self.schedules[1:]:
            if s.values.shape != first.values.shape or not np.array_equal(s.ranges, first.ranges):
                raise DimensionError("candidates must share shape and ranges")

    @property
    def n_candidates(self) -> int:
        return len(self.schedules)

    @property
    def ranges(self) -> np.ndarray:
        return self.schedules[0].ranges


@dataclass
class LikelihoodMatrix:
    """Gaussian likelihoods of the validation data under each candidate.

    ``log_per_stat`` has shape (S, T, I); ``log_joint`` (T, I) sums over
    statistics.  ``log_fit`` is the scale-free part -sum(z^2)/2, i.e. the
    joint log-density relative to its attainable peak; it is comparable
    across timesteps whose density scales differ.  Linear-scale views are
    exposed for reporting; all internal arithmetic stays in log space.
    """

    log_per_stat: np.ndarray
    log_joint: np.ndarray
    log_fit: np.ndarray
    sim_mean: np.ndarray
    sim_sd: np.ndarray

    @property
    def per_stat(self) -> np.ndarray:
        return np.exp(self.log_per_stat)

    @property
    def joint(self) -> np.ndarray:
        return np.exp(self.log_joint)


@dataclass
class MergedRegimes:
    """Partition of timesteps by identical per-candidate label tuples."""

    blocks: list[np.ndarray]
    signatures: list[tuple[int, ...]]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def covers(self, horizon: int) -> bool:
        seen = np.concatenate(self.blocks) if self.blocks else np.array([], dtype=int)
        return seen.size == horizon and np.array_equal(np.sort(seen), np.arange(horizon))


@dataclass
class BetaPosterior:
    """Beta(alpha, beta) over a normalized parameter within one regime."""

    alpha: float
    beta: float

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def sd(self) -> float:
        a, b = self.alpha, self.beta
        return float(np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1.0))))


def compute_likelihoods(sim_mean: np.ndarray, validation: ValidationData) -> LikelihoodMatrix:
    """Per-stat and joint Gaussian likelihoods, sd = max(0.1|mean|, floor)."""
    sim_mean = np.asarray(sim_mean, dtype=float)
    if sim_mean.ndim != 3:
        raise DimensionError("sim_mean must be (n_stats, horizon, n_candidates)")
    val = validation.stats
    if val.shape != sim_mean.shape[:2]:
        raise DimensionError(
            f"validation {val.shape} does not match simulation {sim_mean.shape[:2]}"
        )
    sd = np.maximum(SD_FRACTION * np.abs(sim_mean), SD_FLOOR)
    z = (val[:, :, None] - sim_mean) / sd
    log_per_stat = -0.5 * z**2 - np.log(sd) - 0.5 * np.log(2.0 * np.pi)
    return LikelihoodMatrix(
        log_per_stat=log_per_stat,
        log_joint=log_per_stat.sum(axis=0),
        log_fit=-0.5 * (z**2).sum(axis=0),
        sim_mean=sim_mean,
        sim_sd=sd,
    )


def merge_regimes(labelings: np.ndarray) -> MergedRegimes:
    """Group timesteps whose per-candidate label tuples coincide.

    Blocks are ordered by first occurrence, so the result is deterministic;
    blocks need not be contiguous in time.
    """
    labelings = np.asarray(labelings)
    if labelings.ndim != 2:
        raise DimensionError("labelings must be (horizon, n_candidates)")
    seen: dict[tuple[int, ...], int] = {}
    members: list[list[int]] = []
    for t in range(labelings.shape[0]):
        sig = tuple(int(v) for v in labelings[t])
        if sig not in seen:
            seen[sig] = len(members)
            members.append([])
        members[seen[sig]].append(t)
    return MergedRegimes(
        blocks=[np.array(m, dtype=int) for m in members],
        signatures=list(seen.keys()),
    )


def detect_poor_fit(log_joint: np.ndarray, block: np.ndarray, iteration: int) -> bool:
    """True when every candidate is below its likelihood threshold on the
    whole block.

    The threshold per candidate is (min_t L + ratio * max_t L) / (1 + ratio)
    with min/max over the full horizon and ratio = 0.9^iteration.  Computed
    from log-likelihoods by dividing through by the per-candidate maximum,
    which is exact and avoids underflow.
    """
    block = np.asarray(block, dtype=int)
    if block.size == 0:
        raise DimensionError("poor-fit check needs a nonempty block")
    ratio = POOR_FIT_DECAY ** iteration
    log_max = log_joint.max(axis=0)  # per candidate
    rel = np.exp(log_joint - log_max[None, :])  # in (0, 1]
    rel_min = rel.min(axis=0)
    threshold = (rel_min + ratio) / (1.0 + ratio)
    return bool(np.all(rel[block, :] < threshold[None, :]))


def normalize_values(values: np.ndarray, low: float, high: float) -> np.ndarray:
    """Affine map of parameter values onto [0, 1]."""
    if high <= low:
        raise ParameterRangeError(f"degenerate range [{low}, {high}]")
    return (np.asarray(values, dtype=float) - low) / (high - low)


def denormalize_values(unit: np.ndarray, low: float, high: float) -> np.ndarray:
    """Inverse of :func:`normalize_values`."""
    if high <= low:
        raise ParameterRangeError(f"degenerate range [{low}, {high}]")
    return low + np.asarray(unit, dtype=float) * (high - low)


def _beta_loglik(alpha: float, beta: float, s_lx: float, s_l1x: float) -> float:
    from scipy.special import betaln

    return (alpha - 1.0) * s_lx + (beta - 1.0) * s_l1x - betaln(alpha, beta)


def fit_beta(values: np.ndarray, weights: np.ndarray,
             var_floor: float = 1e-6, max_iter: int = 100) -> BetaPosterior:
    """Weighted maximum-likelihood Beta fit on values in (0, 1).

    Newton iteration on (alpha, beta) from a weighted method-of-moments
    start.  Degenerate inputs (weighted variance below ``var_floor``, or a
    failed Newton step) fall back to the method-of-moments estimate with the
    variance floored.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.shape != w.shape or x.ndim != 1 or x.size == 0:
        raise DimensionError("values and weights must be equal-length vectors")
    if np.any((x <= 0.0) | (x >= 1.0)):
        raise ParameterRangeError("beta fit needs values strictly inside (0, 1)")
    if np.any(w < 0.0) or w.sum() <= 0.0:
        raise ParameterRangeError("weights must be nonnegative with positive mass")
    w = w / w.sum()

    mean = float(np.dot(w, x))
    var = float(np.dot(w, (x - mean) ** 2))

    def moments(v: float) -> BetaPosterior:
        v = max(v, var_floor)
        v = min(v, mean * (1.0 - mean) * (1.0 - 1e-9))
        common = mean * (1.0 - mean) / v - 1.0
        return BetaPosterior(max(mean * common, 1e-3), max((1.0 - mean) * common, 1e-3))

    if var < var_floor:
        return moments(var)

    s_lx = float(np.dot(w, np.log(x)))
    s_l1x = float(np.dot(w, np.log1p(-x)))
    start = moments(var)
    theta = np.array([start.alpha, start.beta])
    for _ in range(max_iter):
        a, b = theta
        psi_ab = digamma(a + b)
        grad = np.array([s_lx - digamma(a) + psi_ab, s_l1x - digamma(b) + psi_ab])
        if np.max(np.abs(grad)) < 1e-10:
            break
        tri_ab = polygamma(1, a + b)
        hess = np.array([
            [-polygamma(1, a) + tri_ab, tri_ab],
            [tri_ab, -polygamma(1, b) + tri_ab],
        ])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return moments(var)
        # damped Newton: keep parameters strictly positive and the
        # log-likelihood from degrading
        scale = 1.0
        ref = _beta_loglik(a, b, s_lx, s_l1x)
        for _ in range(30):
            cand = theta - scale * step
            if np.all(cand > 0) and _beta_loglik(cand[0], cand[1], s_lx, s_l1x) >= ref - 1e-12:
                break
            scale *= 0.5
        else:
            return moments(var)
        theta = theta - scale * step
    if not np.all(np.isfinite(theta)) or np.any(theta <= 0):
        return moments(var)
    return BetaPosterior(float(theta[0]), float(theta[1]))


@dataclass
class RegimeInference:
    """Beta posteriors per (merged regime, dynamic parameter)."""

    merged: MergedRegimes
    posteriors: list[list[BetaPosterior]]  # [block][param]
    poor_fit: list[bool]
    labelings: np.ndarray  # (horizon, n_candidates)


def infer_regime_posteriors(
    candidates: CandidateSet,
    likelihoods: LikelihoodMatrix,
    labelings: np.ndarray,
    iteration: int,
) -> RegimeInference:
    """Merge the labelings and fit one Beta posterior per (regime, param).

    Weights are likelihoods normalized within the regime.  Normalization uses
    the peak-relative densities (``log_fit``): the Gaussian density SCALE
    (1/sd factors) varies by orders of magnitude across timesteps whenever
    the statistics change level, and raw-density normalization would hand the
    whole regime's weight to a single timestep regardless of fit quality.
    When the poor-fit condition triggers, weights are overridden to the
    uniform 1 / (I * |block|), which drives the fit toward Beta(1, 1).
    """
    merged = merge_regimes(labelings)
    n_candidates = candidates.n_candidates
    ranges = candidates.ranges
    log_joint = likelihoods.log_joint

    posteriors: list[list[BetaPosterior]] = []
    poor_flags: list[bool] = []
    for block in merged.blocks:
        poor = detect_poor_fit(log_joint, block, iteration)
        block_logs = likelihoods.log_fit[block, :]  # (|block|, I)
        if poor or not np.any(np.isfinite(block_logs)):
            weights = np.full(block_logs.size, 1.0 / block_logs.size)
            poor = True
        else:
            shifted = block_logs - block_logs.max()
            lin = np.exp(shifted).ravel()
            weights = lin / lin.sum()
        per_param = []
        for n in range(candidates.schedules[0].n_params):
            vals = np.stack(
                [s.values[n, block] for s in candidates.schedules], axis=1
            ).ravel()  # aligned with weights raveling (t-major, candidate-minor)
            unit = normalize_values(vals, ranges[n, 0], ranges[n, 1])
            unit = np.clip(unit, UNIT_CLIP, 1.0 - UNIT_CLIP)
            per_param.append(fit_beta(unit, weights))
        posteriors.append(per_param)
        poor_flags.append(poor)
    return RegimeInference(merged, posteriors, poor_flags, labelings)


def generate_candidates(
    inference: RegimeInference,
    ranges: np.ndarray,
    n_candidates: int,
    horizon: int,
    rule: str,
    seed: int,
    next_iteration: int = 0,
) -> CandidateSet:
    """Draw the next candidate set from the per-regime Beta posteriors.

    Rules: ``by-time`` draws independently per timestep and candidate;
    ``by-regime`` draws one value per (regime, candidate); ``mode-selection``
    deterministically spreads candidates at mean + (i - (I+1)/2) * sd;
    ``random`` is the baseline with an independent uniform draw per timestep
    and candidate (ignoring the posteriors).
    """
    if rule not in GENERATION_RULES:
        raise ParameterRangeError(f"unknown generation rule {rule!r}")
    rng = make_rng(seed)
    n_params = len(inference.posteriors[0]) if inference.posteriors else 0
    values = np.empty((n_candidates, n_params, horizon))
    offsets = np.arange(1, n_candidates + 1) - (n_candidates + 1) / 2.0

    for block, per_param in zip(inference.merged.blocks, inference.posteriors):
        for n, post in enumerate(per_param):
            if rule == "by-time":
                draws = rng.beta(post.alpha, post.beta, size=(n_candidates, block.size))
            elif rule == "by-regime":
                draws = np.repeat(
                    rng.beta(post.alpha, post.beta, size=(n_candidates, 1)),
                    block.size, axis=1,
                )
            elif rule == "random":
                draws = rng.uniform(size=(n_candidates, block.size))
            else:  # mode-selection
                spread = post.mean + offsets * post.sd
                draws = np.repeat(spread[:, None], block.size, axis=1)
            unit = np.clip(draws, 0.0, 1.0)
            values[:, n, block] = denormalize_values(unit, ranges[n, 0], ranges[n, 1])

    schedules = [DynamicSchedule(values[i], ranges.copy()) for i in range(n_candidates)]
    return CandidateSet(schedules, next_iteration)


@dataclass
class DynamicStepResult:
    next_candidates: CandidateSet
    neg_log_lik: np.ndarray           # per candidate
    sim_means: np.ndarray             # (S, T, I)
    likelihoods: LikelihoodMatrix
    inference: RegimeInference


@dataclass
class DynamicCalibrator:
    """Runs one dynamic-calibration iteration end to end (Alg.-2 style)."""

    config: WealthModelConfig
    validation: ValidationData
    n_replications: int
    n_regimes: int
    rule: str
    master_seed: int
    hmm_restarts: int = 5

    def evaluate_candidates(self, candidates: CandidateSet,
                            assignment: HeterogeneousAssignment,
                            iteration: int) -> np.ndarray:
        """Replication-averaged summary traces, shape (S, T, I)."""
        sims = []
        for i, schedule in enumerate(candidates.schedules):
            base = child_seed(self.master_seed, _TAG_SIM, iteration, i)
            acc = None
            for r in range(self.n_replications):
                result = run_simulation(
                    self.config, schedule, assignment, replication_seed(base, r))
                acc = result.summary.stats if acc is None else acc + result.summary.stats
            sims.append(acc / self.n_replications)
        return np.stack(sims, axis=2)

    def step(self, candidates: CandidateSet, assignment: HeterogeneousAssignment,
             iteration: int) -> DynamicStepResult:
        sim_means = self.evaluate_candidates(candidates, assignment, iteration)
        likelihoods = compute_likelihoods(sim_means, self.validation)
        gen_seed = child_seed(self.master_seed, _TAG_GEN, iteration)

        if self.rule == "random":
            # baseline draws do not consume the posteriors; skip the regime
            # machinery entirely
            inference = self._degenerate_inference(candidates)
        else:
            deviations = [
                (sim_means[:, :, i] - self.validation.stats).T
                for i in range(candidates.n_candidates)
            ]
            models = fit_hmm_group(
                deviations, self.n_regimes,
                child_seed(self.master_seed, _TAG_HMM, iteration),
                n_restarts=self.hmm_restarts,
            )
            labelings = np.stack([m.labels_ for m in models], axis=1)
            inference = infer_regime_posteriors(
                candidates, likelihoods, labelings, iteration)

        next_candidates = generate_candidates(
            inference, candidates.ranges, candidates.n_candidates,
            self.config.horizon, self.rule, gen_seed,
            next_iteration=candidates.iteration + 1,
        )
        with np.errstate(over="ignore"):
            neg_log_lik = -likelihoods.log_joint.sum(axis=0)
        return DynamicStepResult(next_candidates, neg_log_lik, sim_means,
                                 likelihoods, inference)

    def _degenerate_inference(self, candidates: CandidateSet) -> RegimeInference:
        labels = np.zeros((self.config.horizon, candidates.n_candidates), dtype=int)
        merged = merge_regimes(labels)
        flat = [[BetaPosterior(1.0, 1.0)
                 for _ in range(candidates.schedules[0].n_params)]]
        return RegimeInference(merged, flat, [True], labels)


def initial_candidates(ranges: np.ndarray, n_candidates: int, horizon: int,
                       seed: int, kind: str = "random") -> CandidateSet:
    """Starting candidate set: constant-in-time schedules.

    ``random`` draws each candidate's level uniformly in range; ``spread``
    places candidates on an even grid across the range (the selective
    initialization variant).
    """
    ranges = np.atleast_2d(np.asarray(ranges, dtype=float))
    n_params = ranges.shape[0]
    rng = make_rng(seed)
    if kind == "random":
        unit = rng.uniform(size=(n_candidates, n_params))
    elif kind == "spread":
        grid = (np.arange(1, n_candidates + 1)) / (n_candidates + 1.0)
        unit = np.repeat(grid[:, None], n_params, axis=1)
    else:
        raise ParameterRangeError(f"unknown initialization kind {kind!r}")
    schedules = []
    for i in range(n_candidates):
        values = denormalize_values(unit[i], ranges[:, 0], ranges[:, 1])
        schedules.append(DynamicSchedule(
            np.repeat(values[:, None], horizon, axis=1), ranges.copy()))
    return CandidateSet(schedules, 0)
