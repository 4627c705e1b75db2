"""Acquisition portfolio for the surrogate-driven parameter search.

The search strategy draws one of four branches per iteration: uniform
random, maximize predictive sd, minimize predictive mean, or maximize the
weighted expected improvement with a cooling weight.  Inner maximization is
multi-start bounded local search seeded by uniform draws plus perturbations
of the incumbent; the result is never worse than the best seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize as sopt
from scipy.stats import norm

from .errors import DimensionError, ParameterRangeError
from .gp import GaussianProcessSurrogate
from .rng import make_rng

BRANCH_RANDOM = "random"
BRANCH_VARIANCE = "max-variance"
BRANCH_MEAN = "min-mean"
BRANCH_WEI = "weighted-ei"


@dataclass
class SearchStrategy:
    """Branch probabilities and schedule of the acquisition portfolio."""

    c0: int = 10
    xi_rand: float = 0.10
    xi_pv: float = 0.20
    xi_pm: float = 0.20
    cooling_base: float = 0.99
    exploration_radius: float = 0.0  # r0; 0 keeps the full box searchable

    def __post_init__(self) -> None:
        xis = (self.xi_rand, self.xi_pv, self.xi_pm)
        if any(x < 0 for x in xis) or sum(xis) > 1.0 + 1e-12:
            raise ParameterRangeError("branch probabilities must be >= 0 and sum <= 1")
        if self.exploration_radius < 0:
            raise ParameterRangeError("exploration radius must be >= 0")

    @property
    def xi_wei(self) -> float:
        return 1.0 - self.xi_rand - self.xi_pv - self.xi_pm

    def cooling_weight(self, iteration: int) -> float:
        return self.cooling_base**iteration / 2.0

    def choose_branch(self, iteration: int, rng: np.random.Generator) -> str:
        if iteration < self.c0:
            return BRANCH_RANDOM
        xi = rng.uniform()
        if xi < self.xi_rand:
            return BRANCH_RANDOM
        if xi < self.xi_rand + self.xi_pv:
            return BRANCH_VARIANCE
        if xi < self.xi_rand + self.xi_pv + self.xi_pm:
            return BRANCH_MEAN
        return BRANCH_WEI


def expected_improvement(mean, sd, best: float) -> np.ndarray:
    """EI for minimization: (best - mean) Phi(z) + sd phi(z), z=(best-mean)/sd.

    Degenerates to max(best - mean, 0) when sd = 0.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    out = np.maximum(best - mean, 0.0)
    positive = sd > 0
    if np.any(positive):
        z = (best - mean[positive]) / sd[positive]
        out = np.array(out, dtype=float)
        out[positive] = (best - mean[positive]) * norm.cdf(z) + sd[positive] * norm.pdf(z)
    return out


def weighted_ei(mean, sd, best: float, weight: float) -> np.ndarray:
    """w-EI: (1 - w) * exploitation term + w * exploration term.

    weight = 0.5 recovers EI / 2 exactly.
    """
    if not 0.0 <= weight <= 1.0:
        raise ParameterRangeError("weight must lie in [0, 1]")
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    out = (1.0 - weight) * np.maximum(best - mean, 0.0)
    positive = sd > 0
    if np.any(positive):
        z = (best - mean[positive]) / sd[positive]
        exploit = (best - mean[positive]) * norm.cdf(z)
        explore = sd[positive] * norm.pdf(z)
        out = np.array(out, dtype=float)
        out[positive] = (1.0 - weight) * exploit + weight * explore
    return out


def _acquisition_values(model: GaussianProcessSurrogate, branch: str,
                        best: float, weight: float, queries: np.ndarray) -> np.ndarray:
    pred = model.predict(queries)
    if branch == BRANCH_VARIANCE:
        return pred.sd
    if branch == BRANCH_MEAN:
        return -pred.mean
    if branch == BRANCH_WEI:
        return weighted_ei(pred.mean, pred.sd, best, weight)
    raise ParameterRangeError(f"branch {branch!r} has no acquisition value")


def maximize_acquisition(
    model: GaussianProcessSurrogate,
    branch: str,
    best: float,
    weight: float,
    bounds: np.ndarray,
    seed: int,
    incumbent: np.ndarray | None = None,
    n_uniform: int = 32,
    n_perturbed: int = 32,
    history: np.ndarray | None = None,
    min_distance: float = 0.0,
) -> np.ndarray:
    """Multi-start bounded maximization of one acquisition branch.

    Seeds: ``n_uniform`` box draws plus ``n_perturbed`` Gaussian perturbations
    of the incumbent (scale 10% of the box width).  The best few seeds are
    polished with L-BFGS-B; the final answer is the best point seen, so it is
    never worse than the best seed.  Points closer than ``min_distance`` to
    any history row are excluded (the r0 exploration constraint).
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(hi <= lo):
        raise DimensionError("bounds box must be nonempty per dimension")
    rng = make_rng(seed)
    width = hi - lo

    seeds = [rng.uniform(lo, hi, (n_uniform, bounds.shape[0]))]
    if incumbent is not None:
        jitter = rng.normal(0.0, 0.1, (n_perturbed, bounds.shape[0])) * width
        seeds.append(np.clip(incumbent[None, :] + jitter, lo, hi))
    candidates = np.vstack(seeds)

    def feasible(points):
        if min_distance <= 0.0 or history is None or len(history) == 0:
            return np.ones(points.shape[0], dtype=bool)
        dists = np.linalg.norm(points[:, None, :] - history[None, :, :], axis=2)
        return dists.min(axis=1) >= min_distance

    ok = feasible(candidates)
    if not ok.any():
        return candidates[0]
    candidates = candidates[ok]
    values = _acquisition_values(model, branch, best, weight, candidates)
    order = np.argsort(-values)
    best_x = candidates[order[0]]
    best_val = values[order[0]]

    def negative(x):
        return -float(_acquisition_values(model, branch, best, weight, x[None, :])[0])

    for idx in order[:4]:
        res = sopt.minimize(
            negative, candidates[idx], method="L-BFGS-B",
            bounds=list(zip(lo, hi)), options={"maxiter": 40},
        )
        if -res.fun > best_val and feasible(res.x[None, :])[0]:
            best_val = -res.fun
            best_x = res.x
    return np.asarray(best_x, dtype=float)


def propose_next(
    model: GaussianProcessSurrogate | None,
    best_error: float | None,
    strategy: SearchStrategy,
    iteration: int,
    bounds: np.ndarray,
    seed: int,
    incumbent: np.ndarray | None = None,
    history: np.ndarray | None = None,
    force_branch: str | None = None,
) -> tuple[np.ndarray, str]:
    """Next design point and the branch that produced it.

    The first ``strategy.c0`` iterations and the xi_rand branch draw
    uniformly from the box; the other branches maximize their acquisition
    on the fitted surrogate.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    rng = make_rng(seed)
    branch = force_branch or strategy.choose_branch(iteration, rng)
    if branch == BRANCH_RANDOM or model is None:
        lo, hi = bounds[:, 0], bounds[:, 1]
        return rng.uniform(lo, hi, bounds.shape[0]), BRANCH_RANDOM
    weight = strategy.cooling_weight(iteration)
    point = maximize_acquisition(
        model, branch, float(best_error), weight, bounds,
        seed=int(rng.integers(2**63)), incumbent=incumbent,
        history=history, min_distance=strategy.exploration_radius,
    )
    return point, branch
