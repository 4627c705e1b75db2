"""Error metrics used to score simulations and compare experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import DimensionError

EPS_DENOM = 1e-9


def mape(sim: np.ndarray, val: np.ndarray) -> tuple[np.ndarray, float]:
    """Mean absolute percentage error per statistic, plus the total.

    Per statistic: mean over t of ``|sim - val| / max(|val|, eps)``; the
    total is the mean over statistics.
    """
    sim = np.asarray(sim, dtype=float)
    val = np.asarray(val, dtype=float)
    if sim.shape != val.shape or sim.ndim != 2:
        raise DimensionError(f"shape mismatch: sim {sim.shape} vs val {val.shape}")
    rel = np.abs(sim - val) / np.maximum(np.abs(val), EPS_DENOM)
    per_stat = rel.mean(axis=1)
    return per_stat, float(per_stat.mean())


def total_mape(sim: np.ndarray, val: np.ndarray) -> float:
    return mape(sim, val)[1]


def dynamic_mae(est: np.ndarray, ref: np.ndarray) -> float:
    """Mean absolute error between two dynamic schedules (n_params, T)."""
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape:
        raise DimensionError(f"shape mismatch: {est.shape} vs {ref.shape}")
    return float(np.abs(est - ref).mean())


def heterogeneous_euclidean(est: np.ndarray, ref: np.ndarray) -> float:
    """L2 distance between two heterogeneous value matrices (K, n_params)."""
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape:
        raise DimensionError(f"shape mismatch: {est.shape} vs {ref.shape}")
    return float(np.linalg.norm(est - ref))


@dataclass
class WelchResult:
    statistic: float
    dof: float
    p_value: float


def welch_one_tailed(sample: np.ndarray, baseline: np.ndarray) -> WelchResult:
    """One-tailed Welch t-test of mean(sample) < mean(baseline).

    Small p-values support the hypothesis that the sample's mean is below
    the baseline's.  Implemented from the textbook formula so reports do not
    depend on an external stats stack beyond the t CDF.
    """
    x = np.asarray(sample, dtype=float)
    y = np.asarray(baseline, dtype=float)
    if x.size < 2 or y.size < 2:
        raise DimensionError("welch test needs at least two observations per group")
    vx = x.var(ddof=1) / x.size
    vy = y.var(ddof=1) / y.size
    pooled = vx + vy
    if pooled == 0.0:
        # identical constant samples: no evidence either way
        return WelchResult(0.0, float(x.size + y.size - 2), 0.5)
    t = (x.mean() - y.mean()) / math.sqrt(pooled)
    dof = pooled**2 / (vx**2 / (x.size - 1) + vy**2 / (y.size - 1))
    p = float(sps.t.cdf(t, dof))
    return WelchResult(float(t), float(dof), p)
