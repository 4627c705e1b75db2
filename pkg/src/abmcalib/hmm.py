"""Gaussian hidden Markov model fit by Baum-Welch, with Viterbi decoding.

Emissions are diagonal Gaussians over the observation vector.  ``fit`` runs
several random restarts and keeps the one with the highest log-likelihood;
restarts (and, in :func:`fit_hmm_group`, whole models over different
observation sequences) are advanced in lockstep as one batched EM so the
per-timestep python loop is paid once.  The per-iteration log-likelihood
history of the winning restart is exposed for monotonicity checks.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DimensionError, NumericsError
from .rng import make_rng

_LL_DECREASE_TOL = 1e-6


def _kmeanspp_centers(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: pick k rows of X spread by squared distance."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    idx = rng.integers(n)
    centers[0] = X[idx]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _log_emission(x_batch, means, variances):
    # x_batch: (B, T, f); means, variances: (B, k, f) -> (B, T, k)
    diff = x_batch[:, :, None, :] - means[:, None, :, :]
    return -0.5 * (
        (diff**2 / variances[:, None, :, :]).sum(axis=3)
        + np.log(2.0 * np.pi * variances).sum(axis=2)[:, None, :]
    )


def _forward_backward(init, trans, log_b):
    """Scaled forward-backward over a batch of chains.

    Returns log-likelihoods (B,), posteriors gamma (B, T, k) and summed
    transition counts xi_sum (B, k, k).
    """
    n_batch, n_steps, k = log_b.shape
    shift = log_b.max(axis=2, keepdims=True)
    b_hat = np.exp(log_b - shift)

    alpha = np.empty((n_batch, n_steps, k))
    scale = np.empty((n_batch, n_steps))
    a = init * b_hat[:, 0, :]
    scale[:, 0] = a.sum(axis=1)
    alpha[:, 0, :] = a / scale[:, 0, None]
    for t in range(1, n_steps):
        a = np.einsum("ri,rij->rj", alpha[:, t - 1, :], trans) * b_hat[:, t, :]
        s = a.sum(axis=1)
        scale[:, t] = s
        alpha[:, t, :] = a / s[:, None]
    ll = np.log(scale).sum(axis=1) + shift[:, :, 0].sum(axis=1)

    beta = np.empty((n_batch, n_steps, k))
    beta[:, -1, :] = 1.0
    for t in range(n_steps - 2, -1, -1):
        w = b_hat[:, t + 1, :] * beta[:, t + 1, :] / scale[:, t + 1, None]
        beta[:, t, :] = np.einsum("rij,rj->ri", trans, w)

    gamma = alpha * beta
    gamma /= np.maximum(gamma.sum(axis=2, keepdims=True), 1e-300)
    w_next = b_hat[:, 1:, :] * beta[:, 1:, :] / scale[:, 1:, None]
    xi_sum = np.einsum("rti,rij,rtj->rij", alpha[:, :-1, :], trans, w_next)
    return ll, gamma, xi_sum


def _baum_welch_batch(x_batch, k, n_iter, tol, var_floor, self_loop, seeds):
    """Run EM on a batch of chains (each with its own observations and seed).

    Returns dict of final parameters per chain plus log-likelihood history.
    """
    n_batch, n_steps, n_feat = x_batch.shape
    means = np.stack([
        _kmeanspp_centers(x_batch[b], k, make_rng(seeds[b])) for b in range(n_batch)
    ])
    base_var = np.maximum(x_batch.var(axis=1), var_floor)  # (B, f)
    variances = np.repeat(base_var[:, None, :], k, axis=1)
    init = np.full((n_batch, k), 1.0 / k)
    if k == 1:
        trans = np.ones((n_batch, 1, 1))
    else:
        off = (1.0 - self_loop) / (k - 1)
        trans = np.full((n_batch, k, k), off)
        trans[:, np.arange(k), np.arange(k)] = self_loop

    prev_ll = np.full(n_batch, -np.inf)
    history = [[] for _ in range(n_batch)]
    floored = np.zeros(n_batch, dtype=bool)
    for _ in range(n_iter):
        log_b = _log_emission(x_batch, means, variances)
        ll, gamma, xi_sum = _forward_backward(init, trans, log_b)
        bad = np.isfinite(prev_ll) & (
            ll < prev_ll - _LL_DECREASE_TOL * np.maximum(1.0, np.abs(prev_ll))
        )
        if bad.any():
            b = int(np.flatnonzero(bad)[0])
            raise NumericsError(f"EM log-likelihood decreased: {prev_ll[b]} -> {ll[b]}")
        for b in range(n_batch):
            history[b].append(ll[b])

        init = gamma[:, 0, :]
        denom = np.maximum(xi_sum.sum(axis=2, keepdims=True), 1e-300)
        trans = xi_sum / denom
        weights = gamma.sum(axis=1)
        safe_w = np.maximum(weights, 1e-300)[:, :, None]
        means = np.einsum("btk,btf->bkf", gamma, x_batch) / safe_w
        sq = np.einsum("btk,btkf->bkf", gamma,
                       (x_batch[:, :, None, :] - means[:, None, :, :]) ** 2)
        variances = sq / safe_w
        low = variances < var_floor
        if low.any():
            floored |= low.any(axis=(1, 2))
            variances = np.maximum(variances, var_floor)

        done = np.abs(ll - prev_ll) < tol
        prev_ll = ll
        if done.all():
            break

    return {
        "init": init, "trans": trans, "means": means, "variances": variances,
        "loglik": prev_ll, "history": history, "floored": floored,
    }


class GaussianHMM(BaseEstimator):
    """Hidden Markov model with diagonal Gaussian emissions.

    Parameters
    ----------
    n_regimes : number of hidden states.
    n_iter : maximum Baum-Welch iterations per restart.
    tol : stop when the log-likelihood improves by less than this.
    n_restarts : random restarts; the best log-likelihood wins.
    self_loop : initial self-transition probability (encourages contiguous
        regimes; re-estimated freely afterwards).
    var_floor : lower bound on emission variances.
    random_state : seed for initialization.
    """

    def __init__(self, n_regimes=3, n_iter=200, tol=1e-6, n_restarts=5,
                 self_loop=0.8, var_floor=1e-6, random_state=None):
        self.n_regimes = n_regimes
        self.n_iter = n_iter
        self.tol = tol
        self.n_restarts = n_restarts
        self.self_loop = self_loop
        self.var_floor = var_floor
        self.random_state = random_state

    def fit(self, X: np.ndarray) -> "GaussianHMM":
        X = self._validate(X)
        seed = 0 if self.random_state is None else self.random_state
        rng = make_rng(seed)
        seeds = [int(rng.integers(2**63)) for _ in range(self.n_restarts)]
        x_batch = np.broadcast_to(X, (self.n_restarts, *X.shape))
        out = _baum_welch_batch(
            x_batch, self.n_regimes, self.n_iter, self.tol,
            self.var_floor, self.self_loop, seeds,
        )
        self._adopt(out, int(np.argmax(out["loglik"])), X)
        return self

    def _validate(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError("observations must be (n_steps, n_features)")
        if self.n_regimes < 1:
            raise DimensionError("n_regimes must be >= 1")
        if X.shape[0] < self.n_regimes:
            raise DimensionError("need at least as many steps as regimes")
        return X

    def _adopt(self, out, index, X):
        self.initial_probs_ = out["init"][index]
        self.transition_ = out["trans"][index]
        self.means_ = out["means"][index]
        self.variances_ = out["variances"][index]
        self.log_likelihood_ = float(out["loglik"][index])
        self.loglik_history_ = np.array(out["history"][index])
        self.variance_floored_ = bool(out["floored"][index])
        self.labels_ = self.predict(X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Most likely state sequence (Viterbi path) for the observations."""
        if not hasattr(self, "means_"):
            raise NotFittedError("fit the model before predicting")
        X = np.asarray(X, dtype=float)
        log_b = _log_emission(X[None], self.means_[None], self.variances_[None])[0]
        with np.errstate(divide="ignore"):
            log_a = np.log(self.transition_)
        delta = np.log(np.maximum(self.initial_probs_, 1e-300)) + log_b[0]
        n_steps = X.shape[0]
        back = np.empty((n_steps, self.n_regimes), dtype=int)
        for t in range(1, n_steps):
            scores = delta[:, None] + log_a
            back[t] = np.argmax(scores, axis=0)
            delta = scores[back[t], np.arange(self.n_regimes)] + log_b[t]
        path = np.empty(n_steps, dtype=int)
        path[-1] = int(np.argmax(delta))
        for t in range(n_steps - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
        return path

    def score(self, X: np.ndarray) -> float:
        """Forward log-likelihood of the observations under the fit."""
        if not hasattr(self, "means_"):
            raise NotFittedError("fit the model before scoring")
        X = np.asarray(X, dtype=float)
        log_b = _log_emission(X[None], self.means_[None], self.variances_[None])
        ll, _, _ = _forward_backward(
            self.initial_probs_[None], self.transition_[None], log_b)
        return float(ll[0])


def fit_hmm(observations: np.ndarray, n_regimes: int, seed: int) -> GaussianHMM:
    """Fit one regime model to deviation observations (n_steps, n_features)."""
    return GaussianHMM(n_regimes=n_regimes, random_state=seed).fit(observations)


def fit_hmm_group(observations: list[np.ndarray], n_regimes: int,
                  seed: int, n_restarts: int = 5) -> list[GaussianHMM]:
    """Fit independent models to several observation sequences at once.

    Equivalent to calling :func:`fit_hmm` per sequence but runs all chains
    (sequences x restarts) through one batched EM.  Sequences must share
    shape.
    """
    stacked = np.stack([np.asarray(o, dtype=float) for o in observations])
    n_models = stacked.shape[0]
    rng = make_rng(seed)
    seeds = [int(rng.integers(2**63)) for _ in range(n_models * n_restarts)]
    x_batch = np.repeat(stacked, n_restarts, axis=0)

    template = GaussianHMM(n_regimes=n_regimes, n_restarts=n_restarts)
    out = _baum_welch_batch(
        x_batch, n_regimes, template.n_iter, template.tol,
        template.var_floor, template.self_loop, seeds,
    )
    models = []
    for m in range(n_models):
        chunk = slice(m * n_restarts, (m + 1) * n_restarts)
        best = m * n_restarts + int(np.argmax(out["loglik"][chunk]))
        model = GaussianHMM(n_regimes=n_regimes, n_restarts=n_restarts, random_state=seed)
        model._adopt(out, best, stacked[m])
        models.append(model)
    return models
