"""Mixture models over latent codes: parametric EM and a Dirichlet-process
variant with collapsed Gibbs sampling.

Both estimators expose ``weights_``, ``means_``, diagonal ``variances_``
and hard ``labels_`` so downstream code can consume either interchangeably;
consumers are expected to rely only on the partition structure (labels are
permutation-equivalent).
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, logsumexp
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DimensionError, ParameterRangeError
from .hmm import _kmeanspp_centers
from .rng import make_rng

_LL_DECREASE_TOL = 1e-6


def _diag_gauss_logpdf(X, means, variances):
    # X (n, d); means, variances (k, d) -> (n, k)
    diff = X[:, None, :] - means[None, :, :]
    return -0.5 * (
        (diff**2 / variances[None]).sum(axis=2)
        + np.log(2.0 * np.pi * variances).sum(axis=1)[None, :]
    )


class GaussianMixtureModel(BaseEstimator):
    """Diagonal-covariance Gaussian mixture fit by EM.

    k-means++ initialization, several restarts keeping the best final
    log-likelihood, variance floor, and empty-component reseeding from the
    point the model currently explains worst.
    """

    def __init__(self, n_components=2, n_iter=300, tol=1e-6, n_restarts=5,
                 var_floor=1e-6, random_state=None):
        self.n_components = n_components
        self.n_iter = n_iter
        self.tol = tol
        self.n_restarts = n_restarts
        self.var_floor = var_floor
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError("X must be (n_samples, n_features)")
        n, d = X.shape
        k = self.n_components
        if k < 1 or k > n:
            raise DimensionError("need 1 <= n_components <= n_samples")

        rng = make_rng(0 if self.random_state is None else self.random_state)
        best = None
        for _ in range(self.n_restarts):
            out = self._em_once(X, k, make_rng(int(rng.integers(2**63))))
            if best is None or out["loglik"] > best["loglik"]:
                best = out
        self.weights_ = best["weights"]
        self.means_ = best["means"]
        self.variances_ = best["variances"]
        self.log_likelihood_ = best["loglik"]
        self.loglik_history_ = np.array(best["history"])
        self.labels_ = self.predict(X)
        return self

    def _em_once(self, X, k, rng):
        n, d = X.shape
        means = _kmeanspp_centers(X, k, rng)
        variances = np.tile(np.maximum(X.var(axis=0), self.var_floor), (k, 1))
        weights = np.full(k, 1.0 / k)
        history = []
        prev = -np.inf
        for _ in range(self.n_iter):
            log_dens = _diag_gauss_logpdf(X, means, variances)
            weighted = log_dens + np.log(weights)[None, :]
            norm = logsumexp(weighted, axis=1)
            ll = float(norm.sum())
            resp = np.exp(weighted - norm[:, None])

            mass = resp.sum(axis=0)
            empty = mass < 1e-10
            if empty.any():
                # reseed dead components at the worst-explained point
                worst = int(np.argmin(norm))
                for j in np.flatnonzero(empty):
                    means[j] = X[worst]
                    variances[j] = np.maximum(X.var(axis=0), self.var_floor)
                    weights[j] = 1.0 / n
                weights /= weights.sum()
                prev = -np.inf  # reseeding may lower the objective
                history.append(ll)
                continue
            if np.isfinite(prev) and ll < prev - _LL_DECREASE_TOL * max(1.0, abs(prev)):
                raise ParameterRangeError(f"EM log-likelihood decreased {prev} -> {ll}")
            history.append(ll)

            weights = mass / n
            means = (resp.T @ X) / mass[:, None]
            diff2 = (X[:, None, :] - means[None]) ** 2
            variances = np.maximum(
                np.einsum("nk,nkd->kd", resp, diff2) / mass[:, None], self.var_floor)
            if abs(ll - prev) < self.tol:
                prev = ll
                break
            prev = ll
        return {"weights": weights, "means": means, "variances": variances,
                "loglik": prev, "history": history}

    def predict(self, X):
        if not hasattr(self, "means_"):
            raise NotFittedError("fit the mixture first")
        X = np.asarray(X, dtype=float)
        scores = _diag_gauss_logpdf(X, self.means_, self.variances_) + np.log(self.weights_)
        return np.argmax(scores, axis=1)


class DirichletProcessMixture(BaseEstimator):
    """Nonparametric Gaussian mixture via collapsed Gibbs sampling.

    The base measure is an independent Normal-Inverse-Gamma per dimension
    (loc0, kappa0, a0, b0), conjugate to the Gaussian emission, so cluster
    predictive densities are Student-t.  Inputs are standardized by default.
    Sweeps resample every point's assignment; the sweep with the highest
    joint posterior (CRP prior times marginal likelihood) is returned.
    """

    def __init__(self, concentration=1.0, n_sweeps=150, loc0=0.0, kappa0=0.01,
                 a0=1.0, b0=1.0, standardize=True, random_state=None):
        self.concentration = concentration
        self.n_sweeps = n_sweeps
        self.loc0 = loc0
        self.kappa0 = kappa0
        self.a0 = a0
        self.b0 = b0
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.concentration <= 0:
            raise ParameterRangeError("concentration must be > 0")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError("X must be (n_samples, n_features)")
        n, d = X.shape
        if self.standardize:
            center = X.mean(axis=0)
            scale = X.std(axis=0)
            scale = np.where(scale > 0, scale, 1.0)
        else:
            center = np.zeros(d)
            scale = np.ones(d)
        Z = (X - center) / scale

        rng = make_rng(0 if self.random_state is None else self.random_state)
        # start from all-singletons: collapsed Gibbs merges easily but splits
        # only through rare moves, so a one-cluster start under-segments
        labels = np.arange(n, dtype=int)
        counts = [1] * n
        sums = [Z[a].copy() for a in range(n)]
        sumsqs = [Z[a] ** 2 for a in range(n)]

        gamma = self.concentration
        best_labels = labels.copy()
        best_score = -np.inf
        score_history = []
        for _ in range(self.n_sweeps):
            for a in range(n):
                k_old = labels[a]
                counts[k_old] -= 1
                sums[k_old] -= Z[a]
                sumsqs[k_old] -= Z[a] ** 2
                if counts[k_old] == 0:
                    self._drop(k_old, labels, counts, sums, sumsqs)

                log_pred = self._cluster_logpred(Z[a], counts, sums, sumsqs)
                log_prior = np.log(np.append(np.array(counts, dtype=float), gamma))
                logits = log_prior + log_pred
                probs = np.exp(logits - logsumexp(logits))
                probs /= probs.sum()
                choice = int(rng.choice(probs.size, p=probs))
                if choice == len(counts):
                    counts.append(0)
                    sums.append(np.zeros(d))
                    sumsqs.append(np.zeros(d))
                labels[a] = choice
                counts[choice] += 1
                sums[choice] += Z[a]
                sumsqs[choice] += Z[a] ** 2

            score = self._joint_score(counts, sums, sumsqs, n)
            score_history.append(score)
            if score > best_score:
                best_score = score
                best_labels = labels.copy()

        self.score_history_ = np.array(score_history)
        self.best_score_ = best_score
        self._finalize(Z, best_labels, center, scale)
        return self

    def _drop(self, k, labels, counts, sums, sumsqs):
        counts.pop(k)
        sums.pop(k)
        sumsqs.pop(k)
        labels[labels > k] -= 1

    def _posterior_params(self, counts, sums, sumsqs):
        n = np.asarray(counts, dtype=float)[:, None]
        s = np.asarray(sums)
        q = np.asarray(sumsqs)
        mean = np.where(n > 0, s / np.maximum(n, 1.0), 0.0)
        ssq = np.maximum(q - n * mean**2, 0.0)
        kappa_n = self.kappa0 + n
        loc_n = (self.kappa0 * self.loc0 + s) / kappa_n
        a_n = self.a0 + n / 2.0
        b_n = self.b0 + 0.5 * ssq + self.kappa0 * n * (mean - self.loc0) ** 2 / (2.0 * kappa_n)
        return kappa_n, loc_n, a_n, b_n

    def _cluster_logpred(self, x, counts, sums, sumsqs):
        """Student-t log predictive of x under each cluster plus a new one."""
        kappa_n, loc_n, a_n, b_n = self._posterior_params(
            counts + [0],
            sums + [np.zeros_like(x)],
            sumsqs + [np.zeros_like(x)],
        )
        dof = 2.0 * a_n
        scale2 = b_n * (kappa_n + 1.0) / (a_n * kappa_n)
        z2 = (x[None, :] - loc_n) ** 2 / (dof * scale2)
        log_t = (
            gammaln((dof + 1.0) / 2.0) - gammaln(dof / 2.0)
            - 0.5 * np.log(dof * np.pi * scale2)
            - (dof + 1.0) / 2.0 * np.log1p(z2)
        )
        return log_t.sum(axis=1)

    def _joint_score(self, counts, sums, sumsqs, n):
        """log CRP(labels) + sum_k log marginal likelihood of cluster k."""
        gamma = self.concentration
        k = len(counts)
        counts_arr = np.asarray(counts, dtype=float)
        log_crp = (
            k * np.log(gamma)
            + gammaln(counts_arr).sum()
            + gammaln(gamma)
            - gammaln(gamma + n)
        )
        kappa_n, _, a_n, b_n = self._posterior_params(counts, sums, sumsqs)
        log_marg = (
            gammaln(a_n) - gammaln(self.a0)
            + self.a0 * np.log(self.b0) - a_n * np.log(b_n)
            + 0.5 * (np.log(self.kappa0) - np.log(kappa_n))
            - 0.5 * counts_arr[:, None] * np.log(2.0 * np.pi)
        ).sum()
        return float(log_crp + log_marg)

    def _finalize(self, Z, labels, center, scale):
        # compact labels by first occurrence so output is deterministic
        remap: dict[int, int] = {}
        compact = np.empty_like(labels)
        for i, lab in enumerate(labels):
            if lab not in remap:
                remap[lab] = len(remap)
            compact[i] = remap[lab]
        k = len(remap)
        counts = np.bincount(compact, minlength=k).astype(float)
        self.n_components_ = k
        self.weights_ = counts / counts.sum()
        means = np.zeros((k, Z.shape[1]))
        variances = np.ones((k, Z.shape[1]))
        for j in range(k):
            member = Z[compact == j]
            kappa_n, loc_n, a_n, b_n = self._posterior_params(
                [member.shape[0]], [member.sum(axis=0)], [(member**2).sum(axis=0)])
            means[j] = loc_n[0]
            variances[j] = b_n[0] / np.maximum(a_n[0] - 1.0, 0.5)
        # report in the original (unstandardized) coordinates
        self.means_ = means * scale + center
        self.variances_ = variances * scale**2
        self.labels_ = compact
        self._center = center
        self._scale = scale

    def predict(self, X):
        if not hasattr(self, "labels_"):
            raise NotFittedError("fit the mixture first")
        X = np.asarray(X, dtype=float)
        scores = _diag_gauss_logpdf(X, self.means_, self.variances_) + np.log(self.weights_)
        return np.argmax(scores, axis=1)


def fit_gmm(codes: np.ndarray, n_components: int, seed: int) -> GaussianMixtureModel:
    return GaussianMixtureModel(n_components=n_components, random_state=seed).fit(codes)


def fit_dpmm(codes: np.ndarray, concentration: float, n_sweeps: int,
             seed: int) -> DirichletProcessMixture:
    return DirichletProcessMixture(
        concentration=concentration, n_sweeps=n_sweeps, random_state=seed
    ).fit(codes)
