"""Gaussian-process regression of simulation error over parameter space.

Matern-5/2 kernel with per-dimension lengthscales, observation noise 1/beta
on the diagonal, and a zero-mean prior applied after subtracting the sample
mean of the observed errors (restored on prediction).  Hyperparameters are
point estimates from multi-start maximization of the marginal likelihood in
log space with analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize as sopt
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DimensionError, NumericsError
from .rng import make_rng

SQRT5 = np.sqrt(5.0)

_LOG_BOUNDS = {
    "signal": (np.log(1e-10), np.log(1e6)),
    "length": (np.log(1e-3), np.log(1e3)),
    "noise": (np.log(1e-12), np.log(1e3)),
}


@dataclass
class KernelHyperparams:
    """Matern-5/2 hyperparameters; ``noise_variance`` is 1/beta."""

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float

    def __post_init__(self) -> None:
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if self.signal_variance <= 0 or self.noise_variance <= 0:
            raise DimensionError("variances must be strictly positive")
        if np.any(self.lengthscales <= 0):
            raise DimensionError("lengthscales must be strictly positive")

    def to_log_vector(self) -> np.ndarray:
        return np.concatenate((
            [np.log(self.signal_variance)],
            np.log(self.lengthscales),
            [np.log(self.noise_variance)],
        ))

    @classmethod
    def from_log_vector(cls, theta: np.ndarray) -> "KernelHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[0]), np.exp(theta[1:-1]), np.exp(theta[-1]))


@dataclass
class PosteriorPrediction:
    mean: np.ndarray
    sd: np.ndarray


def _scaled_sqdists(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = A / lengthscales
    b = B / lengthscales
    d2 = (a**2).sum(axis=1)[:, None] + (b**2).sum(axis=1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def matern52_matrix(A: np.ndarray, B: np.ndarray, hyper: KernelHyperparams) -> np.ndarray:
    """Matern-5/2 cross-covariance: s^2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)."""
    r = np.sqrt(_scaled_sqdists(A, B, hyper.lengthscales))
    return hyper.signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r**2) * np.exp(-SQRT5 * r)


def matern52(x: np.ndarray, y: np.ndarray, hyper: KernelHyperparams) -> float:
    """Kernel value between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise DimensionError("points must share dimension")
    return float(matern52_matrix(x[None, :], y[None, :], hyper)[0, 0])


def _neg_mll_and_grad(theta, X, y_centered):
    """Negative marginal log-likelihood and gradient in log-hyperparam space."""
    n, d = X.shape
    hyper = KernelHyperparams.from_log_vector(theta)
    diff = X[:, None, :] - X[None, :, :]  # (n, n, d)
    q = diff**2 / hyper.lengthscales**2
    r2 = q.sum(axis=2)
    r = np.sqrt(np.maximum(r2, 0.0))
    decay = np.exp(-SQRT5 * r)
    K_sig = hyper.signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * decay
    K = K_sig + (hyper.noise_variance + 1e-8) * np.eye(n)
    try:
        chol = cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        return 1e12, np.zeros_like(theta)
    alpha = cho_solve(chol, y_centered)
    mll = (
        -0.5 * float(y_centered @ alpha)
        - np.log(np.diag(chol[0])).sum()
        - 0.5 * n * np.log(2.0 * np.pi)
    )
    K_inv = cho_solve(chol, np.eye(n))
    inner = np.outer(alpha, alpha) - K_inv  # trace(inner @ dK) / 2 per param

    grad = np.empty_like(theta)
    grad[0] = 0.5 * np.sum(inner * K_sig)  # d/dlog signal_variance
    # d/dlog lengthscale_j: (5/3) s^2 (1 + sqrt5 r) exp(-sqrt5 r) * q_j
    base = (5.0 / 3.0) * hyper.signal_variance * (1.0 + SQRT5 * r) * decay
    for j in range(d):
        grad[1 + j] = 0.5 * np.sum(inner * (base * q[:, :, j]))
    grad[-1] = 0.5 * np.trace(inner) * hyper.noise_variance
    return -mll, -grad


class GaussianProcessSurrogate(BaseEstimator):
    """GP over (parameter vector, error) pairs with cached factorization.

    With ``optimize=False`` the given ``hyper`` is used as-is; otherwise
    hyperparameters maximize the marginal likelihood from ``n_starts``
    heuristic starting points (local ascent from the best few), and the
    returned solution is never worse than any starting point.
    """

    def __init__(self, hyper: KernelHyperparams | None = None, optimize=True,
                 n_starts=8, jitter=1e-8, random_state=0):
        self.hyper = hyper
        self.optimize = optimize
        self.n_starts = n_starts
        self.jitter = jitter
        self.random_state = random_state

    # --- fitting ----------------------------------------------------------

    def _starting_points(self, X, y_centered):
        n, d = X.shape
        rng = make_rng(self.random_state)
        var_y = max(float(y_centered.var()), 1e-8)
        span = np.maximum(X.max(axis=0) - X.min(axis=0), 1e-3)
        starts = [
            np.concatenate(([np.log(var_y)], np.log(0.3 * span), [np.log(1e-4)])),
            np.concatenate(([np.log(var_y)], np.log(span), [np.log(0.1 * var_y)])),
        ]
        if self.hyper is not None:
            starts.append(self.hyper.to_log_vector())
        while len(starts) < self.n_starts:
            starts.append(np.concatenate((
                [np.log(var_y) + rng.uniform(-2, 2)],
                np.log(span * rng.uniform(0.1, 2.0, d)),
                [np.log(var_y) + rng.uniform(-8, 0)],
            )))
        return starts[: self.n_starts]

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GaussianProcessSurrogate":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise DimensionError("X and y lengths differ")
        if X.shape[0] < 2 and self.optimize:
            raise DimensionError("hyperparameter optimization needs >= 2 records")
        self.X_ = X
        self.y_mean_ = float(y.mean())
        y_centered = y - self.y_mean_

        if self.optimize:
            d = X.shape[1]
            bounds = (
                [_LOG_BOUNDS["signal"]]
                + [_LOG_BOUNDS["length"]] * d
                + [_LOG_BOUNDS["noise"]]
            )
            starts = self._starting_points(X, y_centered)
            start_vals = [_neg_mll_and_grad(s, X, y_centered)[0] for s in starts]
            self.fit_start_mlls_ = -np.asarray(start_vals)
            order = np.argsort(start_vals)
            best_theta = starts[order[0]]
            best_val = start_vals[order[0]]
            for idx in order[:3]:
                res = sopt.minimize(
                    _neg_mll_and_grad, starts[idx], args=(X, y_centered),
                    jac=True, method="L-BFGS-B", bounds=bounds,
                    options={"maxiter": 60},
                )
                if res.fun < best_val:
                    best_val = res.fun
                    best_theta = res.x
            self.hyper_ = KernelHyperparams.from_log_vector(best_theta)
            self.log_marginal_likelihood_ = -float(best_val)
        else:
            if self.hyper is None:
                raise DimensionError("optimize=False requires explicit hyperparameters")
            self.hyper_ = self.hyper

        self._factorize(y_centered)
        if not self.optimize:
            chol = self._chol
            self.log_marginal_likelihood_ = float(
                -0.5 * y_centered @ self._alpha
                - np.log(np.diag(chol[0])).sum()
                - 0.5 * y.size * np.log(2.0 * np.pi)
            )
        return self

    def _factorize(self, y_centered):
        n = self.X_.shape[0]
        base = matern52_matrix(self.X_, self.X_, self.hyper_)
        jitter = self.jitter
        while True:
            K = base + (self.hyper_.noise_variance + jitter) * np.eye(n)
            try:
                self._chol = cho_factor(K, lower=True)
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
                if jitter > 1e-4:
                    cond = np.linalg.cond(K)
                    raise NumericsError(
                        f"covariance not factorizable (condition number {cond:.3e} "
                        f"at jitter 1e-4)"
                    )
        self.jitter_ = jitter
        self._alpha = cho_solve(self._chol, y_centered)

    # --- prediction ---------------------------------------------------------

    def predict(self, queries: np.ndarray) -> PosteriorPrediction:
        """Posterior mean and sd at query points (m, d)."""
        if not hasattr(self, "hyper_"):
            raise NotFittedError("fit the surrogate first")
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if queries.shape[1] != self.X_.shape[1]:
            raise DimensionError("query dimension mismatch")
        k_star = matern52_matrix(self.X_, queries, self.hyper_)  # (n, m)
        mean = k_star.T @ self._alpha + self.y_mean_
        solved = cho_solve(self._chol, k_star)
        var = self.hyper_.signal_variance - np.einsum("nm,nm->m", k_star, solved)
        return PosteriorPrediction(mean=mean, sd=np.sqrt(np.maximum(var, 0.0)))


def fit_gp(records_x: np.ndarray, records_y: np.ndarray,
           previous: KernelHyperparams | None = None,
           seed: int = 0) -> GaussianProcessSurrogate:
    """Fit the surrogate to the evaluation log, warm-starting if given."""
    return GaussianProcessSurrogate(
        hyper=previous, optimize=True, random_state=seed
    ).fit(records_x, records_y)
