"""Variational autoencoder for compressing agent trajectories.

A small fixed architecture (two tanh hidden layers in the encoder and the
decoder) maps flattened agent traces to an H-dimensional Gaussian posterior
and back.  Training maximizes the evidence lower bound

    ELBO = E_q[log p(x|z)] - KL(q(z|x) || N(0, I))

with a unit-variance Gaussian reconstruction term, the closed-form KL, one
reparameterized draw per sample, and plain mini-batch SGD whose step size
halves when the epoch ELBO plateaus.  Backpropagation is written out by hand
for this architecture; the gradients are verified against central finite
differences in the test suite.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import DimensionError, NumericsError
from .rng import make_rng


def gaussian_kl(mean: np.ndarray, log_var: np.ndarray) -> float:
    """KL(N(mean, exp(log_var)) || N(0, I)), summed over dimensions."""
    mean = np.asarray(mean, dtype=float)
    log_var = np.asarray(log_var, dtype=float)
    return float(0.5 * np.sum(mean**2 + np.exp(log_var) - 1.0 - log_var))


def _init_layer(rng, n_in, n_out):
    scale = np.sqrt(2.0 / (n_in + n_out))
    return rng.normal(0.0, scale, (n_in, n_out)), np.zeros(n_out)


class TrajectoryAutoencoder(BaseEstimator, TransformerMixin):
    """Latent-code extractor for per-agent trajectory matrices.

    ``fit`` expects X of shape (n_agents, n_inputs) where rows are flattened
    (attribute, time) traces; inputs are min-max normalized internally.
    ``transform`` returns the posterior means, which are deterministic.

    Parameters
    ----------
    latent_dim : size of the code (H).
    hidden : width of the two hidden layers.
    epochs, batch_size, learning_rate : SGD schedule.
    seed : reproducibility; controls init, shuffling and the posterior draw.
    """

    def __init__(self, latent_dim=4, hidden=32, epochs=200, batch_size=32,
                 learning_rate=1e-3, seed=0):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    # --- parameter block -------------------------------------------------

    def _init_params(self, n_inputs, rng):
        h, z = self.hidden, self.latent_dim
        p = {}
        p["enc_w1"], p["enc_b1"] = _init_layer(rng, n_inputs, h)
        p["enc_w2"], p["enc_b2"] = _init_layer(rng, h, h)
        p["enc_wm"], p["enc_bm"] = _init_layer(rng, h, z)
        p["enc_wv"], p["enc_bv"] = _init_layer(rng, h, z)
        p["dec_w1"], p["dec_b1"] = _init_layer(rng, z, h)
        p["dec_w2"], p["dec_b2"] = _init_layer(rng, h, h)
        p["dec_wo"], p["dec_bo"] = _init_layer(rng, h, n_inputs)
        return p

    @staticmethod
    def _encode_pass(p, x):
        h1 = np.tanh(x @ p["enc_w1"] + p["enc_b1"])
        h2 = np.tanh(h1 @ p["enc_w2"] + p["enc_b2"])
        mean = h2 @ p["enc_wm"] + p["enc_bm"]
        log_var = h2 @ p["enc_wv"] + p["enc_bv"]
        return h1, h2, mean, log_var

    @staticmethod
    def _decode_pass(p, z):
        d1 = np.tanh(z @ p["dec_w1"] + p["dec_b1"])
        d2 = np.tanh(d1 @ p["dec_w2"] + p["dec_b2"])
        recon = d2 @ p["dec_wo"] + p["dec_bo"]
        return d1, d2, recon

    def _elbo_and_grads(self, p, x, noise):
        """Mean per-sample ELBO and its parameter gradients.

        ``noise`` is the standard-normal draw used by the reparameterization
        z = mean + exp(log_var / 2) * noise.
        """
        n = x.shape[0]
        h1, h2, mean, log_var = self._encode_pass(p, x)
        std = np.exp(0.5 * log_var)
        z = mean + std * noise
        d1, d2, recon = self._decode_pass(p, z)

        err = recon - x
        recon_ll = -0.5 * np.sum(err**2) - 0.5 * x.size * np.log(2.0 * np.pi)
        kl = 0.5 * np.sum(mean**2 + np.exp(log_var) - 1.0 - log_var)
        elbo = (recon_ll - kl) / n

        g = {}
        # decoder backward (d/dparams of -recon_ll, then flip sign at the end)
        d_recon = err / n  # d(-elbo)/d(recon)
        g["dec_wo"] = d2.T @ d_recon
        g["dec_bo"] = d_recon.sum(axis=0)
        d_d2 = (d_recon @ p["dec_wo"].T) * (1.0 - d2**2)
        g["dec_w2"] = d1.T @ d_d2
        g["dec_b2"] = d_d2.sum(axis=0)
        d_d1 = (d_d2 @ p["dec_w2"].T) * (1.0 - d1**2)
        g["dec_w1"] = z.T @ d_d1
        g["dec_b1"] = d_d1.sum(axis=0)
        d_z = d_d1 @ p["dec_w1"].T

        # encoder backward: z depends on (mean, log_var); KL adds its own terms
        d_mean = d_z + mean / n
        d_log_var = d_z * (0.5 * std * noise) + 0.5 * (np.exp(log_var) - 1.0) / n
        g["enc_wm"] = h2.T @ d_mean
        g["enc_bm"] = d_mean.sum(axis=0)
        g["enc_wv"] = h2.T @ d_log_var
        g["enc_bv"] = d_log_var.sum(axis=0)
        d_h2 = (d_mean @ p["enc_wm"].T + d_log_var @ p["enc_wv"].T) * (1.0 - h2**2)
        g["enc_w2"] = h1.T @ d_h2
        g["enc_b2"] = d_h2.sum(axis=0)
        d_h1 = (d_h2 @ p["enc_w2"].T) * (1.0 - h1**2)
        g["enc_w1"] = x.T @ d_h1
        g["enc_b1"] = d_h1.sum(axis=0)

        # gradients above are for -elbo; return elbo plus ascent directions
        for k in g:
            g[k] = -g[k]
        return elbo, g

    # --- estimator API ----------------------------------------------------

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError("X must be (n_agents, n_inputs)")
        if X.shape[0] < 2 * self.latent_dim:
            raise DimensionError("need at least 2 * latent_dim samples")
        self.input_min_ = X.min(axis=0)
        span = X.max(axis=0) - self.input_min_
        self.input_span_ = np.where(span > 0, span, 1.0)
        xn = (X - self.input_min_) / self.input_span_

        rng = make_rng(self.seed)
        params = self._init_params(X.shape[1], rng)
        n = X.shape[0]
        lr = self.learning_rate
        retries_left = 2
        history = []
        best_epoch = -np.inf
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_elbo = 0.0
            blown_up = False
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                batch = xn[idx]
                noise = rng.standard_normal((batch.shape[0], self.latent_dim))
                elbo, grads = self._elbo_and_grads(params, batch, noise)
                if not np.isfinite(elbo):
                    blown_up = True
                    break
                for key, grad in grads.items():
                    params[key] += lr * grad
                epoch_elbo += elbo * batch.shape[0]
            if blown_up:
                if retries_left == 0:
                    raise NumericsError(
                        f"non-finite ELBO after retries (last lr={lr}): "
                        "inputs may be degenerate"
                    )
                retries_left -= 1
                lr *= 0.5
                rng = make_rng(self.seed)
                params = self._init_params(X.shape[1], rng)
                history.clear()
                best_epoch = -np.inf
                continue
            epoch_elbo /= n
            history.append(epoch_elbo)
            # halve the step on plateau (no improvement over 20 epochs)
            if epoch_elbo > best_epoch + 1e-9:
                best_epoch = epoch_elbo
            elif len(history) >= 20 and epoch_elbo <= history[-20] + 1e-9:
                lr *= 0.5

        self.params_ = params
        self.elbo_history_ = np.array(history)
        return self

    def transform(self, X) -> np.ndarray:
        """Posterior mean codes, shape (n_agents, latent_dim)."""
        if not hasattr(self, "params_"):
            raise NotFittedError("fit the autoencoder first")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_min_.size:
            raise DimensionError("X does not match the fitted input layout")
        xn = (X - self.input_min_) / self.input_span_
        _, _, mean, _ = self._encode_pass(self.params_, xn)
        return mean

    def reconstruct(self, X) -> np.ndarray:
        """Decode the posterior means back to input space."""
        codes = self.transform(X)
        _, _, recon = self._decode_pass(self.params_, codes)
        return recon * self.input_span_ + self.input_min_


def flatten_traces(agent_values: np.ndarray) -> np.ndarray:
    """(agents, attributes, horizon) -> (agents, attributes * horizon)."""
    agent_values = np.asarray(agent_values, dtype=float)
    if agent_values.ndim != 3:
        raise DimensionError("agent trace must be (agents, attributes, horizon)")
    return agent_values.reshape(agent_values.shape[0], -1)
