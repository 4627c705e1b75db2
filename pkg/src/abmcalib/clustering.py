"""Agent sub-population extraction: trajectory codes -> mixture -> assignment.

The pipeline compresses per-agent traces with the trajectory autoencoder,
clusters the latent codes with either the parametric or the nonparametric
mixture, and seeds a heterogeneous parameter assignment (one value row per
cluster, midpoint of the declared range by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterRangeError
from .mixture import DirichletProcessMixture, GaussianMixtureModel
from .rng import child_seed
from .vae import TrajectoryAutoencoder, flatten_traces
from .wealth import AgentTrace, HeterogeneousAssignment

CLUSTERING_MODES = ("given", "parametric", "nonparametric")


def build_assignment(labels: np.ndarray, n_clusters: int, het_ranges: np.ndarray,
                     init_values: np.ndarray | None = None) -> HeterogeneousAssignment:
    """Heterogeneous assignment from cluster labels.

    ``init_values`` defaults to the midpoint of each parameter range,
    repeated for every cluster.
    """
    labels = np.asarray(labels, dtype=int)
    het_ranges = np.atleast_2d(np.asarray(het_ranges, dtype=float))
    if n_clusters < 1:
        raise DimensionError("need at least one cluster")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_clusters:
        raise ParameterRangeError("labels outside [0, n_clusters)")
    if init_values is None:
        midpoints = het_ranges.mean(axis=1)
        values = np.tile(midpoints, (n_clusters, 1))
    else:
        values = np.asarray(init_values, dtype=float).reshape(n_clusters, het_ranges.shape[0])
    return HeterogeneousAssignment(values, het_ranges, cluster_of_agent=labels)


@dataclass
class ClusteringResult:
    assignment: HeterogeneousAssignment
    codes: np.ndarray | None
    autoencoder: TrajectoryAutoencoder | None
    mixture: object | None
    mode: str


def cluster_agents(
    traces: AgentTrace,
    het_ranges: np.ndarray,
    mode: str = "parametric",
    n_clusters: int = 2,
    latent_dim: int = 4,
    vae_epochs: int = 200,
    concentration: float = 1.0,
    gibbs_sweeps: int = 150,
    seed: int = 0,
    init_values: np.ndarray | None = None,
) -> ClusteringResult:
    """Extract agent sub-populations from agent-level simulation traces."""
    if mode not in ("parametric", "nonparametric"):
        raise ParameterRangeError(
            f"mode must be parametric or nonparametric, got {mode!r}"
        )
    flat = flatten_traces(traces.values)
    encoder = TrajectoryAutoencoder(
        latent_dim=latent_dim, epochs=vae_epochs, seed=child_seed(seed, 1)
    ).fit(flat)
    codes = encoder.transform(flat)

    if mode == "parametric":
        mixture = GaussianMixtureModel(
            n_components=n_clusters, random_state=child_seed(seed, 2)
        ).fit(codes)
        k = n_clusters
    else:
        mixture = DirichletProcessMixture(
            concentration=concentration, n_sweeps=gibbs_sweeps,
            random_state=child_seed(seed, 2),
        ).fit(codes)
        k = mixture.n_components_

    assignment = build_assignment(mixture.labels_, k, het_ranges, init_values)
    return ClusteringResult(assignment, codes, encoder, mixture, mode)
