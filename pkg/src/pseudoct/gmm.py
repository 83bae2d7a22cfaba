"""Gaussian mixture baseline: latent classes with no spatial coupling.

The mixture treats voxels as independent draws; it is exactly what either
spatial model degenerates to when the coupling is switched off (identical
transition rows for the chain, zero pair potentials for the random
field).  Supplies the two initialization strategies used everywhere:
k-means on the joint vectors and Ward-linkage agglomerative clustering on
a capped subsample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.special import logsumexp

from pseudoct.errors import DataError, NumericalError
from pseudoct.emission import (
    GaussianComponent,
    PosteriorWeights,
    VoxelPrediction,
    log_density_matrix,
    log_density_x_matrix,
    normalized_weights,
    predict_target,
    weighted_mle,
)
from pseudoct.hilbert import SequencedData
from pseudoct.hmm import DEFAULT_MAX_ITER, DEFAULT_TOL, FitReport

HIERARCHICAL_SUBSAMPLE_CAP = 2000
_KMEANS_MAX_ITER = 100
_WEIGHT_SUM_TOL = 1e-12


@dataclass
class GmmParams:
    """Mixture parameters: proportions and K emission components."""

    weights: np.ndarray
    components: list[GaussianComponent]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        K = self.weights.shape[0]
        if K < 1:
            raise DataError("need at least one component")
        if len(self.components) != K:
            raise DataError(f"{len(self.components)} components for {K} weights")
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > _WEIGHT_SUM_TOL:
            raise DataError("mixing proportions must be non-negative and sum to 1")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise DataError(f"components disagree on dimension: {sorted(dims)}")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.components[0].dim

    def to_dict(self) -> dict:
        return {
            "family": "gmm",
            "K": self.n_components,
            "weights": self.weights.tolist(),
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GmmParams":
        return cls(
            weights=np.asarray(doc["weights"]),
            components=[GaussianComponent.from_dict(c) for c in doc["components"]],
        )


def _as_matrix(data) -> np.ndarray:
    """Accept SequencedData or a plain (n, d) array of observations."""
    if isinstance(data, SequencedData):
        if not data.segments:
            raise DataError("sequenced data has no segments")
        return np.concatenate([s.observations for s in data.segments], axis=0)
    obs = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if obs.shape[0] == 0:
        raise DataError("no observations")
    return obs


def _matrix_and_ids(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, SequencedData):
        obs = _as_matrix(data)
        ids = np.concatenate([s.voxel_ids for s in data.segments])
        return obs, ids
    obs = _as_matrix(data)
    return obs, np.arange(obs.shape[0], dtype=np.int64)


def _components_from_labels(obs: np.ndarray, labels: np.ndarray, K: int) -> GmmParams:
    """Per-cluster moments and occupancy fractions -> mixture parameters."""
    components = []
    weights = np.zeros(K)
    for k in range(K):
        sel = labels == k
        count = int(sel.sum())
        if count == 0:
            raise NumericalError(f"cluster {k} is empty")
        weights[k] = count / obs.shape[0]
        components.append(weighted_mle(obs[sel], np.ones(count)))
    return GmmParams(weights=weights, components=components)


def _assign(obs: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Nearest-center labels by squared Euclidean distance."""
    d2 = (
        (obs * obs).sum(axis=1)[:, None]
        - 2.0 * obs @ centers.T
        + (centers * centers).sum(axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def kmeans_init(data, K: int, seed: int = 0) -> GmmParams:
    """Lloyd's algorithm on the joint vectors; clusters become components.

    Empty clusters are reseeded from the point farthest from its assigned
    center.  Deterministic for a fixed seed.
    """
    obs = _as_matrix(data)
    n = obs.shape[0]
    if n < K:
        raise DataError(f"{n} observations cannot seed {K} clusters")
    rng = np.random.default_rng(seed)
    centers = obs[rng.choice(n, size=K, replace=False)].copy()
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(_KMEANS_MAX_ITER):
        new_labels = _assign(obs, centers)
        # reseed empty clusters from the farthest point until all occupied
        for k in range(K):
            if (new_labels == k).any():
                continue
            dist = ((obs - centers[new_labels]) ** 2).sum(axis=1)
            far = int(np.argmax(dist))
            if dist[far] <= 0.0:
                raise DataError(f"fewer than {K} distinct observations")
            centers[k] = obs[far]
            new_labels = _assign(obs, centers)
        if (new_labels == labels).all():
            break
        labels = new_labels
        for k in range(K):
            centers[k] = obs[labels == k].mean(axis=0)
    return _components_from_labels(obs, labels, K)


def hierarchical_init(data, K: int, subsample_cap: int = HIERARCHICAL_SUBSAMPLE_CAP) -> GmmParams:
    """Ward-linkage agglomerative clustering seeded on a uniform subsample.

    Full-data agglomeration is O(n^2), so at most ``subsample_cap`` evenly
    spaced observations are merged; every observation is then assigned to
    the nearest resulting centroid before moments are taken.  Deterministic
    (the subsample is evenly spaced, not random).
    """
    obs = _as_matrix(data)
    n = obs.shape[0]
    if n < K:
        raise DataError(f"{n} observations cannot seed {K} clusters")
    if n > subsample_cap:
        idx = np.linspace(0, n - 1, subsample_cap).astype(np.int64)
        sub = obs[idx]
    else:
        sub = obs
    if sub.shape[0] > 1:
        Z = linkage(sub, method="ward")
        sub_labels = fcluster(Z, t=K, criterion="maxclust") - 1
    else:
        sub_labels = np.zeros(1, dtype=np.int64)
    found = np.unique(sub_labels)
    if len(found) < K:
        raise DataError(f"fewer than {K} distinct observations in the subsample")
    centers = np.stack([sub[sub_labels == k].mean(axis=0) for k in range(K)])
    labels = _assign(obs, centers)
    for k in range(K):
        if not (labels == k).any():
            raise DataError(f"cluster {k} lost all points in the full-data assignment")
    return _components_from_labels(obs, labels, K)


def _gmm_log_joint(params: GmmParams, obs: np.ndarray) -> np.ndarray:
    """(n, K) matrix of log(w_k) + joint log-density."""
    with np.errstate(divide="ignore"):
        logw = np.log(params.weights)
    return logw[None, :] + log_density_matrix(params.components, obs)


def fit_gmm(
    init: GmmParams,
    data,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[GmmParams, FitReport]:
    """Standard mixture EM; stops on relative log-likelihood improvement < tol."""
    obs = _as_matrix(data)
    if obs.shape[0] < init.n_components:
        raise DataError(f"{obs.shape[0]} observations cannot support {init.n_components} components")
    params = init

    def e_step(p):
        lj = _gmm_log_joint(p, obs)
        ll = float(logsumexp(lj, axis=1).sum())
        if not np.isfinite(ll):
            raise NumericalError("non-finite mixture log-likelihood")
        return normalized_weights(lj), ll

    resp, ll = e_step(params)
    trace = [ll]
    converged = False
    rel = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        weights = resp.mean(axis=0)
        weights = weights / weights.sum()
        components = []
        for k in range(params.n_components):
            try:
                components.append(weighted_mle(obs, resp[:, k]))
            except NumericalError as e:
                raise NumericalError(f"class {k}: {e}") from None
        params = GmmParams(weights=weights, components=components)
        resp, ll = e_step(params)
        trace.append(ll)
        prev = trace[-2]
        rel = abs(ll - prev) / max(abs(prev), 1.0)
        if rel < tol:
            converged = True
            break
    report = FitReport(
        loglik_trace=trace,
        n_iter=n_iter,
        converged=converged,
        final_relative_improvement=float(rel),
    )
    return params, report


def responsibilities(params: GmmParams, data) -> PosteriorWeights:
    """Posterior class probabilities from the joint (Y, X) emissions."""
    obs, ids = _matrix_and_ids(data)
    return PosteriorWeights(voxel_ids=ids, weights=normalized_weights(_gmm_log_joint(params, obs)))


def posterior_weights_x(params: GmmParams, x_data) -> PosteriorWeights:
    """Posterior class probabilities conditioning on covariates only."""
    obs, ids = _matrix_and_ids(x_data)
    d = params.obs_dim
    if obs.shape[1] == d:
        x = obs[:, 1:]
    elif obs.shape[1] == d - 1:
        x = obs
    else:
        raise DataError(
            f"expected {d - 1} covariate channels (or {d} with the target first), "
            f"data has {obs.shape[1]}"
        )
    with np.errstate(divide="ignore"):
        logw = np.log(params.weights)
    lj = logw[None, :] + log_density_x_matrix(params.components, x)
    return PosteriorWeights(voxel_ids=ids, weights=normalized_weights(lj))


def predict_ct_gmm(params: GmmParams, x_data) -> VoxelPrediction:
    """Mixture-responsibility weighting of class-conditional means."""
    obs, _ = _matrix_and_ids(x_data)
    pw = posterior_weights_x(params, x_data)
    x = obs[:, 1:] if obs.shape[1] == params.obs_dim else obs
    values = predict_target(params.components, pw.weights, x)
    return VoxelPrediction(voxel_ids=pw.voxel_ids, values=values)


def log_likelihood_gmm(params: GmmParams, data) -> float:
    """Independent-voxel mixture log-likelihood."""
    obs = _as_matrix(data)
    return float(logsumexp(_gmm_log_joint(params, obs), axis=1).sum())
