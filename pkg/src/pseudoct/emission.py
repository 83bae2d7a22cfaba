"""Multivariate Gaussian emission algebra shared by all model families.

Each latent class k carries a joint Gaussian over the full observation
vector, ordered (Y, X_1..X_m): the target intensity first, then the m
covariate channels.  The block partition

    mu = (mu_Y, mu_X),   sigma = [[S_Y,  S_YX],
                                  [S_XY, S_X ]]

gives everything prediction needs: the X-marginal density (posterior
weights condition on covariates only) and the conditional expectation

    cond_mean_y(x) = mu_Y + S_YX S_X^{-1} (x - mu_X),

which is the class-k regression of the target on the covariates.  The
predicted target at a voxel is the posterior-weight mixture of these
class-conditional means.

All densities are computed in log space via Cholesky factorizations,
cached at construction.  Covariances that fail to factorize receive a
jitter of eps * mean(diag) * I with eps escalating 1e-8 -> 1e-2 by factors
of 10; if the largest jitter still fails the class is declared degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from pseudoct.errors import DataError, NumericalError

JITTER_START = 1e-8
JITTER_MAX = 1e-2
MIN_TOTAL_WEIGHT = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


def _chol_with_jitter(sigma: np.ndarray, context: str) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, adding escalating diagonal jitter if needed.

    Returns (L, jitter) where jitter is the absolute diagonal increment
    actually applied (0.0 when none was needed).
    """
    try:
        return np.linalg.cholesky(sigma), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(sigma)))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    eps = JITTER_START
    eye = np.eye(sigma.shape[0])
    while eps <= JITTER_MAX * (1.0 + 1e-12):
        try:
            jitter = eps * scale
            return np.linalg.cholesky(sigma + jitter * eye), jitter
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NumericalError(
        f"degenerate class covariance ({context}): not positive definite "
        f"after jitter up to {JITTER_MAX} * mean(diag)"
    )


def _check_symmetric(sigma: np.ndarray) -> np.ndarray:
    asym = np.abs(sigma - sigma.T).max()
    scale = max(1.0, float(np.abs(sigma).max()))
    if asym > 1e-10 * scale:
        raise DataError(f"covariance not symmetric: max asymmetry {asym:.3e}")
    return 0.5 * (sigma + sigma.T)


@dataclass
class GaussianComponent:
    """One class-conditional Gaussian over (Y, X_1..X_m).

    ``mu`` has length m+1 with the target first; ``sigma`` is the matching
    (m+1)x(m+1) covariance.  A pure d-dimensional Gaussian with no target/
    covariate split is simply a component whose X-specific operations are
    never used (m = d - 1 may be 0).
    """

    mu: np.ndarray
    sigma: np.ndarray
    jitter: float = 0.0
    _chol: np.ndarray = field(init=False, repr=False)
    _chol_x: np.ndarray | None = field(init=False, repr=False, default=None)
    _reg_weights: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        d = self.mu.shape[0]
        if sigma.shape != (d, d):
            raise DataError(f"sigma shape {sigma.shape} does not match mu length {d}")
        sigma = _check_symmetric(sigma)
        L, jit = _chol_with_jitter(sigma, "joint")
        if jit > 0.0:
            sigma = sigma + jit * np.eye(d)
            self.jitter = float(self.jitter) + jit
        self.sigma = sigma
        self._chol = L
        if d >= 2:
            Lx, jx = _chol_with_jitter(sigma[1:, 1:], "X block")
            if jx > 0.0:
                # keep the joint and the X block consistent: re-jitter jointly
                sigma = sigma + jx * np.eye(d)
                self.sigma = sigma
                self.jitter = float(self.jitter) + jx
                self._chol, _ = _chol_with_jitter(sigma, "joint")
                Lx = np.linalg.cholesky(sigma[1:, 1:])
            self._chol_x = Lx
            sxy = sigma[1:, 0]
            w = np.linalg.solve(Lx, sxy)
            self._reg_weights = np.linalg.solve(Lx.T, w)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def x_dim(self) -> int:
        return self.dim - 1

    @property
    def mu_y(self) -> float:
        return float(self.mu[0])

    @property
    def mu_x(self) -> np.ndarray:
        return self.mu[1:]

    @property
    def sigma_x(self) -> np.ndarray:
        return self.sigma[1:, 1:]

    @property
    def sigma_yx(self) -> np.ndarray:
        return self.sigma[0:1, 1:]

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussianComponent":
        return cls(mu=np.asarray(doc["mu"]), sigma=np.asarray(doc["sigma"]))


def _gauss_logpdf(obs: np.ndarray, mu: np.ndarray, chol: np.ndarray):
    """Log N(obs; mu, L L^T); obs may be (d,) or (n, d)."""
    obs = np.asarray(obs, dtype=np.float64)
    scalar = obs.ndim == 1
    pts = np.atleast_2d(obs)
    d = mu.shape[0]
    if pts.shape[1] != d:
        raise DataError(f"observation dimension {pts.shape[1]} does not match component dimension {d}")
    dev = solve_triangular(chol, (pts - mu).T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", dev, dev)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (d * _LOG_2PI + logdet + maha)
    return float(out[0]) if scalar else out


def log_density(component: GaussianComponent, obs: np.ndarray):
    """Joint log-density of (Y, X) observations; vectorized over rows."""
    return _gauss_logpdf(obs, component.mu, component._chol)


def log_density_x(component: GaussianComponent, x: np.ndarray):
    """Log-density of the X-marginal (covariates only); vectorized over rows."""
    if component._chol_x is None:
        raise DataError("component has no covariate block (dimension 1)")
    return _gauss_logpdf(x, component.mu_x, component._chol_x)


def conditional_mean_y(component: GaussianComponent, x: np.ndarray):
    """E[Y | X = x] under the component; x may be (m,) or (n, m)."""
    if component._reg_weights is None:
        raise DataError("component has no covariate block (dimension 1)")
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != component.x_dim:
        raise DataError(
            f"covariate dimension {pts.shape[1]} does not match component ({component.x_dim})"
        )
    out = component.mu_y + (pts - component.mu_x) @ component._reg_weights
    return float(out[0]) if scalar else out


def weighted_mle(observations: np.ndarray, weights: np.ndarray) -> GaussianComponent:
    """Weighted Gaussian maximum-likelihood fit (moments normalized by total weight)."""
    obs = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(w) != obs.shape[0]:
        raise DataError(f"{len(w)} weights for {obs.shape[0]} observations")
    if (w < 0).any():
        raise DataError("weights must be non-negative")
    total = float(w.sum())
    if total <= MIN_TOTAL_WEIGHT:
        raise NumericalError(f"degenerate class: total weight {total:.3e} below {MIN_TOTAL_WEIGHT}")
    mu = (w @ obs) / total
    dev = obs - mu
    sigma = (dev.T * w) @ dev / total
    return GaussianComponent(mu=mu, sigma=sigma)


def log_density_matrix(components: list[GaussianComponent], obs: np.ndarray) -> np.ndarray:
    """(n, K) matrix of joint log-densities."""
    return np.stack([log_density(c, obs) for c in components], axis=1)


def log_density_x_matrix(components: list[GaussianComponent], x: np.ndarray) -> np.ndarray:
    """(n, K) matrix of X-marginal log-densities."""
    return np.stack([log_density_x(c, x) for c in components], axis=1)


def predict_target(components: list[GaussianComponent], weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Posterior-mixture prediction: sum_k weights[:, k] * E[Y | X=x, class k]."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (x.shape[0], len(components)):
        raise DataError(
            f"weights shape {weights.shape} does not match "
            f"({x.shape[0]}, {len(components)})"
        )
    means = np.stack([conditional_mean_y(c, x) for c in components], axis=1)
    return np.einsum("nk,nk->n", weights, means)


def normalized_weights(log_joint: np.ndarray) -> np.ndarray:
    """Row-normalize unnormalized log posterior weights to probabilities."""
    shifted = log_joint - logsumexp(log_joint, axis=1, keepdims=True)
    return np.exp(shifted)


def split_covariates(obs: np.ndarray, dim: int) -> np.ndarray:
    """Extract the covariate block from rows that may or may not carry Y.

    ``obs`` with ``dim`` columns is (Y, X...) and loses its first column;
    with ``dim - 1`` columns it is already covariate-only.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if obs.shape[1] == dim:
        return obs[:, 1:]
    if obs.shape[1] == dim - 1:
        return obs
    raise DataError(
        f"expected {dim - 1} covariate channels (or {dim} with the target "
        f"first), data has {obs.shape[1]}"
    )


def resolve_emissions(components: list[GaussianComponent], obs: np.ndarray, mode: str) -> np.ndarray:
    """(n, K) emission log-density matrix in the requested conditioning mode.

    Mode "joint" scores the full (Y, X) vector; "x_only" scores the
    X-marginal, accepting rows with or without the leading Y column.
    """
    d = components[0].dim
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if mode == "joint":
        if obs.shape[1] != d:
            raise DataError(f"joint mode needs {d} channels, data has {obs.shape[1]}")
        loge = log_density_matrix(components, obs)
    elif mode == "x_only":
        loge = log_density_x_matrix(components, split_covariates(obs, d))
    else:
        raise DataError(f"unknown mode {mode!r}; use 'joint' or 'x_only'")
    if not np.isfinite(loge).all():
        raise NumericalError("non-finite emission log-density")
    return loge


@dataclass
class PosteriorWeights:
    """Per-voxel class membership probabilities, aligned with voxel ids."""

    voxel_ids: np.ndarray  # (n,) int64 linear voxel ids
    weights: np.ndarray  # (n, K) rows summing to 1

    def __post_init__(self):
        if self.weights.shape[0] != self.voxel_ids.shape[0]:
            raise DataError(
                f"{self.weights.shape[0]} weight rows for {self.voxel_ids.shape[0]} voxels"
            )


@dataclass
class VoxelPrediction:
    """Predicted target values aligned with voxel ids."""

    voxel_ids: np.ndarray  # (n,) int64
    values: np.ndarray  # (n,) float64

    def __post_init__(self):
        if self.values.shape != self.voxel_ids.shape:
            raise DataError(
                f"{self.values.shape} values for {self.voxel_ids.shape} voxels"
            )
