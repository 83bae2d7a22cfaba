"""Hidden Markov chain over Hilbert-sequenced voxels.

Latent tissue classes follow a first-order Markov chain along the curve
ordering; each class emits the joint (Y, X) Gaussian of its component.
Segments produced by the sequencing step are treated as independent
realizations of the same chain: the initial distribution is re-estimated
by pooling segment starts, transition counts never cross a segment
boundary, and length-1 segments inform only the initial distribution and
the emission parameters.

Smoothing runs in linear space with per-position rescaling (emission
log-densities are shifted by their per-position maximum first), which is
exact and safe for segments of ~10^5 positions.  The inner loops are
compiled with numba; the first call in a fresh environment pays a one-off
compilation cost that is cached on disk afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from pseudoct.errors import DataError, NumericalError, PseudoCtError
from pseudoct.emission import (
    GaussianComponent,
    PosteriorWeights,
    VoxelPrediction,
    predict_target,
    resolve_emissions,
    split_covariates,
    weighted_mle,
)
from pseudoct.hilbert import SequencedData

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 500
_ROW_SUM_TOL = 1e-12


@dataclass
class HmmParams:
    """Chain parameters: initial distribution, transitions, K emission components."""

    pi: np.ndarray
    trans: np.ndarray
    components: list[GaussianComponent]

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64).reshape(-1)
        self.trans = np.asarray(self.trans, dtype=np.float64)
        K = self.pi.shape[0]
        if K < 1:
            raise DataError("need at least one state")
        if self.trans.shape != (K, K):
            raise DataError(f"transition matrix shape {self.trans.shape}, expected ({K}, {K})")
        if len(self.components) != K:
            raise DataError(f"{len(self.components)} components for {K} states")
        if (self.pi < 0).any() or abs(self.pi.sum() - 1.0) > _ROW_SUM_TOL:
            raise DataError("initial distribution must be non-negative and sum to 1")
        if (self.trans < 0).any():
            raise DataError("transition probabilities must be non-negative")
        rows = self.trans.sum(axis=1)
        if np.abs(rows - 1.0).max() > _ROW_SUM_TOL:
            raise DataError(f"transition rows must sum to 1 (max deviation {np.abs(rows - 1.0).max():.3e})")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise DataError(f"components disagree on dimension: {sorted(dims)}")

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.components[0].dim

    def to_dict(self) -> dict:
        return {
            "family": "hmm",
            "K": self.n_states,
            "pi": self.pi.tolist(),
            "trans": self.trans.tolist(),
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HmmParams":
        return cls(
            pi=np.asarray(doc["pi"]),
            trans=np.asarray(doc["trans"]),
            components=[GaussianComponent.from_dict(c) for c in doc["components"]],
        )


@dataclass
class FitReport:
    """Objective trace and stopping diagnostics for one EM run."""

    loglik_trace: list[float]
    n_iter: int
    converged: bool
    final_relative_improvement: float

    def to_dict(self) -> dict:
        return {
            "loglik_trace": self.loglik_trace,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "final_relative_improvement": self.final_relative_improvement,
        }


@njit(cache=True, nogil=True)
def _fb_kernel(loge, pi, trans, offsets, gamma, xi_sums, start_sums):
    """Scaled forward-backward over concatenated segments.

    loge: (N, K) emission log-densities, rows grouped into segments by
    offsets (S+1,).  Writes smoothed marginals into gamma (N, K), pooled
    expected transition counts into xi_sums (K, K), pooled start-position
    marginals into start_sums (K,).  Returns the total log-likelihood, or
    NaN if any scaling constant vanishes.
    """
    K = pi.shape[0]
    n_seg = offsets.shape[0] - 1
    total = 0.0
    for s in range(n_seg):
        lo = offsets[s]
        hi = offsets[s + 1]
        n = hi - lo
        # shift emissions to a safe range; keep shifts for the loglik
        b = np.empty((n, K))
        shift_sum = 0.0
        for t in range(n):
            m = loge[lo + t, 0]
            for k in range(1, K):
                if loge[lo + t, k] > m:
                    m = loge[lo + t, k]
            shift_sum += m
            for k in range(K):
                b[t, k] = np.exp(loge[lo + t, k] - m)
        alpha = np.empty((n, K))
        c = np.empty(n)
        acc = 0.0
        for k in range(K):
            alpha[0, k] = pi[k] * b[0, k]
            acc += alpha[0, k]
        if acc <= 0.0:
            return np.nan
        c[0] = acc
        for k in range(K):
            alpha[0, k] /= acc
        for t in range(1, n):
            acc = 0.0
            for k in range(K):
                a = 0.0
                for j in range(K):
                    a += alpha[t - 1, j] * trans[j, k]
                a *= b[t, k]
                alpha[t, k] = a
                acc += a
            if acc <= 0.0:
                return np.nan
            c[t] = acc
            for k in range(K):
                alpha[t, k] /= acc
        beta = np.empty((n, K))
        for k in range(K):
            beta[n - 1, k] = 1.0
        for t in range(n - 2, -1, -1):
            for j in range(K):
                a = 0.0
                for k in range(K):
                    a += trans[j, k] * b[t + 1, k] * beta[t + 1, k]
                beta[t, j] = a / c[t + 1]
        for t in range(n):
            for k in range(K):
                gamma[lo + t, k] = alpha[t, k] * beta[t, k]
        for k in range(K):
            start_sums[k] += gamma[lo, k]
        for t in range(n - 1):
            for j in range(K):
                for k in range(K):
                    xi_sums[j, k] += alpha[t, j] * trans[j, k] * b[t + 1, k] * beta[t + 1, k] / c[t + 1]
        seg_ll = shift_sum
        for t in range(n):
            seg_ll += np.log(c[t])
        total += seg_ll
    return total


def _pooled_arrays(data: SequencedData) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate segment observations; return (obs, offsets, voxel_ids)."""
    if not data.segments:
        raise DataError("sequenced data has no segments")
    obs = np.concatenate([s.observations for s in data.segments], axis=0)
    ids = np.concatenate([s.voxel_ids for s in data.segments])
    lengths = np.array([len(s) for s in data.segments], dtype=np.int64)
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return obs, offsets, ids


def forward_backward(params: HmmParams, segment: np.ndarray, mode: str = "joint"):
    """Exact smoothing for one segment.

    Returns (gamma, xi_sums, loglik): per-position posterior state
    probabilities (n, K), expected transition counts summed over the
    segment (K, K), and log P(segment | params).
    """
    obs = np.atleast_2d(np.asarray(segment, dtype=np.float64))
    if obs.shape[0] < 1:
        raise DataError("segment must contain at least one observation")
    loge = resolve_emissions(params.components, obs, mode)
    K = params.n_states
    n = obs.shape[0]
    gamma = np.zeros((n, K))
    xi_sums = np.zeros((K, K))
    start_sums = np.zeros(K)
    offsets = np.array([0, n], dtype=np.int64)
    ll = _fb_kernel(loge, params.pi, params.trans, offsets, gamma, xi_sums, start_sums)
    if not np.isfinite(ll):
        raise NumericalError("forward pass produced zero probability (impossible sequence)")
    return gamma, xi_sums, float(ll)


def _e_step(params: HmmParams, obs: np.ndarray, offsets: np.ndarray, mode: str):
    loge = resolve_emissions(params.components, obs, mode)
    K = params.n_states
    gamma = np.zeros((obs.shape[0], K))
    xi_sums = np.zeros((K, K))
    start_sums = np.zeros(K)
    ll = _fb_kernel(loge, params.pi, params.trans, offsets, gamma, xi_sums, start_sums)
    if not np.isfinite(ll):
        raise NumericalError("forward pass produced zero probability (impossible sequence)")
    return gamma, xi_sums, start_sums, float(ll)


def _m_step(params: HmmParams, obs: np.ndarray, gamma: np.ndarray,
            xi_sums: np.ndarray, start_sums: np.ndarray, n_segments: int) -> HmmParams:
    K = params.n_states
    pi = start_sums / float(n_segments)
    pi = pi / pi.sum()
    trans = params.trans.copy()
    row_tot = xi_sums.sum(axis=1)
    for j in range(K):
        # a state never occupied before a transition contributes nothing to
        # the likelihood through its row; keep the previous row in that case
        if row_tot[j] > 0.0:
            trans[j] = xi_sums[j] / row_tot[j]
    components = []
    for k in range(K):
        try:
            components.append(weighted_mle(obs, gamma[:, k]))
        except NumericalError as e:
            raise NumericalError(f"class {k}: {e}") from None
    return HmmParams(pi=pi, trans=trans, components=components)


def baum_welch(
    init: HmmParams,
    data: SequencedData,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[HmmParams, FitReport]:
    """EM over all segments; stops on relative log-likelihood improvement < tol."""
    obs, offsets, _ = _pooled_arrays(data)
    if obs.shape[0] < init.n_states:
        raise DataError(f"{obs.shape[0]} observations cannot support {init.n_states} states")
    n_segments = len(data.segments)
    params = init
    gamma, xi_sums, start_sums, ll = _e_step(params, obs, offsets, "joint")
    trace = [ll]
    converged = False
    rel = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        params = _m_step(params, obs, gamma, xi_sums, start_sums, n_segments)
        gamma, xi_sums, start_sums, ll = _e_step(params, obs, offsets, "joint")
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


def posterior_weights(params: HmmParams, x_data: SequencedData) -> PosteriorWeights:
    """Smoothed state probabilities conditioning on the covariate channels only."""
    obs, offsets, ids = _pooled_arrays(x_data)
    gamma, _, _, _ = _e_step(params, obs, offsets, "x_only")
    return PosteriorWeights(voxel_ids=ids, weights=gamma)


def predict_ct(params: HmmParams, x_data: SequencedData) -> VoxelPrediction:
    """Posterior-weight mixture of class-conditional means, per voxel."""
    pw = posterior_weights(params, x_data)
    obs = np.concatenate([s.observations for s in x_data.segments], axis=0)
    x = split_covariates(obs, params.obs_dim)
    values = predict_target(params.components, pw.weights, x)
    return VoxelPrediction(voxel_ids=pw.voxel_ids, values=values)


def log_likelihood(params: HmmParams, data: SequencedData) -> float:
    """Sum of per-segment log-likelihoods (joint emissions)."""
    obs, offsets, _ = _pooled_arrays(data)
    _, _, _, ll = _e_step(params, obs, offsets, "joint")
    return ll


def multi_start_fit(
    inits: list[HmmParams],
    data: SequencedData,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[HmmParams, FitReport]:
    """Run baum_welch from every init; keep the highest final log-likelihood."""
    if not inits:
        raise DataError("need at least one initialization")
    best: tuple[HmmParams, FitReport] | None = None
    failures: list[str] = []
    for i, init in enumerate(inits):
        try:
            fitted, report = baum_welch(init, data, tol=tol, max_iter=max_iter)
        except PseudoCtError as e:
            failures.append(f"start {i}: {e}")
            continue
        if best is None or report.loglik_trace[-1] > best[1].loglik_trace[-1]:
            best = (fitted, report)
    if best is None:
        raise NumericalError("all starts failed: " + "; ".join(failures))
    return best


def sort_states(params: HmmParams) -> HmmParams:
    """Relabel states in ascending order of the component target mean."""
    order = np.argsort([c.mu_y for c in params.components], kind="stable")
    return permute_states(params, order)


def permute_states(params: HmmParams, order: np.ndarray) -> HmmParams:
    """Relabel states so new state i is old state order[i]."""
    order = np.asarray(order, dtype=np.int64)
    return HmmParams(
        pi=params.pi[order],
        trans=params.trans[np.ix_(order, order)],
        components=[params.components[i] for i in order],
    )
