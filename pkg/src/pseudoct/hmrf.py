"""Hidden Markov random field on the masked 3D voxel lattice.

The latent class field z has a Gibbs prior  p(z) ∝ exp{-H(z)}  with

    H(z) = sum_u alpha_{z_u} + sum_{(u,v) pairs} beta_{z_u} [z_u = z_v],

where the pairs are 6-neighbour voxel pairs inside the mask and unequal
labels contribute nothing.  NOTE THE SIGN: probability is exp of *minus*
the energy, so same-label clustering requires beta_k < 0; beta = 0 makes
voxels independent and the model collapses to the Gaussian mixture with
weights softmax(-alpha).  alpha_1 = 0 is fixed for identifiability.

Posterior class marginals are intractable on real lattices and are
estimated by a systematic-scan single-site Gibbs sampler (implemented as
a two-colour checkerboard update: sites of equal parity are never
neighbours, so updating one parity class simultaneously is equivalent to
visiting those sites one by one).  A full-enumeration oracle covers tiny
lattices.  Fitting alternates Gibbs-estimated marginals (E) with a
weighted Gaussian update and ONE damped Newton step on the mean-field
pseudo-log-likelihood for (alpha, beta) (M), stopping when consecutive
parameter vectors differ by less than a tolerance in relative norm.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from pseudoct.errors import DataError, NumericalError
from pseudoct.emission import (
    GaussianComponent,
    PosteriorWeights,
    VoxelPrediction,
    predict_target,
    resolve_emissions,
    split_covariates,
    weighted_mle,
)
from pseudoct.hmm import FitReport
from pseudoct.volume_io import Volume, coords_of_ids, observations_at

DEFAULT_FIT_BURN_IN = 100
DEFAULT_FIT_SAMPLES = 200
DEFAULT_PREDICT_BURN_IN = 500
DEFAULT_PREDICT_SAMPLES = 1000
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 100
_MAX_HALVINGS = 10
_EXACT_LIMIT = 1_000_000

# offsets of the 6-neighbourhood, fixed order (-x, +x, -y, +y, -z, +z)
_NEIGHBOUR_OFFSETS = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]],
    dtype=np.int64,
)


@dataclass
class Lattice:
    """Masked voxels with their 6-neighbour structure.

    ``neighbours[i, s]`` is the position (row into ``ids``) of the s-th
    neighbour of voxel i, or -1 when that neighbour is outside the mask
    or the grid.  ``pairs`` lists each adjacent pair once (i < j).
    ``colours`` is the coordinate parity, splitting the sites into two
    mutually non-adjacent classes.
    """

    dims: tuple[int, int, int]
    ids: np.ndarray  # (M,) int64 linear voxel ids, ascending
    neighbours: np.ndarray = field(repr=False)  # (M, 6) int64 positions, -1 = none
    pairs: np.ndarray = field(repr=False)  # (P, 2) int64 positions, i < j
    colours: np.ndarray = field(repr=False)  # (M,) uint8 parity

    @property
    def n_sites(self) -> int:
        return len(self.ids)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "Lattice":
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 3:
            raise DataError(f"mask must be 3D, got shape {mask.shape}")
        dims = mask.shape
        nx, ny, nz = dims
        mask_disk = np.transpose(mask, (2, 1, 0)).ravel()
        ids = np.flatnonzero(mask_disk).astype(np.int64)
        if len(ids) == 0:
            raise DataError("mask selects no voxels")
        pos_of_id = np.full(nx * ny * nz, -1, dtype=np.int64)
        pos_of_id[ids] = np.arange(len(ids))
        coords = coords_of_ids(ids, dims)
        neighbours = np.full((len(ids), 6), -1, dtype=np.int64)
        for s, off in enumerate(_NEIGHBOUR_OFFSETS):
            nb = coords + off
            ok = ((nb >= 0) & (nb < np.array(dims))).all(axis=1)
            nb_ids = (nb[ok, 2] * ny + nb[ok, 1]) * nx + nb[ok, 0]
            neighbours[ok, s] = pos_of_id[nb_ids]
        rows, slots = np.nonzero(neighbours >= 0)
        cols = neighbours[rows, slots]
        keep = rows < cols
        pairs = np.stack([rows[keep], cols[keep]], axis=1)
        colours = (coords.sum(axis=1) % 2).astype(np.uint8)
        return cls(dims=tuple(int(d) for d in dims), ids=ids, neighbours=neighbours,
                   pairs=pairs, colours=colours)

    @classmethod
    def from_volume(cls, volume: Volume) -> "Lattice":
        return cls.from_mask(volume.mask)


@dataclass
class MrfParams:
    """Field parameters: singleton/pair potentials and K emission components."""

    alpha: np.ndarray
    beta: np.ndarray
    components: list[GaussianComponent]

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        K = self.alpha.shape[0]
        if K < 1:
            raise DataError("need at least one class")
        if self.beta.shape != (K,):
            raise DataError(f"beta length {self.beta.shape[0]} does not match alpha ({K})")
        if not (np.isfinite(self.alpha).all() and np.isfinite(self.beta).all()):
            raise DataError("potentials must be finite")
        if self.alpha[0] != 0.0:
            raise DataError(f"alpha[0] must be 0 for identifiability, got {self.alpha[0]!r}")
        if len(self.components) != K:
            raise DataError(f"{len(self.components)} components for {K} classes")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise DataError(f"components disagree on dimension: {sorted(dims)}")

    @property
    def n_classes(self) -> int:
        return self.alpha.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.components[0].dim

    def to_dict(self) -> dict:
        return {
            "family": "hmrf",
            "K": self.n_classes,
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MrfParams":
        return cls(
            alpha=np.asarray(doc["alpha"]),
            beta=np.asarray(doc["beta"]),
            components=[GaussianComponent.from_dict(c) for c in doc["components"]],
        )


def _check_labels(labels: np.ndarray, lattice: Lattice, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != lattice.n_sites:
        raise DataError(f"{labels.shape[0]} labels for {lattice.n_sites} sites")
    if (labels < 0).any() or (labels >= K).any():
        raise DataError(f"labels must lie in [0, {K})")
    return labels


def energy(labels: np.ndarray, lattice: Lattice, alpha: np.ndarray, beta: np.ndarray) -> float:
    """H(z) = sum_u alpha_{z_u} + sum_{pairs} beta_{z_u} [z_u = z_v]."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    labels = _check_labels(labels, lattice, alpha.shape[0])
    h = float(alpha[labels].sum())
    if len(lattice.pairs):
        a = labels[lattice.pairs[:, 0]]
        b = labels[lattice.pairs[:, 1]]
        same = a == b
        h += float(beta[a[same]].sum())
    return h


def _neighbour_weight_counts(weights: np.ndarray, lattice: Lattice) -> np.ndarray:
    """c[u, k] = sum of weights[v, k] over masked neighbours v of u."""
    padded = np.vstack([weights, np.zeros((1, weights.shape[1]))])
    idx = np.where(lattice.neighbours >= 0, lattice.neighbours, lattice.n_sites)
    return padded[idx].sum(axis=1)


def _neighbour_label_counts(labels: np.ndarray, sites: np.ndarray, lattice: Lattice, K: int) -> np.ndarray:
    """c[i, k] = number of masked neighbours of sites[i] currently labelled k."""
    nbr = lattice.neighbours[sites]
    padded = np.append(labels, K)  # sentinel class K = "no neighbour"
    lab = padded[np.where(nbr >= 0, nbr, lattice.n_sites)]
    counts = np.empty((len(sites), K), dtype=np.float64)
    for k in range(K):
        counts[:, k] = (lab == k).sum(axis=1)
    return counts


@dataclass
class GibbsRun:
    """Everything a Gibbs pass can report; heavier fields are optional."""

    marginals: np.ndarray | None  # (M, K) empirical frequencies, or None if n_samples=0
    final_labels: np.ndarray  # (M,) labels after the last sweep
    energy_trace: np.ndarray | None = None  # (burn_in + n_samples + 1,) H after each sweep
    label_history: np.ndarray | None = None  # (n_samples, M) int8, if requested


def run_gibbs(
    alpha: np.ndarray,
    beta: np.ndarray,
    lattice: Lattice,
    loge: np.ndarray | None,
    burn_in: int,
    n_samples: int,
    rng: np.random.Generator,
    init_labels: np.ndarray | None = None,
    track_energy: bool = False,
    keep_history: bool = False,
) -> GibbsRun:
    """Systematic-scan single-site Gibbs sampling of the label field.

    The scan visits all even-parity sites, then all odd-parity sites;
    within one parity class no two sites are neighbours, so the
    simultaneous vectorized update equals the site-by-site scan.  With
    ``loge`` None the prior field is sampled (phantom generation); with an
    (M, K) emission matrix the posterior field is sampled.  ``n_samples``
    sweeps after ``burn_in`` are averaged into marginal frequencies.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    K = alpha.shape[0]
    M = lattice.n_sites
    if loge is not None and loge.shape != (M, K):
        raise DataError(f"emission matrix shape {loge.shape}, expected ({M}, {K})")
    if burn_in < 0 or n_samples < 0:
        raise DataError("burn_in and n_samples must be non-negative")

    if init_labels is None:
        # independent draw from the emission-weighted singleton field
        logq = -alpha[None, :] + (loge if loge is not None else 0.0)
        logq = logq - logq.max(axis=1, keepdims=True)
        q = np.exp(logq)
        q /= q.sum(axis=1, keepdims=True)
        labels = (q.cumsum(axis=1) < rng.random((M, 1))).sum(axis=1).astype(np.int64)
    else:
        labels = _check_labels(init_labels, lattice, K).copy()

    colour_sites = [np.flatnonzero(lattice.colours == c) for c in (0, 1)]
    freq = np.zeros((M, K)) if n_samples > 0 else None
    history = np.empty((n_samples, M), dtype=np.int8) if keep_history else None
    h = energy(labels, lattice, alpha, beta) if track_energy else 0.0
    trace = [h] if track_energy else None

    total_sweeps = burn_in + n_samples
    for sweep in range(total_sweeps):
        for sites in colour_sites:
            if len(sites) == 0:
                continue
            counts = _neighbour_label_counts(labels, sites, lattice, K)
            logq = -alpha[None, :] - beta[None, :] * counts
            if loge is not None:
                logq = logq + loge[sites]
            if not np.isfinite(logq).all():
                raise NumericalError("non-finite site conditional")
            logq -= logq.max(axis=1, keepdims=True)
            q = np.exp(logq)
            q /= q.sum(axis=1, keepdims=True)
            new = (q.cumsum(axis=1) < rng.random((len(sites), 1))).sum(axis=1).astype(np.int64)
            if track_energy:
                old = labels[sites]
                # neighbours of these sites all have the other parity, so
                # their labels are fixed during this half-sweep and the
                # per-site deltas add up exactly
                d_alpha = alpha[new] - alpha[old]
                rows = np.arange(len(sites))
                d_pair = beta[new] * counts[rows, new] - beta[old] * counts[rows, old]
                h += float((d_alpha + d_pair).sum())
            labels[sites] = new
        if track_energy:
            trace.append(h)
        if sweep >= burn_in:
            freq[np.arange(M), labels] += 1.0
            if keep_history:
                history[sweep - burn_in] = labels
    if freq is not None:
        freq /= n_samples
    return GibbsRun(
        marginals=freq,
        final_labels=labels,
        energy_trace=np.array(trace) if track_energy else None,
        label_history=history,
    )


def exact_posterior(params: MrfParams, obs: np.ndarray, lattice: Lattice,
                    mode: str = "joint") -> PosteriorWeights:
    """Posterior marginals by full enumeration; tiny lattices only.

    Also the only place the partition function is ever computed.
    """
    K = params.n_classes
    M = lattice.n_sites
    if K ** M > _EXACT_LIMIT:
        raise DataError(f"enumeration needs K^M = {K}^{M} <= {_EXACT_LIMIT}")
    loge = resolve_emissions(params.components, obs, mode)
    if loge.shape[0] != M:
        raise DataError(f"{loge.shape[0]} observations for {M} sites")
    configs = np.array(list(itertools.product(range(K), repeat=M)), dtype=np.int64)
    logp = -params.alpha[configs].sum(axis=1)
    for (i, j) in lattice.pairs:
        a = configs[:, i]
        same = a == configs[:, j]
        logp[same] -= params.beta[a[same]]
    rows = np.arange(M)
    logp += loge[rows, configs].sum(axis=1)
    logp -= logsumexp(logp)
    weights = np.empty((M, K))
    for u in range(M):
        for k in range(K):
            sel = configs[:, u] == k
            weights[u, k] = np.exp(logsumexp(logp[sel])) if sel.any() else 0.0
    return PosteriorWeights(voxel_ids=lattice.ids, weights=weights)


def gibbs_posterior(
    params: MrfParams,
    obs: np.ndarray,
    lattice: Lattice,
    burn_in: int = DEFAULT_PREDICT_BURN_IN,
    n_samples: int = DEFAULT_PREDICT_SAMPLES,
    seed: int = 0,
    mode: str = "joint",
    init_labels: np.ndarray | None = None,
) -> PosteriorWeights:
    """Gibbs-sampled posterior marginals; deterministic given the seed."""
    if burn_in < 1 or n_samples < 1:
        raise DataError("burn_in and n_samples must be >= 1")
    loge = resolve_emissions(params.components, obs, mode)
    rng = np.random.default_rng(seed)
    run = run_gibbs(params.alpha, params.beta, lattice, loge, burn_in, n_samples, rng,
                    init_labels=init_labels)
    return PosteriorWeights(voxel_ids=lattice.ids, weights=run.marginals)


def _theta_of(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return np.concatenate([alpha[1:], beta])


def _potentials_of(theta: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    alpha = np.concatenate([[0.0], theta[: K - 1]])
    return alpha, theta[K - 1 :]


def pseudo_log_likelihood(
    alpha: np.ndarray,
    beta: np.ndarray,
    weights: np.ndarray,
    lattice: Lattice,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean-field pseudo-log-likelihood with analytic gradient and Hessian.

    ``weights`` holds per-site class probabilities (hard labels are the
    one-hot special case).  Each site contributes the log conditional
    probability of its own class distribution given the expected
    neighbour composition:

        PLL = sum_u sum_k w_uk (eta_uk - log sum_j exp eta_uj),
        eta_uk = -alpha_k - beta_k c_uk,
        c_uk   = sum_{v in N(u)} w_vk.

    Derivatives are taken w.r.t. theta = (alpha_2..alpha_K, beta_1..beta_K);
    alpha_1 stays pinned at 0.  c is treated as a constant of theta.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    K = alpha.shape[0]
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if weights.shape != (lattice.n_sites, K):
        raise DataError(f"weights shape {weights.shape}, expected ({lattice.n_sites}, {K})")
    c = _neighbour_weight_counts(weights, lattice)
    eta = -alpha[None, :] - beta[None, :] * c
    logz = logsumexp(eta, axis=1)
    value = float((weights * (eta - logz[:, None])).sum())

    p = np.exp(eta - logz[:, None])
    D = weights - p
    grad = np.concatenate([-D.sum(axis=0)[1:], -(D * c).sum(axis=0)])

    # Hessian blocks via the moment matrices of the per-site feature vectors
    q = p * c
    sum_p = p.sum(axis=0)
    sum_q = q.sum(axis=0)
    sum_qc = (q * c).sum(axis=0)
    h_aa = np.diag(sum_p[1:]) - p[:, 1:].T @ p[:, 1:]
    h_ab = np.zeros((K - 1, K))
    if K > 1:
        h_ab = -(p[:, 1:].T @ q)
        h_ab[np.arange(K - 1), np.arange(1, K)] += sum_q[1:]
    h_bb = np.diag(sum_qc) - q.T @ q
    hess = -np.block([[h_aa, h_ab], [h_ab.T, h_bb]])
    return value, grad, hess


def _as_head_lists(obs, lattice) -> tuple[list[np.ndarray], list[Lattice]]:
    """Normalize single-head or multi-head inputs to parallel lists."""
    if isinstance(lattice, Lattice):
        return [np.atleast_2d(np.asarray(obs, dtype=np.float64))], [lattice]
    lattices = list(lattice)
    obs_list = [np.atleast_2d(np.asarray(o, dtype=np.float64)) for o in obs]
    if len(obs_list) != len(lattices):
        raise DataError(f"{len(obs_list)} observation sets for {len(lattices)} lattices")
    return obs_list, lattices


def _param_vector(params: MrfParams) -> np.ndarray:
    parts = [params.alpha[1:], params.beta]
    for c in params.components:
        parts.append(c.mu)
        parts.append(c.sigma.ravel())
    return np.concatenate(parts)


def em_gradient_fit(
    init: MrfParams,
    obs,
    lattice,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    burn_in: int = DEFAULT_FIT_BURN_IN,
    n_samples: int = DEFAULT_FIT_SAMPLES,
    seed: int = 0,
    freeze_beta: bool = False,
) -> tuple[MrfParams, FitReport]:
    """EM-style fitting with Gibbs marginals and a one-step-Newton M-step.

    ``obs``/``lattice`` may be a single head (array + Lattice) or parallel
    lists of heads sharing one parameter set.  Per head, the E-step runs
    the Gibbs sampler warm-started from the previous E-step's final state;
    the M-step refits the Gaussians by weighted moments over all heads and
    moves (alpha, beta) by one damped Newton step on the pooled
    pseudo-log-likelihood.  Convergence is declared when the relative
    euclidean norm of the difference between consecutive full parameter
    vectors (potentials and Gaussian moments) drops below ``tol``.

    With ``freeze_beta`` the pair potentials stay exactly 0: marginals are
    then closed-form independent-site responsibilities (no sampling) and
    alpha gets its exact multinomial maximizer instead of a Newton step,
    making the trajectory match plain mixture EM.

    The report's objective trace records the pooled pseudo-log-likelihood
    (the joint likelihood is intractable); it is not guaranteed monotone
    because the E-step is stochastic.
    """
    obs_list, lattices = _as_head_lists(obs, lattice)
    n_heads = len(lattices)
    for o, lat in zip(obs_list, lattices):
        if o.shape[0] != lat.n_sites:
            raise DataError(f"{o.shape[0]} observations for {lat.n_sites} lattice sites")
    pooled_obs = np.concatenate(obs_list, axis=0)
    K = init.n_classes
    ss = np.random.SeedSequence(seed)
    head_rngs = [np.random.default_rng(s) for s in ss.spawn(n_heads)]
    warm: list[np.ndarray | None] = [None] * n_heads

    params = init
    if freeze_beta and np.any(init.beta != 0.0):
        raise DataError("freeze_beta requires init.beta == 0")

    def e_step(p: MrfParams) -> np.ndarray:
        weight_blocks = []
        for h in range(n_heads):
            loge = resolve_emissions(p.components, obs_list[h], "joint")
            if freeze_beta:
                logq = -p.alpha[None, :] + loge
                logq -= logsumexp(logq, axis=1)[:, None]
                weight_blocks.append(np.exp(logq))
            else:
                run = run_gibbs(p.alpha, p.beta, lattices[h], loge, burn_in, n_samples,
                                head_rngs[h], init_labels=warm[h])
                warm[h] = run.final_labels
                weight_blocks.append(run.marginals)
        return weight_blocks

    trace: list[float] = []
    converged = False
    rel = np.inf
    n_iter = 0
    weight_blocks = e_step(params)
    for n_iter in range(1, max_iter + 1):
        pooled_w = np.concatenate(weight_blocks, axis=0)
        components = []
        for k in range(K):
            try:
                components.append(weighted_mle(pooled_obs, pooled_w[:, k]))
            except NumericalError as e:
                raise NumericalError(f"class {k}: {e}") from None
        if freeze_beta:
            wbar = pooled_w.mean(axis=0)
            if (wbar <= 0).any():
                raise NumericalError("empty class in frozen-beta update")
            alpha = np.log(wbar[0]) - np.log(wbar)
            beta = np.zeros(K)
        else:
            alpha, beta = _pooled_newton_step(params.alpha, params.beta,
                                              weight_blocks, lattices)
        new_params = MrfParams(alpha=alpha, beta=beta, components=components)
        pll = sum(
            pseudo_log_likelihood(new_params.alpha, new_params.beta, w, lat)[0]
            for w, lat in zip(weight_blocks, lattices)
        )
        trace.append(float(pll))
        diff = np.linalg.norm(_param_vector(new_params) - _param_vector(params))
        rel = diff / max(1.0, np.linalg.norm(_param_vector(params)))
        params = new_params
        if rel < tol:
            converged = True
            break
        weight_blocks = e_step(params)
    report = FitReport(
        loglik_trace=trace,
        n_iter=n_iter,
        converged=converged,
        final_relative_improvement=float(rel),
    )
    return params, report


def _pooled_newton_step(alpha, beta, weight_blocks, lattices):
    """One damped Newton step on the sum of per-head pseudo-likelihoods."""
    K = alpha.shape[0]

    def pooled(a, b):
        v = 0.0
        g = np.zeros(2 * K - 1)
        h = np.zeros((2 * K - 1, 2 * K - 1))
        for w, lat in zip(weight_blocks, lattices):
            vi, gi, hi = pseudo_log_likelihood(a, b, w, lat)
            v += vi
            g += gi
            h += hi
        return v, g, h

    value, grad, hess = pooled(alpha, beta)
    if np.linalg.norm(grad) == 0.0:
        # already stationary (always the case for K=1, where the only
        # configuration has probability 1 whatever the potentials are)
        return alpha, beta
    try:
        step = np.linalg.solve(hess, -grad)
    except np.linalg.LinAlgError:
        raise NumericalError("singular Hessian in the potential update") from None
    theta = _theta_of(alpha, beta)
    scale = 1.0
    for _ in range(_MAX_HALVINGS + 1):
        cand = theta + scale * step
        a, b = _potentials_of(cand, K)
        cand_value, _, _ = pooled(a, b)
        if np.isfinite(cand_value) and cand_value >= value:
            return a, b
        scale *= 0.5
    raise NumericalError(
        f"Newton step failed to improve the pseudo-likelihood after {_MAX_HALVINGS} halvings"
    )


def predict_ct_mrf(
    params: MrfParams,
    x_obs: np.ndarray,
    lattice: Lattice,
    burn_in: int = DEFAULT_PREDICT_BURN_IN,
    n_samples: int = DEFAULT_PREDICT_SAMPLES,
    seed: int = 0,
    method: str = "gibbs",
) -> VoxelPrediction:
    """Posterior-weight mixture of class-conditional means on the lattice.

    ``method`` "gibbs" (default) estimates weights by sampling;
    "exact" enumerates (tiny lattices only).
    """
    if method == "gibbs":
        pw = gibbs_posterior(params, x_obs, lattice, burn_in=burn_in,
                             n_samples=n_samples, seed=seed, mode="x_only")
    elif method == "exact":
        pw = exact_posterior(params, x_obs, lattice, mode="x_only")
    else:
        raise DataError(f"unknown method {method!r}; use 'gibbs' or 'exact'")
    x = split_covariates(np.asarray(x_obs, dtype=np.float64), params.obs_dim)
    values = predict_target(params.components, pw.weights, x)
    return VoxelPrediction(voxel_ids=lattice.ids, values=values)


def observations_for_lattice(volume: Volume, lattice: Lattice,
                             channels: tuple[str, ...] | None = None) -> np.ndarray:
    """(M, d) observation rows aligned with lattice.ids."""
    return observations_at(volume, lattice.ids, channels)
