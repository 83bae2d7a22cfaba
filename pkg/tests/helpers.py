"""Shared builders and brute-force oracles for the test modules.

Oracles here deliberately avoid the library's own numerics: emission
densities come from scipy, posteriors from exhaustive enumeration, and
moments from naive loops, so agreement is meaningful evidence.
"""

import itertools

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from pseudoct.emission import GaussianComponent
from pseudoct.hilbert import HilbertOrder, Segment, SequencedData, summarize_segments
from pseudoct.hmm import HmmParams


def as_sequenced(segment_obs: list[np.ndarray]) -> SequencedData:
    """Wrap raw observation matrices as segments with consecutive voxel ids."""
    segs = []
    base = 0
    for obs in segment_obs:
        n = obs.shape[0]
        segs.append(Segment(voxel_ids=np.arange(base, base + n, dtype=np.int64),
                            observations=np.asarray(obs, dtype=np.float64)))
        base += n
    return SequencedData(segments=segs, order=HilbertOrder(1), offset=(0, 0, 0),
                         channels=("Y", "X"), summary=summarize_segments(segs))


def random_spd(rng: np.random.Generator, d: int, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T + d * np.eye(d))


def random_components(rng: np.random.Generator, K: int, d: int,
                      mu_spread: float = 3.0) -> list[GaussianComponent]:
    return [
        GaussianComponent(mu=rng.normal(scale=mu_spread, size=d), sigma=random_spd(rng, d))
        for _ in range(K)
    ]


def random_stochastic(rng: np.random.Generator, shape) -> np.ndarray:
    m = rng.uniform(0.1, 1.0, size=shape)
    return m / m.sum(axis=-1, keepdims=True)


def random_hmm(rng: np.random.Generator, K: int, d: int) -> HmmParams:
    return HmmParams(
        pi=random_stochastic(rng, K),
        trans=random_stochastic(rng, (K, K)),
        components=random_components(rng, K, d),
    )


def scipy_log_emissions(components: list[GaussianComponent], obs: np.ndarray) -> np.ndarray:
    """(n, K) joint emission log-densities computed entirely by scipy."""
    obs = np.atleast_2d(obs)
    return np.stack(
        [np.atleast_1d(multivariate_normal(c.mu, c.sigma).logpdf(obs)) for c in components],
        axis=1,
    )


def scipy_log_emissions_x(components: list[GaussianComponent], x: np.ndarray) -> np.ndarray:
    """(n, K) covariate-marginal log-densities computed entirely by scipy."""
    x = np.atleast_2d(x)
    return np.stack(
        [
            np.atleast_1d(multivariate_normal(c.mu[1:], c.sigma[1:, 1:]).logpdf(x))
            for c in components
        ],
        axis=1,
    )


def enumerated_forward_backward(params: HmmParams, loge: np.ndarray):
    """Chain posterior by exhaustive path enumeration; tiny instances only.

    Returns (gamma, xi_sums, loglik) on exactly the contract of
    forward_backward, given the (n, K) emission log-density matrix.
    """
    n, K = loge.shape
    paths = np.array(list(itertools.product(range(K), repeat=n)), dtype=np.int64)
    logp = np.log(params.pi)[paths[:, 0]] + loge[0, paths[:, 0]]
    for t in range(1, n):
        logp = logp + np.log(params.trans)[paths[:, t - 1], paths[:, t]] + loge[t, paths[:, t]]
    loglik = float(logsumexp(logp))
    w = np.exp(logp - loglik)
    gamma = np.zeros((n, K))
    for t in range(n):
        for k in range(K):
            gamma[t, k] = w[paths[:, t] == k].sum()
    xi = np.zeros((K, K))
    for t in range(1, n):
        for j in range(K):
            for k in range(K):
                xi[j, k] += w[(paths[:, t - 1] == j) & (paths[:, t] == k)].sum()
    return gamma, xi, loglik


def simulate_chain(rng: np.random.Generator, params: HmmParams, n: int) -> np.ndarray:
    """Draw (labels, observations) from the chain; returns the (n, d) matrix."""
    K = params.n_states
    z = np.empty(n, dtype=np.int64)
    z[0] = rng.choice(K, p=params.pi)
    for t in range(1, n):
        z[t] = rng.choice(K, p=params.trans[z[t - 1]])
    d = params.obs_dim
    obs = np.empty((n, d))
    for k in range(K):
        sel = z == k
        if sel.any():
            obs[sel] = rng.multivariate_normal(
                params.components[k].mu, params.components[k].sigma, size=int(sel.sum())
            )
    return obs
