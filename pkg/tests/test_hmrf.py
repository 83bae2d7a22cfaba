"""Markov random field: lattice structure, energy, sampling, and fitting."""

import numpy as np
import pytest
from scipy.special import logsumexp

from helpers import random_components, random_spd
from pseudoct.emission import GaussianComponent, conditional_mean_y, resolve_emissions
from pseudoct.errors import DataError
from pseudoct.gmm import GmmParams, fit_gmm, kmeans_init, responsibilities
from pseudoct.hmrf import (
    Lattice,
    MrfParams,
    em_gradient_fit,
    energy,
    exact_posterior,
    gibbs_posterior,
    observations_for_lattice,
    predict_ct_mrf,
    pseudo_log_likelihood,
    run_gibbs,
)
from pseudoct.volume_io import (
    MASK_CHANNEL,
    Volume,
    VolumeHeader,
    coords_of_ids,
    masked_voxel_ids,
    observations_at,
)


def random_mask(rng, dims, fraction=0.6):
    mask = rng.random(dims) < fraction
    if not mask.any():
        mask[0, 0, 0] = True
    return mask


def softmax_neg(alpha):
    w = np.exp(-np.asarray(alpha, dtype=np.float64))
    return w / w.sum()


def weights_to_alpha(w):
    w = np.asarray(w, dtype=np.float64)
    return np.log(w[0]) - np.log(w)


def random_field_params(rng, K, d, beta_scale=0.5):
    alpha = np.concatenate([[0.0], rng.normal(size=K - 1, scale=0.5)])
    beta = rng.normal(size=K, scale=beta_scale)
    return MrfParams(alpha=alpha, beta=beta,
                     components=random_components(rng, K, d))


class TestLattice:
    def test_full_cube_structure(self):
        lat = Lattice.from_mask(np.ones((3, 3, 3), dtype=bool))
        assert lat.n_sites == 27
        assert np.array_equal(lat.ids, np.arange(27))
        # edge count of a 3x3x3 grid graph: 3 axes x 2x3x3 edges each
        assert len(lat.pairs) == 54
        degrees = (lat.neighbours >= 0).sum(axis=1)
        coords = coords_of_ids(lat.ids, (3, 3, 3))
        on_face = (coords == 0).sum(axis=1) + (coords == 2).sum(axis=1)
        assert np.array_equal(degrees, 6 - on_face)

    def test_neighbours_symmetric_and_unit_steps(self):
        rng = np.random.default_rng(0)
        mask = random_mask(rng, (5, 4, 3))
        lat = Lattice.from_mask(mask)
        coords = coords_of_ids(lat.ids, mask.shape)
        links = set()
        for i in range(lat.n_sites):
            for j in lat.neighbours[i]:
                if j < 0:
                    continue
                step = np.abs(coords[i] - coords[j])
                assert step.sum() == 1 and step.max() == 1
                links.add((min(i, int(j)), max(i, int(j))))
                # symmetry: the reverse link exists in j's slot list
                assert i in lat.neighbours[j]
        from_pairs = {(int(a), int(b)) for a, b in lat.pairs}
        assert from_pairs == links
        assert (lat.pairs[:, 0] < lat.pairs[:, 1]).all()

    def test_colours_are_a_proper_two_colouring(self):
        rng = np.random.default_rng(1)
        mask = random_mask(rng, (4, 4, 4))
        lat = Lattice.from_mask(mask)
        coords = coords_of_ids(lat.ids, mask.shape)
        assert np.array_equal(lat.colours, coords.sum(axis=1) % 2)
        a, b = lat.pairs[:, 0], lat.pairs[:, 1]
        assert (lat.colours[a] != lat.colours[b]).all()

    def test_single_voxel_has_no_pairs(self):
        mask = np.zeros((2, 2, 2), dtype=bool)
        mask[1, 0, 1] = True
        lat = Lattice.from_mask(mask)
        assert lat.n_sites == 1
        assert (lat.neighbours == -1).all()
        assert len(lat.pairs) == 0

    def test_rejects_empty_or_non3d_mask(self):
        with pytest.raises(DataError, match="no voxels"):
            Lattice.from_mask(np.zeros((2, 2, 2), dtype=bool))
        with pytest.raises(DataError, match="3D"):
            Lattice.from_mask(np.ones((2, 2), dtype=bool))

    def test_from_volume_matches_from_mask(self):
        rng = np.random.default_rng(2)
        dims = (3, 4, 2)
        mask = random_mask(rng, dims)
        data = np.zeros((2, *dims), dtype=np.float32)
        data[0] = mask
        data[1] = rng.normal(size=dims)
        vol = Volume(header=VolumeHeader(dims=dims, channels=(MASK_CHANNEL, "CT")),
                     data=data)
        lat_v = Lattice.from_volume(vol)
        lat_m = Lattice.from_mask(mask)
        assert np.array_equal(lat_v.ids, lat_m.ids)
        assert np.array_equal(lat_v.neighbours, lat_m.neighbours)
        assert np.array_equal(lat_v.ids, masked_voxel_ids(vol))

    def test_observations_align_with_lattice_ids(self):
        rng = np.random.default_rng(3)
        dims = (3, 3, 3)
        mask = random_mask(rng, dims)
        data = np.zeros((3, *dims), dtype=np.float32)
        data[0] = mask
        data[1] = rng.normal(size=dims)
        data[2] = rng.normal(size=dims)
        vol = Volume(header=VolumeHeader(dims=dims, channels=(MASK_CHANNEL, "CT", "T1")),
                     data=data)
        lat = Lattice.from_volume(vol)
        obs = observations_for_lattice(vol, lat)
        assert obs.shape == (lat.n_sites, 2)
        assert np.array_equal(obs, observations_at(vol, lat.ids))


class TestMrfParams:
    def test_alpha_zero_pin_enforced(self):
        rng = np.random.default_rng(4)
        comps = random_components(rng, 2, 2)
        with pytest.raises(DataError, match="alpha\\[0\\]"):
            MrfParams(alpha=[0.1, 0.0], beta=[0.0, 0.0], components=comps)

    def test_length_mismatches_rejected(self):
        rng = np.random.default_rng(5)
        comps = random_components(rng, 2, 2)
        with pytest.raises(DataError, match="beta"):
            MrfParams(alpha=[0.0, 1.0], beta=[0.0], components=comps)
        with pytest.raises(DataError, match="components"):
            MrfParams(alpha=[0.0, 1.0, 2.0], beta=[0.0, 0.0, 0.0], components=comps)

    def test_non_finite_potentials_rejected(self):
        rng = np.random.default_rng(6)
        comps = random_components(rng, 2, 2)
        with pytest.raises(DataError, match="finite"):
            MrfParams(alpha=[0.0, np.inf], beta=[0.0, 0.0], components=comps)

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(7)
        params = random_field_params(rng, 3, 2)
        doc = params.to_dict()
        assert doc["family"] == "hmrf"
        back = MrfParams.from_dict(doc)
        assert np.allclose(back.alpha, params.alpha)
        assert np.allclose(back.beta, params.beta)
        for c0, c1 in zip(params.components, back.components):
            assert np.allclose(c0.mu, c1.mu)
            assert np.allclose(c0.sigma, c1.sigma)


def naive_energy(labels, coords, alpha, beta):
    """Quadratic-time reference: scan every voxel pair for adjacency."""
    h = sum(alpha[z] for z in labels)
    m = len(labels)
    for i in range(m):
        for j in range(i + 1, m):
            if np.abs(coords[i] - coords[j]).sum() == 1:
                if labels[i] == labels[j]:
                    h += beta[labels[i]]
    return h


class TestEnergy:
    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(8)
        for trial in range(5):
            mask = random_mask(rng, (4, 3, 3))
            lat = Lattice.from_mask(mask)
            coords = coords_of_ids(lat.ids, mask.shape)
            alpha = rng.normal(size=3)
            beta = rng.normal(size=3)
            labels = rng.integers(0, 3, size=lat.n_sites)
            h = energy(labels, lat, alpha, beta)
            assert abs(h - naive_energy(labels, coords, alpha, beta)) < 1e-9

    def test_single_site_is_alpha_only(self):
        mask = np.zeros((2, 2, 2), dtype=bool)
        mask[0, 1, 0] = True
        lat = Lattice.from_mask(mask)
        assert energy([1], lat, np.array([0.0, 2.5]), np.array([9.0, 9.0])) == 2.5

    def test_label_validation(self):
        lat = Lattice.from_mask(np.ones((2, 2, 2), dtype=bool))
        with pytest.raises(DataError, match="labels"):
            energy([0, 1], lat, np.zeros(2), np.zeros(2))
        with pytest.raises(DataError, match="lie in"):
            energy(np.full(8, 5), lat, np.zeros(2), np.zeros(2))


class TestExactPosterior:
    def test_zero_beta_equals_mixture_responsibilities(self):
        rng = np.random.default_rng(9)
        mask = np.ones((2, 2, 2), dtype=bool)
        lat = Lattice.from_mask(mask)
        comps = random_components(rng, 3, 2)
        alpha = np.array([0.0, 0.4, -0.7])
        field = MrfParams(alpha=alpha, beta=np.zeros(3), components=comps)
        mix = GmmParams(weights=softmax_neg(alpha), components=comps)
        obs = rng.normal(size=(8, 2), scale=2.0)
        w_field = exact_posterior(field, obs, lat).weights
        w_mix = responsibilities(mix, obs).weights
        assert np.abs(w_field - w_mix).max() < 1e-12

    def test_rows_normalized_and_ids_match(self):
        rng = np.random.default_rng(10)
        mask = random_mask(rng, (2, 2, 2), fraction=0.8)
        lat = Lattice.from_mask(mask)
        params = random_field_params(rng, 2, 2)
        obs = rng.normal(size=(lat.n_sites, 2))
        pw = exact_posterior(params, obs, lat)
        assert np.array_equal(pw.voxel_ids, lat.ids)
        assert np.abs(pw.weights.sum(axis=1) - 1.0).max() < 1e-12
        assert (pw.weights >= 0).all()

    def test_negative_beta_pulls_neighbours_together(self):
        # two sites sharing one face, observations leaning opposite ways:
        # coupling must pull each marginal towards its neighbour's class
        mask = np.zeros((2, 1, 1), dtype=bool)
        mask[:, 0, 0] = True
        lat = Lattice.from_mask(mask)
        comps = [
            GaussianComponent(mu=np.array([-1.0, -1.0]), sigma=np.eye(2)),
            GaussianComponent(mu=np.array([1.0, 1.0]), sigma=np.eye(2)),
        ]
        obs = np.array([[-0.3, -0.3], [0.3, 0.3]])
        free = MrfParams(alpha=np.zeros(2), beta=np.zeros(2), components=comps)
        tied = MrfParams(alpha=np.zeros(2), beta=np.full(2, -2.0), components=comps)
        w_free = exact_posterior(free, obs, lat).weights
        w_tied = exact_posterior(tied, obs, lat).weights
        assert w_tied[0, 1] > w_free[0, 1]
        assert w_tied[1, 0] > w_free[1, 0]

        # hand enumeration of the four configurations confirms that the
        # exact marginals carry the same joint disagreement drop
        def marginals(params):
            loge = resolve_emissions(params.components, obs, "joint")
            lps = np.empty((2, 2))
            for z0 in (0, 1):
                for z1 in (0, 1):
                    lp = loge[0, z0] + loge[1, z1]
                    if z0 == z1:
                        lp -= params.beta[z0]
                    lps[z0, z1] = lp
            p = np.exp(lps - logsumexp(lps))
            return np.stack([p.sum(axis=1), p.sum(axis=0)])

        assert np.abs(marginals(tied) - w_tied).max() < 1e-12
        assert np.abs(marginals(free) - w_free).max() < 1e-12

    def test_enumeration_size_guard(self):
        rng = np.random.default_rng(12)
        lat = Lattice.from_mask(np.ones((3, 3, 3), dtype=bool))
        params = random_field_params(rng, 3, 2)
        with pytest.raises(DataError, match="enumeration"):
            exact_posterior(params, rng.normal(size=(27, 2)), lat)


class TestGibbs:
    def test_marginals_match_enumeration_on_tiny_lattice(self):
        rng = np.random.default_rng(13)
        lat = Lattice.from_mask(np.ones((2, 2, 2), dtype=bool))
        comps = random_components(rng, 2, 2, mu_spread=1.5)
        params = MrfParams(alpha=np.array([0.0, 0.3]), beta=np.array([-0.4, -0.4]),
                           components=comps)
        obs = rng.normal(size=(8, 2))
        exact = exact_posterior(params, obs, lat).weights
        sampled = gibbs_posterior(params, obs, lat, burn_in=300, n_samples=6000,
                                  seed=21).weights
        assert np.abs(sampled - exact).max() < 0.03

    def test_posterior_deterministic_given_seed(self):
        rng = np.random.default_rng(14)
        mask = random_mask(rng, (3, 3, 3))
        lat = Lattice.from_mask(mask)
        params = random_field_params(rng, 2, 2)
        obs = rng.normal(size=(lat.n_sites, 2))
        a = gibbs_posterior(params, obs, lat, burn_in=20, n_samples=50, seed=5)
        b = gibbs_posterior(params, obs, lat, burn_in=20, n_samples=50, seed=5)
        c = gibbs_posterior(params, obs, lat, burn_in=20, n_samples=50, seed=6)
        assert np.array_equal(a.weights, b.weights)
        assert not np.array_equal(a.weights, c.weights)

    def test_incremental_energy_trace_is_exact(self):
        # dyadic potentials make every partial sum exactly representable,
        # so the incrementally tracked energy must equal a recomputation
        rng = np.random.default_rng(15)
        mask = random_mask(rng, (4, 4, 3))
        lat = Lattice.from_mask(mask)
        alpha = np.array([0.0, 0.5, -0.25])
        beta = np.array([-0.5, 0.25, 0.75])
        init = rng.integers(0, 3, size=lat.n_sites)
        run = run_gibbs(alpha, beta, lat, None, burn_in=0, n_samples=6,
                        rng=np.random.default_rng(99), init_labels=init,
                        track_energy=True, keep_history=True)
        assert run.energy_trace.shape == (7,)
        assert run.energy_trace[0] == energy(init, lat, alpha, beta)
        for s in range(6):
            recomputed = energy(run.label_history[s].astype(np.int64), lat, alpha, beta)
            assert run.energy_trace[s + 1] == recomputed
        assert np.array_equal(run.label_history[-1], run.final_labels)

    def test_strongly_negative_beta_aligns_the_field(self):
        rng = np.random.default_rng(16)
        lat = Lattice.from_mask(np.ones((8, 8, 8), dtype=bool))
        run = run_gibbs(np.zeros(2), np.full(2, -2.0), lat, None, burn_in=400,
                        n_samples=1, rng=np.random.default_rng(3))
        counts = np.bincount(run.final_labels, minlength=2)
        assert counts.max() / lat.n_sites > 0.9

    def test_prior_sampling_with_zero_potentials_is_uniform(self):
        lat = Lattice.from_mask(np.ones((6, 6, 6), dtype=bool))
        run = run_gibbs(np.zeros(2), np.zeros(2), lat, None, burn_in=5,
                        n_samples=200, rng=np.random.default_rng(17))
        assert abs(run.marginals[:, 0].mean() - 0.5) < 0.02

    def test_input_validation(self):
        lat = Lattice.from_mask(np.ones((2, 2, 2), dtype=bool))
        rng = np.random.default_rng(0)
        with pytest.raises(DataError, match="emission matrix"):
            run_gibbs(np.zeros(2), np.zeros(2), lat, np.zeros((3, 2)), 1, 1, rng)
        with pytest.raises(DataError, match="non-negative"):
            run_gibbs(np.zeros(2), np.zeros(2), lat, None, -1, 1, rng)
        with pytest.raises(DataError, match=">= 1"):
            params = MrfParams(alpha=np.zeros(2), beta=np.zeros(2),
                               components=random_components(rng, 2, 2))
            gibbs_posterior(params, np.zeros((8, 2)), lat, burn_in=0, n_samples=5)


def naive_pll(alpha, beta, weights, lattice):
    """Loop-based reference for the mean-field pseudo-log-likelihood."""
    K = len(alpha)
    value = 0.0
    for u in range(lattice.n_sites):
        c = np.zeros(K)
        for v in lattice.neighbours[u]:
            if v >= 0:
                c += weights[v]
        eta = -np.asarray(alpha) - np.asarray(beta) * c
        value += float(weights[u] @ (eta - logsumexp(eta)))
    return value


class TestPseudoLogLikelihood:
    def test_value_matches_naive_loops(self):
        rng = np.random.default_rng(18)
        mask = random_mask(rng, (4, 3, 3))
        lat = Lattice.from_mask(mask)
        K = 3
        alpha = np.concatenate([[0.0], rng.normal(size=K - 1)])
        beta = rng.normal(size=K, scale=0.5)
        w = rng.dirichlet(np.ones(K), size=lat.n_sites)
        value, _, _ = pseudo_log_likelihood(alpha, beta, w, lat)
        assert abs(value - naive_pll(alpha, beta, w, lat)) < 1e-10

    @pytest.mark.parametrize("K", [2, 3])
    def test_gradient_and_hessian_match_finite_differences(self, K):
        rng = np.random.default_rng(19 + K)
        mask = random_mask(rng, (3, 3, 3))
        lat = Lattice.from_mask(mask)
        alpha = np.concatenate([[0.0], rng.normal(size=K - 1, scale=0.5)])
        beta = rng.normal(size=K, scale=0.5)
        w = rng.dirichlet(np.ones(K), size=lat.n_sites)

        def unpack(theta):
            return np.concatenate([[0.0], theta[: K - 1]]), theta[K - 1 :]

        def f(theta):
            a, b = unpack(theta)
            return pseudo_log_likelihood(a, b, w, lat)[0]

        def g(theta):
            a, b = unpack(theta)
            return pseudo_log_likelihood(a, b, w, lat)[1]

        theta0 = np.concatenate([alpha[1:], beta])
        value, grad, hess = pseudo_log_likelihood(alpha, beta, w, lat)
        h = 1e-5
        for i in range(len(theta0)):
            e = np.zeros_like(theta0)
            e[i] = h
            fd = (f(theta0 + e) - f(theta0 - e)) / (2 * h)
            assert abs(grad[i] - fd) < 1e-4 * max(1.0, abs(fd))
            fd_col = (g(theta0 + e) - g(theta0 - e)) / (2 * h)
            assert np.abs(hess[:, i] - fd_col).max() < 1e-4 * max(1.0, np.abs(fd_col).max())
        assert np.abs(hess - hess.T).max() < 1e-10

    def test_weights_shape_guard(self):
        lat = Lattice.from_mask(np.ones((2, 2, 2), dtype=bool))
        with pytest.raises(DataError, match="weights shape"):
            pseudo_log_likelihood(np.zeros(2), np.zeros(2), np.ones((3, 2)), lat)


class TestEmGradientFit:
    def test_frozen_beta_reproduces_mixture_em(self):
        rng = np.random.default_rng(22)
        lat = Lattice.from_mask(np.ones((4, 4, 4), dtype=bool))
        comps = [
            GaussianComponent(mu=np.array([-3.0, -1.0]), sigma=random_spd(rng, 2)),
            GaussianComponent(mu=np.array([3.0, 1.0]), sigma=random_spd(rng, 2)),
        ]
        z = rng.integers(0, 2, size=lat.n_sites)
        obs = np.array([rng.multivariate_normal(comps[k].mu, comps[k].sigma) for k in z])

        init_mix = kmeans_init(obs, 2, seed=0)
        init_field = MrfParams(alpha=weights_to_alpha(init_mix.weights),
                               beta=np.zeros(2), components=init_mix.components)
        n_steps = 6
        fit_mix, _ = fit_gmm(init_mix, obs, tol=0.0, max_iter=n_steps)
        fit_field, report = em_gradient_fit(init_field, obs, lat, tol=0.0,
                                            max_iter=n_steps, freeze_beta=True)
        assert report.n_iter == n_steps
        assert np.array_equal(fit_field.beta, np.zeros(2))
        assert np.abs(softmax_neg(fit_field.alpha) - fit_mix.weights).max() < 1e-6
        for cf, cm in zip(fit_field.components, fit_mix.components):
            assert np.abs(cf.mu - cm.mu).max() < 1e-6
            assert np.abs(cf.sigma - cm.sigma).max() < 1e-6

    def test_frozen_beta_rejects_nonzero_init(self):
        rng = np.random.default_rng(23)
        lat = Lattice.from_mask(np.ones((2, 2, 2), dtype=bool))
        params = MrfParams(alpha=np.zeros(2), beta=np.array([-0.1, 0.0]),
                           components=random_components(rng, 2, 2))
        with pytest.raises(DataError, match="freeze_beta"):
            em_gradient_fit(params, rng.normal(size=(8, 2)), lat, freeze_beta=True)

    def test_observation_count_guard(self):
        rng = np.random.default_rng(24)
        lat = Lattice.from_mask(np.ones((2, 2, 2), dtype=bool))
        params = MrfParams(alpha=np.zeros(2), beta=np.zeros(2),
                           components=random_components(rng, 2, 2))
        with pytest.raises(DataError, match="lattice sites"):
            em_gradient_fit(params, rng.normal(size=(5, 2)), lat)

    def test_recovers_clustered_field(self):
        # subcritical coupling keeps both classes alive while still leaving
        # a clear spatial signal for the potential estimates to latch onto
        rng = np.random.default_rng(25)
        lat = Lattice.from_mask(np.ones((10, 10, 10), dtype=bool))
        true_beta = -0.35
        field = run_gibbs(np.zeros(2), np.full(2, true_beta), lat, None,
                          burn_in=150, n_samples=1, rng=rng)
        z = field.final_labels
        mus = [np.array([-4.0, -1.5]), np.array([4.0, 1.5])]
        obs = np.stack([rng.multivariate_normal(mus[k], np.eye(2)) for k in z])

        init_mix = kmeans_init(obs, 2, seed=0)
        init = MrfParams(alpha=weights_to_alpha(init_mix.weights),
                         beta=np.zeros(2), components=init_mix.components)
        fitted, report = em_gradient_fit(init, obs, lat, tol=1e-3, max_iter=25,
                                         burn_in=30, n_samples=60, seed=7)
        order = np.argsort([c.mu[0] for c in fitted.components])
        mu_hat = np.stack([fitted.components[k].mu for k in order])
        assert np.abs(mu_hat - np.stack(mus)).max() < 0.5
        # clustering direction recovered: both pair potentials negative
        assert (fitted.beta < 0).all()
        assert len(report.loglik_trace) == report.n_iter

    def test_multi_head_pooling_matches_concatenation_for_frozen_beta(self):
        # with beta frozen the lattice structure is irrelevant, so fitting
        # two heads jointly must equal fitting their pooled observations
        rng = np.random.default_rng(26)
        lat_a = Lattice.from_mask(np.ones((3, 3, 3), dtype=bool))
        lat_b = Lattice.from_mask(np.ones((2, 3, 3), dtype=bool))
        obs_a = rng.normal(size=(27, 2)) + np.array([2.0, 0.0])
        obs_b = rng.normal(size=(18, 2)) - np.array([2.0, 0.0])
        pooled = np.concatenate([obs_a, obs_b])

        init_mix = kmeans_init(pooled, 2, seed=1)
        init = MrfParams(alpha=weights_to_alpha(init_mix.weights),
                         beta=np.zeros(2), components=init_mix.components)
        multi, _ = em_gradient_fit(init, [obs_a, obs_b], [lat_a, lat_b],
                                   tol=0.0, max_iter=4, freeze_beta=True)
        merged_lat = Lattice.from_mask(np.ones((5, 3, 3), dtype=bool))
        single, _ = em_gradient_fit(init, pooled, merged_lat,
                                    tol=0.0, max_iter=4, freeze_beta=True)
        assert np.abs(multi.alpha - single.alpha).max() < 1e-9
        for cm, cs in zip(multi.components, single.components):
            assert np.abs(cm.mu - cs.mu).max() < 1e-9
            assert np.abs(cm.sigma - cs.sigma).max() < 1e-9


class TestPredict:
    def test_exact_prediction_is_weighted_conditional_mean(self):
        rng = np.random.default_rng(27)
        lat = Lattice.from_mask(np.ones((2, 2, 2), dtype=bool))
        params = random_field_params(rng, 2, 3, beta_scale=0.3)
        x = rng.normal(size=(8, 2))
        pred = predict_ct_mrf(params, x, lat, method="exact")
        pw = exact_posterior(params, x, lat, mode="x_only")
        expected = np.zeros(8)
        for k, comp in enumerate(params.components):
            expected += pw.weights[:, k] * np.array(
                [conditional_mean_y(comp, xi) for xi in x]
            )
        assert np.abs(pred.values - expected).max() < 1e-10
        assert np.array_equal(pred.voxel_ids, lat.ids)

    def test_gibbs_prediction_approaches_exact(self):
        rng = np.random.default_rng(28)
        lat = Lattice.from_mask(np.ones((2, 2, 2), dtype=bool))
        comps = [
            GaussianComponent(mu=np.array([-30.0, -1.0]),
                              sigma=np.diag([4.0, 1.0])),
            GaussianComponent(mu=np.array([40.0, 1.5]),
                              sigma=np.diag([4.0, 1.0])),
        ]
        params = MrfParams(alpha=np.array([0.0, 0.2]), beta=np.full(2, -0.4),
                           components=comps)
        x = rng.normal(size=(8, 1), scale=1.5)
        exact = predict_ct_mrf(params, x, lat, method="exact").values
        sampled = predict_ct_mrf(params, x, lat, burn_in=300, n_samples=5000,
                                 seed=11, method="gibbs").values
        # value scale is the 70-unit mu_Y gap; demand agreement well inside it
        assert np.abs(sampled - exact).max() < 1.5

    def test_unknown_method_rejected(self):
        rng = np.random.default_rng(29)
        lat = Lattice.from_mask(np.ones((2, 2, 2), dtype=bool))
        params = random_field_params(rng, 2, 2)
        with pytest.raises(DataError, match="unknown method"):
            predict_ct_mrf(params, rng.normal(size=(8, 1)), lat, method="mean-field")
