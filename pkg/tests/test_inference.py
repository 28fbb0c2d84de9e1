import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idbc.gp import (
    BasisConfig,
    BetaPrior,
    ModelHyperparams,
    TrainingData,
    assemble_joint_moments,
    beta_conditional,
    cov_matrix,
)
from idbc.inference import (
    iact,
    leaf_counts,
    map_theta,
    map_tree,
    mixture_from_components,
    mixture_quantile,
    posterior_mean_theta,
    predictive_mixture,
    predictive_moments,
    rmspe_values,
    submodel_probs,
    tree_key,
)
from idbc.partition import CalibrationState, Leaf, Split, ThetaLayout
from idbc.rjmcmc import ChainSample
from oracles import random_instance


def chain(calibs, hp=None):
    hp = hp or ModelHyperparams.default(1, 1)
    return [ChainSample(i, c, hp, 0.0, 0.0) for i, c in enumerate(calibs)]


def null_calib(*coef, layout=None):
    layout = layout or ThetaLayout(len(coef))
    return CalibrationState(layout, (Leaf(coef),))


# -- autocorrelation time ---------------------------------------------------------


def test_iact_white_noise():
    x = np.random.default_rng(0).standard_normal(10_000)
    assert iact(x) == pytest.approx(1.0, abs=0.2)


def test_iact_ar1():
    rng = np.random.default_rng(1)
    rho, n = 0.9, 100_000
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - rho**2)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    assert iact(x) == pytest.approx((1 + rho) / (1 - rho), rel=0.3)


def test_iact_constant_and_short():
    assert iact(np.full(20, 0.4)) == 1.0
    with pytest.raises(ValueError):
        iact(np.arange(5.0))


# -- estimators -------------------------------------------------------------------


def test_identical_samples_have_zero_error():
    est = posterior_mean_theta(chain([null_calib(0.3)] * 20), [[0.5]])
    assert est.mean[0] == 0.3
    assert est.std_error[0] == 0.0


def test_two_value_chain_mean():
    est = posterior_mean_theta(chain([null_calib(0.2), null_calib(0.4)]), [[0.5]])
    assert est.mean[0] == pytest.approx(0.3, abs=1e-15)


def test_fixed_tree_estimate_is_coefficient_mean():
    rng = np.random.default_rng(2)
    coefs = rng.random((200, 2))
    calibs = [CalibrationState(ThetaLayout(1), (Split(0, 0.5, Leaf((a,)), Leaf((b,))),)) for a, b in coefs]
    est = posterior_mean_theta(chain(calibs), [[0.7]])
    assert est.mean[0] == np.mean(coefs[:, 1])
    draws = coefs[:, 1]
    assert est.std_error[0] == pytest.approx(math.sqrt(draws.var() * iact(draws) / 200), rel=1e-12)
    assert est.histograms[0][0].sum() == 200
    assert len(est.histograms[0][0]) >= 50


def test_map_theta_of_repeated_sample():
    np.testing.assert_array_equal(map_theta(chain([null_calib(0.25, 0.75)] * 5), [[0.1, 0.2]]), [0.25, 0.75])


def test_map_theta_continuous_mode():
    rng = np.random.default_rng(3)
    vals = np.concatenate([rng.normal(0.3, 0.01, 900), rng.uniform(0, 1, 300)])
    got = map_theta(chain([null_calib(v) for v in np.clip(vals, 0.001, 0.999)]), [[0.5]])
    assert got[0] == pytest.approx(0.3, abs=0.02)


def _tree_a(c=0.1):
    return Split(0, 0.5, Leaf((c,)), Leaf((0.9,)))


def _tree_b(c=0.1):
    return Split(0, 0.5, Split(0, 0.25, Leaf((c,)), Leaf((0.5,))), Leaf((0.9,)))


def test_map_tree_majority():
    calibs = [CalibrationState(ThetaLayout(1), (_tree_a(0.1 + 0.01 * i),)) for i in range(6)]
    calibs += [CalibrationState(ThetaLayout(1), (_tree_b(),)) for _ in range(4)]
    best = map_tree(chain(calibs[::-1]))
    assert tree_key(best) == tree_key(_tree_a())
    assert best.left.coef[0] == pytest.approx(np.mean([0.1 + 0.01 * i for i in range(6)]))


def test_map_tree_tie_prefers_smaller():
    calibs = [CalibrationState(ThetaLayout(1), (t,)) for t in (_tree_b(), _tree_a(), _tree_b(), _tree_a())]
    assert tree_key(map_tree(chain(calibs))) == tree_key(_tree_a())
    same = [CalibrationState(ThetaLayout(1), (t,)) for t in (_tree_a(), Split(0, 0.4, Leaf((0.1,)), Leaf((0.2,))))]
    assert tree_key(map_tree(chain(same))) == tree_key(_tree_a())


def test_submodel_probs_hand_chain():
    layout = ThetaLayout(0, n_submodels=2)
    calibs = [null_calib(v, layout=layout) for v in (1.0, 0.0, 1.0, 0.0)]
    np.testing.assert_allclose(submodel_probs(chain(calibs), [[0.5]]).probs, [0.5, 0.5])
    all_second = [null_calib(0.0, layout=layout)] * 12
    np.testing.assert_array_equal(submodel_probs(chain(all_second), [[0.5]]).probs, [0.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=10, max_size=60))
def test_submodel_probs_coherent(levels):
    layout = ThetaLayout(1, n_submodels=4)
    blocks = {0: (1.0, 0.0, 0.0), 1: (0.0, 1.0, 0.0), 2: (0.0, 0.0, 1.0), 3: (0.0, 0.0, 0.0)}
    calibs = [null_calib(0.5, *blocks[k], layout=layout) for k in levels]
    p = submodel_probs(chain(calibs), [[0.5]]).probs
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p, np.bincount(levels, minlength=4) / len(levels))


def test_submodel_probs_needs_two_models():
    with pytest.raises(ValueError):
        submodel_probs(chain([null_calib(0.5)]), [[0.5]])


def test_leaf_counts():
    calibs = [CalibrationState(ThetaLayout(1), (t,)) for t in (Leaf((0.5,)), _tree_a(), _tree_b())]
    np.testing.assert_array_equal(leaf_counts(chain(calibs)), [1, 2, 3])


# -- predictive emulator ------------------------------------------------------------


def _constant_theta_instance(rng, **kw):
    data, theta, hp, basis = random_instance(rng, **kw)
    t0 = theta[0]
    theta_f = np.tile(t0, (data.n, 1))
    return data, t0, theta_f, hp, basis


def _direct_conditioning(x, data, t0, theta_f, hp, basis):
    """Joint Gaussian of (zeta(x), z) with beta integrated under its proper prior, then conditioned."""
    jm = assemble_joint_moments(data, theta_f, hp, basis)
    d = jm.H.shape[1]
    b, S = hp.beta_prior.arrays(d)
    Sb = S / hp.beta_prior.xi
    x = np.atleast_2d(x)
    tx = np.tile(t0, (x.shape[0], 1))
    phi = np.concatenate([hp.phi_sx, hp.phi_st])
    px = np.hstack([x, tx])
    v = cov_matrix(px, np.hstack([data.field_inputs, theta_f]), hp.tau_s, phi)
    kxx = cov_matrix(px, px, hp.tau_s, phi)
    if basis.has_discrepancy:
        v = v + cov_matrix(x, data.field_inputs, hp.tau_d, hp.phi_d)
        kxx = kxx + cov_matrix(x, x, hp.tau_d, hp.phi_d)
    if data.m:
        v = np.hstack([v, cov_matrix(px, np.hstack([data.sim_inputs, data.sim_params]), hp.tau_s, phi)])
    h = np.hstack([basis.sim_basis(x, tx), basis.discrepancy_basis(x)])
    Czz = jm.Sigma + jm.H @ Sb @ jm.H.T
    Cxz = v + h @ Sb @ jm.H.T
    Cxx = kxx + h @ Sb @ h.T
    gain = np.linalg.solve(Czz, Cxz.T).T
    mean = h @ b + gain @ (data.z - jm.H @ b)
    var = np.diag(Cxx - gain @ Cxz.T)
    return mean, var


def test_reuse_matches_direct_conditioning():
    rng = np.random.default_rng(4)
    for _ in range(25):
        data, t0, theta_f, hp, basis = _constant_theta_instance(rng, max_points=6)
        sample = chain([CalibrationState(ThetaLayout(len(t0)), (Leaf(tuple(t0)),))], hp)[0]
        x = rng.random((3, data.q))
        mu, var = predictive_moments(x, sample, data, basis)
        mu_ref, var_ref = _direct_conditioning(x, data, t0, theta_f, hp, basis)
        np.testing.assert_allclose(mu, mu_ref, rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(var, var_ref, rtol=1e-8, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_predictive_variance_bounded_by_prior(seed):
    rng = np.random.default_rng(seed)
    data, t0, theta_f, hp, basis = _constant_theta_instance(rng, max_points=6)
    sample = chain([CalibrationState(ThetaLayout(len(t0)), (Leaf(tuple(t0)),))], hp)[0]
    x = rng.random((4, data.q))
    _, var = predictive_moments(x, sample, data, basis)
    d = sum(basis.dims(data.q))
    b, S = hp.beta_prior.arrays(d)
    h = np.hstack([basis.sim_basis(x), basis.discrepancy_basis(x)])
    bound = hp.tau_s + (hp.tau_d if basis.has_discrepancy else 0.0) + np.einsum("ij,jk,ik->i", h, S / hp.beta_prior.xi, h)
    assert np.all(var >= 0)
    assert np.all(var <= bound + 1e-8)


def test_noiseless_interpolation():
    rng = np.random.default_rng(5)
    X = rng.random((4, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1]
    data = TrainingData(X, y, rng.random((3, 2)), rng.random((3, 1)), rng.normal(size=3))
    hp = ModelHyperparams.default(2, 1, sigma2_y=1e-12, sigma2_eta=1e-12, phi_sx=(0.3, 0.4))
    basis = BasisConfig(discrepancy=None)
    sample = chain([null_calib(0.4)], hp)[0]
    mu, var = predictive_moments(X, sample, data, basis)
    np.testing.assert_allclose(mu, y, atol=1e-6)
    np.testing.assert_allclose(var, 0.0, atol=1e-6)


def test_far_field_reverts_to_basis():
    X = np.array([[0.0], [0.1]])
    data = TrainingData(X, np.array([1.0, 1.4]), np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))
    # two constant bases are only jointly identified through a proper prior
    bp = BetaPrior((0.0, 0.0), ((1.0, 0.0), (0.0, 1.0)), 1.0)
    hp = ModelHyperparams.default(
        1, 1, tau_s=0.7, tau_d=0.2, sigma2_y=0.01, phi_sx=(1e-15,), phi_d=(1e-15,), beta_prior=bp
    )
    basis = BasisConfig()
    sample = chain([null_calib(0.5)], hp)[0]
    mu, var = predictive_moments([[1.0]], sample, data, basis)
    jm = assemble_joint_moments(data, np.full((2, 1), 0.5), hp, basis)
    bhat, W = beta_conditional(data.z, jm, hp)
    h = np.ones(2)
    assert mu[0] == pytest.approx(h @ bhat, abs=1e-10)
    assert var[0] == pytest.approx(0.7 + 0.2 + h @ W @ h, rel=1e-10)


def test_one_point_kriging_by_hand():
    tau, s2, phi_x, phi_t = 1.3, 0.2, 0.4, 0.6
    x1, y1, t0, x = 0.2, 0.8, 0.5, 0.7
    data = TrainingData(np.array([[x1]]), np.array([y1]), np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))
    hp = ModelHyperparams.default(1, 1, tau_s=tau, sigma2_y=s2, phi_sx=(phi_x,), phi_st=(phi_t,))
    sample = chain([null_calib(t0)], hp)[0]
    mu, var = predictive_moments([[x]], sample, data, BasisConfig(discrepancy=None))
    v = tau * phi_x ** (4 * (x - x1) ** 2)
    k = tau + s2
    # flat prior: beta_hat = y1 and W = k; the GLS correction term is (1 - v/k)^2 k
    assert mu[0] == pytest.approx(y1, abs=1e-12)
    assert var[0] == pytest.approx(tau - v**2 / k + (1 - v / k) ** 2 * k, rel=1e-10)


# -- mixtures -----------------------------------------------------------------------


def test_two_component_mixture():
    mix = mixture_from_components(np.array([[0.0], [2.0]]), np.array([[1.0], [1.0]]))
    assert mix.mean[0] == 1.0
    assert mix.variance[0] == pytest.approx(2.0, abs=1e-15)
    assert mix.quantiles[0.5][0] == pytest.approx(1.0, abs=1e-9)
    assert mix.quantiles[0.05][0] == pytest.approx(2.0 - mix.quantiles[0.95][0], abs=1e-9)


def test_mixture_quantile_of_single_normal():
    assert mixture_quantile(0.975, np.array([1.0]), np.array([4.0])) == pytest.approx(1.0 + 2 * 1.959963984540054, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_law_of_total_variance(seed):
    rng = np.random.default_rng(seed)
    mus = rng.normal(size=(int(rng.integers(1, 20)), 3))
    vs = rng.uniform(0.0, 2.0, mus.shape)
    mix = mixture_from_components(mus, vs, probs=())
    ev = vs.mean(axis=0)
    vm = ((mus - mus.mean(axis=0)) ** 2).mean(axis=0)
    np.testing.assert_allclose(mix.variance, ev + vm, rtol=0, atol=1e-10)


def test_single_sample_mixture_equals_moments():
    rng = np.random.default_rng(6)
    data, t0, theta_f, hp, basis = _constant_theta_instance(rng, max_points=6)
    sample = chain([CalibrationState(ThetaLayout(len(t0)), (Leaf(tuple(t0)),))], hp)
    x = rng.random((2, data.q))
    mix = predictive_mixture(x, sample, data, basis)
    mu, var = predictive_moments(x, sample[0], data, basis)
    np.testing.assert_array_equal(mix.mean, mu)
    np.testing.assert_allclose(mix.variance, var, rtol=1e-14)


# -- prediction error ---------------------------------------------------------------


def test_rmspe_cases():
    truth = np.array([1.0, 2.0, 3.0])
    assert rmspe_values(truth, truth)[1] == 0.0
    per, avg = rmspe_values(np.full(3, 0.5), np.full(3, 2.0))
    np.testing.assert_allclose(per, 1.5)
    assert avg == 1.5
    # replicate errors are averaged in squares before the root
    per, _ = rmspe_values(np.array([[1.0], [3.0]]), np.array([2.0]))
    assert per[0] == pytest.approx(1.0)
    per, _ = rmspe_values(np.array([[2.0], [5.0]]), np.array([2.0]))
    assert per[0] == pytest.approx(math.sqrt(4.5))


def test_flat_prior_instance_builds():
    # the flat-prior path is exercised by the hand kriging case; a proper prior must also work
    bp = BetaPrior((0.0,), ((1.0,),), 2.0)
    data = TrainingData(np.array([[0.3]]), np.array([0.5]), np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))
    hp = ModelHyperparams.default(1, 1, beta_prior=bp)
    mu, var = predictive_moments([[0.3]], chain([null_calib(0.5)], hp)[0], data, BasisConfig(discrepancy=None))
    assert np.isfinite(mu[0]) and var[0] >= 0
