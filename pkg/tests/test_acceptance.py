"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line with the
measured quantity before asserting, so the run log doubles as a report.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest
import yaml
from scipy import stats

from idbc.bench import BENCH2_PROBE_TRUTH, bench2_unscale_t
from idbc.cli import BENCH1_PROBE, main, replicate_seeds, run_replicate
from idbc.gp import TrainingData, assemble_joint_moments, marginal_loglik
from idbc.links import LINK_KINDS, canonical_link, jacobian_term, split_values
from idbc.partition import ThetaLayout, TreePriorParams, TreeSpace, evaluate_theta, log_tree_prior, n_leaves
from idbc.rjmcmc import MoveConfig, Sampler
from oracles import finite_difference_jacobian, quadrature_marginal, random_instance
from reversibility import PAIR_MOVES, collect_pairs, small_sampler
from toy_model import ToySampler, joint_posterior, occupancy, total_variation
from trees import all_trees


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}")

    return emit


# -- 1. marginal likelihood vs quadrature -------------------------------------------


def test_marginal_likelihood_matches_quadrature(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        data, theta, hp, basis = random_instance(rng, max_points=6)
        jm = assemble_joint_moments(data, theta, hp, basis)
        ll = marginal_loglik(data.z, jm, hp)
        ref = quadrature_marginal(data.z, jm.H, jm.Sigma, hp.beta_prior)
        worst = max(worst, abs(ll - ref) / abs(ref))
    ok = worst < 1e-6
    report(1, ok, f"worst relative error {worst:.2e} over 20 instances (tol 1e-6)")
    assert ok


# -- 2. toy posterior by enumeration ----------------------------------------------

TOY_TARGETS = np.array([[0.3, 0.7, 0.7, 0.7], [0.6, 0.6, 0.6, 0.2]])


@pytest.mark.slow
@pytest.mark.parametrize(
    "scheme,targets,groups,noise",
    [("JPS", TOY_TARGETS[:1], None, 0.15), ("SPS", TOY_TARGETS, ((0,), (1,)), 0.06)],
)
def test_toy_chain_matches_enumeration(report, scheme, targets, groups, noise):
    prior = TreePriorParams()
    sampler = ToySampler(targets, noise, groups=groups, prior=prior)
    out = sampler.run(200_000, burn_in=1000, seed=11)
    tv = total_variation(occupancy(out.samples), joint_posterior(targets, noise, prior))
    ok = tv < 0.05
    report(2, ok, f"{scheme}: total variation {tv:.4f} (tol 0.05)")
    assert ok


# -- 3. reversibility and Jacobians -------------------------------------------------


@pytest.mark.slow
def test_reversibility_and_jacobians(report):
    details, ok = [], True
    for grid in (False, True):
        sampler = small_sampler(sps=True, grid=grid)
        for move in sorted(PAIR_MOVES):
            worst, mismatched = collect_pairs(sampler, move, 1000, seed=17)
            good = mismatched == 0 and worst < 1e-10
            ok &= good
            if not good:
                details.append(f"{move}{'/grid' if grid else ''}: worst {worst:.1e}, mismatched {mismatched}")
    rng = np.random.default_rng(5)
    worst_jac = 0.0
    for kind in LINK_KINDS:
        link = canonical_link(kind)
        for _ in range(200):
            s1, s2 = sorted(rng.uniform(0, 1, 2))
            s_star = float(rng.uniform(s1, s2))
            v0 = float(link.g_inv(rng.normal()))
            u = float(rng.uniform(-1, 1))

            def f(v):
                g1, g2 = split_values(link.g(v[0]), v[1], s1, s_star, s2)
                return np.array([link.g_inv(g1), link.g_inv(g2)])

            v1, v2 = f(np.array([v0, u]))
            fd = abs(np.linalg.det(finite_difference_jacobian(f, np.array([v0, u]))))
            worst_jac = max(worst_jac, abs(jacobian_term(v0, v1, v2, kind) - fd) / fd)
    ok &= worst_jac < 1e-6
    summary = "; ".join(details) or f"all {2 * len(PAIR_MOVES)} move/layout types within 1e-10"
    report(3, ok, f"{summary}; worst Jacobian relative error {worst_jac:.1e} (tol 1e-6)")
    assert ok


# -- 4. prior recovery ------------------------------------------------------------


@pytest.mark.slow
def test_prior_recovery(report):
    n = 8
    X = ((np.arange(n) + 0.5) / n)[:, None]
    data = TrainingData(X, np.zeros(n), np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))
    prior = TreePriorParams(0.95, 1.0, coef_a=2.0, coef_b=5.0)
    sampler = Sampler(
        data, ThetaLayout(1), tree_prior=prior, moves=MoveConfig(cov=0.0, noise=0.0),
        min_leaf=1, max_depth=2, use_likelihood=False,
    )
    out = sampler.run(410_000, burn_in=10_000, thin=40, seed=23)

    space = TreeSpace(X, min_leaf=1, max_depth=2)
    exact = Counter()
    for t in all_trees(space):
        exact[n_leaves(t)] += math.exp(log_tree_prior(t, prior, space))
    sizes = sorted(exact)
    observed = Counter(n_leaves(s.calib.trees[0]) for s in out.samples)
    obs = np.array([observed.get(k, 0) for k in sizes], dtype=float)
    expected = np.array([exact[k] for k in sizes]) * obs.sum()
    chi_p = stats.chisquare(obs, expected).pvalue

    coef = np.array([evaluate_theta(np.array([0.3]), s.calib)[0] for s in out.samples])
    ks_p = stats.kstest(coef, stats.beta(2.0, 5.0).cdf).pvalue
    ok = chi_p > 0.01 and ks_p > 0.01
    report(4, ok, f"leaf-count chi-square p={chi_p:.3f}, coefficient KS p={ks_p:.3f} on {coef.size} draws")
    assert ok


# -- 5. bench1 reproduction -------------------------------------------------------


@pytest.fixture(scope="module")
def bench1_runs():
    seeds = replicate_seeds(0, 3)
    return {
        scheme: [run_replicate("bench1", scheme, ds, cs, 20_000, 10_000, 20, r) for r, (ds, cs) in enumerate(seeds)]
        for scheme in ("SBC", "IDBC-JPS", "IDBC-SPS")
    }


@pytest.mark.slow
def test_bench1_probe_posterior(report, bench1_runs):
    assert np.allclose(BENCH1_PROBE[0], [0.5, 0.4])
    first = bench1_runs["IDBC-JPS"][0]
    mean, sd = first.probe_mean[0][0], first.probe_sd[0][0]
    ok = sd < 0.25 and abs(mean - 0.5) < 0.2
    report(5, ok, f"(a) JPS theta_1 at probe: mean {mean:.3f}, sd {sd:.3f} (need sd<0.25, |mean-0.5|<0.2)")
    assert ok


@pytest.mark.slow
def test_bench1_submodel_selection(report, bench1_runs):
    p = bench1_runs["IDBC-JPS"][0].submodel[1]
    ok = p > 0.5
    report(5, ok, f"(b) JPS P(sub-model 2) at probe {p:.3f} (need >0.5)")
    assert ok


@pytest.mark.slow
def test_bench1_rmspe_ordering(report, bench1_runs):
    avg = {k: float(np.mean([r.rmspe for r in v])) for k, v in bench1_runs.items()}
    ok = avg["IDBC-JPS"] < avg["SBC"] and avg["IDBC-SPS"] < avg["SBC"]
    report(5, ok, "(c) mean RMSPE " + ", ".join(f"{k} {v:.4f}" for k, v in avg.items()) + " (need JPS, SPS < SBC)")
    assert ok


# -- 6. bench2 region-wise recovery -----------------------------------------------


@pytest.mark.slow
def test_bench2_region_recovery(report):
    (ds, cs), = replicate_seeds(0, 1)
    idbc = run_replicate("bench2", "IDBC-JPS", ds, cs, 20_000, 10_000, 20)
    sbc = run_replicate("bench2", "SBC", ds, cs, 20_000, 10_000, 20)
    est = bench2_unscale_t(idbc.probe_mean[:, 0])
    sbc_est = float(bench2_unscale_t(sbc.probe_mean[0, 0]))
    idbc_ok = bool(np.all(np.abs(est - BENCH2_PROBE_TRUTH) < 0.5))
    sbc_fails = not bool(np.all(np.abs(sbc_est - BENCH2_PROBE_TRUTH) < 0.5))
    ok = idbc_ok and sbc_fails
    report(6, ok, f"IDBC probes {np.round(est, 3).tolist()} vs {BENCH2_PROBE_TRUTH.tolist()}; SBC single value {sbc_est:.3f}")
    assert ok


# -- 7. determinism ---------------------------------------------------------------


def test_chain_files_are_byte_identical(report, tmp_path):
    cfg = {
        "data": {"benchmark": "bench1", "n": 20, "m": 30, "seed": 8},
        "scheme": "IDBC-JPS",
        "mcmc": {"iterations": 200, "burn_in": 50, "seed": 9},
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    for name in ("a", "b"):
        assert main(["calibrate", "--config", str(path), "--out", str(tmp_path / name), "--quiet"]) == 0
    a = (tmp_path / "a" / "chain.jsonl").read_bytes()
    b = (tmp_path / "b" / "chain.jsonl").read_bytes()
    ok = a == b
    report(7, ok, f"two runs, {len(a)} bytes each, identical={ok}")
    assert ok
