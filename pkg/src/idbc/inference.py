"""Posterior summaries and the predictive emulator built from chain samples."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import optimize, stats

from .gp import BasisConfig, GaussianModel, ModelHyperparams, TrainingData, chol_factor, cov_matrix
from .gp import NumericalError, _solve
from .partition import Leaf, Split, contrast_level, evaluate_theta_many, leaves, n_leaves
from .rjmcmc import ChainSample, PosteriorSamples

CLIP_TOL = 1e-10


def _as_points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def _sample_list(samples) -> list[ChainSample]:
    out = list(samples.samples if isinstance(samples, PosteriorSamples) else samples)
    if not out:
        raise ValueError("no posterior samples")
    return out


def theta_draws(samples, x) -> np.ndarray:
    """``theta_x`` for every sample, shape ``(N, theta_dim)``."""
    x = _as_points(x)
    return np.vstack([evaluate_theta_many(x, s.calib)[0] for s in _sample_list(samples)])


# --------------------------------------------------------------------------
# autocorrelation
# --------------------------------------------------------------------------


def autocorrelation(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.ones(1)
    return acov / acov[0]


def iact(series) -> float:
    """Integrated autocorrelation time by the initial positive sequence rule.

    Consecutive autocorrelation pairs ``rho(2k) + rho(2k+1)`` are summed
    while positive; a constant series has IACT 1.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.shape[0] < 10:
        raise ValueError("iact needs a 1-D series of length >= 10")
    if np.ptp(x) == 0:
        return 1.0
    rho = autocorrelation(x)
    total = -1.0
    for k in range(0, rho.shape[0] - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        total += 2.0 * pair
    return max(total, 1e-12)


@dataclass(frozen=True, eq=False)
class ThetaEstimate:
    mean: np.ndarray
    std_error: np.ndarray
    iact: np.ndarray
    variance: np.ndarray
    histograms: tuple[tuple[np.ndarray, np.ndarray], ...]
    n_samples: int


def _std_error(draws: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    N = draws.shape[0]
    v = np.where(np.ptp(draws, axis=0) == 0, 0.0, draws.var(axis=0))
    rho = np.array([iact(col) if N >= 10 else 1.0 for col in draws.T])
    return np.sqrt(v * rho / N), rho, v


def _bins(col: np.ndarray) -> np.ndarray:
    lo, hi = float(col.min()), float(col.max())
    if hi == lo:
        return np.array([lo - 0.5, hi + 0.5])
    iqr = float(np.subtract(*np.percentile(col, [75, 25])))
    n_fd = math.ceil((hi - lo) / (2.0 * iqr * col.shape[0] ** (-1 / 3))) if iqr > 0 else 50
    return np.linspace(lo, hi, max(50, n_fd) + 1)


def posterior_mean_theta(samples, x) -> ThetaEstimate:
    """Quadratic-loss estimate of ``theta_x`` with IACT-inflated standard error."""
    draws = theta_draws(samples, x)
    se, rho, v = _std_error(draws)
    hists = tuple(np.histogram(col, bins=_bins(col)) for col in draws.T)
    # constant coordinates report their value exactly rather than a rounded average
    mean = np.where(np.ptp(draws, axis=0) == 0, draws[0], draws.mean(axis=0))
    return ThetaEstimate(mean, se, rho, v, hists, draws.shape[0])


def map_theta(samples, x) -> np.ndarray:
    """Per-coordinate mode of the marginal posterior of ``theta_x``.

    Coordinates taking at most 50 distinct values (contrasts, grids) use the
    most frequent value; others use the centre of the tallest histogram bin.
    """
    draws = theta_draws(samples, x)
    out = np.empty(draws.shape[1])
    for j, col in enumerate(draws.T):
        vals, counts = np.unique(col, return_counts=True)
        if vals.shape[0] <= 50:
            out[j] = vals[np.argmax(counts)]
        else:
            counts, edges = np.histogram(col, bins=_bins(col))
            k = int(np.argmax(counts))
            out[j] = 0.5 * (edges[k] + edges[k + 1])
    return out


def tree_key(tree, decimals: int = 10):
    """Hashable topology-and-rules key; leaf coefficients are ignored."""
    if isinstance(tree, Leaf):
        return "L"
    return (tree.dim, round(tree.loc, decimals), tree_key(tree.left, decimals), tree_key(tree.right, decimals))


def _average_coefs(trees):
    if isinstance(trees[0], Leaf):
        return Leaf(tuple(np.mean([t.coef for t in trees], axis=0).tolist()))
    t0 = trees[0]
    return Split(
        t0.dim, t0.loc, _average_coefs([t.left for t in trees]), _average_coefs([t.right for t in trees])
    )


def map_tree(samples, group: int = 0):
    """Most visited tree structure of one group, with leaf coefficients averaged over its visits.

    Ties go to fewer leaves, then to the structure seen first.
    """
    trees = [s.calib.trees[group] for s in _sample_list(samples)]
    keys = [tree_key(t) for t in trees]
    counts = Counter(keys)
    first = {}
    for i, k in enumerate(keys):
        first.setdefault(k, i)
    best = min(counts, key=lambda k: (-counts[k], n_leaves(trees[first[k]]), first[k]))
    return _average_coefs([t for t, k in zip(trees, keys) if k == best])


@dataclass(frozen=True, eq=False)
class SubmodelProbs:
    probs: np.ndarray
    std_error: np.ndarray


def submodel_probs(samples, x) -> SubmodelProbs:
    """Posterior probability of each sub-model being selected at ``x``."""
    sl = _sample_list(samples)
    layout = sl[0].calib.layout
    M = layout.n_submodels
    if M < 2:
        raise ValueError("model has a single sub-model")
    cols = layout.param_columns(layout.contrast_param)
    draws = theta_draws(sl, x)[:, cols]
    onehot = np.zeros((draws.shape[0], M))
    onehot[np.arange(draws.shape[0]), [contrast_level(r) for r in draws]] = 1.0
    probs = onehot.mean(axis=0)
    se, _, _ = _std_error(onehot)
    return SubmodelProbs(probs, se)


# --------------------------------------------------------------------------
# predictive emulator
# --------------------------------------------------------------------------


def predictive_moments(
    x,
    sample: ChainSample,
    data: TrainingData,
    basis: BasisConfig = BasisConfig(),
    model: GaussianModel | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and variance of ``zeta(x)`` given one posterior sample.

    Includes the correction for uncertainty in the linear mean coefficients.
    ``x`` may hold several points; the return values then have one entry per
    point.
    """
    x = _as_points(x)
    hp: ModelHyperparams = sample.hp
    model = model or GaussianModel(data, basis)
    theta_f = evaluate_theta_many(data.field_inputs, sample.calib)
    jm = model.moments(theta_f, hp)
    z = data.z
    L, _ = chol_factor(jm.Sigma)
    s = _solve(z, jm.H, L, hp.beta_prior)

    theta_x = evaluate_theta_many(x, sample.calib)
    phi_s = np.concatenate([hp.phi_sx, hp.phi_st])
    px = np.hstack([x, theta_x])
    v_f = cov_matrix(px, np.hstack([data.field_inputs, theta_f]), hp.tau_s, phi_s)
    prior_var = np.full(x.shape[0], hp.tau_s)
    if basis.has_discrepancy:
        v_f = v_f + cov_matrix(x, data.field_inputs, hp.tau_d, hp.phi_d)
        prior_var += hp.tau_d
    if data.m:
        v_s = cov_matrix(px, np.hstack([data.sim_inputs, data.sim_params]), hp.tau_s, phi_s)
        v = np.hstack([v_f, v_s])
    else:
        v = v_f
    h = np.hstack([basis.sim_basis(x, theta_x), basis.discrepancy_basis(x)])

    vL = sla.solve_triangular(L, v.T, lower=True, check_finite=False)  # L^{-1} v
    resid = s.alpha - s.HL @ s.beta_hat
    mean = h @ s.beta_hat + vL.T @ resid
    r = h - vL.T @ s.HL  # h - v' Sigma^{-1} H
    if r.shape[1]:
        rW = sla.solve_triangular(s.A_chol, r.T, lower=True, check_finite=False)
        beta_term = np.sum(rW**2, axis=0)
    else:
        beta_term = 0.0
    var = prior_var - np.sum(vL**2, axis=0) + beta_term
    if np.any(var < -CLIP_TOL):
        raise NumericalError(f"negative predictive variance {var.min():.3g}")
    return mean, np.maximum(var, 0.0)


@dataclass(frozen=True, eq=False)
class MixturePrediction:
    mean: np.ndarray
    variance: np.ndarray
    quantiles: dict[float, np.ndarray]
    component_means: np.ndarray
    component_vars: np.ndarray

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)


def mixture_quantile(p: float, means: np.ndarray, variances: np.ndarray) -> float:
    """Quantile of an equal-weight Gaussian mixture by root-finding on its CDF."""
    sd = np.sqrt(variances)
    point = sd == 0

    def cdf(t):
        out = np.where(point, (means <= t).astype(float), 0.0)
        nz = ~point
        out[nz] = stats.norm.cdf((t - means[nz]) / sd[nz])
        return out.mean() - p

    spread = float(sd.max()) if sd.size else 0.0
    lo = float(means.min()) - 10.0 * spread - 1e-12
    hi = float(means.max()) + 10.0 * spread + 1e-12
    if np.all(point):
        order = np.sort(means)
        return float(order[min(int(math.ceil(p * len(order))) - 1, len(order) - 1)])
    return float(optimize.brentq(cdf, lo, hi, xtol=1e-12))


def predictive_mixture(
    x,
    samples,
    data: TrainingData,
    basis: BasisConfig = BasisConfig(),
    probs=(0.05, 0.5, 0.95),
) -> MixturePrediction:
    """Equal-weight mixture of per-sample Gaussian predictives."""
    x = _as_points(x)
    sl = _sample_list(samples)
    model = GaussianModel(data, basis)
    mus = np.empty((len(sl), x.shape[0]))
    vs = np.empty_like(mus)
    for i, s in enumerate(sl):
        mus[i], vs[i] = predictive_moments(x, s, data, basis, model)
    return mixture_from_components(mus, vs, probs)


def mixture_from_components(mus: np.ndarray, vs: np.ndarray, probs=(0.05, 0.5, 0.95)) -> MixturePrediction:
    mean = mus.mean(axis=0)
    var = vs.mean(axis=0) + mus.var(axis=0)
    qs = {
        p: np.array([mixture_quantile(p, mus[:, j], vs[:, j]) for j in range(mus.shape[1])]) for p in probs
    }
    return MixturePrediction(mean, var, qs, mus, vs)


def rmspe_values(predicted, truth) -> tuple[np.ndarray, float]:
    """Per-point and average RMSPE.

    ``predicted`` is ``(points,)`` or ``(replicates, points)``; squared errors
    are averaged over replicates before the square root.
    """
    pred = np.atleast_2d(np.asarray(predicted, dtype=float))
    err = np.sqrt(np.mean((pred - np.asarray(truth, dtype=float)[None, :]) ** 2, axis=0))
    return err, float(err.mean())


def rmspe(samples, data: TrainingData, test_points, truth, basis: BasisConfig = BasisConfig()):
    pred = predictive_mixture(test_points, samples, data, basis, probs=())
    return rmspe_values(pred.mean, truth)


def leaf_counts(samples, group: int = 0) -> np.ndarray:
    return np.array([len(leaves(s.calib.trees[group])) for s in _sample_list(samples)])
