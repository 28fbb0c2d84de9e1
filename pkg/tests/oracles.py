"""Independent reference computations shared by several test files."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from idbc.gp import BasisConfig, BetaPrior, ModelHyperparams, TrainingData


def random_instance(rng: np.random.Generator, max_points: int = 6, xi_positive: bool = True):
    """Small random dataset, hyperparameters and basis with ``n + m <= max_points``."""
    n = int(rng.integers(1, max_points))
    m = int(rng.integers(0, max_points - n + 1))
    q, p = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    data = TrainingData(
        rng.random((n, q)), rng.normal(size=n), rng.random((m, q)), rng.random((m, p)), rng.normal(size=m),
    )
    basis = BasisConfig(discrepancy="constant" if rng.random() < 0.5 else None)
    d = 2 if basis.has_discrepancy else 1
    A = rng.normal(size=(d, d))
    cov = A @ A.T + 0.5 * np.eye(d)
    bp = BetaPrior(
        tuple(rng.normal(size=d)), tuple(map(tuple, cov)), float(rng.uniform(0.2, 3.0)) if xi_positive else 0.0
    )
    hp = ModelHyperparams(
        tau_s=float(rng.uniform(0.5, 2.0)),
        tau_d=float(rng.uniform(0.1, 1.0)),
        phi_sx=tuple(rng.uniform(0.05, 0.95, q)),
        phi_st=tuple(rng.uniform(0.05, 0.95, p)),
        phi_d=tuple(rng.uniform(0.05, 0.95, q)) if basis.has_discrepancy else (),
        sigma2_y=float(rng.uniform(0.05, 0.5)),
        sigma2_eta=float(rng.uniform(0.05, 0.5)),
        beta_prior=bp,
    )
    theta = rng.random((n, p))
    return data, theta, hp, basis


def _gauss_logpdf(r: np.ndarray, cov: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (r.shape[0] * math.log(2 * math.pi) + logdet + r @ np.linalg.solve(cov, r))


def quadrature_marginal(z, H, Sigma, bp: BetaPrior) -> float:
    """``log int N(z; H beta, Sigma) N(beta; b, Sigma_beta / xi) d beta`` by adaptive quadrature.

    Integration limits come from the Gaussian posterior of ``beta`` computed
    with plain numpy; the integrand is shifted by its value at the posterior
    mean to avoid underflow.
    """
    d = H.shape[1]
    b = np.asarray(bp.mean, dtype=float)
    Sb = np.asarray(bp.cov, dtype=float) / bp.xi
    Si = np.linalg.inv(Sigma)
    prec = H.T @ Si @ H + np.linalg.inv(Sb)
    post_cov = np.linalg.inv(prec)
    post_mean = post_cov @ (H.T @ Si @ z + np.linalg.solve(Sb, b))
    sd = np.sqrt(np.diag(post_cov))

    def log_f(beta):
        beta = np.asarray(beta, dtype=float)
        return _gauss_logpdf(z - H @ beta, Sigma) + _gauss_logpdf(beta - b, Sb)

    shift = log_f(post_mean)
    lo, hi = post_mean - 12 * sd, post_mean + 12 * sd
    opts = dict(epsabs=0.0, epsrel=1e-11, limit=200)
    if d == 1:
        val, _ = integrate.quad(lambda t: math.exp(log_f([t]) - shift), lo[0], hi[0], **opts)
    else:
        val, _ = integrate.nquad(
            lambda s, t: math.exp(log_f([s, t]) - shift),
            [(lo[0], hi[0]), (lo[1], hi[1])],
            opts=dict(epsabs=0.0, epsrel=1e-10, limit=100),
        )
    return shift + math.log(val)


def finite_difference_jacobian(f, x0: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``f: R^k -> R^k``."""
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for j in range(x0.shape[0]):
        e = np.zeros_like(x0)
        e[j] = h
        cols.append((np.asarray(f(x0 + e)) - np.asarray(f(x0 - e))) / (2 * h))
    return np.column_stack(cols)
