"""Joint Gaussian model of field observations and simulator runs.

The field response is modelled as ``zeta(x) = S(x, theta_x) + delta(x)`` with
independent Gaussian-process priors on the simulator ``S`` and the
discrepancy ``delta``.  Linear mean coefficients ``beta`` are integrated out
analytically, so the sampler only ever sees the marginal likelihood
``f(z | phi, theta_x)``.

Normalisation of the marginal likelihood
----------------------------------------
For a proper Normal prior on ``beta`` (``xi > 0``) :func:`marginal_loglik`
returns the exact log density of ``z`` with ``beta`` integrated against its
prior.  For the flat prior (``xi == 0``) it returns the integral of the
``beta``-conditional likelihood against Lebesgue measure, i.e.
``(2 pi)^{-(N - d)/2} |Sigma_z|^{-1/2} |W|^{1/2} exp(-Q/2)``.  Both
conventions are fixed for a given model so likelihood ratios are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

LOG_2PI = float(np.log(2.0 * np.pi))

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class NumericalError(RuntimeError):
    """A covariance matrix could not be factorised even after jitter."""


def _as_tuple(values) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


# --------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------


def chol_factor(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a symmetric matrix with escalating jitter.

    Returns the factor and the jitter that was added to the diagonal (0.0 when
    the plain factorisation succeeded).  Jitter starts at ``1e-10 * mean(diag)``
    and grows tenfold up to ``1e-4 * mean(diag)``.
    """
    A = np.asarray(A, dtype=float)
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(A))) if A.size else 0.0
    if not np.isfinite(scale) or scale <= 0.0:
        raise NumericalError("matrix is not positive definite (non-positive diagonal)")
    eye = np.eye(A.shape[0])
    level = JITTER_START
    while level <= JITTER_MAX * (1 + 1e-9):
        jitter = level * scale
        try:
            return np.linalg.cholesky(A + jitter * eye), jitter
        except np.linalg.LinAlgError:
            level *= 10.0
    raise NumericalError("Cholesky factorisation failed after maximum jitter")


def chol_logdet_solve(A: np.ndarray, B: np.ndarray) -> tuple[float, np.ndarray]:
    """Log-determinant of ``A`` and the solution of ``A X = B`` via Cholesky."""
    L, _ = chol_factor(A)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    X = sla.cho_solve((L, True), np.asarray(B, dtype=float), check_finite=False)
    return logdet, X


# --------------------------------------------------------------------------
# Data and parameter containers
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainingData:
    """Field observations ``(y, x)`` and simulator runs ``(eta, x, t)``.

    All input coordinates live on ``[0, 1]``.  ``sim_params`` holds the
    continuous calibration coordinates followed by ``n_submodels - 1`` binary
    contrast columns (level ``M`` is the all-zero row).
    """

    field_inputs: np.ndarray
    field_outputs: np.ndarray
    sim_inputs: np.ndarray
    sim_params: np.ndarray
    sim_outputs: np.ndarray
    n_continuous: int | None = None
    n_submodels: int = 1
    input_bounds: np.ndarray | None = None
    param_bounds: np.ndarray | None = None

    def __post_init__(self):
        xf = np.atleast_2d(np.asarray(self.field_inputs, dtype=float))
        y = np.asarray(self.field_outputs, dtype=float).reshape(-1)
        q = xf.shape[1]
        xs = np.asarray(self.sim_inputs, dtype=float).reshape(-1, q)
        ts = np.asarray(self.sim_params, dtype=float)
        eta = np.asarray(self.sim_outputs, dtype=float).reshape(-1)
        m = xs.shape[0]
        ts = ts.reshape(m, -1) if m else ts.reshape(0, ts.shape[-1] if ts.ndim == 2 else 0)
        if xf.shape[0] < 1:
            raise ValueError("at least one field observation is required")
        if y.shape[0] != xf.shape[0]:
            raise ValueError("field_outputs length does not match field_inputs")
        if eta.shape[0] != m or ts.shape[0] != m:
            raise ValueError("simulator arrays have inconsistent lengths")
        n_contrast = self.n_submodels - 1
        if self.n_submodels < 1:
            raise ValueError("n_submodels must be >= 1")
        n_cont = self.n_continuous
        if n_cont is None:
            n_cont = ts.shape[1] - n_contrast
        if n_cont < 0 or n_cont + n_contrast != ts.shape[1]:
            raise ValueError("sim_params columns do not match n_continuous + n_submodels - 1")
        for arr, name in ((xf, "field_inputs"), (xs, "sim_inputs")):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} must be scaled to [0, 1]")
        if m and n_cont and (ts[:, :n_cont].min() < 0.0 or ts[:, :n_cont].max() > 1.0):
            raise ValueError("continuous sim_params must be scaled to [0, 1]")
        if m and n_contrast:
            c = ts[:, n_cont:]
            if not np.all((c == 0.0) | (c == 1.0)) or np.any(c.sum(axis=1) > 1):
                raise ValueError("contrast columns must be 0/1 with at most one 1 per row")
        object.__setattr__(self, "field_inputs", xf)
        object.__setattr__(self, "field_outputs", y)
        object.__setattr__(self, "sim_inputs", xs)
        object.__setattr__(self, "sim_params", ts)
        object.__setattr__(self, "sim_outputs", eta)
        object.__setattr__(self, "n_continuous", int(n_cont))

    @property
    def n(self) -> int:
        return self.field_inputs.shape[0]

    @property
    def m(self) -> int:
        return self.sim_inputs.shape[0]

    @property
    def q(self) -> int:
        return self.field_inputs.shape[1]

    @property
    def theta_dim(self) -> int:
        return self.sim_params.shape[1]

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.field_outputs, self.sim_outputs])


@dataclass(frozen=True)
class BetaPrior:
    """Normal prior ``beta ~ N(b, Sigma / xi)``; ``xi == 0`` means flat."""

    mean: tuple[float, ...] = ()
    cov: tuple[tuple[float, ...], ...] = ()
    xi: float = 0.0

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("xi must be >= 0")

    def arrays(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        b = np.zeros(d) if not self.mean else np.asarray(self.mean, dtype=float)
        S = np.eye(d) if not self.cov else np.asarray(self.cov, dtype=float)
        if b.shape != (d,) or S.shape != (d, d):
            raise ValueError(f"beta prior does not match basis dimension {d}")
        return b, S


@dataclass(frozen=True)
class ModelHyperparams:
    tau_s: float
    tau_d: float
    phi_sx: tuple[float, ...]
    phi_st: tuple[float, ...]
    phi_d: tuple[float, ...]
    sigma2_y: float
    sigma2_eta: float
    beta_prior: BetaPrior = field(default_factory=BetaPrior)

    def __post_init__(self):
        for name in ("phi_sx", "phi_st", "phi_d"):
            vals = _as_tuple(getattr(self, name)) if len(getattr(self, name)) else ()
            if any(not (0.0 < v < 1.0) for v in vals):
                raise ValueError(f"{name} entries must lie strictly inside (0, 1)")
            object.__setattr__(self, name, vals)
        for name in ("tau_s", "tau_d", "sigma2_y", "sigma2_eta"):
            v = float(getattr(self, name))
            if not v > 0.0:
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, v)

    @classmethod
    def default(cls, q: int, theta_dim: int, **kw) -> "ModelHyperparams":
        base = dict(
            tau_s=1.0,
            tau_d=1.0,
            phi_sx=(0.5,) * q,
            phi_st=(0.5,) * theta_dim,
            phi_d=(0.5,) * q,
            sigma2_y=0.01,
            sigma2_eta=0.01,
        )
        base.update(kw)
        return cls(**base)

    def with_(self, **kw) -> "ModelHyperparams":
        return replace(self, **kw)


_BASIS_KINDS = ("constant", "linear")


@dataclass(frozen=True)
class BasisConfig:
    """Mean bases ``h_S(x, t)`` and ``h_delta(x)``.

    ``discrepancy=None`` drops the discrepancy process entirely (``delta == 0``).
    """

    sim: str = "constant"
    discrepancy: str | None = "constant"

    def __post_init__(self):
        if self.sim not in _BASIS_KINDS:
            raise ValueError(f"unknown simulator basis {self.sim!r}")
        if self.discrepancy is not None and self.discrepancy not in _BASIS_KINDS:
            raise ValueError(f"unknown discrepancy basis {self.discrepancy!r}")

    @property
    def has_discrepancy(self) -> bool:
        return self.discrepancy is not None

    def dims(self, q: int) -> tuple[int, int]:
        ds = 1 if self.sim == "constant" else 1 + q
        if self.discrepancy is None:
            return ds, 0
        return ds, 1 if self.discrepancy == "constant" else 1 + q

    @staticmethod
    def _eval(kind: str, x: np.ndarray) -> np.ndarray:
        ones = np.ones((x.shape[0], 1))
        return ones if kind == "constant" else np.hstack([ones, x])

    def sim_basis(self, x: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
        return self._eval(self.sim, np.atleast_2d(x))

    def discrepancy_basis(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.discrepancy is None:
            return np.zeros((x.shape[0], 0))
        return self._eval(self.discrepancy, x)


@dataclass(frozen=True, eq=False)
class JointMoments:
    H: np.ndarray
    Sigma: np.ndarray
    n: int
    m: int


# --------------------------------------------------------------------------
# Covariances
# --------------------------------------------------------------------------


def _check_cov_params(tau, phis):
    if not tau > 0:
        raise ValueError("tau must be positive")
    for phi in phis:
        phi = np.asarray(phi, dtype=float)
        if phi.size and (np.any(phi <= 0.0) or np.any(phi >= 1.0)):
            raise ValueError("correlation parameters must lie strictly inside (0, 1)")


def sep_cov(u, v, tau, phi_x, phi_t=()) -> float:
    """Separable power covariance between two (input, parameter) points.

    ``u`` and ``v`` concatenate the ``q`` input coordinates with the parameter
    coordinates; ``len(phi_x)`` fixes the split.
    """
    _check_cov_params(tau, (phi_x, phi_t))
    phi = np.concatenate([np.atleast_1d(phi_x), np.atleast_1d(phi_t)]).astype(float)
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if u.shape != v.shape or u.shape[0] != phi.shape[0]:
        raise ValueError("coordinate vectors and correlation parameters differ in length")
    return float(tau * np.prod(phi ** (4.0 * (u - v) ** 2)))


def cov_matrix(A: np.ndarray, B: np.ndarray, tau: float, phi) -> np.ndarray:
    """Matrix of :func:`sep_cov` values between the rows of ``A`` and ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    logphi = np.log(np.asarray(phi, dtype=float).reshape(-1))
    if A.shape[1] != logphi.shape[0] or B.shape[1] != logphi.shape[0]:
        raise ValueError("point dimension does not match correlation parameters")
    d2 = (A[:, None, :] - B[None, :, :]) ** 2
    return tau * np.exp(4.0 * d2 @ logphi)


def assemble_joint_moments(
    data: TrainingData,
    theta_at_field: np.ndarray,
    hp: ModelHyperparams,
    basis: BasisConfig = BasisConfig(),
) -> JointMoments:
    """Design matrix ``H_z`` and covariance ``Sigma_z`` of ``z = (y, eta)``."""
    n, m, q = data.n, data.m, data.q
    theta = np.asarray(theta_at_field, dtype=float).reshape(n, -1)
    if theta.shape[1] != data.theta_dim:
        raise ValueError("theta_at_field has the wrong number of columns")
    if len(hp.phi_sx) != q or len(hp.phi_st) != data.theta_dim:
        raise ValueError("simulator correlation parameters do not match data dimensions")
    if basis.has_discrepancy and len(hp.phi_d) != q:
        raise ValueError("discrepancy correlation parameters do not match input dimension")
    phi_s = np.concatenate([hp.phi_sx, hp.phi_st])
    field_pts = np.hstack([data.field_inputs, theta])
    sim_pts = np.hstack([data.sim_inputs, data.sim_params])

    S_y = cov_matrix(field_pts, field_pts, hp.tau_s, phi_s)
    if basis.has_discrepancy:
        S_y = S_y + cov_matrix(data.field_inputs, data.field_inputs, hp.tau_d, hp.phi_d)
    S_y[np.diag_indices(n)] += hp.sigma2_y
    S_ey = cov_matrix(sim_pts, field_pts, hp.tau_s, phi_s) if m else np.zeros((0, n))
    S_e = cov_matrix(sim_pts, sim_pts, hp.tau_s, phi_s) if m else np.zeros((0, 0))
    S_e[np.diag_indices(m)] += hp.sigma2_eta
    Sigma = np.block([[S_y, S_ey.T], [S_ey, S_e]])

    H_sy = basis.sim_basis(data.field_inputs, theta)
    H_d = basis.discrepancy_basis(data.field_inputs)
    H_se = basis.sim_basis(data.sim_inputs, data.sim_params) if m else np.zeros((0, H_sy.shape[1]))
    H = np.block([[H_sy, H_d], [H_se, np.zeros((m, H_d.shape[1]))]])
    return JointMoments(H=H, Sigma=Sigma, n=n, m=m)


# --------------------------------------------------------------------------
# beta-marginal likelihood
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Solved:
    """Intermediate quantities shared by the likelihood and the predictor."""

    L: np.ndarray
    logdet_sigma: float
    alpha: np.ndarray  # L^{-1} z
    HL: np.ndarray  # L^{-1} H
    A: np.ndarray  # W^{-1}
    A_chol: np.ndarray
    rhs: np.ndarray
    beta_hat: np.ndarray


def _solve(z: np.ndarray, H: np.ndarray, L: np.ndarray, bp: BetaPrior) -> _Solved:
    d = H.shape[1]
    alpha = sla.solve_triangular(L, z, lower=True, check_finite=False)
    HL = sla.solve_triangular(L, H, lower=True, check_finite=False)
    A = HL.T @ HL
    rhs = HL.T @ alpha
    if bp.xi > 0 and d:
        b, S = bp.arrays(d)
        S_inv_b = np.linalg.solve(S, b)
        A = A + bp.xi * np.linalg.inv(S)
        rhs = rhs + bp.xi * S_inv_b
    A = 0.5 * (A + A.T)
    if d:
        A_chol, _ = chol_factor(A)
        beta_hat = sla.cho_solve((A_chol, True), rhs, check_finite=False)
    else:
        A_chol = np.zeros((0, 0))
        beta_hat = np.zeros(0)
    logdet_sigma = 2.0 * float(np.sum(np.log(np.diag(L))))
    return _Solved(L, logdet_sigma, alpha, HL, A, A_chol, rhs, beta_hat)


def _loglik_from_solved(s: _Solved, bp: BetaPrior, normalized: bool) -> float:
    N = s.alpha.shape[0]
    d = s.rhs.shape[0]
    logdet_A = 2.0 * float(np.sum(np.log(np.diag(s.A_chol)))) if d else 0.0
    quad = float(s.alpha @ s.alpha) - float(s.rhs @ s.beta_hat)
    ll = -0.5 * s.logdet_sigma - 0.5 * logdet_A
    if bp.xi > 0 and d:
        b, S = bp.arrays(d)
        quad += bp.xi * float(b @ np.linalg.solve(S, b))
        if normalized:
            _, logdet_S = np.linalg.slogdet(S)
            ll -= 0.5 * (logdet_S - d * np.log(bp.xi))
            ll -= 0.5 * N * LOG_2PI
    elif normalized:
        ll -= 0.5 * (N - d) * LOG_2PI
    return ll - 0.5 * quad


def marginal_loglik(
    z: np.ndarray, jm: JointMoments, hp: ModelHyperparams, normalized: bool = True
) -> float:
    """Log of the ``beta``-marginalised likelihood ``f(z | phi, theta_x)``.

    ``normalized=False`` drops every state-independent constant (the ``2 pi``
    terms and the prior normalising determinant).
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != jm.Sigma.shape[0]:
        raise ValueError("z length does not match the joint moments")
    L, _ = chol_factor(jm.Sigma)
    s = _solve(z, jm.H, L, hp.beta_prior)
    return _loglik_from_solved(s, hp.beta_prior, normalized)


def beta_conditional(z, jm: JointMoments, hp: ModelHyperparams) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``beta | z, theta_x, phi``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    L, _ = chol_factor(jm.Sigma)
    s = _solve(z, jm.H, L, hp.beta_prior)
    d = s.rhs.shape[0]
    W = sla.cho_solve((s.A_chol, True), np.eye(d), check_finite=False) if d else np.zeros((0, 0))
    return s.beta_hat, 0.5 * (W + W.T)


def beta_log_prior(beta: np.ndarray, bp: BetaPrior) -> float:
    """Log prior density of ``beta`` (0 for the flat prior)."""
    beta = np.asarray(beta, dtype=float)
    d = beta.shape[0]
    if bp.xi == 0 or d == 0:
        return 0.0
    b, S = bp.arrays(d)
    cov = S / bp.xi
    _, logdet = np.linalg.slogdet(cov)
    r = beta - b
    return float(-0.5 * (d * LOG_2PI + logdet + r @ np.linalg.solve(cov, r)))


def conditional_loglik(z, beta, jm: JointMoments) -> float:
    """Log of the Gaussian likelihood ``f(z | beta, phi, theta_x)``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    L, _ = chol_factor(jm.Sigma)
    r = sla.solve_triangular(L, z - jm.H @ np.asarray(beta, dtype=float), lower=True)
    return float(-0.5 * z.shape[0] * LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * r @ r)


# --------------------------------------------------------------------------
# Precomputed model used inside the sampler
# --------------------------------------------------------------------------


class GaussianModel:
    """Data-bound evaluator of the marginal likelihood.

    Squared coordinate differences that do not depend on ``theta_x`` are
    computed once; the simulator-simulator block is reused while the
    hyperparameter object is unchanged.
    """

    def __init__(self, data: TrainingData, basis: BasisConfig = BasisConfig()):
        self.data = data
        self.basis = basis
        self.z = data.z
        xf, xs, ts = data.field_inputs, data.sim_inputs, data.sim_params
        self._d_ff = 4.0 * (xf[:, None, :] - xf[None, :, :]) ** 2
        self._d_sf = 4.0 * (xs[:, None, :] - xf[None, :, :]) ** 2
        d_ss = np.concatenate(
            [(xs[:, None, :] - xs[None, :, :]) ** 2, (ts[:, None, :] - ts[None, :, :]) ** 2], axis=2
        )
        self._d_ss = 4.0 * d_ss
        H_d = basis.discrepancy_basis(xf)
        self._H_d = np.vstack([H_d, np.zeros((data.m, H_d.shape[1]))])
        self._H_se = basis.sim_basis(xs, ts) if data.m else np.zeros((0, basis.dims(data.q)[0]))
        self._cache_key = None
        self._cache_block = None

    def _sim_block(self, hp: ModelHyperparams) -> np.ndarray:
        key = (hp.tau_s, hp.phi_sx, hp.phi_st, hp.sigma2_eta)
        if key != self._cache_key:
            logphi = np.log(np.concatenate([hp.phi_sx, hp.phi_st]))
            S_e = hp.tau_s * np.exp(self._d_ss @ logphi)
            S_e[np.diag_indices(self.data.m)] += hp.sigma2_eta
            self._cache_key = key
            self._cache_block = S_e
        return self._cache_block

    def moments(self, theta_field: np.ndarray, hp: ModelHyperparams) -> JointMoments:
        data = self.data
        n = data.n
        theta = np.asarray(theta_field, dtype=float).reshape(n, -1)
        lx = np.log(np.asarray(hp.phi_sx))
        lt = np.log(np.asarray(hp.phi_st))
        d_tt = 4.0 * (theta[:, None, :] - theta[None, :, :]) ** 2
        S_y = hp.tau_s * np.exp(self._d_ff @ lx + d_tt @ lt)
        if self.basis.has_discrepancy:
            S_y += hp.tau_d * np.exp(self._d_ff @ np.log(np.asarray(hp.phi_d)))
        S_y[np.diag_indices(n)] += hp.sigma2_y
        if data.m:
            d_st = 4.0 * (data.sim_params[:, None, :] - theta[None, :, :]) ** 2
            S_ey = hp.tau_s * np.exp(self._d_sf @ lx + d_st @ lt)
            Sigma = np.block([[S_y, S_ey.T], [S_ey, self._sim_block(hp)]])
        else:
            Sigma = S_y
        H_s = np.vstack([self.basis.sim_basis(data.field_inputs, theta), self._H_se])
        return JointMoments(H=np.hstack([H_s, self._H_d]), Sigma=Sigma, n=n, m=data.m)

    def loglik(self, theta_field: np.ndarray, hp: ModelHyperparams) -> float:
        """Marginal log-likelihood, ``-inf`` if the covariance is unusable."""
        jm = self.moments(theta_field, hp)
        try:
            return marginal_loglik(self.z, jm, hp)
        except NumericalError:
            return -np.inf
