"""Synthetic calibration benchmarks with known step-function calibration fields.

``bench1`` is a two-input problem whose simulator has two location
parameters and a binary sub-model switch; the best setting jumps between five
rectangular regions and the real system adds a smooth discrepancy.

``bench2`` is an analytic stand-in for a contaminant-transport study.  Inputs
are a location ``(s1, s2)`` in a 16 x 10 box and a time ``chi`` in
``[0, 1]``.  The true parameter takes the values 0, 2 and -2 on three
regions.  The simulator is a smooth response of our own construction:

    S(x, t) = t (1 + chi) / 2 + exp(-((a - 0.3)^2 + (b - 0.6)^2) / 0.1) + chi / 2

with ``a = s1 / 16`` and ``b = s2 / 10``.  It is strictly increasing in
``t``, so each region's value is identifiable, and there is no discrepancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import BasisConfig, TrainingData
from .partition import Leaf, Split, ThetaLayout

BENCHMARKS = ("bench1", "bench2")
SCHEMES = ("SBC", "IDBC-JPS", "IDBC-SPS")

# bench2 parameter range before scaling to [0, 1]
BENCH2_T_RANGE = (-3.0, 3.0)
BENCH2_BOX = (16.0, 10.0)


def lhs(n: int, d: int, seed=None) -> np.ndarray:
    """Latin hypercube sample: each column hits every stratum ``[k/n, (k+1)/n)`` once."""
    if n < 1 or d < 1:
        raise ValueError("lhs needs n, d >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random((n, d))
    strata = np.column_stack([rng.permutation(n) for _ in range(d)])
    return (strata + u) / n


# --------------------------------------------------------------------------
# bench1
# --------------------------------------------------------------------------


def bench1_sim(x, xi) -> np.ndarray | float:
    """Simulator output; ``xi = (xi1, xi2, xi3)`` with ``xi3`` in ``{1, 2}``.

    Accepts single points or row-stacked arrays of equal length.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    scalar = x.ndim == 1 and xi.ndim == 1
    x, xi = np.atleast_2d(x), np.atleast_2d(xi)
    if not np.all(np.isin(xi[:, 2], (1.0, 2.0))):
        raise ValueError("xi3 must be 1 or 2")
    r1 = (x[:, 0] - xi[:, 0]) ** 2 / 0.06**2
    r2 = (x[:, 1] - xi[:, 1]) ** 2 / 0.06**2
    gauss = 5.0 * np.exp(-0.5 * r1) * np.exp(-0.5 * r2)
    heavy = 4.5 * (1.0 + 0.5 * r1) ** -1.5 * (1.0 + 0.5 * r2) ** -1.5
    out = np.where(xi[:, 2] == 1.0, gauss, heavy)
    return float(out[0]) if scalar else out


def bench1_true_theta(x) -> np.ndarray:
    """Best ``(xi1, xi2, xi3)`` at ``x``; one row per input point."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    x = np.atleast_2d(x)
    x1, x2 = x[:, 0], x[:, 1]
    out = np.empty((x.shape[0], 3))
    mid = (x1 >= 2 / 6) & (x1 < 4 / 6)
    out[:] = (1 / 6, 0.5, 1.0)
    low, high = x2 < 0.5, x2 >= 0.5
    out[mid & low] = (3 / 6, 1 / 4, 2.0)
    out[mid & high] = (3 / 6, 3 / 4, 2.0)
    right = x1 >= 4 / 6
    out[right & low] = (1 / 6, 1 / 4, 1.0)
    out[right & high] = (1 / 6, 3 / 4, 1.0)
    return out[0] if scalar else out


def bench1_discrepancy(x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    out = 0.2 * np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])
    return float(out) if np.ndim(out) == 0 else out


def bench1_zeta(x) -> np.ndarray | float:
    """Real-system response."""
    return bench1_sim(x, bench1_true_theta(x)) + bench1_discrepancy(x)


def xi_to_params(xi) -> np.ndarray:
    """``(xi1, xi2, xi3)`` to calibration coordinates ``(xi1, xi2, 1{xi3 = 1})``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    return np.column_stack([xi[:, 0], xi[:, 1], (xi[:, 2] == 1.0).astype(float)])


def bench1_true_tree() -> Split:
    """The five-region field as a tree over calibration coordinates."""
    a = Leaf((1 / 6, 0.5, 1.0))
    mid = Split(1, 0.5, Leaf((0.5, 0.25, 0.0)), Leaf((0.5, 0.75, 0.0)))
    right = Split(1, 0.5, Leaf((1 / 6, 0.25, 1.0)), Leaf((1 / 6, 0.75, 1.0)))
    return Split(0, 2 / 6, a, Split(0, 4 / 6, mid, right))


# --------------------------------------------------------------------------
# bench2
# --------------------------------------------------------------------------


def bench2_field(x) -> np.ndarray | float:
    """True parameter at ``(s1, s2[, chi])`` in raw box coordinates."""
    x = np.asarray(x, dtype=float)
    s1, s2 = x[..., 0], x[..., 1]
    out = np.where(s1 < 10.0, 0.0, np.where(s2 < 4.5, 2.0, -2.0))
    return float(out) if np.ndim(out) == 0 else out


def bench2_scale_inputs(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    x[:, 0] /= BENCH2_BOX[0]
    x[:, 1] /= BENCH2_BOX[1]
    return x


def bench2_scale_t(t) -> np.ndarray:
    lo, hi = BENCH2_T_RANGE
    return (np.asarray(t, dtype=float) - lo) / (hi - lo)


def bench2_unscale_t(u) -> np.ndarray:
    lo, hi = BENCH2_T_RANGE
    return lo + (hi - lo) * np.asarray(u, dtype=float)


def bench2_sim(u, t) -> np.ndarray:
    """Stand-in simulator on scaled inputs ``u = (a, b, chi)`` and raw ``t``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    a, b, chi = u[:, 0], u[:, 1], u[:, 2]
    bump = np.exp(-((a - 0.3) ** 2 + (b - 0.6) ** 2) / 0.1)
    return t * (1.0 + chi) / 2.0 + bump + chi / 2.0


def bench2_zeta(u) -> np.ndarray:
    """Real-system response at scaled inputs."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    raw = u[:, :2] * np.array(BENCH2_BOX)
    return bench2_sim(u, bench2_field(raw))


BENCH2_LOCATIONS = (np.array([0.1, 0.3, 0.5, 0.7, 0.9]), np.array([0.15, 0.35, 0.55, 0.8]))
BENCH2_TIMES = np.array([0.1, 0.5, 0.9])
# scaled probes inside the three regions (s1 < 10; s1 > 10, s2 < 4.5; s1 > 10, s2 > 4.5)
BENCH2_PROBES = np.array([[0.3, 0.5, 0.5], [0.8, 0.25, 0.5], [0.8, 0.7, 0.5]])
BENCH2_PROBE_TRUTH = np.array([0.0, 2.0, -2.0])


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkSpec:
    """Dataset settings.  ``sigma_*`` are standard deviations unless
    ``noise_is_variance`` is set."""

    name: str = "bench1"
    n: int = 50
    m: int = 120
    sigma_y: float = 0.02
    sigma_eta: float = 0.01
    seed: int = 0
    noise_is_variance: bool = False

    def __post_init__(self):
        if self.name not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {self.name!r}")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if self.sigma_y < 0 or self.sigma_eta < 0:
            raise ValueError("noise levels must be nonnegative")

    def noise_sd(self) -> tuple[float, float]:
        if self.noise_is_variance:
            return float(np.sqrt(self.sigma_y)), float(np.sqrt(self.sigma_eta))
        return self.sigma_y, self.sigma_eta


def generate_dataset(spec: BenchmarkSpec) -> TrainingData:
    rng = np.random.default_rng(spec.seed)
    sd_y, sd_eta = spec.noise_sd()
    if spec.name == "bench1":
        xf = rng.random((spec.n, 2))
        y = bench1_zeta(xf) + sd_y * rng.standard_normal(spec.n)
        design = lhs(spec.m, 4, rng)
        xi3 = rng.permutation(np.resize([1.0, 2.0], spec.m))
        xi = np.column_stack([design[:, 2:], xi3])
        eta = bench1_sim(design[:, :2], xi) + sd_eta * rng.standard_normal(spec.m)
        return TrainingData(xf, y, design[:, :2], xi_to_params(xi), eta, n_continuous=2, n_submodels=2)
    # bench2: fixed monitoring grid repeated over time points, n ignored beyond it
    a, b = BENCH2_LOCATIONS
    xf = np.array([(ai, bi, ti) for ai in a for bi in b for ti in BENCH2_TIMES])
    y = bench2_zeta(xf) + sd_y * rng.standard_normal(xf.shape[0])
    design = lhs(spec.m, 4, rng)
    t_raw = bench2_unscale_t(design[:, 3])
    eta = bench2_sim(design[:, :3], t_raw) + sd_eta * rng.standard_normal(spec.m)
    return TrainingData(xf, y, design[:, :3], design[:, 3:], eta, n_continuous=1)


def default_layout(name: str, scheme: str) -> ThetaLayout:
    """Calibration layout per benchmark and scheme (SPS for bench1: ``{xi1}``, ``{xi2, xi3}``)."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if name == "bench1":
        groups = ((0,), (1, 2)) if scheme == "IDBC-SPS" else None
        return ThetaLayout(2, n_submodels=2, groups=groups)
    if name == "bench2":
        return ThetaLayout(1)
    raise ValueError(f"unknown benchmark {name!r}")


def default_basis(name: str) -> BasisConfig:
    return BasisConfig(discrepancy=None) if name == "bench2" else BasisConfig()


def evaluation_grid(name: str, size: int = 21) -> tuple[np.ndarray, np.ndarray]:
    """Regular test inputs and the true response there."""
    g = np.linspace(0.0, 1.0, size)
    if name == "bench1":
        pts = np.array([(a, b) for a in g for b in g])
        return pts, bench1_zeta(pts)
    pts = np.array([(a, b, t) for a in g for b in g for t in BENCH2_TIMES])
    return pts, bench2_zeta(pts)
