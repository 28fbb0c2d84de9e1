"""Link functions for split & merge proposals and the scaled Beta law.

Each link ``g`` maps a coefficient domain one-to-one onto the real line.  The
canonical domains are ``R`` (unbounded), ``(0, inf)`` (lower), ``(-inf, 0)``
(upper) and ``(0, 1)`` (bounded); ``lo``/``hi`` shift and rescale them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .partition import beta_logpdf

LINK_KINDS = ("unbounded", "lower", "upper", "bounded")


class InvalidCoefficient(ValueError):
    """Coefficient on or outside the boundary of its link domain."""


@dataclass(frozen=True)
class Link:
    kind: str = "bounded"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ValueError(f"unknown link kind {self.kind!r}")
        if self.kind == "bounded" and not self.hi > self.lo:
            raise ValueError("bounded link needs hi > lo")

    def canonical(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "bounded":
            c = (x - self.lo) / (self.hi - self.lo)
            if np.any(c <= 0.0) or np.any(c >= 1.0):
                raise InvalidCoefficient("coefficient outside the open bounded range")
        elif self.kind == "lower":
            c = x - self.lo
            if np.any(c <= 0.0):
                raise InvalidCoefficient("coefficient not above the lower bound")
        elif self.kind == "upper":
            c = x - self.hi
            if np.any(c >= 0.0):
                raise InvalidCoefficient("coefficient not below the upper bound")
        else:
            c = x
        return c

    def g(self, x):
        c = self.canonical(x)
        if self.kind == "bounded":
            return special.logit(c)
        if self.kind == "lower":
            return np.log(c)
        if self.kind == "upper":
            return np.log(-c)
        return c

    def g_inv(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "bounded":
            return self.lo + (self.hi - self.lo) * special.expit(y)
        if self.kind == "lower":
            return self.lo + np.exp(y)
        if self.kind == "upper":
            return self.hi - np.exp(y)
        return y

    def dg(self, x):
        """Derivative of ``g`` at ``x``."""
        c = self.canonical(x)
        if self.kind == "bounded":
            return 1.0 / ((self.hi - self.lo) * c * (1.0 - c))
        if self.kind in ("lower", "upper"):
            return 1.0 / c
        return np.ones_like(c)

    def dg_inv(self, y):
        """Derivative of ``g^{-1}`` at ``y``."""
        y = np.asarray(y, dtype=float)
        if self.kind == "bounded":
            s = special.expit(y)
            return (self.hi - self.lo) * s * (1.0 - s)
        if self.kind == "lower":
            return np.exp(y)
        if self.kind == "upper":
            return -np.exp(y)
        return np.ones_like(y)

    def log_jacobian(self, v0, v1, v2) -> float:
        """``log |d(v1, v2) / d(v0, u)|`` for the split map on the link scale."""
        j = self.dg_inv(self.g(v1)) * self.dg_inv(self.g(v2)) * self.dg(v0)
        return float(np.log(np.abs(j)))


def canonical_link(kind: str) -> Link:
    """Link on the canonical domain of ``kind`` (bounds at 0 and 1)."""
    return Link(kind) if kind == "bounded" else Link(kind, 0.0, 0.0)


def link_g(x, kind: str = "bounded"):
    return canonical_link(kind).g(x)


def link_g_inv(y, kind: str = "bounded"):
    return canonical_link(kind).g_inv(y)


def jacobian_term(v0, v1, v2, kind: str = "bounded") -> float:
    """Closed-form ``|J|`` of the split map on the canonical domain."""
    canonical_link(kind).canonical(np.array([v0, v1, v2]))
    if kind == "unbounded":
        return 1.0
    if kind in ("lower", "upper"):
        return abs(v1 * v2 / v0)
    return v1 * v2 * (1.0 - v1) * (1.0 - v2) / (v0 * (1.0 - v0))


# --------------------------------------------------------------------------
# Beta law on [-eps, eps]
# --------------------------------------------------------------------------


def sbe_logpdf(u, a: float, b: float, eps: float):
    return beta_logpdf((u + eps) / (2.0 * eps), a, b) - math.log(2.0 * eps)


def sbe_sample(rng: np.random.Generator, a: float, b: float, eps: float, size=None):
    return eps * (2.0 * rng.beta(a, b, size=size) - 1.0)


def split_values(g0, u, s1: float, s_star: float, s2: float):
    """Children on the link scale: length-weighted mean ``g0``, difference ``u``.

    Left child covers ``[s1, s*)``, right child ``[s*, s2)``.
    """
    w1 = (s_star - s1) / (s2 - s1)
    w2 = 1.0 - w1
    return g0 - w2 * u, g0 + w1 * u


def merge_values(g1, g2, s1: float, s_star: float, s2: float):
    """Inverse of :func:`split_values`: returns ``(g0, u)``."""
    w1 = (s_star - s1) / (s2 - s1)
    return w1 * g1 + (1.0 - w1) * g2, g2 - g1
