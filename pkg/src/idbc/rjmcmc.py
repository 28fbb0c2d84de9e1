"""Reversible-jump MCMC over step-function calibration parameters.

The chain targets ``pi(coefficients, trees, phi, sigma^2 | z)`` with the
linear mean coefficients integrated out.  One call to :meth:`Sampler.step`
performs one randomly selected block update:

* ``grow_prune``  - grow/prune a leaf; continuous coordinates listed in
  ``MoveConfig.split_merge`` use split & merge, everything else birth & death
* ``birth_death`` - grow/prune with birth & death on every coordinate
* ``change``, ``swap``, ``rotate`` - fixed-dimension tree edits
* ``coef``  - componentwise random walk on one leaf coefficient (logit
  scale), or a prior redraw of a sub-model contrast block
* ``cov``   - random walk on one covariance parameter (log / logit scale)
* ``noise`` - random walk on one noise variance (log scale)

Every proposal computes its log acceptance ratio from full prior evaluations
and explicit forward/reverse proposal probabilities, so moves stay exact when
growability or candidate sets change between states.  In particular the
direction factor of a grow is ``n_G(T) / n_P(T')``: forward selection count
in the denominator, reverse in the numerator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special, stats

from .gp import BasisConfig, BetaPrior, GaussianModel, ModelHyperparams, TrainingData
from .links import InvalidCoefficient, Link, merge_values, sbe_logpdf, sbe_sample, split_values
from .partition import (
    CalibrationState,
    Leaf,
    Split,
    SplitRule,
    ThetaLayout,
    TreePriorParams,
    TreeSpace,
    apply_change,
    apply_grow,
    apply_prune,
    apply_rotate,
    apply_swap,
    beta_logpdf,
    contrast_block,
    contrast_level,
    evaluate_theta_many,
    get_node,
    internal_nodes,
    leaves,
    log_coef_prior,
    log_tree_prior,
    prunable_paths,
    region_bounds,
    rotatable_paths,
    rotate_inverse_path,
    set_node,
    swappable_paths,
)

MOVES = ("grow_prune", "birth_death", "change", "swap", "rotate", "coef", "cov", "noise")
TREE_MOVES = ("grow_prune", "birth_death", "change", "swap", "rotate")
LOG_HALF = math.log(0.5)


def log_structural_factor(depth: int, prior: TreePriorParams) -> float:
    """Log tree-prior ratio of growing a leaf at ``depth`` with growable children."""
    p0 = prior.split_prob(depth)
    p1 = prior.split_prob(depth + 1)
    return math.log(p0) + 2.0 * math.log1p(-p1) - math.log1p(-p0)


@dataclass(frozen=True)
class HyperPriors:
    """Priors on covariance and noise parameters.

    Inverse-gamma laws are parametrised by shape and scale.  A ``None`` noise
    scale is set to ``0.01 * var(z)`` when the sampler is built.
    """

    phi_a: float = 1.0
    phi_b: float = 1.0
    tau_shape: float = 2.0
    tau_scale: float = 1.0
    sigma2_y_shape: float = 2.0
    sigma2_y_scale: float | None = None
    sigma2_eta_shape: float = 2.0
    sigma2_eta_scale: float | None = None
    beta: BetaPrior = field(default_factory=BetaPrior)

    def resolved(self, z: np.ndarray) -> "HyperPriors":
        v = float(np.var(z)) if z.size > 1 else 1.0
        v = v if v > 0 else 1.0
        return replace(
            self,
            sigma2_y_scale=0.01 * v if self.sigma2_y_scale is None else self.sigma2_y_scale,
            sigma2_eta_scale=0.01 * v if self.sigma2_eta_scale is None else self.sigma2_eta_scale,
        )


def _ig_logpdf(x: float, shape: float, scale: float) -> float:
    if not x > 0.0:
        return -math.inf
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - scale / x


def _ig_median(shape: float, scale: float) -> float:
    return float(stats.invgamma.median(shape, scale=scale))


@dataclass(frozen=True)
class MoveConfig:
    grow_prune: float = 0.2
    birth_death: float = 0.0
    change: float = 0.1
    swap: float = 0.05
    rotate: float = 0.05
    coef: float = 0.3
    cov: float = 0.2
    noise: float = 0.1
    split_merge: tuple[int, ...] | None = None
    sbe_alpha: float = 2.0
    sbe_beta: float = 2.0
    sbe_eps: float = 2.0
    link: str = "bounded"
    birth_a: float | None = None
    birth_b: float | None = None
    adapt: bool = True
    target_accept: float = 0.44
    group_weights: tuple[float, ...] | None = None
    coef_scale: float = 1.0
    hyper_scale: float = 0.5

    def __post_init__(self):
        w = self.weights()
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("move weights must be nonnegative with at least one positive")
        if min(self.sbe_alpha, self.sbe_beta, self.sbe_eps) <= 0:
            raise ValueError("split-merge auxiliary parameters must be positive")

    def weights(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in MOVES], dtype=float)

    def without_tree_moves(self) -> "MoveConfig":
        return replace(self, **{name: 0.0 for name in TREE_MOVES})


@dataclass(frozen=True, eq=False)
class ChainState:
    calib: CalibrationState
    hp: ModelHyperparams
    loglik: float
    logprior: float

    @property
    def logpost(self) -> float:
        return self.loglik + self.logprior


@dataclass(frozen=True, eq=False)
class Proposal:
    state: ChainState | None
    log_ratio: float
    info: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ChainSample:
    iteration: int
    calib: CalibrationState
    hp: ModelHyperparams
    loglik: float
    logprior: float


@dataclass(eq=False)
class PosteriorSamples:
    samples: list[ChainSample]
    layout: ThetaLayout
    seed: int | None = None
    n_iter: int = 0
    burn_in: int = 0
    thin: int = 1
    acceptance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def acceptance_rates(self) -> dict[str, float]:
        return {k: (a / p if p else float("nan")) for k, (p, a) in self.acceptance.items()}


class Sampler:
    """Random-scan reversible-jump sampler for one dataset and model setup."""

    def __init__(
        self,
        data: TrainingData,
        layout: ThetaLayout,
        tree_prior: TreePriorParams = TreePriorParams(),
        hyper_priors: HyperPriors = HyperPriors(),
        moves: MoveConfig = MoveConfig(),
        basis: BasisConfig = BasisConfig(),
        min_leaf: int = 2,
        max_depth: int = 10,
        fixed_candidates=None,
        use_likelihood: bool = True,
        check_cache: bool = False,
    ):
        if layout.theta_dim != data.theta_dim:
            raise ValueError("layout and data disagree on the calibration dimension")
        self.data = data
        self.layout = layout
        self.tree_prior = tree_prior
        self.hyper = hyper_priors.resolved(data.z)
        self.moves = moves
        self.basis = basis
        self.model = GaussianModel(data, basis)
        self.space = TreeSpace(data.field_inputs, min_leaf, max_depth, fixed_candidates)
        self.link = Link(moves.link)
        self.use_likelihood = use_likelihood
        self.check_cache = check_cache
        self.adapting = moves.adapt
        self._scales: dict = {}
        self._adapt_counts: dict = {}
        self.counters: dict[str, list[int]] = {}
        sm = moves.split_merge
        if sm is None:
            sm = tuple(range(layout.n_continuous))
        if layout.grid_levels:
            sm = ()
        self._sm_params = frozenset(int(j) for j in sm if j < layout.n_continuous)
        w = moves.weights()
        self._move_p = w / w.sum()
        gw = moves.group_weights
        gw = np.ones(layout.n_groups) if gw is None else np.asarray(gw, dtype=float)
        if gw.shape != (layout.n_groups,) or np.any(gw < 0) or gw.sum() <= 0:
            raise ValueError("group_weights must have one nonnegative entry per group")
        self._group_p = gw / gw.sum()

    # ------------------------------------------------------------------
    # target density pieces
    # ------------------------------------------------------------------

    def loglik(self, calib: CalibrationState, hp: ModelHyperparams) -> float:
        if not self.use_likelihood:
            return 0.0
        theta = evaluate_theta_many(self.data.field_inputs, calib)
        return self.model.loglik(theta, hp)

    def log_prior_calib(self, calib: CalibrationState) -> float:
        total = 0.0
        for c, tree in enumerate(calib.trees):
            total += log_tree_prior(tree, self.tree_prior, self.space)
            if total == -math.inf:
                return total
            for _, lf in leaves(tree):
                total += log_coef_prior(lf.coef, c, self.layout, self.tree_prior)
        return total

    def _hp_scalars(self, kind: str) -> list[tuple[str, int | None]]:
        if kind == "cov":
            out: list = [("tau_s", None)]
            if self.basis.has_discrepancy:
                out.append(("tau_d", None))
            out += [("phi_sx", i) for i in range(self.data.q)]
            out += [("phi_st", i) for i in range(self.data.theta_dim)]
            if self.basis.has_discrepancy:
                out += [("phi_d", i) for i in range(self.data.q)]
            return out
        out = [("sigma2_y", None)]
        if self.data.m:
            out.append(("sigma2_eta", None))
        return out

    def log_prior_hp(self, hp: ModelHyperparams) -> float:
        h = self.hyper
        total = _ig_logpdf(hp.tau_s, h.tau_shape, h.tau_scale)
        phis = list(hp.phi_sx) + list(hp.phi_st)
        if self.basis.has_discrepancy:
            total += _ig_logpdf(hp.tau_d, h.tau_shape, h.tau_scale)
            phis += list(hp.phi_d)
        total += sum(beta_logpdf(v, h.phi_a, h.phi_b) for v in phis)
        total += _ig_logpdf(hp.sigma2_y, h.sigma2_y_shape, h.sigma2_y_scale)
        if self.data.m:
            total += _ig_logpdf(hp.sigma2_eta, h.sigma2_eta_shape, h.sigma2_eta_scale)
        return total

    def make_state(self, calib: CalibrationState, hp: ModelHyperparams) -> ChainState:
        return ChainState(calib, hp, self.loglik(calib, hp), self.log_prior_calib(calib) + self.log_prior_hp(hp))

    def initial_coefficients(self, c: int) -> tuple[float, ...]:
        lay, pr = self.layout, self.tree_prior
        out = []
        for col in lay.group_columns(c):
            if col < lay.n_continuous:
                mean = pr.coef_a / (pr.coef_a + pr.coef_b)
                if lay.grid_levels:
                    grid = lay.grid_values()
                    mean = float(grid[np.argmin(np.abs(grid - mean))])
                out.append(mean)
        if lay.group_contrast(c):
            level = int(np.argmax(pr.weights(lay.n_submodels)))
            out.extend(contrast_block(level, lay.n_submodels))
        return tuple(out)

    def initial_hyperparams(self) -> ModelHyperparams:
        h = self.hyper
        tau = _ig_median(h.tau_shape, h.tau_scale)
        return ModelHyperparams(
            tau_s=tau,
            tau_d=tau,
            phi_sx=(0.5,) * self.data.q,
            phi_st=(0.5,) * self.data.theta_dim,
            phi_d=(0.5,) * self.data.q if self.basis.has_discrepancy else (),
            sigma2_y=_ig_median(h.sigma2_y_shape, h.sigma2_y_scale),
            sigma2_eta=_ig_median(h.sigma2_eta_shape, h.sigma2_eta_scale),
            beta_prior=h.beta,
        )

    def initial_state(self, hp: ModelHyperparams | None = None) -> ChainState:
        calib = CalibrationState.null(
            self.layout, [self.initial_coefficients(c) for c in range(self.layout.n_groups)]
        )
        return self.make_state(calib, hp if hp is not None else self.initial_hyperparams())

    # ------------------------------------------------------------------
    # coefficient proposals used by grow / prune
    # ------------------------------------------------------------------

    def _units(self, c: int, sm_allowed: bool) -> tuple[list[int], list[list[int]]]:
        """Split-merge positions and birth-death units (lists of positions) of group ``c``."""
        lay = self.layout
        cols = lay.group_columns(c)
        sm, bd = [], []
        for k, col in enumerate(cols):
            if col < lay.n_continuous:
                if sm_allowed and col in self._sm_params:
                    sm.append(k)
                else:
                    bd.append([k])
        con = lay.group_contrast(c)
        if con:
            bd.append(con)
        return sm, bd

    def _q_logpdf(self, values, unit: list[int], c: int) -> float:
        lay, pr = self.layout, self.tree_prior
        cols = lay.group_columns(c)
        if cols[unit[0]] >= lay.n_continuous:
            w = pr.weights(lay.n_submodels)[contrast_level(values)]
            return math.log(w) if w > 0 else -math.inf
        v = float(values[0])
        if lay.grid_levels:
            return -math.log(lay.grid_levels)
        a = self.moves.birth_a if self.moves.birth_a is not None else pr.coef_a
        b = self.moves.birth_b if self.moves.birth_b is not None else pr.coef_b
        return beta_logpdf(v, a, b)

    def _q_sample(self, unit: list[int], c: int, rng) -> list[float]:
        lay, pr = self.layout, self.tree_prior
        cols = lay.group_columns(c)
        if cols[unit[0]] >= lay.n_continuous:
            level = int(rng.choice(lay.n_submodels, p=pr.weights(lay.n_submodels)))
            return list(contrast_block(level, lay.n_submodels))
        if lay.grid_levels:
            return [float(lay.grid_values()[int(rng.integers(lay.grid_levels))])]
        a = self.moves.birth_a if self.moves.birth_a is not None else pr.coef_a
        b = self.moves.birth_b if self.moves.birth_b is not None else pr.coef_b
        return [float(rng.beta(a, b))]

    def _finish(self, state: ChainState, calib: CalibrationState, log_q: float, info: dict) -> Proposal:
        """Evaluate the proposed calibration state and assemble the ratio."""
        lp = self.log_prior_calib(calib)
        if lp == -math.inf:
            return Proposal(None, -math.inf, info)
        lp += self.log_prior_hp(state.hp)
        ll = self.loglik(calib, state.hp)
        new = ChainState(calib, state.hp, ll, lp)
        if ll == -math.inf:
            return Proposal(new, -math.inf, info)
        return Proposal(new, (ll - state.loglik) + (lp - state.logprior) + log_q, info)

    # ------------------------------------------------------------------
    # grow / prune
    # ------------------------------------------------------------------

    def propose_grow(
        self, state: ChainState, group: int, rng, split_merge: bool = True, choice: dict | None = None
    ) -> Proposal:
        """Grow a leaf.  ``choice`` pins the random decisions (testing hook)."""
        choice = choice or {}
        tree = state.calib.trees[group]
        grow_paths = self.space.growable_paths(tree)
        if not grow_paths:
            return Proposal(None, -math.inf, {"skipped": True})
        path = choice.get("path")
        if path is None:
            path = grow_paths[int(rng.integers(len(grow_paths)))]
        idx = self.space.node_members(tree, path)
        rule = choice.get("rule") or self.space.sample_rule(idx, rng)
        copy_side = choice.get("copy_side")
        if copy_side is None:
            copy_side = int(rng.integers(2))
        parent = np.asarray(get_node(tree, path).coef, dtype=float)
        lo, hi = region_bounds(tree, path, self.data.q)
        s1, s2 = lo[rule.dim], hi[rule.dim]
        sm, bd = self._units(group, split_merge)
        left, right = parent.copy(), parent.copy()
        log_q_fwd = -math.log(len(grow_paths)) + self.space.rule_logprob(idx, rule) + LOG_HALF
        log_jac = 0.0
        fresh = choice.get("fresh", {})
        info = {"path": path, "rule": rule, "copy_side": copy_side, "group": group, "u": {}, "fresh": {}}
        for unit in bd:
            key = tuple(unit)
            vals = fresh.get(key) or self._q_sample(unit, group, rng)
            info["fresh"][key] = list(vals)
            target = right if copy_side == 0 else left
            target[unit] = vals
            log_q_fwd += self._q_logpdf(vals, unit, group)
        mv = self.moves
        for k in sm:
            u = choice.get("u", {}).get(k)
            if u is None:
                u = float(sbe_sample(rng, mv.sbe_alpha, mv.sbe_beta, mv.sbe_eps))
            info["u"][k] = u
            try:
                g0 = float(self.link.g(parent[k]))
                g1, g2 = split_values(g0, u, s1, rule.loc, s2)
                v1, v2 = float(self.link.g_inv(g1)), float(self.link.g_inv(g2))
                log_jac += self.link.log_jacobian(parent[k], v1, v2)
            except InvalidCoefficient:
                return Proposal(None, -math.inf, info)
            if not (0.0 < v1 < 1.0 and 0.0 < v2 < 1.0):
                return Proposal(None, -math.inf, info)
            left[k], right[k] = v1, v2
            log_q_fwd += float(sbe_logpdf(u, mv.sbe_alpha, mv.sbe_beta, mv.sbe_eps))
        calib = apply_grow(state.calib, group, path, rule, (tuple(left), tuple(right)))
        n_p_new = len(prunable_paths(calib.trees[group]))
        log_q_rev = -math.log(n_p_new) + LOG_HALF
        return self._finish(state, calib, log_q_rev - log_q_fwd + log_jac, info)

    def propose_prune(
        self, state: ChainState, group: int, rng, split_merge: bool = True, choice: dict | None = None
    ) -> Proposal:
        choice = choice or {}
        tree = state.calib.trees[group]
        paths = prunable_paths(tree)
        if not paths:
            return Proposal(None, -math.inf, {"skipped": True})
        path = choice.get("path")
        if path is None:
            path = paths[int(rng.integers(len(paths)))]
        kept = choice.get("kept_side")
        if kept is None:
            kept = int(rng.integers(2))
        node = get_node(tree, path)
        c_left = np.asarray(node.left.coef, dtype=float)
        c_right = np.asarray(node.right.coef, dtype=float)
        lo, hi = region_bounds(tree, path, self.data.q)
        s1, s2 = lo[node.dim], hi[node.dim]
        sm, bd = self._units(group, split_merge)
        merged = (c_left if kept == 0 else c_right).copy()
        other = c_right if kept == 0 else c_left
        info = {"path": path, "kept_side": kept, "group": group, "u": {}}
        log_q_grow = LOG_HALF
        for unit in bd:
            log_q_grow += self._q_logpdf(other[unit], unit, group)
        log_jac = 0.0
        mv = self.moves
        for k in sm:
            try:
                g1, g2 = float(self.link.g(c_left[k])), float(self.link.g(c_right[k]))
            except InvalidCoefficient:
                return Proposal(None, -math.inf, info)
            g0, u = merge_values(g1, g2, s1, node.loc, s2)
            info["u"][k] = u
            if abs(u) >= mv.sbe_eps:
                return Proposal(None, -math.inf, info)
            v0 = float(self.link.g_inv(g0))
            if not 0.0 < v0 < 1.0:
                return Proposal(None, -math.inf, info)
            merged[k] = v0
            log_q_grow += float(sbe_logpdf(u, mv.sbe_alpha, mv.sbe_beta, mv.sbe_eps))
            log_jac += self.link.log_jacobian(v0, c_left[k], c_right[k])
        calib = apply_prune(state.calib, group, path, tuple(merged))
        new_tree = calib.trees[group]
        n_g_new = len(self.space.growable_paths(new_tree))
        if n_g_new == 0:
            return Proposal(None, -math.inf, info)
        idx = self.space.node_members(new_tree, path)
        log_q_grow += -math.log(n_g_new) + self.space.rule_logprob(idx, SplitRule(node.dim, node.loc))
        log_q_prune = -math.log(len(paths)) + LOG_HALF
        return self._finish(state, calib, log_q_grow - log_q_prune - log_jac, info)

    # ------------------------------------------------------------------
    # fixed-dimension tree moves
    # ------------------------------------------------------------------

    def propose_change(self, state: ChainState, group: int, rng, choice: dict | None = None) -> Proposal:
        choice = choice or {}
        tree = state.calib.trees[group]
        nodes = internal_nodes(tree)
        if not nodes:
            return Proposal(None, -math.inf, {"skipped": True})
        path = choice.get("path")
        if path is None:
            path = nodes[int(rng.integers(len(nodes)))][0]
        node = get_node(tree, path)
        idx = self.space.node_members(tree, path)
        rule = choice.get("rule") or self.space.sample_rule(idx, rng)
        old = SplitRule(node.dim, node.loc)
        log_q = self.space.rule_logprob(idx, old) - self.space.rule_logprob(idx, rule)
        new_tree = apply_change(tree, path, rule)
        return self._finish(state, state.calib.with_tree(group, new_tree), log_q, {"path": path, "rule": rule})

    @staticmethod
    def _swap_multiplicity(tree, path) -> int:
        parent = get_node(tree, path[:-1])
        child = get_node(tree, path)
        sib = parent.left if path[-1] else parent.right
        return 2 if isinstance(sib, Split) and (sib.dim, sib.loc) == (child.dim, child.loc) else 1

    def propose_swap(self, state: ChainState, group: int, rng, choice: dict | None = None) -> Proposal:
        choice = choice or {}
        tree = state.calib.trees[group]
        paths = swappable_paths(tree)
        if not paths:
            return Proposal(None, -math.inf, {"skipped": True})
        path = choice.get("path")
        if path is None:
            path = paths[int(rng.integers(len(paths)))]
        new_tree = apply_swap(tree, path)
        n_new = len(swappable_paths(new_tree))
        log_q = (
            math.log(self._swap_multiplicity(new_tree, path) / n_new)
            - math.log(self._swap_multiplicity(tree, path) / len(paths))
        )
        return self._finish(state, state.calib.with_tree(group, new_tree), log_q, {"path": path})

    def propose_rotate(self, state: ChainState, group: int, rng, choice: dict | None = None) -> Proposal:
        choice = choice or {}
        tree = state.calib.trees[group]
        paths = rotatable_paths(tree)
        if not paths:
            return Proposal(None, -math.inf, {"skipped": True})
        path = choice.get("path")
        if path is None:
            path = paths[int(rng.integers(len(paths)))]
        new_tree = apply_rotate(tree, path)
        log_q = math.log(len(paths)) - math.log(len(rotatable_paths(new_tree)))
        info = {"path": path, "reverse_path": rotate_inverse_path(path)}
        return self._finish(state, state.calib.with_tree(group, new_tree), log_q, info)

    # ------------------------------------------------------------------
    # coefficient and hyperparameter updates
    # ------------------------------------------------------------------

    def _scale(self, key, default: float) -> float:
        return self._scales.setdefault(key, default)

    def _adapt(self, key, log_ratio: float):
        if not self.adapting:
            return
        k = self._adapt_counts.get(key, 0) + 1
        self._adapt_counts[key] = k
        acc = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
        gain = min(0.5, k ** -0.6)
        self._scales[key] = self._scales[key] * math.exp(gain * (acc - self.moves.target_accept))

    def propose_coefficient(self, state: ChainState, group: int, rng, choice: dict | None = None) -> Proposal:
        """Random-walk one continuous coefficient of one leaf or redraw a contrast block."""
        choice = choice or {}
        lay = self.layout
        tree = state.calib.trees[group]
        lvs = leaves(tree)
        path = choice.get("path")
        if path is None:
            path = lvs[int(rng.integers(len(lvs)))][0]
        cont = lay.group_continuous(group)
        con = lay.group_contrast(group)
        units: list = [("cont", k) for k in cont] + ([("contrast", None)] if con else [])
        unit = choice.get("unit") or units[int(rng.integers(len(units)))]
        coef = np.asarray(get_node(tree, path).coef, dtype=float)
        new = coef.copy()
        log_q = 0.0
        key = None
        if unit[0] == "contrast":
            level = choice.get("level")
            w = self.tree_prior.weights(lay.n_submodels)
            if level is None:
                level = int(rng.choice(lay.n_submodels, p=w))
            new[con] = contrast_block(level, lay.n_submodels)
            log_q = math.log(w[contrast_level(coef[con])]) - math.log(w[level])
        else:
            k = unit[1]
            if lay.grid_levels:
                grid = lay.grid_values()
                pos = int(np.argmin(np.abs(grid - coef[k])))
                step = choice.get("step") or (1 if rng.random() < 0.5 else -1)
                if not 0 <= pos + step < lay.grid_levels:
                    return Proposal(None, -math.inf, {"path": path, "unit": unit})
                new[k] = grid[pos + step]
            else:
                key = ("coef", group, k)
                scale = self._scale(key, self.moves.coef_scale)
                y = float(special.logit(coef[k]))
                y_new = choice.get("y_new")
                if y_new is None:
                    y_new = y + scale * float(rng.standard_normal())
                v = float(special.expit(y_new))
                if not 0.0 < v < 1.0:
                    return Proposal(None, -math.inf, {"path": path, "unit": unit, "key": key})
                new[k] = v
                log_q = math.log(v * (1.0 - v)) - math.log(coef[k] * (1.0 - coef[k]))
        tree_new = set_node(tree, path, Leaf(tuple(new)))
        prop = self._finish(state, state.calib.with_tree(group, tree_new), log_q, {"path": path, "unit": unit})
        prop.info["key"] = key
        return prop

    def propose_hyper(self, state: ChainState, kind: str, rng, choice: dict | None = None) -> Proposal:
        """Random walk on one covariance (``kind='cov'``) or noise (``'noise'``) scalar."""
        choice = choice or {}
        scalars = self._hp_scalars(kind)
        name, i = choice.get("scalar") or scalars[int(rng.integers(len(scalars)))]
        hp = state.hp
        key = ("hp", name, i)
        scale = self._scale(key, self.moves.hyper_scale)
        eps = choice.get("eps")
        if eps is None:
            eps = float(rng.standard_normal())
        if i is None:
            old = getattr(hp, name)
            new = old * math.exp(scale * eps)
            if not (new > 0 and np.isfinite(new)):
                return Proposal(None, -math.inf, {"key": key})
            log_q = math.log(new) - math.log(old)
            hp_new = replace(hp, **{name: new})
        else:
            vec = list(getattr(hp, name))
            old = vec[i]
            new = float(special.expit(special.logit(old) + scale * eps))
            if not 0.0 < new < 1.0:
                return Proposal(None, -math.inf, {"key": key})
            vec[i] = new
            log_q = math.log(new * (1.0 - new)) - math.log(old * (1.0 - old))
            hp_new = replace(hp, **{name: tuple(vec)})
        ll = self.loglik(state.calib, hp_new)
        lp = state.logprior - self.log_prior_hp(hp) + self.log_prior_hp(hp_new)
        new_state = ChainState(state.calib, hp_new, ll, lp)
        if ll == -math.inf:
            return Proposal(new_state, -math.inf, {"key": key})
        return Proposal(new_state, (ll - state.loglik) + (lp - state.logprior) + log_q, {"key": key})

    # ------------------------------------------------------------------
    # kernel
    # ------------------------------------------------------------------

    def _count(self, name: str, accepted: bool):
        c = self.counters.setdefault(name, [0, 0])
        c[0] += 1
        c[1] += int(accepted)

    def _accept(self, state: ChainState, prop: Proposal, rng) -> tuple[ChainState, bool]:
        if prop.state is None or prop.log_ratio == -math.inf:
            return state, False
        if prop.log_ratio >= 0 or math.log(rng.random()) < prop.log_ratio:
            if self.check_cache:
                fresh = self.make_state(prop.state.calib, prop.state.hp)
                assert abs(fresh.loglik - prop.state.loglik) < 1e-8
                assert abs(fresh.logprior - prop.state.logprior) < 1e-8
            return prop.state, True
        return state, False

    def step(self, state: ChainState, rng: np.random.Generator) -> ChainState:
        move = MOVES[int(rng.choice(len(MOVES), p=self._move_p))]
        group = int(rng.choice(self.layout.n_groups, p=self._group_p)) if move in TREE_MOVES or move == "coef" else 0
        if move in ("grow_prune", "birth_death"):
            sm = move == "grow_prune"
            if rng.random() < 0.5:
                prop = self.propose_grow(state, group, rng, split_merge=sm)
            else:
                prop = self.propose_prune(state, group, rng, split_merge=sm)
        elif move == "change":
            prop = self.propose_change(state, group, rng)
        elif move == "swap":
            prop = self.propose_swap(state, group, rng)
        elif move == "rotate":
            prop = self.propose_rotate(state, group, rng)
        elif move == "coef":
            prop = self.propose_coefficient(state, group, rng)
        else:
            prop = self.propose_hyper(state, move, rng)
        new, accepted = self._accept(state, prop, rng)
        key = prop.info.get("key")
        if key is not None and key in self._scales:
            self._adapt(key, prop.log_ratio)
        self._count(move, accepted)
        return new

    def run(
        self,
        n_iter: int,
        burn_in: int = 0,
        thin: int = 1,
        seed: int | None = None,
        init: ChainState | None = None,
        progress=None,
    ) -> PosteriorSamples:
        """Iterate the kernel and keep every ``thin``-th post-burn-in state.

        Random-walk scales adapt during burn-in (when enabled) and are frozen
        afterwards.
        """
        if not n_iter > burn_in >= 0:
            raise ValueError("need n_iter > burn_in >= 0")
        if thin < 1:
            raise ValueError("thin must be >= 1")
        rng = np.random.default_rng(seed)
        state = init if init is not None else self.initial_state()
        self.counters = {}
        kept: list[ChainSample] = []
        for it in range(n_iter):
            self.adapting = self.moves.adapt and it < burn_in
            state = self.step(state, rng)
            if it >= burn_in and (it - burn_in) % thin == 0:
                kept.append(ChainSample(it, state.calib, state.hp, state.loglik, state.logprior))
            if progress is not None:
                progress(it, state)
        return PosteriorSamples(
            samples=kept,
            layout=self.layout,
            seed=seed,
            n_iter=n_iter,
            burn_in=burn_in,
            thin=thin,
            acceptance={k: tuple(v) for k, v in self.counters.items()},
        )


def run_chain(data, layout, n_iter, burn_in=0, thin=1, seed=None, **kwargs) -> PosteriorSamples:
    """Build a :class:`Sampler` from keyword settings and run it."""
    return Sampler(data, layout, **kwargs).run(n_iter, burn_in, thin, seed)
