"""Binary treed partitions and step-function calibration parameters.

A tree is an immutable nest of :class:`Split` and :class:`Leaf` nodes.  The
left child of a split on dimension ``w`` at location ``s`` holds
``{x_w < s}``, the right child ``{x_w >= s}``.  Nodes are addressed by paths,
tuples of 0 (left) and 1 (right) from the root; the root has depth 0.

Split rules are restricted to a finite, data-adaptive candidate set (see
:class:`TreeSpace`), which makes the treed prior a proper distribution over a
finite set of trees once the depth cap is in force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np


class InadmissibleEdit(ValueError):
    """A structural edit whose preconditions do not hold."""


class NotGrowable(ValueError):
    """No admissible split rule exists for a node."""


@dataclass(frozen=True)
class Leaf:
    coef: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))


@dataclass(frozen=True)
class Split:
    dim: int
    loc: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]
Path = tuple[int, ...]


@dataclass(frozen=True)
class SplitRule:
    dim: int
    loc: float


# --------------------------------------------------------------------------
# Tree navigation
# --------------------------------------------------------------------------


def iter_nodes(tree: Node, path: Path = ()) -> Iterator[tuple[Path, Node]]:
    """Preorder traversal yielding ``(path, node)``."""
    yield path, tree
    if isinstance(tree, Split):
        yield from iter_nodes(tree.left, path + (0,))
        yield from iter_nodes(tree.right, path + (1,))


def leaves(tree: Node) -> list[tuple[Path, Leaf]]:
    return [(p, nd) for p, nd in iter_nodes(tree) if isinstance(nd, Leaf)]


def internal_nodes(tree: Node) -> list[tuple[Path, Split]]:
    return [(p, nd) for p, nd in iter_nodes(tree) if isinstance(nd, Split)]


def n_leaves(tree: Node) -> int:
    if isinstance(tree, Leaf):
        return 1
    return n_leaves(tree.left) + n_leaves(tree.right)


def get_node(tree: Node, path: Path) -> Node:
    node = tree
    for step in path:
        if not isinstance(node, Split):
            raise InadmissibleEdit(f"path {path} runs past a leaf")
        node = node.right if step else node.left
    return node


def set_node(tree: Node, path: Path, new: Node) -> Node:
    if not path:
        return new
    if not isinstance(tree, Split):
        raise InadmissibleEdit(f"path {path} runs past a leaf")
    if path[0]:
        return Split(tree.dim, tree.loc, tree.left, set_node(tree.right, path[1:], new))
    return Split(tree.dim, tree.loc, set_node(tree.left, path[1:], new), tree.right)


def prunable_paths(tree: Node) -> list[Path]:
    """Internal nodes whose two children are both leaves."""
    return [
        p
        for p, nd in internal_nodes(tree)
        if isinstance(nd.left, Leaf) and isinstance(nd.right, Leaf)
    ]


def prunable_count(tree: Node) -> int:
    return len(prunable_paths(tree))


def region_bounds(tree: Node, path: Path, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Box ``[lo, hi)`` of the node at ``path`` inside the unit cube."""
    lo, hi = np.zeros(q), np.ones(q)
    node = tree
    for step in path:
        if step:
            lo[node.dim] = max(lo[node.dim], node.loc)
            node = node.right
        else:
            hi[node.dim] = min(hi[node.dim], node.loc)
            node = node.left
    return lo, hi


def leaf_index(tree: Node, X: np.ndarray) -> np.ndarray:
    """Preorder leaf number containing each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(X.shape[0], dtype=int)
    counter = [0]

    def walk(node, rows):
        if isinstance(node, Leaf):
            out[rows] = counter[0]
            counter[0] += 1
            return
        mask = X[rows, node.dim] < node.loc
        walk(node.left, rows[mask])
        walk(node.right, rows[~mask])

    walk(tree, np.arange(X.shape[0]))
    return out


def evaluate_tree(tree: Node, X: np.ndarray) -> np.ndarray:
    """Leaf coefficients for every row of ``X`` (shape ``(N, k)``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    coefs = np.array([lf.coef for _, lf in leaves(tree)], dtype=float)
    return coefs[leaf_index(tree, X)]


def tree_to_record(tree: Node) -> dict:
    if isinstance(tree, Leaf):
        return {"kind": "leaf", "coef": list(tree.coef)}
    return {
        "kind": "split",
        "dim": tree.dim,
        "loc": tree.loc,
        "left": tree_to_record(tree.left),
        "right": tree_to_record(tree.right),
    }


def tree_from_record(rec: dict) -> Node:
    if rec["kind"] == "leaf":
        return Leaf(tuple(rec["coef"]))
    if rec["kind"] != "split":
        raise ValueError(f"unknown node kind {rec['kind']!r}")
    return Split(
        int(rec["dim"]), float(rec["loc"]), tree_from_record(rec["left"]), tree_from_record(rec["right"])
    )


def render_tree(tree: Node, names: list[str] | None = None, fmt: str = "{:.4g}") -> str:
    """Indented text rendering of a tree."""
    lines: list[str] = []

    def walk(node, indent, prefix):
        pad = "  " * indent
        if isinstance(node, Leaf):
            vals = ", ".join(fmt.format(c) for c in node.coef)
            lines.append(f"{pad}{prefix}leaf [{vals}]")
            return
        name = names[node.dim] if names else f"x_{node.dim + 1}"
        lines.append(f"{pad}{prefix}split {name} < {fmt.format(node.loc)}")
        walk(node.left, indent + 1, "yes: ")
        walk(node.right, indent + 1, "no:  ")

    walk(tree, 0, "")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Calibration parameter layout and state
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaLayout:
    """How calibration coordinates are grouped into separately partitioned blocks.

    Parameters are indexed ``0 .. n_continuous - 1`` for the continuous
    coordinates and ``n_continuous`` for the sub-model selector (present when
    ``n_submodels > 1``), which occupies ``n_submodels - 1`` contrast columns.
    ``groups`` lists parameter indices per tree; ``None`` means one tree for
    everything.  ``grid_levels`` turns continuous coordinates into a discrete
    grid ``{(k + 1/2) / levels}`` with a uniform prior.
    """

    n_continuous: int
    n_submodels: int = 1
    groups: tuple[tuple[int, ...], ...] | None = None
    grid_levels: int | None = None

    def __post_init__(self):
        n_params = self.n_continuous + (1 if self.n_submodels > 1 else 0)
        groups = self.groups
        if groups is None:
            groups = (tuple(range(n_params)),)
        groups = tuple(tuple(int(j) for j in g) for g in groups)
        flat = sorted(j for g in groups for j in g)
        if flat != list(range(n_params)) or any(len(g) == 0 for g in groups):
            raise ValueError("each calibration parameter must belong to exactly one group")
        object.__setattr__(self, "groups", groups)

    @property
    def n_params(self) -> int:
        return self.n_continuous + (1 if self.n_submodels > 1 else 0)

    @property
    def theta_dim(self) -> int:
        return self.n_continuous + self.n_submodels - 1

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def contrast_param(self) -> int | None:
        return self.n_continuous if self.n_submodels > 1 else None

    def param_columns(self, j: int) -> list[int]:
        if j < self.n_continuous:
            return [j]
        return list(range(self.n_continuous, self.theta_dim))

    def group_columns(self, c: int) -> list[int]:
        cols: list[int] = []
        for j in sorted(self.groups[c]):
            cols.extend(self.param_columns(j))
        return cols

    def group_continuous(self, c: int) -> list[int]:
        """Positions (within the group's coefficient vector) of continuous coordinates."""
        return [k for k, col in enumerate(self.group_columns(c)) if col < self.n_continuous]

    def group_contrast(self, c: int) -> list[int]:
        return [k for k, col in enumerate(self.group_columns(c)) if col >= self.n_continuous]

    def grid_values(self) -> np.ndarray:
        L = self.grid_levels
        return (np.arange(L) + 0.5) / L


@dataclass(frozen=True)
class CalibrationState:
    layout: ThetaLayout
    trees: tuple[Node, ...]

    def __post_init__(self):
        trees = tuple(self.trees)
        if len(trees) != self.layout.n_groups:
            raise ValueError("one tree per group is required")
        for c, tree in enumerate(trees):
            k = len(self.layout.group_columns(c))
            for _, lf in leaves(tree):
                if len(lf.coef) != k:
                    raise ValueError(f"group {c} leaves need {k} coefficients")
        object.__setattr__(self, "trees", trees)

    @classmethod
    def null(cls, layout: ThetaLayout, coef_by_group) -> "CalibrationState":
        return cls(layout, tuple(Leaf(tuple(c)) for c in coef_by_group))

    def with_tree(self, c: int, tree: Node) -> "CalibrationState":
        trees = list(self.trees)
        trees[c] = tree
        return CalibrationState(self.layout, tuple(trees))

    @property
    def n_leaves(self) -> tuple[int, ...]:
        return tuple(n_leaves(t) for t in self.trees)


def evaluate_theta_many(X: np.ndarray, state: CalibrationState) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty((X.shape[0], state.layout.theta_dim))
    for c, tree in enumerate(state.trees):
        out[:, state.layout.group_columns(c)] = evaluate_tree(tree, X)
    return out


def evaluate_theta(x, state: CalibrationState) -> np.ndarray:
    """Calibration parameter at a single input point."""
    return evaluate_theta_many(np.asarray(x, dtype=float).reshape(1, -1), state)[0]


# --------------------------------------------------------------------------
# Priors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TreePriorParams:
    """Treed-process prior and per-leaf coefficient priors.

    A node at depth ``d`` splits with probability ``alpha * (1 + d) ** -beta``
    when it admits a split rule, and with probability 0 otherwise.
    """

    alpha: float = 0.95
    beta: float = 2.0
    coef_a: float = 1.0
    coef_b: float = 1.0
    submodel_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.coef_a <= 0 or self.coef_b <= 0:
            raise ValueError("Beta coefficient prior parameters must be positive")
        if self.submodel_weights is not None:
            w = np.asarray(self.submodel_weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("submodel_weights must be a probability vector")
            object.__setattr__(self, "submodel_weights", tuple(float(v) for v in w))

    def split_prob(self, depth: int) -> float:
        return self.alpha * (1.0 + depth) ** (-self.beta)

    def weights(self, n_submodels: int) -> np.ndarray:
        if self.submodel_weights is None:
            return np.full(n_submodels, 1.0 / n_submodels)
        if len(self.submodel_weights) != n_submodels:
            raise ValueError("submodel_weights length differs from the number of sub-models")
        return np.asarray(self.submodel_weights)


def contrast_level(block) -> int:
    """Zero-based sub-model index of a contrast block (all zeros -> last level)."""
    block = np.asarray(block)
    hits = np.flatnonzero(block == 1.0)
    return int(hits[0]) if hits.size else block.shape[0]


def contrast_block(level: int, n_submodels: int) -> tuple[float, ...]:
    out = [0.0] * (n_submodels - 1)
    if level < n_submodels - 1:
        out[level] = 1.0
    return tuple(out)


def _log_beta_fn(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def beta_logpdf(x, a: float, b: float):
    """Beta log density; ``-inf`` outside the open unit interval."""
    if np.ndim(x) == 0:
        x = float(x)
        if not 0.0 < x < 1.0:
            return -math.inf
        return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - _log_beta_fn(a, b)
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xc = np.where(inside, x, 0.5)
    out = (a - 1.0) * np.log(xc) + (b - 1.0) * np.log1p(-xc) - _log_beta_fn(a, b)
    return np.where(inside, out, -np.inf)


def log_coef_prior(coef, c: int, layout: ThetaLayout, prior: TreePriorParams) -> float:
    """Log prior density of one leaf's coefficient vector in group ``c``."""
    coef = np.asarray(coef, dtype=float)
    total = 0.0
    cont = layout.group_continuous(c)
    if cont:
        vals = coef[cont]
        if layout.grid_levels:
            grid = layout.grid_values()
            if np.max(np.min(np.abs(vals[:, None] - grid[None, :]), axis=1)) > 1e-12:
                return -math.inf
            total -= len(cont) * math.log(layout.grid_levels)
        else:
            for v in vals:
                total += beta_logpdf(v, prior.coef_a, prior.coef_b)
    con = layout.group_contrast(c)
    if con:
        block = coef[con]
        if not np.all((block == 0.0) | (block == 1.0)) or block.sum() > 1:
            return -math.inf
        w = prior.weights(layout.n_submodels)[contrast_level(block)]
        total += math.log(w) if w > 0 else -math.inf
    return total


# --------------------------------------------------------------------------
# Split candidates and the treed prior
# --------------------------------------------------------------------------


class TreeSpace:
    """Admissible split rules for a given set of field inputs.

    By default the candidate cut points of a node on dimension ``w`` are the
    midpoints between consecutive distinct field-input values inside the node.
    ``fixed_candidates`` (one array per dimension) replaces them by a fixed
    grid.  Either way a cut is admissible only if both children keep at least
    ``min_leaf`` field points, and nodes at depth ``max_depth`` never split.
    """

    def __init__(self, field_inputs, min_leaf: int = 2, max_depth: int = 10, fixed_candidates=None):
        self.X = np.atleast_2d(np.asarray(field_inputs, dtype=float))
        if min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        self.min_leaf = int(min_leaf)
        self.max_depth = int(max_depth)
        self.q = self.X.shape[1]
        self.fixed = None
        if fixed_candidates is not None:
            self.fixed = [np.sort(np.asarray(c, dtype=float)) for c in fixed_candidates]
            if len(self.fixed) != self.q:
                raise ValueError("fixed_candidates needs one array per input dimension")
        self._cache: dict = {}

    @property
    def all_indices(self) -> np.ndarray:
        return np.arange(self.X.shape[0])

    def candidates(self, idx: np.ndarray, dim: int) -> np.ndarray:
        key = (idx.tobytes(), dim)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        vals = np.sort(self.X[idx, dim])
        if self.fixed is not None:
            cands = self.fixed[dim]
        else:
            u = np.unique(vals)
            cands = 0.5 * (u[:-1] + u[1:])
        if cands.size:
            n_left = np.searchsorted(vals, cands, side="left")
            ok = (n_left >= self.min_leaf) & (vals.size - n_left >= self.min_leaf)
            cands = cands[ok]
        if len(self._cache) > 200_000:
            self._cache.clear()
        self._cache[key] = cands
        return cands

    def admissible_dims(self, idx: np.ndarray) -> list[int]:
        if idx.size < 2 * self.min_leaf:
            return []
        return [d for d in range(self.q) if self.candidates(idx, d).size]

    def is_growable(self, idx: np.ndarray, depth: int) -> bool:
        return depth < self.max_depth and bool(self.admissible_dims(idx))

    def split_prob(self, idx: np.ndarray, depth: int, prior: TreePriorParams) -> float:
        return prior.split_prob(depth) if self.is_growable(idx, depth) else 0.0

    def rule_logprob(self, idx: np.ndarray, rule: SplitRule) -> float:
        """Log probability of ``rule`` under the uniform rule distribution at a node."""
        dims = self.admissible_dims(idx)
        if rule.dim not in dims:
            return -math.inf
        cands = self.candidates(idx, rule.dim)
        if not np.any(np.abs(cands - rule.loc) <= 1e-12):
            return -math.inf
        return -math.log(len(dims)) - math.log(cands.size)

    def sample_rule(self, idx: np.ndarray, rng: np.random.Generator) -> SplitRule:
        """Uniform dimension among admissible ones, then a uniform cut point."""
        dims = self.admissible_dims(idx)
        if not dims:
            raise NotGrowable("node admits no split rule")
        dim = dims[int(rng.integers(len(dims)))]
        cands = self.candidates(idx, dim)
        return SplitRule(dim, float(cands[int(rng.integers(cands.size))]))

    def node_members(self, tree: Node, path: Path) -> np.ndarray:
        idx = self.all_indices
        node = tree
        for step in path:
            mask = self.X[idx, node.dim] < node.loc
            idx = idx[~mask] if step else idx[mask]
            node = node.right if step else node.left
        return idx

    def growable_paths(self, tree: Node) -> list[Path]:
        out = []

        def walk(node, idx, path):
            if isinstance(node, Leaf):
                if self.is_growable(idx, len(path)):
                    out.append(path)
                return
            mask = self.X[idx, node.dim] < node.loc
            walk(node.left, idx[mask], path + (0,))
            walk(node.right, idx[~mask], path + (1,))

        walk(tree, self.all_indices, ())
        return out


def growable_count(tree: Node, space: TreeSpace) -> int:
    return len(space.growable_paths(tree))


def log_tree_prior(tree: Node, prior: TreePriorParams, space: TreeSpace) -> float:
    """Log treed-process prior: split, no-split and rule terms over all nodes."""

    def walk(node, idx, depth):
        p = space.split_prob(idx, depth, prior)
        if isinstance(node, Leaf):
            return math.log1p(-p)
        if p == 0.0:
            return -math.inf
        lr = space.rule_logprob(idx, SplitRule(node.dim, node.loc))
        if lr == -math.inf:
            return -math.inf
        mask = space.X[idx, node.dim] < node.loc
        return (
            math.log(p)
            + lr
            + walk(node.left, idx[mask], depth + 1)
            + walk(node.right, idx[~mask], depth + 1)
        )

    return walk(tree, space.all_indices, 0)


def sample_split_rule(tree: Node, path: Path, space: TreeSpace, rng) -> SplitRule:
    return space.sample_rule(space.node_members(tree, path), rng)


# --------------------------------------------------------------------------
# Structural edits
# --------------------------------------------------------------------------


def apply_grow(
    state: CalibrationState, group: int, path: Path, rule: SplitRule, child_coefs
) -> CalibrationState:
    """Split the leaf at ``path``; ``child_coefs = (left, right)``."""
    tree = state.trees[group]
    node = get_node(tree, path)
    if not isinstance(node, Leaf):
        raise InadmissibleEdit("grow target is not a leaf")
    left, right = child_coefs
    new = Split(int(rule.dim), float(rule.loc), Leaf(tuple(left)), Leaf(tuple(right)))
    return state.with_tree(group, set_node(tree, path, new))


def apply_prune(state: CalibrationState, group: int, path: Path, kept_coef) -> CalibrationState:
    """Collapse a split whose children are leaves into a single leaf."""
    tree = state.trees[group]
    node = get_node(tree, path)
    if not (isinstance(node, Split) and isinstance(node.left, Leaf) and isinstance(node.right, Leaf)):
        raise InadmissibleEdit("prune target is not a parent of two leaves")
    return state.with_tree(group, set_node(tree, path, Leaf(tuple(kept_coef))))


def apply_change(tree: Node, path: Path, rule: SplitRule) -> Node:
    node = get_node(tree, path)
    if not isinstance(node, Split):
        raise InadmissibleEdit("change target is not an internal node")
    return set_node(tree, path, Split(int(rule.dim), float(rule.loc), node.left, node.right))


def swappable_paths(tree: Node) -> list[Path]:
    """Internal nodes whose parent is internal (the child of a swap pair)."""
    return [p for p, nd in internal_nodes(tree) if p]


def apply_swap(tree: Node, path: Path) -> Node:
    """Exchange the split rules of the node at ``path`` and its parent.

    When both children of the parent are internal and share the same rule, the
    parent's rule is swapped with both of them.
    """
    if not path:
        raise InadmissibleEdit("the root has no parent to swap with")
    parent_path = path[:-1]
    parent = get_node(tree, parent_path)
    child = get_node(tree, path)
    if not (isinstance(parent, Split) and isinstance(child, Split)):
        raise InadmissibleEdit("swap needs an internal node with an internal parent")
    sib = parent.left if path[-1] else parent.right
    both = isinstance(sib, Split) and (sib.dim, sib.loc) == (child.dim, child.loc)

    def relabel(nd: Split) -> Split:
        return Split(parent.dim, parent.loc, nd.left, nd.right)

    new_child = relabel(child)
    if both:
        new_sib = relabel(sib)
    else:
        new_sib = sib
    left, right = (new_sib, new_child) if path[-1] else (new_child, new_sib)
    return set_node(tree, parent_path, Split(child.dim, child.loc, left, right))


def rotatable_paths(tree: Node) -> list[Path]:
    """Internal nodes splitting on the same dimension as their internal parent."""
    out = []
    for p, nd in internal_nodes(tree):
        if p:
            parent = get_node(tree, p[:-1])
            if parent.dim == nd.dim:
                out.append(p)
    return out


def apply_rotate(tree: Node, path: Path) -> Node:
    """Lift the node at ``path`` above its parent (a binary-search-tree rotation).

    Parent and child must split on the same dimension, in which case every
    leaf keeps exactly its region; only depths change.
    """
    if not path:
        raise InadmissibleEdit("the root cannot be rotated")
    parent_path = path[:-1]
    parent = get_node(tree, parent_path)
    child = get_node(tree, path)
    if not (isinstance(parent, Split) and isinstance(child, Split)) or parent.dim != child.dim:
        raise InadmissibleEdit("rotate needs parent and child splitting on the same dimension")
    if path[-1] == 0:
        new = Split(child.dim, child.loc, child.left, Split(parent.dim, parent.loc, child.right, parent.right))
    else:
        new = Split(child.dim, child.loc, Split(parent.dim, parent.loc, parent.left, child.left), child.right)
    return set_node(tree, parent_path, new)


def rotate_inverse_path(path: Path) -> Path:
    """Path of the demoted parent after :func:`apply_rotate` at ``path``."""
    return path[:-1] + (1 - path[-1],)
