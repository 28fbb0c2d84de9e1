"""Run configuration schema (YAML) and its translation into sampler settings.

Example::

    data:
      field: field.csv          # columns x_1..x_q, y
      simulator: sim.csv        # columns x_1..x_q, t_1..t_p, [model_id], eta
    scheme: IDBC-SPS
    groups: [[0], [1, 2]]       # calibration parameters sharing a tree
    prior:
      tree_alpha: 0.95
      tree_beta: 2.0
    moves:
      split_merge: [0, 1]
    mcmc:
      iterations: 20000
      burn_in: 10000
      seed: 1
    probes: [[0.5, 0.4]]
    output: run1

``data`` may instead name a benchmark: ``data: {benchmark: bench1, n: 50}``.
Unknown keys are rejected everywhere.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .bench import BENCHMARKS, SCHEMES, BenchmarkSpec, default_basis, default_layout
from .gp import BasisConfig
from .partition import ThetaLayout, TreePriorParams
from .rjmcmc import HyperPriors, MoveConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSection(_Strict):
    field: Optional[str] = None
    simulator: Optional[str] = None
    benchmark: Optional[str] = None
    n: int = Field(50, ge=1)
    m: int = Field(120, ge=1)
    sigma_y: float = Field(0.02, ge=0)
    sigma_eta: float = Field(0.01, ge=0)
    seed: int = 0
    noise_is_variance: bool = False

    @model_validator(mode="after")
    def _one_source(self):
        files = self.field is not None or self.simulator is not None
        if files == (self.benchmark is not None):
            raise ValueError("give either field+simulator files or a benchmark name")
        if files and (self.field is None or self.simulator is None):
            raise ValueError("both field and simulator files are required")
        if self.benchmark is not None and self.benchmark not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {self.benchmark!r}")
        return self

    def benchmark_spec(self) -> BenchmarkSpec:
        return BenchmarkSpec(
            self.benchmark, self.n, self.m, self.sigma_y, self.sigma_eta, self.seed, self.noise_is_variance
        )


class PriorSection(_Strict):
    tree_alpha: float = Field(0.95, gt=0, lt=1)
    tree_beta: float = Field(2.0, ge=0)
    coef_a: float = Field(1.0, gt=0)
    coef_b: float = Field(1.0, gt=0)
    submodel_weights: Optional[list[float]] = None
    phi_a: float = Field(1.0, gt=0)
    phi_b: float = Field(1.0, gt=0)
    tau_shape: float = Field(2.0, gt=0)
    tau_scale: float = Field(1.0, gt=0)
    sigma2_y_shape: float = Field(2.0, gt=0)
    sigma2_y_scale: Optional[float] = Field(None, gt=0)
    sigma2_eta_shape: float = Field(2.0, gt=0)
    sigma2_eta_scale: Optional[float] = Field(None, gt=0)


class MoveSection(_Strict):
    grow_prune: float = Field(0.2, ge=0)
    birth_death: float = Field(0.0, ge=0)
    change: float = Field(0.1, ge=0)
    swap: float = Field(0.05, ge=0)
    rotate: float = Field(0.05, ge=0)
    coef: float = Field(0.3, ge=0)
    cov: float = Field(0.2, ge=0)
    noise: float = Field(0.1, ge=0)
    split_merge: Optional[list[int]] = None
    sbe_alpha: float = Field(2.0, gt=0)
    sbe_beta: float = Field(2.0, gt=0)
    sbe_eps: float = Field(2.0, gt=0)
    adapt: bool = True
    target_accept: float = Field(0.44, gt=0, lt=1)


class TreeSection(_Strict):
    min_leaf: int = Field(2, ge=1)
    max_depth: int = Field(10, ge=0)


class BasisSection(_Strict):
    sim: Literal["constant", "linear"] = "constant"
    discrepancy: Literal["constant", "linear", "none"] = "constant"


class McmcSection(_Strict):
    iterations: int = Field(20000, ge=1)
    burn_in: int = Field(10000, ge=0)
    thin: int = Field(1, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _order(self):
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        return self


class PredictionSection(_Strict):
    grid: Optional[str] = None
    sample_stride: int = Field(10, ge=1)


class RunConfig(_Strict):
    data: DataSection
    scheme: Literal["SBC", "IDBC-JPS", "IDBC-SPS"] = "IDBC-JPS"
    groups: Optional[list[list[int]]] = None
    prior: PriorSection = PriorSection()
    moves: MoveSection = MoveSection()
    tree: TreeSection = TreeSection()
    basis: Optional[BasisSection] = None
    mcmc: McmcSection = McmcSection()
    probes: list[list[float]] = []
    prediction: PredictionSection = PredictionSection()
    output: str = "idbc_out"

    @model_validator(mode="after")
    def _groups_need_sps(self):
        if self.groups is not None and self.scheme != "IDBC-SPS":
            raise ValueError("groups are only used by the IDBC-SPS scheme")
        return self

    # -- translation -------------------------------------------------------

    def layout(self, n_continuous: int, n_submodels: int) -> ThetaLayout:
        if self.data.benchmark is not None and self.groups is None:
            return default_layout(self.data.benchmark, self.scheme)
        groups = None
        if self.scheme == "IDBC-SPS":
            n_params = n_continuous + (1 if n_submodels > 1 else 0)
            groups = self.groups or [[j] for j in range(n_params)]
            groups = tuple(tuple(g) for g in groups)
        return ThetaLayout(n_continuous, n_submodels=n_submodels, groups=groups)

    def basis_config(self) -> BasisConfig:
        if self.basis is None:
            return default_basis(self.data.benchmark) if self.data.benchmark else BasisConfig()
        disc = None if self.basis.discrepancy == "none" else self.basis.discrepancy
        return BasisConfig(sim=self.basis.sim, discrepancy=disc)

    def tree_prior(self) -> TreePriorParams:
        p = self.prior
        w = tuple(p.submodel_weights) if p.submodel_weights is not None else None
        return TreePriorParams(p.tree_alpha, p.tree_beta, p.coef_a, p.coef_b, w)

    def hyper_priors(self) -> HyperPriors:
        p = self.prior
        return HyperPriors(
            phi_a=p.phi_a,
            phi_b=p.phi_b,
            tau_shape=p.tau_shape,
            tau_scale=p.tau_scale,
            sigma2_y_shape=p.sigma2_y_shape,
            sigma2_y_scale=p.sigma2_y_scale,
            sigma2_eta_shape=p.sigma2_eta_shape,
            sigma2_eta_scale=p.sigma2_eta_scale,
        )

    def move_config(self) -> MoveConfig:
        d = self.moves.model_dump()
        sm = d.pop("split_merge")
        mc = MoveConfig(**d, split_merge=tuple(sm) if sm is not None else None)
        # the standard (input-invariant) scheme keeps a single leaf throughout
        return mc.without_tree_moves() if self.scheme == "SBC" else mc


def load_config(path, seed: int | None = None, out: str | None = None) -> tuple[RunConfig, str]:
    """Parse and validate a YAML run file; returns the config and its SHA-256."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_short(exc)) from exc
    if seed is not None:
        cfg = cfg.model_copy(update={"mcmc": cfg.mcmc.model_copy(update={"seed": seed})})
    if out is not None:
        cfg = cfg.model_copy(update={"output": out})
    # relative data paths are taken relative to the config file
    if cfg.data.field is not None:
        base = path.parent
        cfg = cfg.model_copy(
            update={
                "data": cfg.data.model_copy(
                    update={"field": str(base / cfg.data.field), "simulator": str(base / cfg.data.simulator)}
                )
            }
        )
    if cfg.prediction.grid is not None:
        cfg = cfg.model_copy(
            update={"prediction": cfg.prediction.model_copy(update={"grid": str(path.parent / cfg.prediction.grid)})}
        )
    return cfg, hashlib.sha256(raw).hexdigest()


def _short(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


__all__ = ["ConfigError", "RunConfig", "load_config", "SCHEMES"]
