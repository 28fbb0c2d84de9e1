"""Command-line front end.

``idbc calibrate --config run.yaml``  run the sampler, write chain and summaries
``idbc predict --config run.yaml --chain chain.jsonl --grid grid.csv``
``idbc benchmark --name bench1 --scheme SBC,IDBC-JPS --replicates 3``

Failures exit with status 2 (config), 3 (data) or 4 (numerical) and print
``error: category=<name> message=<text>`` on stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    BENCH2_PROBES,
    BENCH2_PROBE_TRUTH,
    BENCHMARKS,
    SCHEMES,
    BenchmarkSpec,
    bench1_true_theta,
    bench2_unscale_t,
    default_basis,
    default_layout,
    evaluation_grid,
    generate_dataset,
)
from .config import ConfigError, RunConfig, load_config
from .gp import GaussianModel, NumericalError, TrainingData
from .inference import (
    map_theta,
    map_tree,
    mixture_from_components,
    posterior_mean_theta,
    predictive_moments,
    rmspe_values,
    submodel_probs,
)
from .io import (
    DataError,
    data_fingerprint,
    load_training_data,
    provenance_line,
    read_chain,
    read_table,
    write_chain,
    write_table,
)
from .partition import render_tree
from .rjmcmc import MoveConfig, PosteriorSamples, Sampler

EXIT_CODES = {"config": 2, "data": 3, "numerical": 4}
BENCH1_PROBE = np.array([[0.5, 0.4]])


# --------------------------------------------------------------------------
# pipeline pieces (also used directly by tests)
# --------------------------------------------------------------------------


def load_data(cfg: RunConfig) -> TrainingData:
    if cfg.data.benchmark is not None:
        return generate_dataset(cfg.data.benchmark_spec())
    return load_training_data(cfg.data.field, cfg.data.simulator)


def build_sampler(cfg: RunConfig, data: TrainingData) -> Sampler:
    layout = cfg.layout(data.n_continuous, data.n_submodels)
    return Sampler(
        data,
        layout,
        tree_prior=cfg.tree_prior(),
        hyper_priors=cfg.hyper_priors(),
        moves=cfg.move_config(),
        basis=cfg.basis_config(),
        min_leaf=cfg.tree.min_leaf,
        max_depth=cfg.tree.max_depth,
    )


def run_calibration(cfg: RunConfig, data: TrainingData | None = None) -> tuple[TrainingData, PosteriorSamples]:
    data = data if data is not None else load_data(cfg)
    sampler = build_sampler(cfg, data)
    m = cfg.mcmc
    return data, sampler.run(m.iterations, m.burn_in, m.thin, seed=m.seed)


def write_summaries(out: Path, samples: PosteriorSamples, probes: np.ndarray, prov: str) -> None:
    layout = samples.layout
    rows = []
    for i, x in enumerate(probes):
        est = posterior_mean_theta(samples, x)
        mode = map_theta(samples, x)
        for j in range(layout.theta_dim):
            rows.append([i, *x, j + 1, est.mean[j], float(np.sqrt(est.variance[j])), est.std_error[j], est.iact[j], mode[j]])
    q = probes.shape[1] if probes.size else 0
    xcols = [f"x_{k + 1}" for k in range(q)]
    write_table(out / "theta_summary.csv", ["probe", *xcols, "param", "mean", "sd", "std_error", "iact", "map"], rows, prov)
    if layout.n_submodels > 1:
        rows = []
        for i, x in enumerate(probes):
            sp = submodel_probs(samples, x)
            rows += [[i, *x, k + 1, sp.probs[k], sp.std_error[k]] for k in range(layout.n_submodels)]
        write_table(out / "submodel_probs.csv", ["probe", *xcols, "submodel", "prob", "std_error"], rows, prov)
    acc = [[k, p, a, a / p if p else float("nan")] for k, (p, a) in sorted(samples.acceptance.items())]
    write_table(out / "acceptance.csv", ["move", "proposed", "accepted", "rate"], acc, prov)
    names = [f"theta_{j + 1}" for j in range(layout.theta_dim)]
    text = [prov]
    for c in range(layout.n_groups):
        cols = layout.group_columns(c)
        text.append(f"group {c}: " + ", ".join(names[j] for j in cols))
        text.append(render_tree(map_tree(samples, c)))
    (out / "map_tree.txt").write_text("\n".join(text) + "\n")


def cmd_calibrate(cfg: RunConfig, cfg_hash: str, quiet: bool = False) -> Path:
    data = load_data(cfg)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _, samples = run_calibration(cfg, data)
    prov = provenance_line(cfg.mcmc.seed, cfg_hash)
    meta = {"data_sha256": data_fingerprint(data), "basis": cfg.basis_config().__dict__}
    write_chain(out / "chain.jsonl", samples, prov, meta)
    probes = np.array(cfg.probes, dtype=float).reshape(len(cfg.probes), -1) if cfg.probes else np.zeros((0, data.q))
    if probes.size and probes.shape[1] != data.q:
        raise ConfigError("probe points must have one coordinate per input")
    write_summaries(out, samples, probes, prov)
    if not quiet:
        print(f"wrote {len(samples)} samples to {out / 'chain.jsonl'}")
    return out


def predict_grid(samples: PosteriorSamples, data: TrainingData, basis, grid: np.ndarray, stride: int = 1):
    """Mixture prediction over every ``stride``-th sample at each grid row."""
    sel = samples.samples[::stride]
    model = GaussianModel(data, basis)
    if grid.shape[0] == 0:
        return None
    mus = np.empty((len(sel), grid.shape[0]))
    vs = np.empty_like(mus)
    for i, s in enumerate(sel):
        mus[i], vs[i] = predictive_moments(grid, s, data, basis, model)
    return mixture_from_components(mus, vs, probs=(0.05, 0.95))


def cmd_predict(cfg: RunConfig, cfg_hash: str, chain_path, grid_path, out_path, quiet: bool = False) -> Path:
    data = load_data(cfg)
    samples, meta = read_chain(chain_path)
    if meta.get("data_sha256") != data_fingerprint(data):
        raise DataError("chain was produced from different data")
    header, grid = read_table(grid_path)
    xcols = [f"x_{k + 1}" for k in range(data.q)]
    if header != xcols:
        raise DataError(f"grid columns must be {xcols}")
    pred = predict_grid(samples, data, cfg.basis_config(), grid, cfg.prediction.sample_stride)
    rows = []
    if pred is not None:
        rows = [[*grid[i], pred.mean[i], pred.sd[i], pred.quantiles[0.05][i], pred.quantiles[0.95][i]] for i in range(grid.shape[0])]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_table(out_path, [*xcols, "mean", "sd", "q05", "q95"], rows, provenance_line(samples.seed, cfg_hash))
    if not quiet:
        print(f"wrote {len(rows)} predictions to {out_path}")
    return out_path


# --------------------------------------------------------------------------
# benchmark reproduction
# --------------------------------------------------------------------------


@dataclass
class ReplicateResult:
    scheme: str
    replicate: int
    data_seed: int
    chain_seed: int
    rmspe_points: np.ndarray
    rmspe: float
    probe_mean: np.ndarray
    probe_sd: np.ndarray
    submodel: np.ndarray | None
    samples: PosteriorSamples


def replicate_seeds(seed: int, replicates: int) -> list[tuple[int, int]]:
    children = np.random.SeedSequence(seed).spawn(replicates)
    return [tuple(int(v) for v in c.generate_state(2, dtype=np.uint32)) for c in children]


def benchmark_probes(name: str) -> np.ndarray:
    return BENCH1_PROBE if name == "bench1" else BENCH2_PROBES


def run_replicate(
    name: str,
    scheme: str,
    data_seed: int,
    chain_seed: int,
    iterations: int = 20000,
    burn_in: int = 10000,
    stride: int = 20,
    replicate: int = 0,
) -> ReplicateResult:
    spec = BenchmarkSpec(name, m=120 if name == "bench1" else 80, seed=data_seed)
    data = generate_dataset(spec)
    layout = default_layout(name, scheme)
    basis = default_basis(name)
    moves = MoveConfig(split_merge=(0, 1) if name == "bench1" else None)
    if scheme == "SBC":
        moves = moves.without_tree_moves()
    sampler = Sampler(data, layout, moves=moves, basis=basis)
    samples = sampler.run(iterations, burn_in, seed=chain_seed)
    pts, truth = evaluation_grid(name)
    pred = predict_grid(samples, data, basis, pts, stride)
    per_point, avg = rmspe_values(pred.mean, truth)
    probes = benchmark_probes(name)
    means, sds, sub = [], [], None
    for x in probes:
        est = posterior_mean_theta(samples, x)
        means.append(est.mean)
        sds.append(np.sqrt(est.variance))
    if layout.n_submodels > 1:
        sub = submodel_probs(samples, probes[0]).probs
    return ReplicateResult(
        scheme, replicate, data_seed, chain_seed, per_point, avg, np.array(means), np.array(sds), sub, samples
    )


def cmd_benchmark(
    name: str,
    schemes: list[str],
    replicates: int,
    seed: int,
    out: Path,
    iterations: int = 20000,
    burn_in: int = 10000,
    stride: int = 20,
    quiet: bool = False,
) -> dict[str, list[ReplicateResult]]:
    if name not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise ConfigError(f"unknown scheme(s) {bad}; choose from {', '.join(SCHEMES)}")
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    if not iterations > burn_in >= 0:
        raise ConfigError("need iterations > burn_in >= 0")
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance_line(seed, None)
    seeds = replicate_seeds(seed, replicates)
    results: dict[str, list[ReplicateResult]] = {}
    for scheme in schemes:
        results[scheme] = []
        for r, (ds, cs) in enumerate(seeds):
            res = run_replicate(name, scheme, ds, cs, iterations, burn_in, stride, r)
            results[scheme].append(res)
            if not quiet:
                print(f"{name} {scheme} replicate {r}: rmspe={res.rmspe:.4f}")
    _write_benchmark(out, name, results, prov)
    return results


def _theta_report(name: str, mean: np.ndarray, sd: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if name == "bench2":
        lo_hi = bench2_unscale_t(np.array([0.0, 1.0]))
        return bench2_unscale_t(mean), sd * (lo_hi[1] - lo_hi[0])
    return mean, sd


def _write_benchmark(out: Path, name: str, results, prov: str) -> None:
    rep_rows, avg_rows, point_rows, probe_rows, sub_rows = [], [], [], [], []
    pts, _ = evaluation_grid(name)
    probes = benchmark_probes(name)
    truth = bench1_true_theta(probes) if name == "bench1" else BENCH2_PROBE_TRUTH[:, None]
    for scheme, reps in results.items():
        for res in reps:
            rep_rows.append([scheme, res.replicate, res.data_seed, res.chain_seed, res.rmspe])
            for i in range(probes.shape[0]):
                mean, sd = _theta_report(name, res.probe_mean[i], res.probe_sd[i])
                for j in range(mean.shape[0]):
                    probe_rows.append([scheme, res.replicate, i, *probes[i], j + 1, mean[j], sd[j], truth[i][j]])
            if res.submodel is not None:
                sub_rows += [[scheme, res.replicate, k + 1, p] for k, p in enumerate(res.submodel)]
        # squared per-point errors averaged over replicates, then the square root
        per_point = np.sqrt(np.mean([r.rmspe_points**2 for r in reps], axis=0))
        avg_rows.append([scheme, len(reps), float(np.mean([r.rmspe for r in reps]))])
        point_rows += [[scheme, *pts[k], per_point[k]] for k in range(pts.shape[0])]
    xcols = [f"x_{k + 1}" for k in range(pts.shape[1])]
    pcols = [f"x_{k + 1}" for k in range(probes.shape[1])]
    write_table(out / "rmspe_replicates.csv", ["scheme", "replicate", "data_seed", "chain_seed", "rmspe"], rep_rows, prov)
    write_table(out / "rmspe_average.csv", ["scheme", "replicates", "rmspe"], avg_rows, prov)
    write_table(out / "rmspe_by_point.csv", ["scheme", *xcols, "rmspe"], point_rows, prov)
    write_table(out / "probe_summary.csv", ["scheme", "replicate", "probe", *pcols, "param", "mean", "sd", "truth"], probe_rows, prov)
    if sub_rows:
        write_table(out / "submodel_probs.csv", ["scheme", "replicate", "submodel", "prob"], sub_rows, prov)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idbc", description="Calibration with input-dependent step-function parameters.")
    p.add_argument("--version", action="version", version=f"idbc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="run the sampler and write chain + summaries")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("--quiet", action="store_true")

    r = sub.add_parser("predict", help="emulator predictions from a chain file")
    r.add_argument("--config", required=True)
    r.add_argument("--chain", required=True)
    r.add_argument("--grid", help="CSV with columns x_1..x_q (defaults to prediction.grid in the config)")
    r.add_argument("--out", help="output CSV (default <output>/predictions.csv)")
    r.add_argument("--seed", type=int)
    r.add_argument("--quiet", action="store_true")

    b = sub.add_parser("benchmark", help="reproduce a synthetic benchmark comparison")
    b.add_argument("--name", required=True)
    b.add_argument("--scheme", default="SBC,IDBC-JPS,IDBC-SPS", help="comma-separated schemes")
    b.add_argument("--replicates", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--iterations", type=int, default=20000)
    b.add_argument("--burn-in", type=int, default=10000)
    b.add_argument("--sample-stride", type=int, default=20)
    b.add_argument("--out", default="idbc_benchmark")
    b.add_argument("--quiet", action="store_true")
    return p


def _fail(category: str, message: str) -> int:
    print(f"error: category={category} message={message}", file=sys.stderr)
    return EXIT_CODES[category]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "calibrate":
            cfg, h = load_config(args.config, args.seed, args.out)
            cmd_calibrate(cfg, h, args.quiet)
        elif args.command == "predict":
            cfg, h = load_config(args.config, args.seed)
            grid = args.grid or cfg.prediction.grid
            if grid is None:
                raise ConfigError("no prediction grid given")
            out = args.out or str(Path(cfg.output) / "predictions.csv")
            cmd_predict(cfg, h, args.chain, grid, out, args.quiet)
        else:
            schemes = [s.strip() for s in args.scheme.split(",") if s.strip()]
            cmd_benchmark(
                args.name, schemes, args.replicates, args.seed, Path(args.out),
                args.iterations, args.burn_in, args.sample_stride, args.quiet,
            )
    except ConfigError as exc:
        return _fail("config", str(exc))
    except DataError as exc:
        return _fail("data", str(exc))
    except NumericalError as exc:
        return _fail("numerical", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
