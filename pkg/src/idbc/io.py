"""CSV data files and line-delimited chain files.

Every file written here starts with one ``#`` provenance line followed by a
header row.  Chain files hold one JSON object per line: a ``meta`` record,
then one ``sample`` record per retained state.  JSON floats are written with
``repr`` precision, so parsing a chain gives back identical numbers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .gp import BetaPrior, ModelHyperparams, TrainingData
from .partition import CalibrationState, ThetaLayout, tree_from_record, tree_to_record
from .rjmcmc import ChainSample, PosteriorSamples


class DataError(ValueError):
    """Missing, malformed or inconsistent input data."""


def provenance_line(seed=None, config_sha256: str | None = None) -> str:
    return f"# idbc version={__version__} seed={seed} config_sha256={config_sha256}"


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and float rows of a CSV file; ``#`` lines are skipped."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path} has no header row")
    rows = list(csv.reader(lines))
    header = [h.strip() for h in rows[0]]
    try:
        values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from exc
    if values.size == 0:
        values = np.zeros((0, len(header)))
    if values.shape[1] != len(header):
        raise DataError(f"{path}: rows do not match the header width")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values")
    return header, values


def write_table(path, header: list[str], rows, provenance: str) -> None:
    buf = io.StringIO()
    buf.write(provenance + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _columns(header: list[str], prefix: str) -> list[int]:
    idx = [i for i, h in enumerate(header) if h.startswith(prefix)]
    names = [header[i] for i in idx]
    expected = [f"{prefix}{k + 1}" for k in range(len(idx))]
    if names != expected:
        raise DataError(f"columns {names} should be named {expected}")
    return idx


def load_training_data(field_path, sim_path) -> TrainingData:
    """Field columns ``x_1..x_q, y``; simulator columns ``x_1..x_q, t_1..t_p, [model_id], eta``.

    ``model_id`` (1..M) becomes ``M - 1`` contrast columns after the
    continuous parameters; the last sub-model is all zeros.
    """
    fh, fv = read_table(field_path)
    sh, sv = read_table(sim_path)
    if "y" not in fh or "eta" not in sh:
        raise DataError("field file needs a 'y' column and simulator file an 'eta' column")
    fx, sx, st = _columns(fh, "x_"), _columns(sh, "x_"), _columns(sh, "t_")
    if len(fx) != len(sx) or not fx:
        raise DataError("field and simulator files disagree on the input columns")
    params = sv[:, st]
    M = 1
    if "model_id" in sh:
        mid = sv[:, sh.index("model_id")]
        if np.any(mid != np.round(mid)) or mid.size and mid.min() < 1:
            raise DataError("model_id must be integers starting at 1")
        M = int(mid.max()) if mid.size else 1
        if M < 2:
            raise DataError("model_id column needs at least two sub-models")
        contrast = np.zeros((mid.shape[0], M - 1))
        for level in range(M - 1):
            contrast[:, level] = mid == level + 1
        params = np.hstack([params, contrast])
    try:
        return TrainingData(
            fv[:, fx], fv[:, fh.index("y")], sv[:, sx], params, sv[:, sh.index("eta")],
            n_continuous=len(st), n_submodels=M,
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def data_fingerprint(data: TrainingData) -> str:
    h = hashlib.sha256()
    for arr in (data.field_inputs, data.field_outputs, data.sim_inputs, data.sim_params, data.sim_outputs):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# chain records
# --------------------------------------------------------------------------


def hp_to_record(hp: ModelHyperparams) -> dict:
    bp = hp.beta_prior
    return {
        "tau_s": hp.tau_s,
        "tau_d": hp.tau_d,
        "phi_sx": list(hp.phi_sx),
        "phi_st": list(hp.phi_st),
        "phi_d": list(hp.phi_d),
        "sigma2_y": hp.sigma2_y,
        "sigma2_eta": hp.sigma2_eta,
        "beta_prior": {"mean": list(bp.mean), "cov": [list(r) for r in bp.cov], "xi": bp.xi},
    }


def hp_from_record(rec: dict) -> ModelHyperparams:
    bp = rec["beta_prior"]
    return ModelHyperparams(
        tau_s=rec["tau_s"],
        tau_d=rec["tau_d"],
        phi_sx=tuple(rec["phi_sx"]),
        phi_st=tuple(rec["phi_st"]),
        phi_d=tuple(rec["phi_d"]),
        sigma2_y=rec["sigma2_y"],
        sigma2_eta=rec["sigma2_eta"],
        beta_prior=BetaPrior(tuple(bp["mean"]), tuple(tuple(r) for r in bp["cov"]), bp["xi"]),
    )


def layout_to_record(layout: ThetaLayout) -> dict:
    return {
        "n_continuous": layout.n_continuous,
        "n_submodels": layout.n_submodels,
        "groups": [list(g) for g in layout.groups] if layout.groups is not None else None,
        "grid_levels": layout.grid_levels,
    }


def layout_from_record(rec: dict) -> ThetaLayout:
    groups = tuple(tuple(g) for g in rec["groups"]) if rec["groups"] is not None else None
    return ThetaLayout(rec["n_continuous"], rec["n_submodels"], groups, rec["grid_levels"])


def sample_to_record(s: ChainSample) -> dict:
    return {
        "kind": "sample",
        "iteration": s.iteration,
        "trees": [tree_to_record(t) for t in s.calib.trees],
        "hp": hp_to_record(s.hp),
        "loglik": s.loglik,
        "logprior": s.logprior,
        "logpost": s.loglik + s.logprior,
    }


def sample_from_record(rec: dict, layout: ThetaLayout) -> ChainSample:
    calib = CalibrationState(layout, tuple(tree_from_record(t) for t in rec["trees"]))
    return ChainSample(rec["iteration"], calib, hp_from_record(rec["hp"]), rec["loglik"], rec["logprior"])


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, allow_nan=True, separators=(",", ":"))


def write_chain(path, samples: PosteriorSamples, provenance: str, meta: dict | None = None) -> None:
    head = {
        "kind": "meta",
        "layout": layout_to_record(samples.layout),
        "seed": samples.seed,
        "n_iter": samples.n_iter,
        "burn_in": samples.burn_in,
        "thin": samples.thin,
        "acceptance": {k: list(v) for k, v in sorted(samples.acceptance.items())},
    }
    head.update(meta or {})
    lines = [provenance, dumps_record(head)]
    lines += [dumps_record(sample_to_record(s)) for s in samples]
    Path(path).write_text("\n".join(lines) + "\n")


def read_chain(path) -> tuple[PosteriorSamples, dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read chain {path}: {exc}") from exc
    records = [json.loads(ln) for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not records or records[0].get("kind") != "meta":
        raise DataError(f"{path} is not a chain file")
    meta = records[0]
    layout = layout_from_record(meta["layout"])
    samples = [sample_from_record(r, layout) for r in records[1:]]
    if not samples:
        raise DataError(f"{path} holds no samples")
    post = PosteriorSamples(
        samples, layout, meta.get("seed"), meta.get("n_iter", 0), meta.get("burn_in", 0), meta.get("thin", 1),
        {k: tuple(v) for k, v in meta.get("acceptance", {}).items()},
    )
    return post, meta
