"""Command-line front end: ``qcstoch simulate|wigner|compare``.

Exit status: 0 on success, 1 on a runtime failure (the message names the run
and seed to replay), 2 on an invalid configuration (the message names the
offending line of the config file).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import re
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .ensemble import EnsembleConfig, compare_meanfield, divergence, run_ensemble
from .errors import ConfigError, QCStochError, RunFailure, StepResolutionError
from .model import ModelParams, derive_constants, validate
from .qstate import (
    Axis,
    GaussianPacket,
    GridWavefunction,
    Mixture,
    SuperpositionState,
    coherent_state,
    default_phase_axes,
    wigner_transform,
)
from .sampling import build_smearing, smear
from .trajectories import CouplingSpec, InitialClassicalState

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_AMP = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]}
_COEFFS = {"type": "array", "items": _NUM, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qcstoch run configuration",
    "type": "object",
    "required": ["schema_version", "params", "state"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M": _POS, "m": _POS, "omega": _POS, "lambda": _NUM, "gamma": _POS, "kT": _POS,
                "hbar": _POS, "sigma": _POS, "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "duration": _POS, "dt": _POS,
            },
        },
        "state": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["packets", "coherent", "grid", "mixture"]},
                "packets": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["q0", "s"],
                        "additionalProperties": False,
                        "properties": {"amplitude": _AMP, "q0": _NUM, "p0": _NUM, "s": _POS, "phase": _NUM},
                    },
                },
                "alpha": _AMP,
                "file": {"type": "string"},
                "q_min": _NUM,
                "q_max": _NUM,
                "components": {"type": "array", "minItems": 1},
            },
        },
        "classical": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "Q0": _NUM, "P0": _NUM,
                "cov": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                        "minItems": 2, "maxItems": 2},
            },
        },
        "coupling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"V": _COEFFS, "g": _COEFFS, "f": _COEFFS},
        },
        "engine": {"enum": ["phase-space", "sse", "meanfield", "energy"]},
        "n_runs": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "out": {"type": "string"},
        "grid": {
            "type": "object",
            "required": ["q_min", "q_max", "n"],
            "additionalProperties": False,
            "properties": {"q_min": _NUM, "q_max": _NUM, "n": {"type": "integer", "minimum": 2}},
        },
        "chunk": {"type": "integer", "minimum": 1},
        "threshold_factor": _POS,
        "n_calibration": {"type": "integer", "minimum": 1},
        "sse_coefficients": {"enum": ["printed", "norm-preserving"]},
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sweep": {"type": "array", "items": _NUM, "minItems": 1},
                "hold": {"enum": ["sigma1", "Dtilde"]},
            },
        },
    },
}

COLUMN_SCHEMA = {
    "paths.csv": {"t": "time", "mean_Q": "ensemble mean of Q(t)", "var_Q": "ensemble variance of Q(t)"},
    "runs.csv": {
        "run": "run index", "seed": "64-bit run seed", "q0": "sampled small-particle position",
        "p0": "sampled small-particle momentum", "final_Q": "Q at the final time",
        "final_Qdot": "dQ/dt at the final time", "label": "branch label (-1: unclassified)",
    },
    "histograms.csv": {"bin_lo": "lower edge", "bin_hi": "upper edge", "count": "runs with final Q in the bin"},
    "wigner.csv": {"q": "position node", "p": "momentum node", "W_raw": "Wigner function",
                   "W_smeared": "Wigner function convolved with the record kernel"},
    "compare.csv": {
        "quantity": "D_lambda | divergence_AB | branch_fraction", "lambda": "coupling (D_lambda rows)",
        "branch": "branch index (branch_fraction rows)", "value": "value for config A",
        "mc_error": "Monte Carlo error of value", "value_b": "value for config B",
        "mc_error_b": "Monte Carlo error of value_b",
    },
    "float_format": "17 significant digits",
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _line_of(text: str, path) -> int:
    """1-based line of the JSON value addressed by ``path`` (keys and indices)."""
    dec = json.JSONDecoder()
    ws = re.compile(r"\s*")
    pos = ws.match(text, 0).end()
    for key in path:
        if pos >= len(text) or text[pos] not in "{[":
            break
        opening = text[pos]
        pos = ws.match(text, pos + 1).end()
        idx = 0
        found = False
        while pos < len(text) and text[pos] not in "}]":
            if opening == "{":
                name, pos = dec.raw_decode(text, pos)
                pos = ws.match(text, pos).end() + 1  # past ':'
                pos = ws.match(text, pos).end()
                hit = name == key
            else:
                hit = idx == key
            if hit:
                found = True
                break
            _, pos = dec.raw_decode(text, pos)
            pos = ws.match(text, pos).end()
            if pos < len(text) and text[pos] == ",":
                pos = ws.match(text, pos + 1).end()
            idx += 1
        if not found:
            break
    return text.count("\n", 0, pos) + 1


def load_config(path) -> tuple[dict, str]:
    """Read and schema-check a config file; returns (config dict, raw text)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}", line=exc.lineno) from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    e = jsonschema.exceptions.best_match(validator.iter_errors(raw))
    if e is not None:
        line = _line_of(text, list(e.absolute_path))
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}:{line}: {where}: {e.message}", line=line)
    return raw, text


def _amp(v) -> complex:
    return complex(v[0], v[1]) if isinstance(v, list) else complex(v)


def _state_from(spec: dict, params: ModelParams, base: Path):
    kind = spec["kind"]
    if kind == "packets":
        terms = [(_amp(pk.get("amplitude", 1.0)),
                  GaussianPacket(pk["q0"], pk.get("p0", 0.0), pk["s"], pk.get("phase", 0.0)))
                 for pk in spec.get("packets", [])]
        if not terms:
            raise ValueError("'packets' list is required for kind 'packets'")
        return SuperpositionState.normalized(terms, params.hbar)
    if kind == "coherent":
        return coherent_state(_amp(spec.get("alpha", 0.0)), params)
    if kind == "grid":
        f = base / spec["file"]
        if f.suffix == ".npy":
            vals = np.load(f)
        else:
            data = np.loadtxt(f, delimiter=",", ndmin=2)
            vals = data[:, 0] + 1j * data[:, 1] if data.shape[1] > 1 else data[:, 0].astype(complex)
        return GridWavefunction.from_values(spec["q_min"], spec["q_max"], vals)
    comps = []
    for item in spec.get("components", []):
        comps.append((float(item["weight"]), _state_from(item["state"], params, base)))
    return Mixture(tuple(comps))


def build_config(raw: dict, text: str, path, overrides: dict | None = None) -> EnsembleConfig:
    """Turn a validated config dict into an :class:`EnsembleConfig`."""
    o = {k: v for k, v in (overrides or {}).items() if v is not None}
    base = Path(path).resolve().parent

    def bad(section, exc):
        line = _line_of(text, [section])
        return ConfigError(f"{path}:{line}: {section}: {exc}", line=line)

    try:
        params = ModelParams.from_dict(raw.get("params", {}))
    except (QCStochError, TypeError, ValueError) as exc:
        raise bad("params", exc) from exc
    try:
        state = _state_from(raw["state"], params, base)
    except (QCStochError, KeyError, OSError, ValueError) as exc:
        raise bad("state", exc) from exc
    try:
        cl = raw.get("classical", {})
        init = InitialClassicalState(cl.get("Q0", 0.0), cl.get("P0", 0.0),
                                     tuple(map(tuple, cl.get("cov", [[0.0, 0.0], [0.0, 0.0]]))))
    except QCStochError as exc:
        raise bad("classical", exc) from exc
    cp = raw.get("coupling")
    coupling = (CouplingSpec.linear(params.lam) if cp is None
                else CouplingSpec(cp.get("V", [0.0]), cp.get("g", [0.0, params.lam]), cp.get("f", [0.0, 1.0])))
    grid = raw.get("grid")
    try:
        return EnsembleConfig(
            params=params,
            state=state,
            init=init,
            coupling=coupling,
            engine=raw.get("engine", "phase-space"),
            n_runs=int(o.get("n_runs", raw.get("n_runs", 1000))),
            seed=int(o.get("seed", raw.get("seed", 0))),
            threads=int(o.get("threads", 1)),
            chunk=int(raw.get("chunk", 512)),
            grid=(grid["q_min"], grid["q_max"], grid["n"]) if grid else None,
            threshold_factor=float(raw.get("threshold_factor", 3.0)),
            n_calibration=int(raw.get("n_calibration", 200)),
            sse_coefficients=raw.get("sse_coefficients", "printed"),
        )
    except QCStochError as exc:
        raise bad("engine", exc) from exc


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return v


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _to_jsonable(o):
    if isinstance(o, dict):
        return {str(k): _to_jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_to_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _to_jsonable(o.tolist())
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if math.isfinite(v) else repr(v)
    return o


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _out_dir(args, raw) -> Path:
    out = Path(args.out or raw.get("out") or "qcstoch-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(cfg: EnsembleConfig, raw: dict, seeds, extra=None) -> dict:
    p = cfg.params
    m = {
        "tool": "qcstoch",
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "config_hash": cfg.hash(),
        "config": raw,
        "resolved": cfg.describe(),
        "master_seed": cfg.seed,
        "seeds": list(seeds),
        "derived_constants": derive_constants(p).to_dict(),
        "validation": validate(p).to_dict(),
    }
    if extra:
        m.update(extra)
    return m


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _run(cfg: EnsembleConfig, text: str, path):
    """run_ensemble, reporting an under-resolved time step against the config's dt line."""
    try:
        return run_ensemble(cfg)
    except StepResolutionError as exc:
        line = _line_of(text, ["params", "dt"])
        raise ConfigError(f"{path}:{line}: params/dt: {exc}", line=line) from exc


def cmd_simulate(args) -> int:
    raw, text = load_config(args.config[0])
    cfg = build_config(raw, text, args.config[0], vars(args))
    out = _out_dir(args, raw)
    res = _run(cfg, text, args.config[0])
    _dump(out / "manifest.json", _manifest(cfg, raw, res.seeds))
    _dump(out / "summary.json", res.summary())
    _write_csv(out / "paths.csv", ["t", "mean_Q", "var_Q"], zip(res.t, res.mean_Q, res.var_Q))
    res.runs_csv(out / "runs.csv")
    counts, edges = res.histogram(cfg.hist_bins)
    _write_csv(out / "histograms.csv", ["bin_lo", "bin_hi", "count"],
               ((lo, hi, int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)))
    _dump(out / "schema.json", {"config": CONFIG_SCHEMA, "columns": COLUMN_SCHEMA})
    s = res.summary()
    print(f"engine={cfg.engine} runs={res.n} final_Q_mean={s['final_Q_mean']:.6g}", end="")
    if "branch_fractions" in s:
        fr = s["branch_fractions"]
        more = ",..." if len(fr) > 6 else ""
        print(" branch_fractions=" + ",".join(f"{f:.4f}" for f in fr[:6]) + more, end="")
    print(f" -> {out}")
    return 0


def cmd_wigner(args) -> int:
    raw, text = load_config(args.config[0])
    cfg = build_config(raw, text, args.config[0], vars(args))
    out = _out_dir(args, raw)
    p = cfg.params
    kernel = build_smearing(p, derive_constants(p))
    state = cfg.state
    if isinstance(state, GridWavefunction):
        Wr = wigner_transform(state, hbar=p.hbar)
        Ws = smear(Wr, kernel)
    else:
        qa, pa = default_phase_axes(state, extra_cov=kernel.cov)
        Wr = wigner_transform(state, pgrid=pa, qgrid=qa)
        Ws = smear(state, kernel, qa, pa)
    Q, P = np.meshgrid(Wr.q.nodes, Wr.p.nodes, indexing="ij")
    _write_csv(out / "wigner.csv", ["q", "p", "W_raw", "W_smeared"],
               zip(Q.ravel(), P.ravel(), Wr.values.ravel(), Ws.values.ravel()))
    report = {
        "raw_min": Wr.min(),
        "raw_normalization": Wr.total(),
        "smeared_min": Ws.min(),
        "smeared_normalization": Ws.total(),
        "kernel": json.loads(kernel.to_json()),
        "kernel_sqrt_det": kernel.sqrt_det,
        "positivity_bound": p.hbar / 2,
        "smeared_positive": bool(Ws.min() >= -1e-10),
    }
    _dump(out / "wigner_report.json", report)
    _dump(out / "manifest.json", _manifest(cfg, raw, ()))
    _dump(out / "schema.json", {"config": CONFIG_SCHEMA, "columns": COLUMN_SCHEMA})
    print(f"raw min={report['raw_min']:.6g} smeared min={report['smeared_min']:.6g} "
          f"normalization={report['smeared_normalization']:.12f} -> {out}")
    return 0


def cmd_compare(args) -> int:
    paths = args.config
    loaded = [load_config(p) for p in paths]
    cfgs = [build_config(r, t, p, vars(args)) for (r, t), p in zip(loaded, paths)]
    raw_a = loaded[0][0]
    out = _out_dir(args, raw_a)
    rows = []
    sweep = raw_a.get("compare", {}).get("sweep")
    if sweep:
        hold = raw_a["compare"].get("hold", "sigma1")
        try:
            sweep_rows = compare_meanfield(cfgs[0], sweep, hold=hold)
        except StepResolutionError as exc:
            line = _line_of(loaded[0][1], ["params", "dt"])
            raise ConfigError(f"{paths[0]}:{line}: params/dt: {exc}", line=line) from exc
        for r in sweep_rows:
            rows.append(["D_lambda", r["lambda"], "", r["D"], r["mc_error"], "", ""])
    if len(cfgs) > 1:
        a, b = cfgs[0], cfgs[1]
        if a.params.n_steps != b.params.n_steps or not math.isclose(a.params.dt, b.params.dt):
            raise ConfigError(f"{paths[1]}: time grid differs from {paths[0]}", line=_line_of(loaded[1][1], ["params"]))
        ra, rb = _run(a, loaded[0][1], paths[0]), _run(b, loaded[1][1], paths[1])
        D, err = divergence(ra, rb.mean_Q)
        joint = math.sqrt(err**2 + float(np.sqrt(np.mean(rb.var_Q) / rb.n)) ** 2)
        rows.append(["divergence_AB", "", "", D, joint, "", ""])
        ca, cb = ra.classification, rb.classification
        if ca is not None and cb is not None and ca.fractions.size == cb.fractions.size:
            for i in range(ca.fractions.size):
                rows.append(["branch_fraction", "", i, ca.fractions[i], ca.stderr[i], cb.fractions[i], cb.stderr[i]])
    _write_csv(out / "compare.csv", ["quantity", "lambda", "branch", "value", "mc_error", "value_b", "mc_error_b"], rows)
    _dump(out / "manifest.json", _manifest(cfgs[0], raw_a, (), {"compared": [str(p) for p in paths]}))
    _dump(out / "schema.json", {"config": CONFIG_SCHEMA, "columns": COLUMN_SCHEMA})
    print(f"{len(rows)} comparison rows -> {out / 'compare.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qcstoch", description="Classical particle coupled to a quantum oscillator.")
    ap.add_argument("--version", action="version", version=f"qcstoch {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("simulate", cmd_simulate, "run an ensemble and write manifest, summary and tables"),
        ("wigner", cmd_wigner, "tabulate raw and smeared Wigner functions"),
        ("compare", cmd_compare, "mean-field divergence sweep and cross-config comparison"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", action="append", required=True, metavar="PATH",
                        help="JSON config (compare accepts it twice)")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--seed", type=int, metavar="U64")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1, metavar="N")
        sp.add_argument("--n-runs", dest="n_runs", type=int, metavar="N")
        sp.set_defaults(func=fn)
    return ap


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command != "compare" and len(args.config) != 1:
        print(f"qcstoch {args.command}: exactly one --config is required", file=sys.stderr)
        return 2
    if args.command == "compare" and len(args.config) > 2:
        print("qcstoch compare: at most two --config files", file=sys.stderr)
        return 2
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("qcstoch: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.n_runs is not None and args.n_runs < 1:
        print("qcstoch: --n-runs must be positive", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            warnings.showwarning = _show_warning
            return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"run failed: {exc} (replay: run {exc.run_index}, seed {exc.seed})", file=sys.stderr)
        return 1
    except (QCStochError, ArithmeticError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
