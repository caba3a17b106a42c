"""Monte Carlo orchestration, branch classification and mean-field comparison.

Run i of an ensemble with master seed S draws from streams derived from
``SeedSequence(S, spawn_key=(0, i))``; calibration runs use spawn key (1, i).
Runs are integrated in fixed-size chunks, possibly on several threads, and
all aggregates are combined in run-index order, so results do not depend on
the thread count.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import run_energy_ensemble
from .errors import PreconditionError, QCStochError, RunFailure
from .model import DerivedConstants, ModelParams, derive_constants, kT_for_Dtilde, validate
from .qstate import (
    Axis,
    GridWavefunction,
    Mixture,
    SuperpositionState,
    auto_axis,
    to_grid,
    wigner_transform,
)
from .sampling import build_smearing, inverse_cdf_sample, smear, _density_table
from .sse import SSECoefficients, coupled_runs
from .trajectories import (
    ClassicalPath,
    CouplingSpec,
    InitialClassicalState,
    check_step_resolution,
    integrate_batch,
    integrate_branch,
    integrate_meanfield,
    noise_streams,
    time_grid,
)

ENGINES = ("phase-space", "sse", "meanfield", "energy")
DEFAULT_THRESHOLD_FACTOR = 3.0
HIST_BINS = 64


def run_seed(master: int, index: int, stream: int = 0) -> int:
    """64-bit seed of run ``index`` (stream 0: production, 1: calibration)."""
    ss = np.random.SeedSequence(master, spawn_key=(stream, index))
    return int(ss.generate_state(1, np.uint64)[0])


def _phase_rng(seed: int) -> np.random.Generator:
    # initial-data uniforms come from a child stream so that the noise stream
    # of run i is exactly the one integrate_branch(seed=...) consumes
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(1,))))


@dataclass(frozen=True)
class EnsembleConfig:
    params: ModelParams
    state: object  # SuperpositionState | GridWavefunction | Mixture
    init: InitialClassicalState = InitialClassicalState()
    coupling: CouplingSpec | None = None
    engine: str = "phase-space"
    n_runs: int = 1000
    seed: int = 0
    threads: int = 1
    chunk: int = 512
    grid: tuple | None = None  # (q_min, q_max, n) for grid-based engines
    threshold_factor: float = DEFAULT_THRESHOLD_FACTOR
    n_calibration: int = 200
    sse_coefficients: str = "printed"  # or "norm-preserving"
    keep_paths: bool = False
    hist_bins: int = HIST_BINS

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise PreconditionError(f"unknown engine {self.engine!r}; choose one of {ENGINES}")
        if self.n_runs < 1:
            raise PreconditionError("n_runs must be at least 1")
        if self.coupling is None:
            object.__setattr__(self, "coupling", CouplingSpec.linear(self.params.lam))

    def describe(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "state": _describe_state(self.state),
            "init": {"Q0": self.init.Q0, "P0": self.init.P0, "cov": np.asarray(self.init.cov).tolist()},
            "coupling": self.coupling.to_dict(),
            "engine": self.engine,
            "n_runs": self.n_runs,
            "seed": self.seed,
            "chunk": self.chunk,
            "grid": list(self.grid) if self.grid else None,
            "threshold_factor": self.threshold_factor,
            "n_calibration": self.n_calibration,
            "sse_coefficients": self.sse_coefficients,
        }

    def hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, default=_json_default).encode()
        return hashlib.sha256(blob).hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)


def _describe_state(state) -> dict:
    if isinstance(state, SuperpositionState):
        return {
            "kind": "packets",
            "hbar": state.hbar,
            "terms": [
                {"amplitude": [complex(a).real, complex(a).imag], "q0": p.q0, "p0": p.p0, "s": p.s, "phase": p.phase}
                for a, p in state.terms
            ],
        }
    if isinstance(state, GridWavefunction):
        digest = hashlib.sha256(np.ascontiguousarray(state.values).tobytes()).hexdigest()
        return {"kind": "grid", "q_min": state.q_min, "q_max": state.q_max, "n": state.n, "sha256": digest}
    if isinstance(state, Mixture):
        return {"kind": "mixture", "components": [[w, _describe_state(s)] for w, s in state.components]}
    raise TypeError(type(state).__name__)


@dataclass(frozen=True, eq=False)
class BranchClassification:
    labels: np.ndarray
    fractions: np.ndarray
    stderr: np.ndarray
    unclassified_fraction: float
    threshold: float | None
    distances: np.ndarray

    def to_dict(self) -> dict:
        return {
            "fractions": self.fractions.tolist(),
            "stderr": self.stderr.tolist(),
            "unclassified_fraction": self.unclassified_fraction,
            "threshold": self.threshold,
        }


def path_distance(a, b) -> np.ndarray:
    """Time-averaged L2 distance between Q series along the last axis."""
    return np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))


def classify_branches(paths, templates, threshold: float | None = None) -> BranchClassification:
    """Nearest-template labels, -1 when beyond ``threshold`` or ambiguous.

    A template with another template closer than ``threshold`` cannot be told
    apart from it; runs assigned to such a template are left unclassified and
    a warning is emitted.
    """
    if len(templates) == 0:
        raise PreconditionError("no templates to classify against")
    P = np.array([p.Q if isinstance(p, ClassicalPath) else p for p in paths], dtype=float)
    T = np.array([p.Q if isinstance(p, ClassicalPath) else p for p in templates], dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    if P.shape[-1] != T.shape[-1]:
        raise PreconditionError("paths and templates are on different time grids")
    d = path_distance(P[:, None, :], T[None, :, :])
    lab = np.argmin(d, axis=1)
    if threshold is not None:
        lab = np.where(d[np.arange(lab.size), lab] <= threshold, lab, -1)
        sep = path_distance(T[:, None, :], T[None, :, :])
        np.fill_diagonal(sep, np.inf)
        blurred = np.nonzero(sep.min(axis=1) < threshold)[0]
        if blurred.size:
            warnings.warn(
                f"templates {blurred.tolist()} lie within the classification threshold ({threshold:.3g}) "
                "of another template; their runs are left unclassified",
                RuntimeWarning,
                stacklevel=2,
            )
            lab = np.where(np.isin(lab, blurred), -1, lab)
    return _fractions(lab, T.shape[0], threshold, d)


def _fractions(lab, k, threshold, d) -> BranchClassification:
    ok = lab >= 0
    n_ok = int(ok.sum())
    counts = np.bincount(lab[ok], minlength=k).astype(float)
    frac = counts / n_ok if n_ok else np.full(k, np.nan)
    se = np.sqrt(frac * (1 - frac) / n_ok) if n_ok else np.full(k, np.nan)
    return BranchClassification(lab, frac, se, float(1 - n_ok / lab.size), threshold, d)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    config_hash: str
    engine: str
    seeds: tuple
    t: np.ndarray
    final_Q: np.ndarray
    final_Qdot: np.ndarray
    q0: np.ndarray
    p0: np.ndarray
    mean_Q: np.ndarray
    var_Q: np.ndarray
    classification: BranchClassification | None
    consts: DerivedConstants
    validation: dict
    diagnostics: dict = field(default_factory=dict)
    paths: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.final_Q.size

    @property
    def labels(self) -> np.ndarray:
        if self.classification is None:
            return np.full(self.n, -1)
        return self.classification.labels

    def histogram(self, bins: int = HIST_BINS):
        lo, hi = float(self.final_Q.min()), float(self.final_Q.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(self.final_Q, bins=bins, range=(lo, hi))
        return counts, edges

    def summary(self) -> dict:
        fq = self.final_Q
        out = {
            "config_hash": self.config_hash,
            "engine": self.engine,
            "n_runs": self.n,
            "final_Q_mean": float(fq.mean()),
            "final_Q_var": float(fq.var(ddof=1)) if fq.size > 1 else 0.0,
            "final_Q_stderr": float(fq.std(ddof=1) / math.sqrt(fq.size)) if fq.size > 1 else 0.0,
            "final_Qdot_mean": float(self.final_Qdot.mean()),
            "duration": float(self.t[-1]),
            "derived_constants": self.consts.to_dict(),
            "validation": self.validation,
            "diagnostics": self.diagnostics,
        }
        if self.classification is not None:
            c = self.classification
            out["branch_fractions"] = c.fractions.tolist()
            out["branch_stderr"] = c.stderr.tolist()
            out["unclassified_fraction"] = c.unclassified_fraction
            out["classification_threshold"] = c.threshold
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True, default=_json_default)

    def runs_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "seed", "q0", "p0", "final_Q", "final_Qdot", "label"])
            for i in range(self.n):
                w.writerow([i, self.seeds[i] if self.seeds else "", f"{self.q0[i]:.17g}", f"{self.p0[i]:.17g}",
                            f"{self.final_Q[i]:.17g}", f"{self.final_Qdot[i]:.17g}", int(self.labels[i])])

    def mean_path_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_Q", "var_Q"])
            for row in zip(self.t, self.mean_Q, self.var_Q):
                w.writerow([f"{v:.17g}" for v in row])

    def histogram_csv(self, path, bins: int = HIST_BINS) -> None:
        counts, edges = self.histogram(bins)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([f"{lo:.17g}", f"{hi:.17g}", int(c)])


# ---------------------------------------------------------------------------
# engines
# ---------------------------------------------------------------------------


def _packets(state):
    """Localized components used as branch templates: (weight, q, p) per packet."""
    if isinstance(state, SuperpositionState):
        w = np.array([abs(a) ** 2 for a, _ in state.terms])
        return [(float(wi), p.q0, p.p0, p) for wi, (_, p) in zip(w / w.sum(), state.terms)]
    if isinstance(state, Mixture):
        out = []
        for wt, comp in state.components:
            out += [(wt * w, q, p, pk) for w, q, p, pk in _packets(comp)]
        return out
    if isinstance(state, GridWavefunction):
        return [(1.0, state.mean_q(), state.mean_p(1.0), None)]
    raise TypeError(type(state).__name__)


def _mean_point(state):
    packs = _packets(state)
    return sum(w * q for w, q, _, _ in packs), sum(w * p for w, _, p, _ in packs)


def _smeared_table(cfg: EnsembleConfig, consts: DerivedConstants, gprime_path=None, state=None):
    state = cfg.state if state is None else state
    kernel = build_smearing(cfg.params, consts, gprime_path)
    if isinstance(state, GridWavefunction):
        w = smear(wigner_transform(state, hbar=cfg.params.hbar), kernel)
    else:
        w = smear(state, kernel)
    return kernel, w, _density_table(w)


def _reference_gprime(cfg: EnsembleConfig, consts):
    """g'(Q) along the noiseless branch started at <q>, <p>: weight for nonlinear g."""
    if cfg.coupling.g_is_linear:
        return None
    ref = integrate_branch(cfg.init, _mean_point(cfg.state), cfg.coupling, cfg.params, consts, with_noise=False)
    return cfg.coupling.dg(ref.Q[:-1])


def _phase_space_chunk(cfg, consts, w, cdf, gprime, seeds):
    """``w is None`` marks a decoupled run: Q ignores (q0, p0), which stay at the state means."""
    p = cfg.params
    B = len(seeds)
    qp = np.empty((B, 2))
    Q0 = np.empty(B)
    P0 = np.empty(B)
    noise = np.empty((B, p.n_steps + 1))
    for j, sd in enumerate(seeds):
        if w is None:
            qp[j] = _mean_point(cfg.state)
        else:
            qp[j] = inverse_cdf_sample(w, _phase_rng(sd).random((1, 3)), cdf)[0]
        rng = np.random.Generator(np.random.Philox(sd))
        Q0[j], P0[j] = cfg.init.draw(rng)
        noise[j] = noise_streams(p, consts, rng, w is not None, gprime)
    Q, V, _ = integrate_batch(Q0, P0, qp[:, 0], qp[:, 1], cfg.coupling, p, noise)
    return qp, Q, V


def _map_chunks(cfg, fn, seeds):
    chunks = [(lo, seeds[lo: lo + cfg.chunk]) for lo in range(0, len(seeds), cfg.chunk)]

    def guarded(item):
        lo, ss = item
        try:
            return fn(ss)
        except QCStochError as exc:
            # find the first failing member so it can be replayed on its own
            for j, sd in enumerate(ss):
                try:
                    fn((sd,))
                except QCStochError:
                    raise RunFailure(f"run {lo + j} failed: {exc}", run_index=lo + j, seed=sd) from exc
            raise RunFailure(f"runs {lo}..{lo + len(ss) - 1} failed: {exc}", run_index=lo, seed=ss[0]) from exc

    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(guarded, chunks))
    return [guarded(c) for c in chunks]


def _templates(cfg, consts):
    return [
        integrate_branch(cfg.init, (q, pm), cfg.coupling, cfg.params, consts, with_noise=False)
        for _, q, pm, _ in _packets(cfg.state)
    ]


def _calibrate(cfg, consts, templates, gprime):
    """RMS distance of noisy single-packet runs from their own template."""
    packs = _packets(cfg.state)
    per = max(1, cfg.n_calibration // len(packs))
    d2 = []
    for k, ((_, _, _, pk), tmpl) in enumerate(zip(packs, templates)):
        if pk is None:
            return None
        single = SuperpositionState(((1.0, pk),), cfg.state.hbar if hasattr(cfg.state, "hbar") else 1.0)
        _, w, cdf = _smeared_table(cfg, consts, gprime, state=single)
        seeds = [run_seed(cfg.seed, k * per + i, stream=1) for i in range(per)]
        _, Q, _ = _phase_space_chunk(cfg, consts, w, cdf, gprime, seeds)
        d2.append(path_distance(Q, tmpl.Q) ** 2)
    return float(math.sqrt(np.mean(np.concatenate(d2))))


def _run_phase_space(cfg: EnsembleConfig, consts, seeds):
    if not cfg.coupling.f_is_identity:
        raise PreconditionError("the phase-space engine needs f(x) = x; use the sse or meanfield engine")
    p = cfg.params
    packs = _packets(cfg.state)
    check_step_resolution(cfg.coupling, p, [cfg.init.Q0] * len(packs), [q for _, q, _, _ in packs])
    decoupled = not np.any(cfg.coupling.g.coef)
    gprime = None if decoupled else _reference_gprime(cfg, consts)
    kernel, w, cdf = (None, None, None) if decoupled else _smeared_table(cfg, consts, gprime)
    parts = _map_chunks(cfg, lambda ss: _phase_space_chunk(cfg, consts, w, cdf, gprime, ss), seeds)
    qp = np.vstack([a for a, _, _ in parts])
    finals = np.concatenate([Q[:, -1] for _, Q, _ in parts])
    finalV = np.concatenate([V[:, -1] for _, _, V in parts])
    sums = [(Q.sum(axis=0), (Q * Q).sum(axis=0)) for _, Q, _ in parts]
    paths = np.vstack([Q for _, Q, _ in parts])
    templates = _templates(cfg, consts)
    threshold = None
    if len(packs) > 1 and not decoupled:
        rms = _calibrate(cfg, consts, templates, gprime)
        threshold = None if rms is None else cfg.threshold_factor * rms
    cls = classify_branches(paths, templates, threshold)
    diag = {"template_final_Q": [float(tm.Q[-1]) for tm in templates], "decoupled": decoupled}
    if not decoupled:
        diag.update(smearing_cov=kernel.cov.tolist(), smearing_sqrt_det=kernel.sqrt_det, smeared_min=w.min())
    return qp, finals, finalV, sums, cls, diag, (paths if cfg.keep_paths else None)


def _sse_grid(cfg: EnsembleConfig) -> GridWavefunction:
    if isinstance(cfg.state, GridWavefunction):
        return cfg.state
    if isinstance(cfg.state, Mixture):
        raise PreconditionError("the sse and meanfield engines need a pure state")
    if cfg.grid is not None:
        return to_grid(cfg.state, *cfg.grid)
    ax = auto_axis(cfg.state)
    return to_grid(cfg.state, ax.lo, ax.hi, ax.n)


def _run_sse(cfg: EnsembleConfig, consts, seeds):
    psi = _sse_grid(cfg)
    coeffs = (SSECoefficients.as_printed(consts) if cfg.sse_coefficients == "printed"
              else SSECoefficients.norm_preserving(consts))
    parts = _map_chunks(cfg, lambda ss: coupled_runs(psi, cfg.init, cfg.coupling, cfg.params, consts, ss, coeffs),
                        seeds)
    finals = np.concatenate([b.Q[:, -1] for b in parts])
    finalV = np.concatenate([b.Qdot[:, -1] for b in parts])
    final_q = np.concatenate([b.mean_q[:, -1] for b in parts])
    sums = [(b.Q.sum(axis=0), (b.Q * b.Q).sum(axis=0)) for b in parts]
    templates = _templates(cfg, consts)
    tq = np.array([tm.q[-1] for tm in templates])
    d = np.abs(final_q[:, None] - tq[None, :])
    cls = _fractions(np.argmin(d, axis=1), tq.size, None, d)
    diag = {
        "max_norm_deviation": max(b.max_norm_deviation for b in parts),
        "max_measurement_defect": max(b.max_defect for b in parts),
        "template_final_q": [float(v) for v in tq],
        "final_mean_q": float(final_q.mean()),
        "coefficients": {"decay": coeffs.decay, "diffusion": coeffs.diffusion},
    }
    q0 = np.full(len(seeds), psi.mean_q())
    p0 = np.full(len(seeds), psi.mean_p(cfg.params.hbar))
    paths = np.vstack([b.Q for b in parts]) if cfg.keep_paths else None
    extra = {"final_mean_q": final_q}
    return np.column_stack([q0, p0]), finals, finalV, sums, cls, diag, paths, extra


def _run_energy(cfg: EnsembleConfig, consts, seeds):
    gX = cfg.coupling.g
    res, table = run_energy_ensemble(cfg.state, gX, cfg.init, cfg.params, consts, cfg.n_runs, cfg.seed,
                                     keep_paths=True, chunk=cfg.chunk)
    paths = res.paths
    lab = res.labels
    cls = _fractions(lab, len(res.branches), None, np.empty((lab.size, 0)))
    sums = [(paths.sum(axis=0), (paths * paths).sum(axis=0))]
    V = np.gradient(paths, cfg.params.dt, axis=1)[:, -1]
    diag = {"energy_width": res.width, "frequency_table": table}
    nan = np.full(cfg.n_runs, np.nan)
    return np.column_stack([nan, nan]), paths[:, -1], V, sums, cls, diag, (paths if cfg.keep_paths else None)


def run_ensemble(cfg: EnsembleConfig) -> EnsembleResult:
    """Run the configured engine; deterministic given the master seed."""
    p = cfg.params
    consts = derive_constants(p)
    report = validate(p)
    for msg in report.messages:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    t = time_grid(p)
    if cfg.engine == "meanfield":
        path, final = integrate_meanfield(cfg.init, cfg.coupling, p, _sse_grid(cfg))
        diag = {"energy_drift": path.meta["energy_drift"], "norm_deviation": path.meta["norm_deviation"]}
        one = np.array([path.Q[-1]])
        return EnsembleResult(cfg.hash(), cfg.engine, (), t, one, np.array([path.Qdot[-1]]),
                              np.array([path.q0]), np.array([path.p0]), path.Q, np.zeros_like(path.Q), None,
                              consts, report.to_dict(), diag, path.Q[None, :] if cfg.keep_paths else None)
    seeds = tuple(run_seed(cfg.seed, i) for i in range(cfg.n_runs))
    extra = {}
    if cfg.engine == "phase-space":
        qp, finals, finalV, sums, cls, diag, paths = _run_phase_space(cfg, consts, seeds)
    elif cfg.engine == "sse":
        qp, finals, finalV, sums, cls, diag, paths, extra = _run_sse(cfg, consts, seeds)
    else:
        qp, finals, finalV, sums, cls, diag, paths = _run_energy(cfg, consts, seeds)
    s1 = np.zeros_like(t)
    s2 = np.zeros_like(t)
    for a, b in sums:  # run-index order
        s1 += a
        s2 += b
    n = cfg.n_runs
    mean = s1 / n
    var = (s2 - n * mean * mean) / (n - 1) if n > 1 else np.zeros_like(t)
    return EnsembleResult(cfg.hash(), cfg.engine, seeds, t, finals, finalV, qp[:, 0], qp[:, 1], mean,
                          np.maximum(var, 0.0), cls, consts, report.to_dict(), diag, paths, extra)


# ---------------------------------------------------------------------------
# mean-field comparison
# ---------------------------------------------------------------------------


def divergence(result: EnsembleResult, meanfield_Q) -> tuple[float, float]:
    """Time-averaged L2 distance of the ensemble-mean Q(t) from the mean-field path, with MC error."""
    mf = np.asarray(meanfield_Q.Q if isinstance(meanfield_Q, ClassicalPath) else meanfield_Q, dtype=float)
    if mf.shape != result.mean_Q.shape:
        raise PreconditionError(
            f"mean-field path has {mf.size} nodes but the ensemble has {result.mean_Q.size}; grids differ"
        )
    D = float(np.sqrt(np.mean((result.mean_Q - mf) ** 2)))
    err = float(np.sqrt(np.mean(result.var_Q) / result.n))
    return D, err


def compare_meanfield(cfg: EnsembleConfig, sweep, hold: str = "sigma1") -> list[dict]:
    """Divergence D(lambda) between the phase-space ensemble mean and mean field.

    ``hold='sigma1'`` rescales the bath temperature so that the record
    imprecision sigma1 of ``cfg.params`` is the same at every lambda;
    ``hold='Dtilde'`` keeps the bath fixed.  Every lambda reuses the master
    seed (common random numbers).
    """
    base = derive_constants(cfg.params)
    rows = []
    for lam in sweep:
        p = cfg.params.replace(lam=float(lam))
        if hold == "sigma1":
            Dt = lam**2 * base.sigma1_sq / (4 * p.hbar**2 * p.eta)
            p = p.replace(kT=kT_for_Dtilde(p, Dt))
        elif hold != "Dtilde":
            raise PreconditionError("hold must be 'sigma1' or 'Dtilde'")
        coupling = CouplingSpec(V=cfg.coupling.V.coef, g=cfg.coupling.g.coef * (lam / cfg.coupling.lam)
                                if cfg.coupling.lam else (0.0, lam), f=cfg.coupling.f.coef)
        sub = _replace_cfg(cfg, params=p, coupling=coupling, engine="phase-space")
        res = run_ensemble(sub)
        mf, _ = integrate_meanfield(cfg.init, coupling, p, _sse_grid(sub))
        D, err = divergence(res, mf)
        rows.append({"lambda": float(lam), "D": D, "mc_error": err, "n_runs": res.n,
                     "Dtilde": derive_constants(p).Dtilde, "kT": p.kT})
    return rows


def _replace_cfg(cfg: EnsembleConfig, **kw) -> EnsembleConfig:
    d = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    d.update(kw)
    return EnsembleConfig(**d)
