"""Smeared Wigner distributions, phase-space sampling and small-grid oracles.

The Gaussian record weight over the small particle's classical path splits
exactly, after time discretization, into a 2x2 smearing of the initial
phase-space point (q0, p0) plus record noise orthogonal to the free
oscillator modes.  :func:`build_smearing` computes the former;
:func:`orthogonal_record_force` draws the latter.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import CostGuardError, InfiniteSmearingError, NotAProbabilityError, ResolutionError
from .model import DerivedConstants, ModelParams
from .qstate import (
    Axis,
    GridWavefunction,
    Mixture,
    SuperpositionState,
    WignerGrid,
    _check_wigner,
    _evaluate_forms,
    _forms_of,
    default_phase_axes,
)

#: condition number of the Gram matrix above which the kernel is flagged
GRAM_CONDITION_WARN = 1e6
MAX_ORACLE_SLICES = 4
MAX_ORACLE_POINTS = 64


@dataclass(frozen=True, eq=False)
class SmearingKernel:
    cov: np.ndarray
    record_var_per_step: float
    duration: float
    dt: float
    gram: np.ndarray

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("smearing covariance must be symmetric positive definite")
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)

    @property
    def sqrt_det(self) -> float:
        return float(math.sqrt(np.linalg.det(self.cov)))

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.gram))

    def to_json(self) -> str:
        return json.dumps(
            {
                "cov": self.cov.tolist(),
                "record_var_per_step": self.record_var_per_step,
                "duration": self.duration,
                "dt": self.dt,
                "gram": np.asarray(self.gram).tolist(),
            },
            indent=2,
        )


def oscillator_basis(params: ModelParams, n_steps: int | None = None) -> np.ndarray:
    """Free oscillator modes (cos wt, sin wt / m w) at the left-endpoint times."""
    n = params.n_steps if n_steps is None else n_steps
    t = params.dt * np.arange(n)
    w = params.omega
    return np.stack([np.cos(w * t), np.sin(w * t) / (params.m * w)])


def gram_matrix(params: ModelParams, weight=None) -> np.ndarray:
    """Gram matrix of the oscillator modes under the measure sum_k dt * weight_k."""
    phi = oscillator_basis(params)
    wdt = params.dt if weight is None else params.dt * np.asarray(weight, dtype=float)
    return (phi * wdt) @ phi.T


def build_smearing(params: ModelParams, consts: DerivedConstants, gprime_path=None) -> SmearingKernel:
    """Smearing of (q0, p0) implied by the record weight.

    ``gprime_path`` gives g'(Q) at the left-endpoint times for nonlinear
    couplings; the default is the linear model, g' = lambda.
    """
    S0 = consts.total_noise_var - consts.force_noise_var  # 2 hbar^2 Dtilde eta
    if gprime_path is None:
        if params.lam == 0.0:
            raise InfiniteSmearingError("lambda = 0: the record carries no information; use the mean-field route")
        weight = None
        scale = params.lam**2
    else:
        weight = np.asarray(gprime_path, dtype=float) ** 2
        if not np.any(weight > 0):
            raise InfiniteSmearingError("g'(Q) vanishes along the whole path")
        scale = 1.0
    gram = gram_matrix(params, weight) * scale
    cond = np.linalg.cond(gram)
    if cond > GRAM_CONDITION_WARN:
        warnings.warn(
            f"record Gram matrix is ill-conditioned (cond = {cond:.3g}); the smearing is nearly "
            "degenerate along one phase-space direction for this omega*duration",
            RuntimeWarning,
            stacklevel=2,
        )
    cov = S0 * np.linalg.inv(gram)
    cov = 0.5 * (cov + cov.T)
    return SmearingKernel(
        cov=cov,
        record_var_per_step=consts.record_noise_var / params.dt,
        duration=params.duration,
        dt=params.dt,
        gram=gram,
    )


def orthogonal_record_force(params: ModelParams, consts: DerivedConstants, white, gprime_path=None):
    """Record-noise force with its oscillator-mode component projected out.

    ``white`` holds standard normals with shape (..., n_steps).  The returned
    force g'(Q) * (qbar - q) has per-step variance 2 hbar^2 Dtilde eta / dt minus the
    part already carried by the smeared initial data.
    """
    S0 = consts.total_noise_var - consts.force_noise_var
    dt = params.dt
    nu = np.asarray(white) * math.sqrt(S0 / dt)
    phi = oscillator_basis(params)
    g = params.lam * np.ones(phi.shape[1]) if gprime_path is None else np.asarray(gprime_path, dtype=float)
    a = phi * g  # g'(Q) times the modes
    gram = (a * dt) @ a.T
    proj = (nu * dt) @ a.T  # (..., 2)
    coeff = np.linalg.solve(gram, proj.reshape(-1, 2).T).T.reshape(proj.shape)
    return nu - coeff @ a


# ---------------------------------------------------------------------------
# smearing
# ---------------------------------------------------------------------------


def _cov_of(k) -> np.ndarray:
    return np.asarray(k.cov if isinstance(k, SmearingKernel) else k, dtype=float)


def smear(w, k, qgrid: Axis | None = None, pgrid: Axis | None = None,
          nodes_per_sigma: float = 8.0) -> WignerGrid:
    """Convolve a Wigner function with the Gaussian of covariance ``k.cov``.

    Analytic states are smeared in closed form and tabulated on the given (or
    automatically chosen) axes.  Tabulated Wigner grids are smeared spectrally,
    which requires at least ``nodes_per_sigma`` nodes per kernel standard
    deviation along both axes.
    """
    cov = _cov_of(k)
    if isinstance(w, (SuperpositionState, Mixture)):
        forms = [(c, f.convolve(cov)) for c, f in _forms_of(w)]
        if qgrid is None or pgrid is None:
            qa, pa = default_phase_axes(w, extra_cov=cov)
            qgrid = qgrid or qa
            pgrid = pgrid or pa
        vals = _evaluate_forms(forms, qgrid, pgrid)
        return _check_wigner(vals, qgrid, pgrid, check_span=False)
    if not isinstance(w, WignerGrid):
        raise TypeError(f"cannot smear {type(w).__name__}")
    sq, sp = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    if sq < nodes_per_sigma * w.q.step or sp < nodes_per_sigma * w.p.step:
        raise ResolutionError(
            f"kernel widths ({sq:.3g}, {sp:.3g}) under-resolved by grid steps "
            f"({w.q.step:.3g}, {w.p.step:.3g}); need {nodes_per_sigma:g} nodes per sigma"
        )
    kq = 2 * np.pi * np.fft.fftfreq(w.q.n, d=w.q.step)
    kp = 2 * np.pi * np.fft.fftfreq(w.p.n, d=w.p.step)
    KQ, KP = np.meshgrid(kq, kp, indexing="ij")
    mult = np.exp(-0.5 * (cov[0, 0] * KQ**2 + 2 * cov[0, 1] * KQ * KP + cov[1, 1] * KP**2))
    vals = np.fft.ifft2(np.fft.fft2(w.values) * mult).real
    return _check_wigner(vals, w.q, w.p, check_span=False)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseSampleSet:
    samples: np.ndarray  # columns q0, p0, weight sign
    seed: int | None
    acceptance_rate: float = 1.0

    @property
    def q0(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def p0(self) -> np.ndarray:
        return self.samples[:, 1]

    def __len__(self):
        return self.samples.shape[0]

    def to_csv(self, path) -> None:
        np.savetxt(path, self.samples[:, :2], delimiter=",", header="q0,p0", comments="", fmt="%.17g")


def _density_table(w: WignerGrid) -> np.ndarray:
    vals = w.values
    peak = float(np.max(np.abs(vals)))
    if vals.min() < -1e-10 * max(peak, 1.0):
        raise NotAProbabilityError(
            f"density has negative values (min {vals.min():.3g}); smear the Wigner function first"
        )
    p = np.clip(vals, 0.0, None).ravel()
    cdf = np.cumsum(p)
    return cdf / cdf[-1]


def inverse_cdf_sample(w: WignerGrid, u: np.ndarray, cdf: np.ndarray | None = None) -> np.ndarray:
    """Map uniforms of shape (n, 3) to (q0, p0) draws: one cell pick plus uniform jitter."""
    cdf = _density_table(w) if cdf is None else cdf
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    cell = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), cdf.size - 1)
    iq, ip = np.divmod(cell, w.p.n)
    q = w.q.lo + (iq + u[:, 1] - 0.5) * w.q.step
    p = w.p.lo + (ip + u[:, 2] - 0.5) * w.p.step
    return np.column_stack([q, p])


def sample_phase_space(w: WignerGrid, n: int, seed: int | None = None) -> PhaseSampleSet:
    """i.i.d. draws from a nonnegative tabulated density.

    Draw i consumes uniforms 3i..3i+2 of a Philox stream keyed by ``seed``,
    so the first k samples do not depend on ``n``.
    """
    if n == 0:
        return PhaseSampleSet(np.empty((0, 3)), seed)
    rng = np.random.Generator(np.random.Philox(seed))
    qp = inverse_cdf_sample(w, rng.random((n, 3)))
    return PhaseSampleSet(np.column_stack([qp, np.ones(n)]), seed)


# ---------------------------------------------------------------------------
# small-grid path-sum oracles
# ---------------------------------------------------------------------------


def _dense_rho(state, grid):
    """Density matrix times dq on an arbitrary uniform grid (no power-of-two restriction)."""
    if isinstance(state, GridWavefunction):
        return state.q, np.outer(state.values, np.conj(state.values)) * state.dq
    if grid is None:
        raise ValueError("a (q_min, q_max, n) grid is needed for analytic states")
    axis = Axis(*grid)
    x = axis.nodes
    comps = state.components if isinstance(state, Mixture) else ((1.0, state),)
    rho = np.zeros((axis.n, axis.n), dtype=complex)
    for wgt, comp in comps:
        v = comp.evaluate(x)
        v = v / math.sqrt(np.sum(np.abs(v) ** 2) * axis.step)
        rho += wgt * np.outer(v, np.conj(v)) * axis.step
    return x, rho


def _oracle_setup(qbar, Qpath, state, grid):
    qbar = np.atleast_1d(np.asarray(qbar, dtype=float))
    Qpath = np.atleast_1d(np.asarray(Qpath, dtype=float))
    if qbar.size > MAX_ORACLE_SLICES:
        raise CostGuardError(
            f"{qbar.size} slices requested; dense path sums are limited to {MAX_ORACLE_SLICES}"
        )
    if Qpath.size != qbar.size:
        raise ValueError("qbar and Qpath must have one entry per slice")
    n = state.n if isinstance(state, GridWavefunction) else (grid[2] if grid is not None else 0)
    if n > MAX_ORACLE_POINTS:
        raise CostGuardError(
            f"{n} grid points requested; dense path sums are limited to {MAX_ORACLE_POINTS} "
            f"(about {n**4 * qbar.size:.2g} terms)"
        )
    x, rho = _dense_rho(state, grid)
    return qbar, Qpath, x, rho


def _step_propagators(x, Qpath, params: ModelParams):
    """Exact one-step propagators of the grid Hamiltonian with source lambda*Q_k*x."""
    n = x.size
    dx = x[1] - x[0]
    k = 2 * np.pi * np.fft.fftfreq(n, d=dx)
    F = np.fft.fft(np.eye(n), axis=0)
    T = (np.conj(F).T @ np.diag(params.hbar**2 * k**2 / (2 * params.m)) @ F) / n
    T = 0.5 * (T + np.conj(T).T)
    out = []
    for Qk in Qpath:
        h = T + np.diag(0.5 * params.m * params.omega**2 * x**2 + params.lam * Qk * x)
        e, v = eigh(h)
        out.append((v * np.exp(-1j * e * params.dt / params.hbar)) @ np.conj(v).T)
    return out


def _path_sum(rho, factors, props) -> float:
    # sum over (x_k, y_k) slice by slice: weight the pair, then carry both
    # branches forward one step
    for F, U in zip(factors, props):
        rho = rho * F
        rho = np.einsum("ai,ij,bj->ab", U, rho, np.conj(U), optimize=True)
    return float(np.real(np.trace(rho)))


def weight_direct_smallgrid(qbar, Qpath, params: ModelParams, consts: DerivedConstants,
                            state, grid=None) -> float:
    """Unnormalized record weight by dense summation over discretized (x, y) paths."""
    qbar, Qpath, x, rho = _oracle_setup(qbar, Qpath, state, grid)
    c = params.lam**2 / (4 * params.hbar**2 * consts.Dtilde * params.eta)
    X, Y = np.meshgrid(x, x, indexing="ij")
    mid = 0.5 * (X + Y)
    factors = [np.exp(-c * params.dt * (mid - qb) ** 2) for qb in qbar]
    return _path_sum(rho, factors, _step_propagators(x, Qpath, params))


def cm_probability_smallgrid(qbar, Qpath, params: ModelParams, sigma1_sq: float, state,
                             grid=None, include_xi_factor: bool = True) -> float:
    """Continuous-measurement probability of a record, by the same dense path sum.

    ``include_xi_factor=False`` divides out exp(-dt (x-y)^2 / (4 sigma1^2)) per
    slice, which turns the integrand into the record-weight integrand.
    """
    qbar, Qpath, x, rho = _oracle_setup(qbar, Qpath, state, grid)
    X, Y = np.meshgrid(x, x, indexing="ij")
    dt = params.dt
    factors = []
    for qb in qbar:
        F = np.exp(-dt * (X - qb) ** 2 / (2 * sigma1_sq) - dt * (Y - qb) ** 2 / (2 * sigma1_sq))
        if not include_xi_factor:
            F = F * np.exp(dt * (X - Y) ** 2 / (4 * sigma1_sq))
        factors.append(F)
    return _path_sum(rho, factors, _step_propagators(x, Qpath, params))
