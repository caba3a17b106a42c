"""Nonlinear stochastic Schrodinger equation coupled to a classical particle.

The measurement part of each step is the Euler-Maruyama factor

    1 - a (x - <x>)^2 dt + b (x - <x>) dW,

applied pointwise and followed by renormalization.  The default coefficients
are a = 1/sigma1^2 and b = 1/sigma1.  They are not the norm-preserving pair
(a = b^2 / 2), which :meth:`SSECoefficients.norm_preserving` provides for
sensitivity runs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft

from .errors import LocalizationResolutionError, PreconditionError
from .model import DerivedConstants, ModelParams
from .qstate import GridWavefunction
from .trajectories import ClassicalPath, CouplingSpec, InitialClassicalState, check_step_resolution, time_grid

#: minimum position spread, in grid cells, that the measurement step may resolve
MIN_SPREAD_CELLS = 4


@dataclass(frozen=True)
class SSECoefficients:
    decay: float
    diffusion: float

    @classmethod
    def as_printed(cls, consts: DerivedConstants) -> "SSECoefficients":
        return cls(1.0 / consts.sigma1_sq, 1.0 / consts.sigma1)

    @classmethod
    def norm_preserving(cls, consts: DerivedConstants) -> "SSECoefficients":
        b = 1.0 / consts.sigma1
        return cls(0.5 * b * b, b)


@dataclass(frozen=True, eq=False)
class SSEState:
    psi: GridWavefunction
    t: float = 0.0
    record: tuple = ()
    seed: int | None = None
    mean_q: float = field(init=False)
    mean_p: float = field(init=False)
    var_q: float = field(init=False)
    hbar: float = 1.0
    norm_defect: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean_q", self.psi.mean_q())
        object.__setattr__(self, "mean_p", self.psi.mean_p(self.hbar))
        object.__setattr__(self, "var_q", self.psi.var_q())


class _Grid:
    """Cached spectral data for one position grid."""

    def __init__(self, psi: GridWavefunction, params: ModelParams, coupling: CouplingSpec):
        self.x = psi.q
        self.dq = psi.dq
        k = 2 * np.pi * np.fft.fftfreq(psi.n, d=psi.dq)
        self.kin_half = np.exp(-0.5j * params.hbar * k**2 / (2 * params.m) * params.dt)
        self.Vx = 0.5 * params.m * params.omega**2 * self.x**2
        self.fx = coupling.f(self.x)
        self.g = coupling.g
        self.params = params

    def h_half(self, psi: np.ndarray, Q) -> np.ndarray:
        """Strang half step exp(-i H dt / 2 hbar) with source g(Q) f(x); Q may be per-row."""
        gQ = np.asarray(self.g(np.asarray(Q, dtype=float)))[..., None]
        ph = np.exp(-0.25j * (self.Vx + gQ * self.fx) * self.params.dt / self.params.hbar)
        psi = ph * psi
        psi = sfft.ifft(self.kin_half * sfft.fft(psi, axis=-1), axis=-1)
        return ph * psi

    def moments(self, psi: np.ndarray):
        rho = np.abs(psi) ** 2
        nrm = rho.sum(axis=-1) * self.dq
        mq = (rho * self.x).sum(axis=-1) * self.dq / nrm
        vq = (rho * (self.x - mq[..., None]) ** 2).sum(axis=-1) * self.dq / nrm
        return mq, vq

    def measure(self, psi: np.ndarray, dW, coeffs: SSECoefficients):
        """Measurement factor and renormalization; returns (psi, pre-normalization defect)."""
        mq, vq = self.moments(psi)
        if np.any(np.sqrt(vq) < MIN_SPREAD_CELLS * self.dq):
            raise LocalizationResolutionError(
                f"position spread {np.sqrt(vq).min():.3g} below {MIN_SPREAD_CELLS} grid cells "
                f"(dq = {self.dq:.3g}); refine the grid"
            )
        d = self.x - mq[..., None]
        dW = np.asarray(dW, dtype=float)[..., None]
        psi = psi * (1.0 - coeffs.decay * d * d * self.params.dt + coeffs.diffusion * d * dW)
        nrm = np.sqrt((np.abs(psi) ** 2).sum(axis=-1) * self.dq)
        return psi / nrm[..., None], np.abs(nrm**2 - 1.0)


def _plane_wave(a, x0: float, dx: float, n: int) -> np.ndarray:
    """exp(-i a_b (x0 + j dx)) for each row b, from two short exponential tables."""
    a = np.asarray(a, dtype=float)[:, None]
    blk = 1 << max(1, math.ceil(math.log2(math.sqrt(n))))
    nblk = -(-n // blk)
    fine = np.exp(-1j * a * (x0 + dx * np.arange(blk)))
    coarse = np.exp(-1j * a * (dx * blk * np.arange(nblk)))
    return (coarse[:, :, None] * fine[:, None, :]).reshape(a.shape[0], -1)[:, :n]


def _require_linear(coupling: CouplingSpec):
    if not coupling.f_is_identity or not coupling.g_is_linear:
        raise PreconditionError("the stochastic Schrodinger coupling is defined for g(Q) = lambda Q, f(x) = x only")


def sse_step(s: SSEState, Q_t: float, params: ModelParams, consts: DerivedConstants, dW: float,
             coupling: CouplingSpec | None = None, coeffs: SSECoefficients | None = None,
             Q_next: float | None = None) -> SSEState:
    """Advance one step dt: H half step, measurement update, H half step.

    ``Q_next`` (default ``Q_t``) is the classical value used in the second
    half step.
    """
    coupling = CouplingSpec.linear(params.lam) if coupling is None else coupling
    coeffs = SSECoefficients.as_printed(consts) if coeffs is None else coeffs
    grid = _Grid(s.psi, params, coupling)
    psi = grid.h_half(np.asarray(s.psi.values), Q_t)
    psi, defect = grid.measure(psi, dW, coeffs)
    psi = grid.h_half(psi, Q_t if Q_next is None else Q_next)
    psi = psi / math.sqrt(np.sum(np.abs(psi) ** 2) * grid.dq)
    new = GridWavefunction(s.psi.q_min, s.psi.q_max, s.psi.n, psi)
    return replace(s, psi=new, t=s.t + params.dt, norm_defect=float(defect))


def measurement_record(s: SSEState, eta_sample: float, consts: DerivedConstants) -> tuple[float, SSEState]:
    """Record value <q> + (sigma1 / 2) * eta; returns it and the state with the record appended."""
    qbar = s.mean_q + 0.5 * consts.sigma1 * eta_sample
    return qbar, replace(s, record=s.record + (qbar,))


@dataclass(frozen=True, eq=False)
class SSEBatch:
    """Time series of a batch of coupled runs, arrays of shape (runs, n_steps + 1)."""

    t: np.ndarray
    Q: np.ndarray
    Qdot: np.ndarray
    mean_q: np.ndarray
    var_q: np.ndarray
    record: np.ndarray  # (runs, n_steps): qbar over each step
    seeds: tuple
    final_psi: np.ndarray
    max_norm_deviation: float
    max_defect: float

    def path(self, i: int) -> ClassicalPath:
        meta = {"max_norm_deviation": self.max_norm_deviation, "max_defect": self.max_defect}
        return ClassicalPath(self.t, self.Q[i], self.Qdot[i], self.mean_q[i], float(self.mean_q[i, 0]),
                             float("nan"), self.seeds[i], "sse", meta)

    def to_csv(self, path, i: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Q", "mean_q", "var_q", "qbar"])
            rec = np.append(self.record[i], np.nan)
            for row in zip(self.t, self.Q[i], self.mean_q[i], self.var_q[i], rec):
                w.writerow([f"{v:.17g}" for v in row])


def coupled_runs(psi0: GridWavefunction, init: InitialClassicalState, coupling: CouplingSpec, params: ModelParams,
                 consts: DerivedConstants, seeds, coeffs: SSECoefficients | None = None,
                 shared_noise: bool = True, check: bool = True) -> SSEBatch:
    """Integrate one coupled SSE / classical run per seed, vectorized over seeds.

    The classical update is M Q'' + V'(Q) + lambda * qbar = 0 with
    qbar = <q> + (sigma1 / 2) dW / dt, where dW is the increment that drives the
    wavefunction over the same step (``shared_noise``) or an independent one.
    """
    _require_linear(coupling)
    if params.lam == 0.0:
        raise PreconditionError("lambda = 0 gives infinite record imprecision; use the mean-field route")
    coeffs = SSECoefficients.as_printed(consts) if coeffs is None else coeffs
    seeds = tuple(seeds)
    B, n, dt, M = len(seeds), params.n_steps, params.dt, params.M
    if check:
        check_step_resolution(coupling, params, init.Q0, psi0.mean_q())
    grid = _Grid(psi0, params, coupling)
    lam = coupling.lam
    half_sigma1 = 0.5 * consts.sigma1

    dW = np.empty((B, n))
    dWc = np.empty((B, n))
    Q = np.empty(B)
    P = np.empty(B)
    for i, sd in enumerate(seeds):
        rng = np.random.Generator(np.random.Philox(sd))
        Q[i], P[i] = init.draw(rng)
        dW[i] = rng.standard_normal(n) * math.sqrt(dt)
        dWc[i] = dW[i] if shared_noise else rng.standard_normal(n) * math.sqrt(dt)

    # The potential phases commute with the pointwise measurement factor, so
    # adjacent half-step phases are merged; ``chi`` lags psi by one phase
    # factor exp(-i (V + lambda Q_k x) dt / 4 hbar).
    c = dt / (4 * params.hbar)
    x0, dq, nx = float(grid.x[0]), grid.dq, psi0.n
    eV2 = np.exp(-2j * c * grid.Vx)
    eV1 = np.exp(-1j * c * grid.Vx)
    kin = grid.kin_half
    chi = eV1 * _plane_wave(lam * Q * c, x0, dq, nx) * np.asarray(psi0.values)
    outQ = np.empty((B, n + 1))
    outV = np.empty((B, n + 1))
    outm = np.empty((B, n + 1))
    outv = np.empty((B, n + 1))
    rec = np.empty((B, n))
    mq, vq = grid.moments(chi)
    outQ[:, 0], outm[:, 0], outv[:, 0] = Q, mq, vq
    max_dev = 0.0
    max_defect = 0.0
    dV = coupling.dV
    for k in range(n):
        qbar = mq + half_sigma1 * dWc[:, k] / dt
        rec[:, k] = qbar
        F = -dV(Q) - lam * qbar
        if k == 0:
            outV[:, 0] = P / M
            P = P + 0.5 * dt * F
        else:
            outV[:, k] = (P + 0.5 * dt * F) / M
            P = P + dt * F
        Q_old = Q
        Q = Q + dt * P / M
        psi = sfft.ifft(kin * sfft.fft(chi, axis=-1), axis=-1)
        psi, defect = grid.measure(psi, dW[:, k], coeffs)
        psi = psi * (eV2 * _plane_wave(lam * (Q_old + Q) * c, x0, dq, nx))
        psi = sfft.ifft(kin * sfft.fft(psi, axis=-1), axis=-1)
        chi = psi * (eV2 * _plane_wave(2 * lam * Q * c, x0, dq, nx))
        nrm2 = (np.abs(chi) ** 2).sum(axis=-1) * grid.dq
        max_dev = max(max_dev, float(np.abs(nrm2 - 1.0).max()))
        max_defect = max(max_defect, float(defect.max()))
        mq, vq = grid.moments(chi)
        outQ[:, k + 1], outm[:, k + 1], outv[:, k + 1] = Q, mq, vq
    psi = chi * np.conj(eV1 * _plane_wave(lam * Q * c, x0, dq, nx))
    # final velocity: half kick with the noise-free force at the last node
    outV[:, n] = (P + 0.5 * dt * (-dV(Q) - lam * mq)) / M
    return SSEBatch(time_grid(params), outQ, outV, outm, outv, rec, seeds, psi, max_dev, max_defect)


def coupled_run(psi0: GridWavefunction, init: InitialClassicalState, coupling: CouplingSpec, params: ModelParams,
                consts: DerivedConstants, seed, tau: float | None = None, coeffs: SSECoefficients | None = None,
                shared_noise: bool = True):
    """Single coupled run; returns (ClassicalPath, final SSEState, record array)."""
    if tau is not None and not math.isclose(tau, params.duration):
        params = params.replace(duration=tau)
    b = coupled_runs(psi0, init, coupling, params, consts, (seed,), coeffs, shared_noise)
    final = GridWavefunction(psi0.q_min, psi0.q_max, psi0.n, b.final_psi[0])
    state = SSEState(final, t=float(b.t[-1]), record=tuple(b.record[0]), seed=seed, hbar=params.hbar,
                     norm_defect=b.max_defect)
    return b.path(0), state, b.record[0]
