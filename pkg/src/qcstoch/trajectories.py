"""Large-particle trajectories: noisy branches, Langevin chains and mean field.

All integrators use the same position-Verlet stencil,

    Q[k+1] - 2 Q[k] + Q[k-1] = dt^2 / M * F[k],

written in velocity-Verlet form with the force at node k (including its noise
sample) split between the two half kicks that surround Q[k].  The discrete
second difference used by :func:`onsager_machlup_check` is therefore the
integrator's own, and the path density identity holds exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InvalidParameterError, LeakageError, PreconditionError, StepResolutionError
from .model import DerivedConstants, ModelParams
from .qstate import GridWavefunction

#: minimum number of steps per inverse characteristic frequency
STEPS_PER_PERIOD = 20
LEAKAGE_LIMIT = 1e-4


def _poly(c) -> Polynomial:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.size == 0:
        c = np.zeros(1)
    return Polynomial(c)


@dataclass(frozen=True, eq=False)
class CouplingSpec:
    """Polynomial coupling V(X) + g(X) f(x), coefficients in ascending order."""

    V: Polynomial
    g: Polynomial
    f: Polynomial

    def __init__(self, V=(0.0,), g=(0.0, 1.0), f=(0.0, 1.0)):
        object.__setattr__(self, "V", _poly(V))
        object.__setattr__(self, "g", _poly(g))
        object.__setattr__(self, "f", _poly(f))
        object.__setattr__(self, "dV", self.V.deriv())
        object.__setattr__(self, "dg", self.g.deriv())
        object.__setattr__(self, "df", self.f.deriv())
        object.__setattr__(self, "d2V", self.dV.deriv())
        object.__setattr__(self, "d2g", self.dg.deriv())
        object.__setattr__(self, "d2f", self.df.deriv())

    @classmethod
    def linear(cls, lam: float) -> "CouplingSpec":
        return cls(V=(0.0,), g=(0.0, lam), f=(0.0, 1.0))

    @property
    def f_is_identity(self) -> bool:
        c = self.f.trim().coef
        return c.size == 2 and c[0] == 0.0 and c[1] == 1.0

    @property
    def g_is_linear(self) -> bool:
        return self.g.trim().coef.size <= 2 and self.g.coef[0] == 0.0

    @property
    def is_linear(self) -> bool:
        return self.f_is_identity and self.g_is_linear and not np.any(self.V.trim().coef)

    @property
    def lam(self) -> float:
        """Slope of g at the origin (the coupling constant for the linear model)."""
        return float(self.dg(0.0))

    def to_dict(self) -> dict:
        return {"V": self.V.coef.tolist(), "g": self.g.coef.tolist(), "f": self.f.coef.tolist()}


@dataclass(frozen=True)
class InitialClassicalState:
    Q0: float = 0.0
    P0: float = 0.0
    cov: tuple = ((0.0, 0.0), (0.0, 0.0))

    def __post_init__(self):
        c = np.asarray(self.cov, dtype=float)
        if c.shape != (2, 2) or not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() < -1e-15:
            raise InvalidParameterError("initial classical covariance must be symmetric and positive semidefinite")

    @property
    def has_spread(self) -> bool:
        return bool(np.any(np.asarray(self.cov) != 0.0))

    def draw(self, rng: np.random.Generator, size: int | None = None):
        mean = np.array([self.Q0, self.P0])
        if not self.has_spread:
            if size is None:
                return mean
            return np.broadcast_to(mean, (size, 2)).copy()
        return rng.multivariate_normal(mean, np.asarray(self.cov, dtype=float), size=size, method="cholesky")


@dataclass(frozen=True, eq=False)
class ClassicalPath:
    t: np.ndarray
    Q: np.ndarray
    Qdot: np.ndarray
    q: np.ndarray
    q0: float
    p0: float
    seed: int | None = None
    variant: str = "branch"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Q", "Qdot", "q"])
            for row in zip(self.t, self.Q, self.Qdot, self.q):
                w.writerow([f"{v:.17g}" for v in row])


# ---------------------------------------------------------------------------
# Green function
# ---------------------------------------------------------------------------


def green_function(params: ModelParams, t, tp):
    """Retarded oscillator response, -sin(w (t - t')) / (m w) for t > t', else 0."""
    t = np.asarray(t, dtype=float)
    tp = np.asarray(tp, dtype=float)
    s = t - tp
    w = params.omega
    if w == 0.0:
        val = -s / params.m
    else:
        val = -np.sin(w * s) / (params.m * w)
    return np.where(s > 0, val, 0.0)[()]


def green_solution(t, source, q0: float, p0: float, params: ModelParams):
    """q(t) = free motion + integral of G(t, s) * source(s) ds, by trapezoid quadrature on the grid t."""
    t = np.asarray(t, dtype=float)
    source = np.asarray(source, dtype=float)
    w, m = params.omega, params.m
    free = q0 * np.cos(w * t) + p0 / (m * w) * np.sin(w * t)
    # sin(w(t-s)) = sin wt cos ws - cos wt sin ws turns the convolution into two running integrals
    from scipy.integrate import cumulative_trapezoid

    Ic = cumulative_trapezoid(np.cos(w * t) * source, t, initial=0.0)
    Is = cumulative_trapezoid(np.sin(w * t) * source, t, initial=0.0)
    return free - (np.sin(w * t) * Ic - np.cos(w * t) * Is) / (m * w)


# ---------------------------------------------------------------------------
# resolution check
# ---------------------------------------------------------------------------


def characteristic_frequency(coupling: CouplingSpec, params: ModelParams, Q: float, q: float) -> float:
    """Largest normal-mode frequency of the coupled two-body potential at (Q, q)."""
    H = np.array(
        [
            [coupling.d2V(Q) + coupling.d2g(Q) * coupling.f(q), coupling.dg(Q) * coupling.df(q)],
            [coupling.dg(Q) * coupling.df(q), params.m * params.omega**2 + coupling.g(Q) * coupling.d2f(q)],
        ]
    )
    s = np.diag([params.M**-0.5, params.m**-0.5])
    ev = np.linalg.eigvalsh(s @ H @ s)
    return float(math.sqrt(max(np.abs(ev).max(), params.omega**2)))


def check_step_resolution(coupling: CouplingSpec, params: ModelParams, Q, q) -> float:
    """Refuse a step that resolves the fastest local mode with fewer than 20 steps."""
    w = max(characteristic_frequency(coupling, params, float(a), float(b)) for a, b in zip(np.ravel(Q), np.ravel(q)))
    if params.dt * w > 1.0 / STEPS_PER_PERIOD:
        good = 1.0 / (STEPS_PER_PERIOD * w)
        raise StepResolutionError(
            f"dt={params.dt:.3g} under-resolves the fastest mode (omega_max={w:.3g}); use dt <= {good:.3g}",
            suggested_dt=good,
        )
    return w


# ---------------------------------------------------------------------------
# batched branch integrator
# ---------------------------------------------------------------------------


def integrate_batch(Q0, P0, q0, p0, coupling: CouplingSpec, params: ModelParams, noise=None):
    """Integrate B coupled (Q, q) systems with additive node forces on Q.

    ``noise`` has shape (B, n_steps + 1), one force sample per node.  Returns
    arrays Q, Qdot, q of shape (B, n_steps + 1).
    """
    Q = np.array(Q0, dtype=float, ndmin=1)
    B = Q.size
    P = np.broadcast_to(np.asarray(P0, dtype=float), (B,)).copy()
    q = np.broadcast_to(np.asarray(q0, dtype=float), (B,)).copy()
    p = np.broadcast_to(np.asarray(p0, dtype=float), (B,)).copy()
    n = params.n_steps
    dt, M, m, w2 = params.dt, params.M, params.m, params.omega**2
    if noise is None:
        noise = np.zeros((B, n + 1))
    noise = np.asarray(noise, dtype=float).reshape(B, n + 1)
    dV, g, dg, f, df = coupling.dV, coupling.g, coupling.dg, coupling.f, coupling.df
    lin_f = coupling.f_is_identity

    def forces(Q, q):
        fq = q if lin_f else f(q)
        dfq = 1.0 if lin_f else df(q)
        return -dV(Q) - dg(Q) * fq, -m * w2 * q - g(Q) * dfq

    outQ = np.empty((B, n + 1))
    outP = np.empty((B, n + 1))
    outq = np.empty((B, n + 1))
    outQ[:, 0], outP[:, 0], outq[:, 0] = Q, P, q
    FQ, Fq = forces(Q, q)
    FQ = FQ + noise[:, 0]
    h = 0.5 * dt
    for k in range(n):
        P += h * FQ
        p += h * Fq
        Q += dt * P / M
        q += dt * p / m
        FQ, Fq = forces(Q, q)
        FQ = FQ + noise[:, k + 1]
        P += h * FQ
        p += h * Fq
        outQ[:, k + 1], outP[:, k + 1], outq[:, k + 1] = Q, P, q
    return outQ, outP / M, outq


def noise_streams(params: ModelParams, consts: DerivedConstants, rng: np.random.Generator,
                  record: bool = True, gprime_path=None):
    """Per-node force noise for one run: Langevin part plus (optionally) record part.

    Draw order is fixed: n+1 Langevin normals, then n+1 record normals.  The
    record part on nodes 0..n-1 has its oscillator-mode component removed
    because that component is carried by the smeared (q0, p0); the last node
    only affects the final velocity and uses an unprojected draw.
    """
    from .sampling import orthogonal_record_force

    n = params.n_steps
    dt = params.dt
    xi = rng.standard_normal(n + 1) * math.sqrt(consts.force_noise_var / dt)
    if not record:
        return xi
    white = rng.standard_normal(n + 1)
    rec = np.empty(n + 1)
    rec[:n] = orthogonal_record_force(params, consts, white[:n], gprime_path)
    S0 = consts.total_noise_var - consts.force_noise_var
    rec[n] = white[n] * math.sqrt(S0 / dt)
    return xi + rec


def _paths_from_arrays(t, Q, V, q, q0, p0, seeds, variant, meta):
    return [
        ClassicalPath(t, Q[i], V[i], q[i], float(q0[i]), float(p0[i]), seeds[i], variant, dict(meta))
        for i in range(Q.shape[0])
    ]


def time_grid(params: ModelParams) -> np.ndarray:
    return params.dt * np.arange(params.n_steps + 1)


def integrate_branch(init: InitialClassicalState, phase_sample, coupling: CouplingSpec, params: ModelParams,
                     consts: DerivedConstants, seed=None, with_noise: bool = True, record_noise: bool = True,
                     gprime_path=None, check: bool = True) -> ClassicalPath:
    """One branch: classical Q driven by the small particle started at (q0, p0).

    With ``with_noise`` the Q equation carries the Langevin force of variance
    ``force_noise_var / dt`` per node; with ``record_noise`` (the default) it
    also carries the record fluctuation g'(Q) * (qbar - q), so that the total
    law does not depend on the split parameter eta.
    """
    q0, p0 = (float(v) for v in phase_sample)
    rng = np.random.Generator(np.random.Philox(seed))
    Q0, P0 = init.draw(rng)
    if check:
        check_step_resolution(coupling, params, Q0, q0)
    noise = None
    if with_noise:
        noise = noise_streams(params, consts, rng, record_noise, gprime_path)[None, :]
    Q, V, q = integrate_batch(Q0, P0, q0, p0, coupling, params, noise)
    meta = {"with_noise": with_noise, "record_noise": bool(with_noise and record_noise)}
    return ClassicalPath(time_grid(params), Q[0], V[0], q[0], q0, p0, seed, "branch", meta)


# ---------------------------------------------------------------------------
# Langevin chain and Onsager-Machlup functional
# ---------------------------------------------------------------------------


def langevin_chain(Q0: float, Q1: float, n_steps: int, coupling: CouplingSpec, params: ModelParams,
                   consts: DerivedConstants, rng: np.random.Generator, size: int = 1, qbar=None):
    """Sample ``size`` chains Q[0..n_steps] from the two fixed initial nodes.

    Each interior node k draws a force xi_k of variance force_noise_var / dt.
    """
    dt, M = params.dt, params.M
    qb = np.zeros(n_steps + 1) if qbar is None else np.asarray(qbar, dtype=float)
    out = np.empty((size, n_steps + 1))
    out[:, 0], out[:, 1] = Q0, Q1
    sd = math.sqrt(consts.force_noise_var / dt)
    for k in range(1, n_steps):
        Qk = out[:, k]
        F = -coupling.dV(Qk) - coupling.dg(Qk) * qb[k] + sd * rng.standard_normal(size)
        out[:, k + 1] = 2 * Qk - out[:, k - 1] + dt**2 / M * F
    return out


def _residuals(Q, t, coupling, params, qbar):
    Q = np.asarray(Q, dtype=float)
    if Q.shape[-1] < 5:
        raise PreconditionError("need at least 3 interior nodes")
    if t is not None:
        d = np.diff(np.asarray(t, dtype=float))
        if not np.allclose(d, d[0], rtol=1e-12, atol=0.0):
            raise PreconditionError("path must lie on a uniform time grid")
        dt = float(d[0])
    else:
        dt = params.dt
    Qi = Q[..., 1:-1]
    acc = (Q[..., 2:] - 2 * Qi + Q[..., :-2]) / dt**2
    qb = 0.0 if qbar is None else np.asarray(qbar, dtype=float)[..., 1:-1]
    return params.M * acc + coupling.dV(Qi) + coupling.dg(Qi) * qb, dt


def onsager_machlup_check(Qpath, coupling: CouplingSpec, params: ModelParams, consts: DerivedConstants,
                          qbar=None, t=None):
    """Path log-density (without normalization) of the Langevin chain.

    ``Qpath`` may be a :class:`ClassicalPath` or an array whose last axis is
    time.  The sum runs over interior nodes with the Verlet second difference.
    """
    if isinstance(Qpath, ClassicalPath):
        t = Qpath.t if t is None else t
        Qpath = Qpath.Q
    r, dt = _residuals(Qpath, t, coupling, params, qbar)
    return -np.sum(r**2, axis=-1) * dt / (4.0 * params.hbar**2 * consts.Dtilde * (1.0 - params.eta))


# ---------------------------------------------------------------------------
# mean field
# ---------------------------------------------------------------------------


class _SplitStep:
    """Strang split-step propagator of the grid oscillator with a classical source."""

    def __init__(self, psi: GridWavefunction, coupling: CouplingSpec, params: ModelParams, tau: float):
        x = psi.q
        self.x = x
        self.params = params
        k = 2 * np.pi * np.fft.fftfreq(psi.n, d=psi.dq)
        self.T = params.hbar**2 * k**2 / (2 * params.m)
        self.kin = np.exp(-1j * self.T * tau / params.hbar)
        self.Vx = 0.5 * params.m * params.omega**2 * x**2
        self.fx = coupling.f(x)
        self.g = coupling.g
        self.tau = tau

    def __call__(self, psi: np.ndarray, Q: float) -> np.ndarray:
        half = np.exp(-0.5j * (self.Vx + self.g(Q) * self.fx) * self.tau / self.params.hbar)
        psi = half * psi
        psi = np.fft.ifft(self.kin * np.fft.fft(psi))
        return half * psi

    def kinetic(self, psi: np.ndarray, dq: float) -> float:
        phik = np.fft.fft(psi)
        return float(np.sum(self.T * np.abs(phik) ** 2) / psi.size * dq)


def leakage(psi: np.ndarray, dq: float) -> float:
    """Probability in the outer 1/32 of the grid on both sides."""
    e = max(1, psi.size // 32)
    rho = np.abs(psi) ** 2
    return float((rho[:e].sum() + rho[-e:].sum()) * dq)


def integrate_meanfield(init: InitialClassicalState, coupling: CouplingSpec, params: ModelParams,
                        psi0: GridWavefunction, check: bool = True):
    """Mean-field evolution: Q feels g'(Q) <f(x)>, psi feels g(Q) f(x).

    Returns the classical path (``q`` holds <x>) and the final grid state.
    Energy bookkeeping is stored in ``meta['energy']``.
    """
    dt, M, n = params.dt, params.M, params.n_steps
    dq = psi0.dq
    x = psi0.q
    if check:
        check_step_resolution(coupling, params, init.Q0, psi0.mean_q())
    prop = _SplitStep(psi0, coupling, params, 0.5 * dt)
    fx = coupling.f(x)
    Vosc = 0.5 * params.m * params.omega**2 * x**2

    def mean(a, psi):
        return float(np.sum(a * np.abs(psi) ** 2) * dq)

    def energy(Q, P, psi):
        return (P * P / (2 * M) + float(coupling.V(Q)) + prop.kinetic(psi, dq) + mean(Vosc, psi)
                + float(coupling.g(Q)) * mean(fx, psi))

    psi = np.array(psi0.values, dtype=complex)
    Q, P = float(init.Q0), float(init.P0)
    t = time_grid(params)
    outQ = np.empty(n + 1)
    outV = np.empty(n + 1)
    outq = np.empty(n + 1)
    E = np.empty(n + 1)
    norm_dev = 0.0
    outQ[0], outV[0], outq[0], E[0] = Q, P / M, mean(x, psi), energy(Q, P, psi)
    F = -float(coupling.dV(Q)) - float(coupling.dg(Q)) * mean(fx, psi)
    for k in range(n):
        P += 0.5 * dt * F
        psi = prop(psi, Q)
        Q += dt * P / M
        psi = prop(psi, Q)
        F = -float(coupling.dV(Q)) - float(coupling.dg(Q)) * mean(fx, psi)
        P += 0.5 * dt * F
        if k % 16 == 15 or k == n - 1:
            leak = leakage(psi, dq)
            if leak > LEAKAGE_LIMIT:
                raise LeakageError(
                    f"wavefunction leaked {leak:.3g} of its norm to the grid edges at t={t[k + 1]:.6g}",
                    leakage=leak,
                    step=k + 1,
                )
        norm_dev = max(norm_dev, abs(float(np.sum(np.abs(psi) ** 2) * dq) - 1.0))
        outQ[k + 1], outV[k + 1], outq[k + 1] = Q, P / M, mean(x, psi)
        E[k + 1] = energy(Q, P, psi)
    drift = float(np.max(np.abs(E - E[0])) / max(abs(E[0]), 1e-300))
    meta = {"energy": E, "energy_drift": drift, "norm_deviation": norm_dev}
    path = ClassicalPath(t, outQ, outV, outq, psi0.mean_q(), psi0.mean_p(params.hbar), None, "meanfield", meta)
    final = GridWavefunction(psi0.q_min, psi0.q_max, psi0.n, psi / math.sqrt(np.sum(np.abs(psi) ** 2) * dq))
    return path, final
