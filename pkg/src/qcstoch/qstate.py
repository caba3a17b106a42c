"""Small-particle states, Wigner functions and energy decompositions.

Two state representations are kept side by side: analytic superpositions of
Gaussian packets (exact Wigner functions and exact Gaussian smearing) and
wavefunctions tabulated on a uniform power-of-two grid (used by the
split-step integrators).  Mixed states are convex mixtures of either.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import PreconditionError, SpanError, TruncationError
from .model import ModelParams

NORM_TOL_ANALYTIC = 1e-12
NORM_TOL_GRID = 1e-10
BOUNDARY_TOL = 1e-6
WIGNER_NORM_TOL = 1e-8


# ---------------------------------------------------------------------------
# axes and grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Axis:
    """Uniform axis ``lo + i*step`` for ``i < n``; ``hi`` itself is excluded."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 2 or not self.hi > self.lo:
            raise PreconditionError(f"bad axis {self!r}")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.n)

    @classmethod
    def centered(cls, half_width: float, n: int) -> "Axis":
        return cls(-half_width, half_width, n)


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def momentum_axis_for(q: Axis, hbar: float = 1.0) -> Axis:
    """Momentum axis matched to the discrete Wigner transform of a grid.

    With this axis the p-marginal of the transform reproduces |psi|^2
    exactly on every node.
    """
    pmax = math.pi * hbar / (2.0 * q.step)
    return Axis(-pmax, pmax, q.n)


# ---------------------------------------------------------------------------
# pure states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPacket:
    """Normalized Gaussian packet; ``s`` is the position standard deviation."""

    q0: float
    p0: float
    s: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise PreconditionError(f"packet width must be positive, got {self.s}")

    def evaluate(self, q, hbar: float = 1.0) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        norm = (2.0 * math.pi * self.s**2) ** -0.25
        return norm * np.exp(
            -((q - self.q0) ** 2) / (4.0 * self.s**2)
            + 1j * self.p0 * (q - self.q0) / hbar
            + 1j * self.phase
        )


def packet_overlap(a: GaussianPacket, b: GaussianPacket, hbar: float = 1.0) -> complex:
    """<a|b> evaluated in closed form."""
    aa = 1.0 / (4.0 * a.s**2)
    ab = 1.0 / (4.0 * b.s**2)
    ka = a.p0 / hbar
    kb = b.p0 / hbar
    A = aa + ab
    B = 2.0 * aa * a.q0 + 2.0 * ab * b.q0 + 1j * (kb - ka)
    C = -aa * a.q0**2 - ab * b.q0**2 + 1j * (ka * a.q0 - kb * b.q0) + 1j * (b.phase - a.phase)
    norm = (2.0 * math.pi * a.s**2) ** -0.25 * (2.0 * math.pi * b.s**2) ** -0.25
    return complex(norm * np.sqrt(np.pi / A) * np.exp(C + B**2 / (4.0 * A)))


@dataclass(frozen=True)
class SuperpositionState:
    """Normalized superposition of Gaussian packets.

    Build through :meth:`normalized` (or :func:`cat_state`), which folds the
    packet overlaps into the amplitudes.
    """

    terms: tuple[tuple[complex, GaussianPacket], ...]
    hbar: float = 1.0

    def __post_init__(self):
        if not self.terms:
            raise PreconditionError("superposition needs at least one term")
        n = self.norm()
        if abs(n - 1.0) > NORM_TOL_ANALYTIC:
            raise PreconditionError(f"superposition not normalized: <psi|psi> = {n!r}")

    @classmethod
    def normalized(cls, terms: Sequence[tuple[complex, GaussianPacket]], hbar: float = 1.0):
        terms = tuple((complex(a), p) for a, p in terms)
        n = _raw_norm(terms, hbar)
        if not n > 0:
            raise PreconditionError("superposition has zero norm")
        scale = 1.0 / math.sqrt(n)
        return cls(tuple((a * scale, p) for a, p in terms), hbar)

    def norm(self) -> float:
        return _raw_norm(self.terms, self.hbar)

    @property
    def packets(self) -> list[GaussianPacket]:
        return [p for _, p in self.terms]

    @property
    def weights(self) -> np.ndarray:
        """|alpha_j|^2 of each packet (branch weights when well separated)."""
        return np.array([abs(a) ** 2 for a, _ in self.terms])

    def evaluate(self, q) -> np.ndarray:
        out = np.zeros(np.shape(q), dtype=complex)
        for a, p in self.terms:
            out += a * p.evaluate(q, self.hbar)
        return out

    def mean_q(self) -> float:
        return _analytic_moment(self, "q")

    def mean_p(self) -> float:
        return _analytic_moment(self, "p")


def _raw_norm(terms, hbar) -> float:
    total = 0j
    for aj, pj in terms:
        for ak, pk in terms:
            total += np.conj(aj) * ak * packet_overlap(pj, pk, hbar)
    return float(total.real)


def _analytic_moment(state: SuperpositionState, which: str) -> float:
    # Integrate the analytic Wigner function's first moment term by term.
    total = 0.0
    for coeff, form in _wigner_forms(state):
        mu = form.mean()
        total += float(np.real(coeff * form.mass() * (mu[0] if which == "q" else mu[1])))
    return total


def coherent_state(alpha: complex, params: ModelParams) -> SuperpositionState:
    """Oscillator coherent state |alpha> for the small particle."""
    hbar, m, w = params.hbar, params.m, params.omega
    q0 = math.sqrt(2.0 * hbar / (m * w)) * alpha.real
    p0 = math.sqrt(2.0 * hbar * m * w) * alpha.imag
    s = math.sqrt(hbar / (2.0 * m * w))
    return SuperpositionState.normalized([(1.0, GaussianPacket(q0, p0, s))], hbar)


def cat_state(amplitudes, centers, s: float, momenta=None, hbar: float = 1.0) -> SuperpositionState:
    """Superposition of equal-width packets at the given phase-space centers."""
    momenta = [0.0] * len(centers) if momenta is None else momenta
    terms = [(a, GaussianPacket(q, p, s)) for a, q, p in zip(amplitudes, centers, momenta)]
    return SuperpositionState.normalized(terms, hbar)


@dataclass(frozen=True, eq=False)
class GridWavefunction:
    q_min: float
    q_max: float
    n: int
    values: np.ndarray

    def __post_init__(self):
        if not _is_pow2(self.n):
            raise PreconditionError(f"grid size must be a power of two, got {self.n}")
        vals = np.array(self.values, dtype=complex)
        if vals.shape != (self.n,):
            raise PreconditionError(f"expected {self.n} values, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        norm = self.norm()
        if abs(norm - 1.0) > NORM_TOL_GRID:
            raise PreconditionError(f"grid wavefunction not normalized: sum|psi|^2 dq = {norm!r}")
        edge = max(abs(vals[0]), abs(vals[-1]))
        if edge > BOUNDARY_TOL:
            raise SpanError(f"wavefunction reaches the grid boundary (|psi| = {edge:.3g})", leakage=edge)

    @property
    def axis(self) -> Axis:
        return Axis(self.q_min, self.q_max, self.n)

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n

    @property
    def q(self) -> np.ndarray:
        return self.axis.nodes

    def norm(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.dq)

    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def mean_q(self) -> float:
        return float(np.sum(self.q * self.density()) * self.dq)

    def var_q(self) -> float:
        mu = self.mean_q()
        return float(np.sum((self.q - mu) ** 2 * self.density()) * self.dq)

    def mean_p(self, hbar: float = 1.0) -> float:
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dq)
        phi = np.fft.fft(self.values)
        return float(hbar * np.sum(k * np.abs(phi) ** 2) / np.sum(np.abs(phi) ** 2))

    @classmethod
    def from_values(cls, q_min, q_max, values) -> "GridWavefunction":
        """Wrap raw samples, renormalizing them on the grid."""
        values = np.asarray(values, dtype=complex)
        n = values.size
        dq = (q_max - q_min) / n
        values = values / math.sqrt(np.sum(np.abs(values) ** 2) * dq)
        return cls(q_min, q_max, n, values)


@dataclass(frozen=True)
class Mixture:
    """Convex mixture of pure states, ``components = ((weight, state), ...)``."""

    components: tuple

    def __post_init__(self):
        w = np.array([c[0] for c in self.components], dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise PreconditionError("mixture weights must be nonnegative and sum to 1")


State = Union[GridWavefunction, SuperpositionState, Mixture]


def to_grid(state: SuperpositionState, q_min: float, q_max: float, n: int) -> GridWavefunction:
    axis = Axis(q_min, q_max, n)
    return GridWavefunction.from_values(q_min, q_max, state.evaluate(axis.nodes))


def auto_axis(state: SuperpositionState, n: int | None = None, pad: float = 10.0) -> Axis:
    """Position axis wide and fine enough for the discrete Wigner transform."""
    lo = min(p.q0 - pad * p.s for p in state.packets)
    hi = max(p.q0 + pad * p.s for p in state.packets)
    pmax = max(abs(p.p0) + 8.0 * state.hbar / (2.0 * p.s) for p in state.packets)
    # the discrete transform needs dq < pi hbar / (2 pmax)
    dq_max = math.pi * state.hbar / (2.0 * pmax) / 1.5
    if n is None:
        n = 1 << max(6, math.ceil(math.log2((hi - lo) / dq_max)))
    half = max(abs(lo), abs(hi))
    return Axis(-half, half, n)


def from_fock(coeffs, axis: Axis, params: ModelParams) -> GridWavefunction:
    """Grid wavefunction sum_n c_n |n> in the small-oscillator eigenbasis."""
    coeffs = np.asarray(coeffs, dtype=complex)
    phi = hermite_functions(len(coeffs) - 1, axis.nodes, params)
    return GridWavefunction.from_values(axis.lo, axis.hi, coeffs @ phi)


# ---------------------------------------------------------------------------
# Wigner functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WignerGrid:
    """W tabulated as ``values[i_q, i_p]`` on two uniform axes."""

    q: Axis
    p: Axis
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.q.n, self.p.n):
            raise PreconditionError(f"Wigner values have shape {vals.shape}, expected {(self.q.n, self.p.n)}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def cell(self) -> float:
        return self.q.step * self.p.step

    def total(self) -> float:
        return float(self.values.sum() * self.cell)

    def min(self) -> float:
        return float(self.values.min())

    def to_rows(self):
        """(q, p, W) rows in q-major order, for CSV export."""
        Q, P = np.meshgrid(self.q.nodes, self.p.nodes, indexing="ij")
        return np.column_stack([Q.ravel(), P.ravel(), self.values.ravel()])


class _GaussianForm:
    """exp(-v.P.v/2 + beta.v + gamma) over v = (q, p) with complex coefficients."""

    __slots__ = ("P", "beta", "gamma")

    def __init__(self, P, beta, gamma):
        self.P = np.asarray(P, dtype=complex)
        self.beta = np.asarray(beta, dtype=complex)
        self.gamma = complex(gamma)

    def __call__(self, Q, Pm):
        P, b = self.P, self.beta
        quad = P[0, 0] * Q * Q + 2.0 * P[0, 1] * Q * Pm + P[1, 1] * Pm * Pm
        return np.exp(-0.5 * quad + b[0] * Q + b[1] * Pm + self.gamma)

    def mean(self):
        return np.linalg.solve(self.P, self.beta)

    def mass(self):
        """Integral over the plane."""
        Sigma = np.linalg.inv(self.P)
        return 2.0 * np.pi * np.sqrt(np.linalg.det(Sigma)) * np.exp(
            self.gamma + 0.5 * self.beta @ Sigma @ self.beta
        )

    def convolve(self, K) -> "_GaussianForm":
        """Convolution with the normalized Gaussian of covariance K."""
        K = np.asarray(K, dtype=float)
        Sigma = np.linalg.inv(self.P)
        mu = Sigma @ self.beta
        P_new = np.linalg.inv(Sigma + K)
        det = np.linalg.det(np.eye(2) + self.P @ K)
        gamma = (
            self.gamma
            + 0.5 * self.beta @ Sigma @ self.beta
            - 0.5 * mu @ P_new @ mu
            - 0.5 * np.log(det)
        )
        return _GaussianForm(P_new, P_new @ mu, gamma)

    def translate(self, dq, dp) -> "_GaussianForm":
        d = np.array([dq, dp])
        beta = self.beta + self.P @ d
        gamma = self.gamma - self.beta @ d - 0.5 * d @ self.P @ d
        return _GaussianForm(self.P, beta, gamma)


def _cross_form(pj: GaussianPacket, pk: GaussianPacket, hbar: float) -> _GaussianForm:
    """Closed-form cross Wigner function of psi_j and psi_k.

    W_jk(q, p) = (1/2 pi hbar) int dxi e^{-i p xi/hbar} psi_j(q + xi/2) psi_k*(q - xi/2).
    """
    aj = 1.0 / (4.0 * pj.s**2)
    ak = 1.0 / (4.0 * pk.s**2)
    kj = pj.p0 / hbar
    kk = pk.p0 / hbar
    A = (aj + ak) / 4.0
    # B(q, p) = bq q + bp p + b0 is the linear coefficient in xi
    bq = ak - aj
    bp = -1j / hbar
    b0 = aj * pj.q0 - ak * pk.q0 + 0.5j * (kj + kk)
    # C(q) = cqq q^2 + cq q + c0 collects the xi-independent exponent
    cqq = -(aj + ak)
    cq = 2.0 * aj * pj.q0 + 2.0 * ak * pk.q0 + 1j * (kj - kk)
    c0 = (
        -aj * pj.q0**2
        - ak * pk.q0**2
        - 1j * kj * pj.q0
        + 1j * kk * pk.q0
        + 1j * (pj.phase - pk.phase)
    )
    norm = (2.0 * math.pi * pj.s**2) ** -0.25 * (2.0 * math.pi * pk.s**2) ** -0.25
    prefactor = norm * np.sqrt(np.pi / A) / (2.0 * math.pi * hbar)
    inv4A = 1.0 / (4.0 * A)
    P = np.array(
        [
            [-2.0 * (cqq + bq * bq * inv4A), -2.0 * bq * bp * inv4A],
            [-2.0 * bq * bp * inv4A, -2.0 * bp * bp * inv4A],
        ]
    )
    beta = np.array([cq + 2.0 * bq * b0 * inv4A, 2.0 * bp * b0 * inv4A])
    gamma = c0 + b0 * b0 * inv4A + np.log(prefactor)
    return _GaussianForm(P, beta, gamma)


def _wigner_forms(state: SuperpositionState):
    out = []
    for aj, pj in state.terms:
        for ak, pk in state.terms:
            out.append((aj * np.conj(ak), _cross_form(pj, pk, state.hbar)))
    return out


def _evaluate_forms(forms, q: Axis, p: Axis) -> np.ndarray:
    Q, P = np.meshgrid(q.nodes, p.nodes, indexing="ij")
    total = np.zeros(Q.shape, dtype=complex)
    for coeff, form in forms:
        total += coeff * form(Q, P)
    return total


def _forms_of(state) -> list:
    if isinstance(state, SuperpositionState):
        return _wigner_forms(state)
    if isinstance(state, Mixture):
        out = []
        for w, comp in state.components:
            out.extend((w * c, f) for c, f in _forms_of(comp))
        return out
    raise TypeError(f"no analytic Wigner form for {type(state).__name__}")


def _check_wigner(values: np.ndarray, q: Axis, p: Axis, check_span: bool) -> WignerGrid:
    imag = float(np.max(np.abs(values.imag))) if np.iscomplexobj(values) else 0.0
    if imag > 1e-10:
        raise PreconditionError(f"Wigner transform has imaginary residue {imag:.3g}")
    w = WignerGrid(q, p, np.real(values))
    if check_span:
        mom = w.values.sum(axis=0) * q.step
        leak = float(max(abs(mom[0]), abs(mom[-1])))
        if leak > 1e-6:
            raise SpanError(f"momentum grid too narrow: boundary momentum density {leak:.3g}", leakage=leak)
    total = w.total()
    if abs(total - 1.0) > WIGNER_NORM_TOL:
        raise SpanError(f"Wigner grid integrates to {total!r}, expected 1", leakage=abs(total - 1.0))
    return w


def _grid_wigner_values(psi: GridWavefunction, p: Axis, hbar: float) -> np.ndarray:
    n = psi.n
    v = psi.values
    j = np.arange(-n // 2, n // 2)
    i = np.arange(n)[:, None]
    plus = i + j[None, :]
    minus = i - j[None, :]
    ok = (plus >= 0) & (plus < n) & (minus >= 0) & (minus < n)
    F = np.where(ok, v[np.clip(plus, 0, n - 1)] * np.conj(v[np.clip(minus, 0, n - 1)]), 0.0)
    dq = psi.dq
    matched = momentum_axis_for(psi.axis, hbar)
    if p == matched:
        # p_l = pi hbar l / (n dq): the sum over j is a plain DFT
        spec = np.fft.fft(np.fft.ifftshift(F, axes=1), axis=1)
        return np.fft.fftshift(spec, axes=1) * dq / (math.pi * hbar)
    E = np.exp(-2j * np.outer(j, p.nodes) * dq / hbar)
    return (F @ E) * dq / (math.pi * hbar)


def wigner_transform(state: State, pgrid: Axis | None = None, qgrid: Axis | None = None,
                     check_span: bool = True, hbar: float | None = None) -> WignerGrid:
    """Wigner function of a pure or mixed state.

    Grid states use the discrete transform on their own position nodes; with
    the default momentum axis (:func:`momentum_axis_for`) its p-marginal is
    exact.  Analytic superpositions are evaluated in closed form on ``qgrid``
    x ``pgrid``, auto-chosen when omitted.  ``hbar`` is only needed for grid
    states (analytic states carry their own).
    """
    if isinstance(state, GridWavefunction):
        return _grid_wigner(state, pgrid, check_span, 1.0 if hbar is None else hbar)
    if isinstance(state, Mixture) and all(isinstance(c, GridWavefunction) for _, c in state.components):
        h = 1.0 if hbar is None else hbar
        parts = [(w, _grid_wigner(c, pgrid, False, h)) for w, c in state.components]
        vals = sum(w * g.values for w, g in parts)
        return _check_wigner(vals, parts[0][1].q, parts[0][1].p, check_span)
    if qgrid is None or pgrid is None:
        qa, pa = default_phase_axes(state)
        qgrid = qgrid or qa
        pgrid = pgrid or pa
    vals = _evaluate_forms(_forms_of(state), qgrid, pgrid)
    return _check_wigner(vals, qgrid, pgrid, check_span)


def _grid_wigner(psi, pgrid, check_span, hbar):
    if abs(psi.norm() - 1.0) > NORM_TOL_GRID:
        raise PreconditionError("wavefunction not normalized")
    p = momentum_axis_for(psi.axis, hbar) if pgrid is None else pgrid
    vals = _grid_wigner_values(psi, p, hbar)
    return _check_wigner(vals, psi.axis, p, check_span)


def _packets_of(state):
    if isinstance(state, SuperpositionState):
        return state.packets, state.hbar
    out, hbar = [], 1.0
    for _, c in state.components:
        pk, hbar = _packets_of(c)
        out.extend(pk)
    return out, hbar


def default_phase_axes(state, nodes_per_sigma: float = 8.0, pad: float = 9.0,
                       extra_cov=None) -> tuple[Axis, Axis]:
    """Axes covering every packet (optionally widened by a smearing covariance)."""
    packets, hbar = _packets_of(state)
    cq = cp = 0.0
    if extra_cov is not None:
        cq, cp = float(extra_cov[0][0]), float(extra_cov[1][1])
    sq = [math.sqrt(p.s**2 + cq) for p in packets]
    sp = [math.sqrt((hbar / (2 * p.s)) ** 2 + cp) for p in packets]
    qlo = min(p.q0 - pad * s for p, s in zip(packets, sq))
    qhi = max(p.q0 + pad * s for p, s in zip(packets, sq))
    plo = min(p.p0 - pad * s for p, s in zip(packets, sp))
    phi = max(p.p0 + pad * s for p, s in zip(packets, sp))
    dq = min(sq) / nodes_per_sigma
    dp = min(sp) / nodes_per_sigma
    # resolve interference fringes of period 2 pi hbar / separation
    qs = [p.q0 for p in packets]
    ps = [p.p0 for p in packets]
    if len(packets) > 1:
        sep_q = max(qs) - min(qs)
        sep_p = max(ps) - min(ps)
        if sep_q > 0:
            dp = min(dp, 2 * math.pi * hbar / sep_q / 16)
        if sep_p > 0:
            dq = min(dq, 2 * math.pi * hbar / sep_p / 16)
    nq = int(math.ceil((qhi - qlo) / dq))
    np_ = int(math.ceil((phi - plo) / dp))
    return Axis(qlo, qlo + nq * dq, nq), Axis(plo, plo + np_ * dp, np_)


def marginals(w: WignerGrid) -> tuple[np.ndarray, np.ndarray]:
    """(position density on w.q, momentum density on w.p)."""
    return w.values.sum(axis=1) * w.p.step, w.values.sum(axis=0) * w.q.step


# ---------------------------------------------------------------------------
# energy basis
# ---------------------------------------------------------------------------


def hermite_functions(n_max: int, x, params: ModelParams) -> np.ndarray:
    """Oscillator eigenfunctions phi_0..phi_n_max on ``x`` (rows), via recurrence."""
    x = np.asarray(x, dtype=float)
    scale = math.sqrt(params.m * params.omega / params.hbar)
    xi = scale * x
    out = np.empty((n_max + 1, x.size))
    out[0] = (scale**2 / math.pi) ** 0.25 * np.exp(-0.5 * xi**2)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * xi * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * xi * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def energy_decompose(state: State, params: ModelParams, n_max: int = 40,
                     tol: float = 1e-8, axis: Axis | None = None) -> list[tuple[float, float]]:
    """Energy levels and populations [(E_n, rho_nn), ...] for n <= n_max."""
    if isinstance(state, Mixture):
        acc = np.zeros(n_max + 1)
        for w, comp in state.components:
            acc += w * np.array([r for _, r in energy_decompose(comp, params, n_max, tol=math.inf, axis=axis)])
        pops = acc
    else:
        if isinstance(state, SuperpositionState):
            ax = axis or auto_axis(state)
            state = to_grid(state, ax.lo, ax.hi, ax.n)
        phi = hermite_functions(n_max, state.q, params)
        amps = phi @ state.values * state.dq
        pops = np.abs(amps) ** 2
    captured = float(pops.sum())
    if captured < 1.0 - tol:
        raise TruncationError(
            f"levels 0..{n_max} capture only {captured:.12f} of the norm", captured_norm=captured
        )
    energies = params.hbar * params.omega * (np.arange(n_max + 1) + 0.5)
    return [(float(e), float(r)) for e, r in zip(energies, pops)]


def oscillator_energy(psi: GridWavefunction, params: ModelParams) -> float:
    """<h> for h = p^2/2m + m omega^2 x^2 / 2 on the grid (spectral kinetic term)."""
    k = 2.0 * np.pi * np.fft.fftfreq(psi.n, d=psi.dq)
    phi = np.fft.fft(psi.values)
    kin = params.hbar**2 * np.sum(k**2 * np.abs(phi) ** 2) / (2 * params.m * np.sum(np.abs(phi) ** 2))
    pot = 0.5 * params.m * params.omega**2 * np.sum(psi.q**2 * psi.density()) * psi.dq
    return float(kin + pot)
