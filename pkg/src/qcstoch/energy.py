"""Energy-coupled variant: the classical particle couples to the oscillator energy.

With interaction g(X) h, each energy eigenstate E_n drives its own classical
branch M Q'' + g'(Q) E_n = xi(t), and the branches occur with the
populations rho_nn.  Coherences between levels never enter.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InvalidParameterError, PreconditionError, SpanError
from .model import DerivedConstants, ModelParams, derive_constants
from .qstate import energy_decompose
from .trajectories import ClassicalPath, CouplingSpec, InitialClassicalState, check_step_resolution, time_grid

#: grid must extend this many resolution widths beyond the extreme levels
SPAN_WIDTHS = 5.0


def energy_resolution(params: ModelParams, consts: DerivedConstants, tau: float) -> float:
    """Standard deviation of the smeared energy record, sqrt(2 hbar^2 Dtilde eta / (lambda^2 tau))."""
    if params.lam == 0.0:
        raise InvalidParameterError("lambda = 0: the energy record carries no information")
    return math.sqrt(2.0 * params.hbar**2 * consts.Dtilde * params.eta / (params.lam**2 * tau))


def energy_weight(populations, params: ModelParams, consts: DerivedConstants, tau: float, Ebar) -> np.ndarray:
    """Density of the time-averaged energy record on the grid ``Ebar``.

    Each level contributes a normalized Gaussian of mass rho_nn, so the
    density integrates to the captured population.
    """
    Ebar = np.asarray(Ebar, dtype=float)
    width = energy_resolution(params, consts, tau)
    E = np.array([e for e, _ in populations], dtype=float)
    rho = np.array([r for _, r in populations], dtype=float)
    lo, hi = E.min() - SPAN_WIDTHS * width, E.max() + SPAN_WIDTHS * width
    if Ebar.min() > lo or Ebar.max() < hi:
        raise SpanError(
            f"energy grid [{Ebar.min():.6g}, {Ebar.max():.6g}] does not cover [{lo:.6g}, {hi:.6g}]"
        )
    z = (Ebar[:, None] - E[None, :]) / width
    return (rho * np.exp(-0.5 * z * z)).sum(axis=1) / (width * math.sqrt(2 * math.pi))


def _as_poly(gX) -> Polynomial:
    return gX if isinstance(gX, Polynomial) else Polynomial(np.atleast_1d(np.asarray(gX, dtype=float)))


def _integrate(E, gX: Polynomial, Q0, P0, params: ModelParams, noise):
    """Velocity Verlet for M Q'' = -g'(Q) E + noise, batched over rows."""
    dg = gX.deriv()
    n, dt, M = params.n_steps, params.dt, params.M
    E = np.asarray(E, dtype=float)
    Q = np.array(Q0, dtype=float)
    P = np.array(P0, dtype=float)
    outQ = np.empty((Q.size, n + 1))
    outP = np.empty((Q.size, n + 1))
    outQ[:, 0], outP[:, 0] = Q, P
    F = -dg(Q) * E + noise[:, 0]
    for k in range(n):
        P += 0.5 * dt * F
        Q += dt * P / M
        F = -dg(Q) * E + noise[:, k + 1]
        P += 0.5 * dt * F
        outQ[:, k + 1], outP[:, k + 1] = Q, P
    return outQ, outP / M


def _check(E, gX, init, params):
    # the energy coupling acts on Q like a potential E g(Q)
    spec = CouplingSpec(V=(np.atleast_1d(E).max() * gX).coef, g=(0.0,), f=(0.0, 1.0))
    check_step_resolution(spec, params, init.Q0, 0.0)


def _draw(rng, init, params, consts, with_noise):
    Q0, P0 = init.draw(rng)
    n = params.n_steps
    if with_noise:
        noise = rng.standard_normal(n + 1) * math.sqrt(consts.total_noise_var / params.dt)
    else:
        noise = np.zeros(n + 1)
    return Q0, P0, noise


def branch_trajectory(E: float, gX, init: InitialClassicalState, params: ModelParams, seed=None,
                      with_noise: bool = True, consts: DerivedConstants | None = None) -> ClassicalPath:
    """Classical branch for energy E; noise of variance 2 hbar^2 Dtilde / dt per node."""
    if E < 0:
        raise PreconditionError("oscillator energies are nonnegative")
    gX = _as_poly(gX)
    consts = derive_constants(params) if consts is None else consts
    _check(E, gX, init, params)
    rng = np.random.Generator(np.random.Philox(seed))
    rng.random()  # level draw slot, kept so ensemble members replay exactly
    Q0, P0, noise = _draw(rng, init, params, consts, with_noise)
    Q, V = _integrate([E], gX, [Q0], [P0], params, noise[None, :])
    t = time_grid(params)
    return ClassicalPath(t, Q[0], V[0], np.full(t.size, np.nan), float("nan"), float("nan"), seed, "energy",
                         {"E": float(E), "with_noise": with_noise})


@dataclass(frozen=True, eq=False)
class EnergyBranchSet:
    branches: list  # (E_n, rho_nn, noiseless template path)
    Ebar: np.ndarray
    weight: np.ndarray
    tau: float
    width: float
    levels: np.ndarray  # sampled level per run
    labels: np.ndarray  # level assigned from the trajectory, -1 if unclassified
    final_Q: np.ndarray
    seeds: tuple = ()
    paths: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def populations(self) -> np.ndarray:
        return np.array([r for _, r, _ in self.branches])

    def frequencies(self, use_labels: bool = True) -> np.ndarray:
        lab = self.labels if use_labels else self.levels
        ok = lab >= 0
        return np.bincount(lab[ok], minlength=len(self.branches)) / max(ok.sum(), 1)

    def frequency_table(self) -> dict:
        f = self.frequencies()
        n = int((self.labels >= 0).sum())
        return {
            "levels": [
                {"n": i, "E": E, "population": r, "frequency": float(f[i]),
                 "stderr": math.sqrt(max(r * (1 - r), 0.0) / max(n, 1))}
                for i, (E, r, _) in enumerate(self.branches)
            ],
            "n_classified": n,
            "n_unclassified": int((self.labels < 0).sum()),
        }

    def weight_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.Ebar, self.weight]), delimiter=",", header="Ebar,w",
                   comments="", fmt="%.17g")

    def table_json(self) -> str:
        return json.dumps(self.frequency_table(), indent=2)


def classify_levels(Q: np.ndarray, templates: np.ndarray, threshold: float | None = None) -> np.ndarray:
    """Nearest noiseless template by time-averaged L2 distance; -1 beyond ``threshold``."""
    d = np.sqrt(np.mean((Q[:, None, :] - templates[None, :, :]) ** 2, axis=-1))
    lab = np.argmin(d, axis=1)
    if threshold is not None:
        lab = np.where(d[np.arange(lab.size), lab] <= threshold, lab, -1)
    return lab


def run_energy_ensemble(state, gX, init: InitialClassicalState, params: ModelParams, consts: DerivedConstants,
                        n: int, seed: int, n_max: int = 40, tol: float = 1e-6, Ebar=None,
                        keep_paths: bool = False, chunk: int = 2048):
    """Sample levels from the populations and integrate one noisy branch per run.

    Run i uses the Philox stream seeded by SeedSequence(seed, spawn_key=(0, i));
    its first uniform picks the level.  Runs are then labelled from their
    trajectories by the nearest noiseless template.
    Returns (EnergyBranchSet, frequency table dict).
    """
    gX = _as_poly(gX)
    pops = energy_decompose(state, params, n_max=n_max, tol=tol)
    E = np.array([e for e, _ in pops])
    rho = np.array([r for _, r in pops])
    _check(E, gX, init, params)
    cdf = np.cumsum(rho) / rho.sum()
    zero = np.zeros((E.size, params.n_steps + 1))
    templ_Q, _ = _integrate(E, gX, np.full(E.size, init.Q0), np.full(E.size, init.P0), params, zero)
    t = time_grid(params)
    nanv = np.full(t.size, np.nan)
    branches = [
        (float(E[i]), float(rho[i]),
         ClassicalPath(t, templ_Q[i], np.gradient(templ_Q[i], t), nanv, float("nan"), float("nan"), None,
                       "energy-template", {"E": float(E[i])}))
        for i in range(E.size)
    ]
    seeds = tuple(np.random.SeedSequence(seed, spawn_key=(0, i)).generate_state(2, np.uint64)[0].item()
                  for i in range(n))
    levels = np.empty(n, dtype=int)
    finals = np.empty(n)
    labels = np.empty(n, dtype=int)
    kept = [] if keep_paths else None
    for lo in range(0, n, chunk):
        idx = range(lo, min(n, lo + chunk))
        Q0s, P0s, noise = [], [], []
        for i in idx:
            rng = np.random.Generator(np.random.Philox(seeds[i]))
            levels[i] = min(int(np.searchsorted(cdf, rng.random(), side="right")), E.size - 1)
            a, b, z = _draw(rng, init, params, consts, True)
            Q0s.append(a)
            P0s.append(b)
            noise.append(z)
        sl = slice(lo, lo + len(idx))
        Q, _ = _integrate(E[levels[sl]], gX, Q0s, P0s, params, np.array(noise))
        finals[sl] = Q[:, -1]
        labels[sl] = classify_levels(Q, templ_Q)
        if keep_paths:
            kept.append(Q)
    if Ebar is None:
        width = energy_resolution(params, consts, params.duration)
        Ebar = np.linspace(E.min() - 8 * width, E.max() + 8 * width, 2001)
    w = energy_weight(pops, params, consts, params.duration, Ebar)
    result = EnergyBranchSet(
        branches=branches,
        Ebar=np.asarray(Ebar),
        weight=w,
        tau=params.duration,
        width=energy_resolution(params, consts, params.duration),
        levels=levels,
        labels=labels,
        final_Q=finals,
        seeds=seeds,
        paths=np.vstack(kept) if keep_paths else None,
    )
    return result, result.frequency_table()
