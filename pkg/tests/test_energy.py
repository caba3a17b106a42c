import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from qcstoch.energy import branch_trajectory, energy_resolution, energy_weight, run_energy_ensemble
from qcstoch.errors import InvalidParameterError, PreconditionError, SpanError
from qcstoch.model import ModelParams, derive_constants, kT_for_Dtilde
from qcstoch.qstate import coherent_state, energy_decompose
from qcstoch.trajectories import InitialClassicalState


def _params(**kw):
    base = dict(M=1.0, lam=1.0, sigma=50.0, duration=4.0, dt=0.02)
    base.update(kw)
    p = ModelParams(**base)
    return p.replace(kT=kT_for_Dtilde(p, 0.01))


def test_resolution_formula():
    p = _params(lam=0.5, eta=0.3)
    c = derive_constants(p)
    assert energy_resolution(p, c, 2.0) == pytest.approx(math.sqrt(2 * c.Dtilde * 0.3 / (0.25 * 2.0)))
    with pytest.raises(InvalidParameterError):
        energy_resolution(p.replace(lam=0.0), c, 1.0)


def test_weight_normalized_and_span_checked():
    p = _params()
    c = derive_constants(p)
    pops = energy_decompose(coherent_state(1.0, p), p)
    width = energy_resolution(p, c, p.duration)
    E = np.linspace(-10 * width, 40.5 + 10 * width, 200001)
    w = energy_weight(pops, p, c, p.duration, E)
    assert trapezoid(w, E) == pytest.approx(sum(r for _, r in pops), abs=1e-9)
    with pytest.raises(SpanError):
        energy_weight(pops, p, c, p.duration, np.linspace(0, 5, 100))


def test_constant_force_kinematics():
    p = _params()
    path = branch_trajectory(1.5, [0.0, 1.0], InitialClassicalState(0.2, 0.3), p, with_noise=False)
    assert np.allclose(path.Q, 0.2 + 0.3 * path.t - 0.75 * path.t**2, atol=1e-13, rtol=0)


def test_quadratic_coupling_oscillates():
    # g = Q^2: M Q'' = -2 E Q, a harmonic oscillation of frequency sqrt(2 E / M)
    p = _params(dt=1e-3)
    E = 2.5
    path = branch_trajectory(E, [0.0, 0.0, 1.0], InitialClassicalState(1.0, 0.0), p, with_noise=False)
    Om = math.sqrt(2 * E)
    assert np.max(np.abs(path.Q - np.cos(Om * path.t))) < 1e-4


def test_negative_energy_refused():
    with pytest.raises(PreconditionError):
        branch_trajectory(-1.0, [0, 1], InitialClassicalState(), _params())


def test_branch_replays_ensemble_member():
    p = _params()
    c = derive_constants(p)
    st = coherent_state(1.0, p)
    res, _ = run_energy_ensemble(st, [0, 1], InitialClassicalState(), p, c, 20, seed=4, keep_paths=True)
    i = 7
    again = branch_trajectory(res.branches[res.levels[i]][0], [0, 1], InitialClassicalState(), p,
                              seed=res.seeds[i], consts=c)
    assert np.array_equal(again.Q, res.paths[i])


def test_small_ensemble_frequencies_and_labels():
    p = _params()
    c = derive_constants(p)
    st = coherent_state(1.0, p)
    res, table = run_energy_ensemble(st, [0, 1], InitialClassicalState(), p, c, 2000, seed=5)
    assert np.array_equal(res.labels, res.levels)
    f = res.frequencies()
    pops = res.populations
    se = np.sqrt(pops * (1 - pops) / 2000)
    assert np.all(np.abs(f[:5] - pops[:5]) < 5 * se[:5] + 1e-12)
    assert table["n_classified"] == 2000
