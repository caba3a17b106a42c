import math

import numpy as np
import pytest
from scipy.stats import poisson

from qcstoch.errors import PreconditionError, SpanError, TruncationError
from qcstoch.model import ModelParams
from qcstoch.qstate import (
    Axis,
    GaussianPacket,
    GridWavefunction,
    Mixture,
    SuperpositionState,
    cat_state,
    coherent_state,
    energy_decompose,
    from_fock,
    marginals,
    momentum_axis_for,
    oscillator_energy,
    to_grid,
    wigner_transform,
)

P = ModelParams()


def test_ground_state_wigner_peak():
    g = coherent_state(0.0, P)
    ax = Axis(-8, 8, 64)  # node 32 sits at 0
    w = wigner_transform(g, qgrid=ax, pgrid=ax)
    assert w.values[32, 32] == pytest.approx(1 / math.pi, rel=1e-14)


def test_cat_marginals_match_density():
    cat = cat_state([math.sqrt(0.3), math.sqrt(0.7)], [-3.0, 3.0], s=0.7)
    w = wigner_transform(cat)
    pq, pp = marginals(w)
    dens = np.abs(cat.evaluate(w.q.nodes)) ** 2
    assert np.max(np.abs(pq - dens)) < 1e-6
    assert w.total() == pytest.approx(1.0, abs=1e-8)
    assert w.min() < -0.05  # interference fringes
    # packet overlap renormalizes both amplitudes by the same factor
    assert cat.weights[0] / cat.weights[1] == pytest.approx(3 / 7, rel=1e-12)


def test_grid_wigner_momentum_marginal_exact():
    psi = to_grid(coherent_state(0.5 + 0.5j, P), -10, 10, 128)
    w = wigner_transform(psi)
    assert w.p == momentum_axis_for(psi.axis)
    pq, _ = marginals(w)
    assert np.max(np.abs(pq - psi.density())) < 1e-12


def test_analytic_and_grid_moments_agree():
    st = coherent_state(1.0 - 0.5j, P)
    psi = to_grid(st, -12, 12, 256)
    assert psi.mean_q() == pytest.approx(st.mean_q(), abs=1e-10)
    assert psi.mean_p() == pytest.approx(st.mean_p(), abs=1e-8)
    assert st.mean_q() == pytest.approx(math.sqrt(2.0), abs=1e-12)
    assert st.mean_p() == pytest.approx(-math.sqrt(2.0) * 0.5, abs=1e-12)


def test_coherent_populations_are_poisson():
    pops = energy_decompose(coherent_state(1.3, P), P)
    rho = np.array([r for _, r in pops])
    assert np.max(np.abs(rho - poisson.pmf(np.arange(rho.size), 1.69))) < 1e-10
    assert pops[2][0] == pytest.approx(2.5)


def test_from_fock_energy():
    ax = Axis(-10, 10, 256)
    c = np.zeros(4, complex)
    c[1], c[3] = 1 / math.sqrt(2), 1j / math.sqrt(2)
    psi = from_fock(c, ax, P)
    assert oscillator_energy(psi, P) == pytest.approx(0.5 * 1.5 + 0.5 * 3.5, rel=1e-10)
    pops = energy_decompose(psi, P, n_max=5)
    assert [r for _, r in pops][1] == pytest.approx(0.5, abs=1e-10)


def test_truncation_reported():
    with pytest.raises(TruncationError) as e:
        energy_decompose(coherent_state(3.0, P), P, n_max=5)
    assert 0 < e.value.captured_norm < 1


def test_mixture_populations_average():
    a, b = coherent_state(0.5, P), coherent_state(-1.0, P)
    mix = Mixture(((0.25, a), (0.75, b)))
    ra = np.array([r for _, r in energy_decompose(a, P)])
    rb = np.array([r for _, r in energy_decompose(b, P)])
    rm = np.array([r for _, r in energy_decompose(mix, P)])
    assert np.allclose(rm, 0.25 * ra + 0.75 * rb, atol=1e-14)


def test_grid_preconditions():
    with pytest.raises(PreconditionError):
        to_grid(coherent_state(0, P), -8, 8, 100)
    with pytest.raises(SpanError):
        to_grid(coherent_state(3, P), -5, 5, 64)
    with pytest.raises(PreconditionError):
        GridWavefunction(-8, 8, 64, np.ones(64))


def test_unnormalized_superposition_rejected():
    with pytest.raises(PreconditionError):
        SuperpositionState(((2.0, GaussianPacket(0, 0, 1)),))
    with pytest.raises(PreconditionError):
        Mixture(((0.5, coherent_state(0, P)),))


def test_narrow_momentum_grid_refused():
    with pytest.raises(SpanError):
        wigner_transform(coherent_state(0, P), qgrid=Axis(-8, 8, 64), pgrid=Axis(-1, 1, 32))
