import math

import numpy as np
import pytest

from qcstoch.errors import LocalizationResolutionError, PreconditionError
from qcstoch.model import ModelParams, derive_constants, kT_for_Dtilde
from qcstoch.qstate import cat_state, coherent_state, to_grid
from qcstoch.sse import SSECoefficients, SSEState, coupled_run, coupled_runs, measurement_record, sse_step
from qcstoch.trajectories import CouplingSpec, InitialClassicalState


def _params(lam=0.5, Dtilde=1.0, **kw):
    p = ModelParams(M=10.0, lam=lam, sigma=50.0, duration=2.0, dt=1e-3, **kw)
    return p.replace(kT=kT_for_Dtilde(p, Dtilde))


def test_no_noise_no_measurement_is_schrodinger():
    p = _params(lam=0.0)
    psi = to_grid(coherent_state(1.0, p), -12, 12, 256)
    s = SSEState(psi)
    zero = SSECoefficients(0.0, 0.0)
    c = derive_constants(p.replace(lam=1.0))  # any finite constants; coefficients are zero
    for _ in range(500):
        s = sse_step(s, 0.0, p, c, 0.0, coeffs=zero)
    t = 500 * p.dt
    assert s.mean_q == pytest.approx(math.sqrt(2) * math.cos(t), abs=1e-6)
    assert s.var_q == pytest.approx(0.5, abs=1e-6)


def test_record_noise_variance(rng):
    p = _params()
    c = derive_constants(p)
    s = SSEState(to_grid(coherent_state(0.5, p), -12, 12, 256))
    eta = rng.standard_normal(20000)
    qbar = np.array([measurement_record(s, e, c)[0] for e in eta[:2000]])
    assert np.allclose(qbar - s.mean_q, 0.5 * c.sigma1 * eta[:2000], rtol=1e-14)
    _, s2 = measurement_record(s, 0.3, c)
    assert len(s2.record) == 1


def test_lambda_sigma1_fixed_by_Dtilde():
    vals = [p.lam * derive_constants(p).sigma1 for p in (_params(lam=lam) for lam in (0.1, 0.3, 2.0))]
    assert np.allclose(vals, vals[0], rtol=1e-14)


def test_step_keeps_norm_and_small_defect(rng):
    p = _params()
    c = derive_constants(p)
    s = SSEState(to_grid(coherent_state(0.5, p), -12, 12, 256))
    for dW in rng.standard_normal(200) * math.sqrt(p.dt):
        s = sse_step(s, 0.1, p, c, dW)
        assert s.norm_defect < 0.1
    assert s.psi.norm() == pytest.approx(1.0, abs=1e-12)


def test_norm_preserving_coefficients_have_smaller_defect(rng):
    p = _params()
    c = derive_constants(p)
    s = SSEState(to_grid(cat_state([1, 1], [-3, 3], s=0.7), -12, 12, 256))
    a = sse_step(s, 0.0, p, c, 0.0, coeffs=SSECoefficients.as_printed(c)).norm_defect
    b = sse_step(s, 0.0, p, c, 0.0, coeffs=SSECoefficients.norm_preserving(c)).norm_defect
    assert b < a


def test_localization_resolution_refused():
    # a packet narrower than four grid cells
    p = _params()
    psi = to_grid(cat_state([1], [0.0], s=0.2), -16, 16, 64)
    with pytest.raises(LocalizationResolutionError):
        sse_step(SSEState(psi), 0.0, p, derive_constants(p), 0.0)


def test_nonlinear_coupling_refused():
    p = _params()
    psi = to_grid(coherent_state(0.0, p), -12, 12, 256)
    with pytest.raises(PreconditionError):
        coupled_runs(psi, InitialClassicalState(), CouplingSpec(g=(0, 0, 1.0)), p, derive_constants(p), (1,))


def test_single_run_matches_batch_member():
    p = _params().replace(duration=0.5)
    c = derive_constants(p)
    psi = to_grid(coherent_state(0.5, p), -12, 12, 256)
    cp = CouplingSpec.linear(p.lam)
    b = coupled_runs(psi, InitialClassicalState(), cp, p, c, (11, 12, 13))
    path, state, rec = coupled_run(psi, InitialClassicalState(), cp, p, c, 12)
    assert np.allclose(path.Q, b.Q[1], rtol=0, atol=1e-13)
    assert np.allclose(rec, b.record[1], rtol=0, atol=1e-12)
    assert state.seed == 12


def test_measurement_localizes_cat():
    p = _params(lam=1.0, Dtilde=2.0).replace(M=100.0, duration=3.0)
    c = derive_constants(p)
    psi = to_grid(cat_state([1, 1], [-4, 4], s=0.7071067811865476), -16, 16, 512)
    b = coupled_runs(psi, InitialClassicalState(), CouplingSpec.linear(1.0), p, c, tuple(range(20)))
    assert b.var_q[:, 0].mean() > 15
    # most runs have collapsed onto one packet (variance near s^2 = 1/2)
    assert np.median(b.var_q[:, -1]) < 1.0
    assert b.max_norm_deviation < 1e-10
