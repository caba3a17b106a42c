import math

import pytest

from qcstoch.errors import InvalidParameterError
from qcstoch.model import ModelParams, derive_constants, kT_for_Dtilde, maximal_refinement_sigma, validate


def test_derived_constants_by_hand():
    p = ModelParams(M=2.0, m=1.5, omega=0.5, lam=0.4, gamma=0.3, kT=0.7, hbar=1.2, sigma=3.0, eta=0.25)
    c = derive_constants(p)
    D = 2 * 2.0 * 0.3 * 0.7 / 1.2**2
    Dt = D + 1 / (4 * 9.0)
    assert c.D == pytest.approx(D, rel=1e-15)
    assert c.Dtilde == pytest.approx(Dt, rel=1e-15)
    assert c.sigma1_sq == pytest.approx(4 * 1.2**2 * Dt * 0.25 / 0.16, rel=1e-14)
    assert c.Delta == pytest.approx(1.2**2 * Dt * 1.5 * 0.25 / 0.16, rel=1e-14)
    assert c.force_noise_var + c.record_noise_var * 0.16 == pytest.approx(c.total_noise_var, rel=1e-14)
    assert c.sigma1 == pytest.approx(math.sqrt(c.sigma1_sq))


def test_zero_coupling_gives_infinite_imprecision():
    c = derive_constants(ModelParams(lam=0.0))
    assert math.isinf(c.sigma1_sq) and math.isinf(c.Delta)
    assert math.isfinite(c.force_noise_var)


@pytest.mark.parametrize("bad", [dict(M=0), dict(dt=-1), dict(eta=1.0), dict(eta=0.0), dict(kT=float("nan")),
                                 dict(lam=float("inf")), dict(dt=2.0, duration=1.0)])
def test_invalid_parameters_rejected(bad):
    with pytest.raises(InvalidParameterError):
        ModelParams(**bad)


def test_dict_roundtrip_uses_lambda_key():
    p = ModelParams(lam=0.3, eta=0.4)
    d = p.to_dict()
    assert "lambda" in d and "lam" not in d
    assert ModelParams.from_dict(d) == p


def test_validate_flags():
    ok = validate(ModelParams(M=100, kT=1.0, sigma=10.0, lam=0.1))
    assert ok.decoherent and ok.classical_regime and not ok.messages
    bad = validate(ModelParams(M=1, kT=1e-6, sigma=0.1, lam=10.0))
    assert not bad.decoherent and not bad.classical_regime
    assert len(bad.messages) == 2


def test_kT_for_Dtilde_inverts():
    p = ModelParams(M=3.0, gamma=0.5, sigma=4.0)
    kT = kT_for_Dtilde(p, 2.5)
    assert derive_constants(p.replace(kT=kT)).Dtilde == pytest.approx(2.5, rel=1e-14)
    with pytest.raises(InvalidParameterError):
        kT_for_Dtilde(p, 1e-3)


def test_maximal_refinement_sigma():
    assert maximal_refinement_sigma(4.0) == 0.5
    with pytest.raises(InvalidParameterError):
        maximal_refinement_sigma(0.0)
