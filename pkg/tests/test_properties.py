import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import poisson

from qcstoch.ensemble import run_seed
from qcstoch.model import ModelParams, derive_constants
from qcstoch.qstate import GaussianPacket, coherent_state, energy_decompose, packet_overlap
from qcstoch.sampling import build_smearing, gram_matrix, inverse_cdf_sample, smear

finite = dict(allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 3.0, **finite), st.floats(0.5, 8.0, **finite), st.floats(0.3, 3.0, **finite))
def test_gram_is_symmetric_positive_definite(omega, tau, m):
    p = ModelParams(omega=omega, m=m, duration=tau, dt=tau / 400)
    G = gram_matrix(p)
    assert np.allclose(G, G.T)
    assert np.linalg.eigvalsh(G).min() > 0


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3, **finite), st.floats(-3, 3, **finite), st.floats(0.3, 2.0, **finite),
       st.floats(-3, 3, **finite), st.floats(-3, 3, **finite), st.floats(0.3, 2.0, **finite))
def test_packet_overlap_matches_quadrature(q1, p1, s1, q2, p2, s2):
    a, b = GaussianPacket(q1, p1, s1), GaussianPacket(q2, p2, s2)
    lo, hi = min(q1, q2) - 12 * max(s1, s2), max(q1, q2) + 12 * max(s1, s2)
    re = quad(lambda x: (np.conj(a.evaluate(x)) * b.evaluate(x)).real, lo, hi, limit=400)[0]
    im = quad(lambda x: (np.conj(a.evaluate(x)) * b.evaluate(x)).imag, lo, hi, limit=400)[0]
    assert abs(packet_overlap(a, b) - complex(re, im)) < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.5, 1.5, **finite), st.floats(-1.5, 1.5, **finite))
def test_coherent_populations_poisson(re, im):
    p = ModelParams()
    pops = np.array([r for _, r in energy_decompose(coherent_state(complex(re, im), p), p, n_max=40)])
    assert np.max(np.abs(pops - poisson.pmf(np.arange(41), re * re + im * im))) < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 2.0, **finite), st.floats(0.2, 0.8, **finite), st.floats(-2, 2, **finite))
def test_smearing_preserves_normalization(lam, eta, alpha):
    p = ModelParams(lam=lam, eta=eta, duration=4.0, dt=0.01)
    w = smear(coherent_state(alpha, p), build_smearing(p, derive_constants(p)))
    assert abs(w.total() - 1.0) < 1e-8
    assert w.min() >= 0.0


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0, 1, exclude_max=True, **finite), min_size=3, max_size=60).filter(lambda v: len(v) % 3 == 0))
def test_inverse_cdf_stays_on_grid(u):
    p = ModelParams(lam=1.0, duration=4.0, dt=0.01)
    w = smear(coherent_state(0.5, p), build_smearing(p, derive_constants(p)))
    qp = inverse_cdf_sample(w, np.array(u).reshape(-1, 3))
    assert np.all(qp[:, 0] >= w.q.lo - w.q.step) and np.all(qp[:, 0] <= w.q.hi)
    assert np.all(qp[:, 1] >= w.p.lo - w.p.step) and np.all(qp[:, 1] <= w.p.hi)


@given(st.integers(0, 2**63), st.integers(0, 10**6))
def test_run_seeds_distinct_across_streams_and_indices(master, i):
    a = run_seed(master, i)
    assert a != run_seed(master, i + 1)
    assert a != run_seed(master, i, stream=1)
    assert a == run_seed(master, i)
