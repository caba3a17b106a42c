import math
import warnings

import numpy as np
import pytest
from scipy.stats import ks_2samp

from qcstoch.ensemble import (
    EnsembleConfig,
    classify_branches,
    compare_meanfield,
    divergence,
    run_ensemble,
    run_seed,
)
from qcstoch.errors import PreconditionError, RunFailure
from qcstoch.model import ModelParams, derive_constants, kT_for_Dtilde
from qcstoch.qstate import cat_state, coherent_state
from qcstoch.trajectories import CouplingSpec, InitialClassicalState, integrate_branch

from conftest import pi_params

S = math.sqrt(0.5)


def _cat(a1=0.3, a2=0.7, sep=6.0):
    return cat_state([math.sqrt(a1), math.sqrt(a2)], [-sep, sep], s=S)


def _quiet(cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return run_ensemble(cfg)


def test_single_run_reproduces_integrate_branch():
    p = pi_params()
    cfg = EnsembleConfig(p, _cat(), n_runs=1, seed=42, keep_paths=True)
    res = _quiet(cfg)
    path = integrate_branch(cfg.init, (res.q0[0], res.p0[0]), cfg.coupling, p, derive_constants(p),
                            seed=run_seed(42, 0))
    assert np.array_equal(path.Q, res.paths[0])
    assert res.final_Q[0] == path.Q[-1]


def test_determinism_and_thread_independence():
    p = pi_params()
    a = _quiet(EnsembleConfig(p, _cat(), n_runs=300, seed=8, chunk=64, threads=1))
    b = _quiet(EnsembleConfig(p, _cat(), n_runs=300, seed=8, chunk=64, threads=3))
    assert a.to_json() == b.to_json()
    assert np.array_equal(a.final_Q, b.final_Q)
    assert np.array_equal(a.mean_Q, b.mean_Q)


def test_chunking_does_not_change_runs():
    p = pi_params()
    a = _quiet(EnsembleConfig(p, _cat(), n_runs=100, seed=8, chunk=7))
    b = _quiet(EnsembleConfig(p, _cat(), n_runs=100, seed=8, chunk=100))
    assert np.array_equal(a.final_Q, b.final_Q)


def test_zero_coupling_final_Q_ignores_small_particle():
    p = pi_params(lam=0.0)
    a = _quiet(EnsembleConfig(p, _cat(), n_runs=2000, seed=1))
    b = _quiet(EnsembleConfig(p, coherent_state(2.0 + 1.0j, p), n_runs=2000, seed=2))
    assert ks_2samp(a.final_Q, b.final_Q).pvalue > 0.01


def test_symmetric_cat_splits_evenly():
    p = pi_params()
    res = _quiet(EnsembleConfig(p, _cat(0.5, 0.5), n_runs=2000, seed=3))
    c = res.classification
    assert abs(c.fractions[0] - c.fractions[1]) < 5 * math.sqrt(c.stderr[0] ** 2 + c.stderr[1] ** 2)
    assert c.fractions.sum() == pytest.approx(1.0)


def test_template_distance_zero_is_assigned():
    t = np.linspace(0, 1, 50)
    tmpl = [np.sin(t), np.cos(t)]
    c = classify_branches([np.cos(t)], tmpl, threshold=0.01)
    assert c.labels.tolist() == [1]
    assert c.distances[0, 1] == 0.0
    with pytest.raises(PreconditionError):
        classify_branches([np.cos(t)], [])


def test_unresolvable_templates_warn_and_leave_runs_unclassified():
    # packets close together: their branches differ by less than the noise spread
    p = pi_params()
    cat = cat_state([1, 1], [-0.3, 0.3], s=S)
    with pytest.warns(RuntimeWarning, match="within the classification threshold"):
        res = run_ensemble(EnsembleConfig(p, cat, n_runs=300, seed=5))
    assert res.classification.unclassified_fraction > 0.5


def test_run_failure_names_replay_seed():
    # strong measurement on a coarse grid localizes below the resolvable width mid-run
    p = ModelParams(M=100.0, lam=1.0, sigma=50.0, duration=1.0, dt=1e-3)
    p = p.replace(kT=kT_for_Dtilde(p, 0.01))
    cfg = EnsembleConfig(p, _cat(0.5, 0.5, 4.0), engine="sse", n_runs=4, seed=6, chunk=2, grid=(-18, 18, 256))
    with pytest.raises(RunFailure) as e:
        _quiet(cfg)
    assert e.value.seed == run_seed(6, e.value.run_index)


def test_divergence_grid_mismatch():
    p = pi_params()
    res = _quiet(EnsembleConfig(p, coherent_state(1.0, p), n_runs=20, seed=1))
    with pytest.raises(PreconditionError):
        divergence(res, np.zeros(5))
    D, err = divergence(res, res.mean_Q)
    assert D == 0.0 and err > 0


def test_coherent_state_meanfield_agrees():
    p = ModelParams(M=10.0, lam=0.4, sigma=50.0, kT=0.015995, duration=5.0, dt=0.01)
    cfg = EnsembleConfig(p, coherent_state(1.0, p), InitialClassicalState(0.0, 0.5), n_runs=1000, seed=3,
                         grid=(-12, 12, 256))
    (row,) = compare_meanfield(cfg, [0.4])
    assert row["D"] < 5 * row["mc_error"]


def test_cat_state_mean_differs_from_meanfield():
    # a quartic potential bends the two branches differently, so the ensemble
    # mean departs from the mean-field path
    p = ModelParams(M=1.0, lam=1.0, sigma=50.0, duration=3.0, dt=0.005)
    p = p.replace(kT=kT_for_Dtilde(p, 0.825))  # smallest Dtilde with a positive smeared density, plus 10%
    cat = cat_state([math.sqrt(0.3), math.sqrt(0.7)], [-4.0, 4.0], s=S)
    cfg = EnsembleConfig(p, cat, coupling=CouplingSpec(V=(0, 0, 0, 0, 0.05), g=(0, 1.0)), n_runs=1000, seed=4,
                         grid=(-16, 16, 512))
    (row,) = compare_meanfield(cfg, [1.0], hold="Dtilde")
    assert row["D"] > 10 * row["mc_error"]
