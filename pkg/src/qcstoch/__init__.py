"""Stochastic trajectories of a decohered classical particle coupled to a quantum oscillator."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .model import ModelParams, DerivedConstants, derive_constants, validate  # noqa: F401
from .qstate import (  # noqa: F401
    GaussianPacket,
    GridWavefunction,
    Mixture,
    SuperpositionState,
    cat_state,
    coherent_state,
    to_grid,
    wigner_transform,
)
from .sampling import build_smearing, sample_phase_space, smear  # noqa: F401
from .trajectories import ClassicalPath, CouplingSpec, InitialClassicalState, integrate_branch  # noqa: F401
from .ensemble import EnsembleConfig, run_ensemble  # noqa: F401
