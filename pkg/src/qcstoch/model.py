"""Physical parameters, derived constants and regime checks.

All quantities are in dimensionless simulation units with a configurable
action quantum ``hbar`` (default 1).  Dissipation enters only through the
decoherence coefficient ``D`` (high temperature, negligible friction).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

from .errors import InvalidParameterError

#: Delta/hbar at or above which the record smearing is called "classical".
CLASSICAL_REGIME_THRESHOLD = 10.0


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the large particle / small oscillator / bath model.

    ``lam`` is the coupling strength (``lambda`` in configuration files).
    """

    M: float = 1.0
    m: float = 1.0
    omega: float = 1.0
    lam: float = 1.0
    gamma: float = 1.0
    kT: float = 1.0
    hbar: float = 1.0
    sigma: float = 1.0
    eta: float = 0.5
    duration: float = 10.0
    dt: float = 1e-3

    def __post_init__(self):
        for name in ("M", "m", "omega", "hbar", "sigma", "kT", "gamma", "duration", "dt"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be a finite positive number, got {value!r}")
        if not math.isfinite(self.lam):
            raise InvalidParameterError(f"lam must be finite, got {self.lam!r}")
        if not 0.0 < self.eta < 1.0:
            raise InvalidParameterError(f"eta must lie in (0, 1), got {self.eta!r}")
        if not self.dt < self.duration:
            raise InvalidParameterError(f"dt={self.dt} must be smaller than duration={self.duration}")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True)
class DerivedConstants:
    D: float
    Dtilde: float
    sigma1_sq: float
    Delta: float
    force_noise_var: float
    record_noise_var: float
    #: 2 hbar^2 Dtilde: spectral density of force noise plus coupled record noise
    total_noise_var: float

    @property
    def sigma1(self) -> float:
        return math.sqrt(self.sigma1_sq)

    def to_dict(self) -> dict:
        return {
            "D": self.D,
            "Dtilde": self.Dtilde,
            "sigma1_sq": self.sigma1_sq,
            "Delta": self.Delta,
            "force_noise_var": self.force_noise_var,
            "record_noise_var": self.record_noise_var,
            "total_noise_var": self.total_noise_var,
        }


@dataclass(frozen=True)
class ValidationReport:
    decoherent: bool
    positivity_margin: float
    classical_regime: bool
    messages: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "decoherent": self.decoherent,
            "positivity_margin": self.positivity_margin,
            "classical_regime": self.classical_regime,
            "messages": list(self.messages),
        }


def derive_constants(params: ModelParams) -> DerivedConstants:
    hbar = params.hbar
    D = 2.0 * params.M * params.gamma * params.kT / hbar**2
    Dtilde = D + 1.0 / (4.0 * params.sigma**2)
    lam2 = params.lam**2
    if lam2 == 0.0:
        sigma1_sq = math.inf
        Delta = math.inf
        record_noise_var = math.inf
    else:
        sigma1_sq = 4.0 * hbar**2 * Dtilde * params.eta / lam2
        Delta = hbar**2 * Dtilde * params.m * params.omega**2 / lam2
        record_noise_var = 2.0 * hbar**2 * Dtilde * params.eta / lam2
    return DerivedConstants(
        D=D,
        Dtilde=Dtilde,
        sigma1_sq=sigma1_sq,
        Delta=Delta,
        force_noise_var=2.0 * hbar**2 * Dtilde * (1.0 - params.eta),
        record_noise_var=record_noise_var,
        total_noise_var=2.0 * hbar**2 * Dtilde,
    )


def validate(params: ModelParams, threshold: float = CLASSICAL_REGIME_THRESHOLD) -> ValidationReport:
    c = derive_constants(params)
    decoherent = c.D * params.sigma**2 > 1.0
    margin = c.Delta / params.hbar
    classical = margin >= threshold
    messages = []
    if not decoherent:
        messages.append(
            f"histories not decoherent: D*sigma^2 = {c.D * params.sigma**2:.6g} <= 1"
        )
    if not classical:
        messages.append(
            f"smearing scale Delta/hbar = {margin:.6g} below {threshold:g}; "
            "record weight may fail to be positive"
        )
    return ValidationReport(decoherent, margin, classical, tuple(messages))


def maximal_refinement_sigma(D: float) -> float:
    """Finest projector width compatible with decoherence, sigma = D^(-1/2)."""
    if D <= 0:
        raise InvalidParameterError("D must be positive")
    return D**-0.5


def kT_for_Dtilde(params: ModelParams, Dtilde: float) -> float:
    """Bath temperature giving the requested Dtilde at fixed M, gamma, sigma."""
    D = Dtilde - 1.0 / (4.0 * params.sigma**2)
    if D <= 0:
        raise InvalidParameterError(
            f"Dtilde={Dtilde} is not reachable: it must exceed 1/(4 sigma^2)={1 / (4 * params.sigma**2)}"
        )
    return D * params.hbar**2 / (2.0 * params.M * params.gamma)
