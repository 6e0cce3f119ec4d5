"""Scattering error budgets for stimulated-Raman gates on the D5/2 qubit.

Conventions
-----------
Each beam couples ``|s> -> |k>`` with ``g = <k|d.eps|s> E0 / (2 hbar)`` where
``E0 = sqrt(2 I / (c eps0))``.  The single-qubit Rabi rate is
``|sum_k g1(up,k) g2*(down,k) / Delta_k|``; the zz-gate rate is the difference
of the two states' two-beam light-shift amplitudes
``|sum_k (g1 g2*)(up,k)/Delta_k - (g1 g2*)(down,k)/Delta_k|``.  Error
probabilities are

    P_1q = pi G / (2 W),        P_2q = (2 / eta) pi G / (2 W),

with ``G`` the Raman rate averaged over the two qubit states with every beam
on, and ``W`` the Rabi rate above.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import constants as sc

from .atomic import SpeciesData, Sublevel, default_species
from .scattering import (
    D5_LABEL,
    LaserField,
    ResonanceError,
    ScatteringOptions,
    _absorption_amplitudes,
    _emitted_frequency,
    _inverse_detuning,
    _EMIT,
    _FLUX,
    intensity_from_power,
    kh_amplitude,
    rate_breakdown,
    sublevel_angular_frequency,
)

__all__ = [
    "GateKind",
    "GateConfig",
    "GateConfigError",
    "ErrorBudget",
    "ScanPoint",
    "ScanResult",
    "two_photon_rabi",
    "lamb_dicke",
    "one_qubit_error",
    "two_qubit_error",
    "error_budget",
    "rayleigh_decoherence_bound",
    "recoil_error_bound",
    "wavelength_scan",
    "default_single_qubit_config",
    "default_two_qubit_config",
    "ERROR_THRESHOLD",
]

ERROR_THRESHOLD = 1e-4


class GateKind(str, enum.Enum):
    SINGLE_QUBIT_SIGMA_X = "single_qubit_sigma_x"
    TWO_QUBIT_ZZ = "two_qubit_zz"


class GateConfigError(ValueError):
    """Gate geometry or beam set cannot implement the requested gate."""


@dataclass(frozen=True)
class GateConfig:
    """Beams, gate type and trap parameters.

    ``qubit`` holds the m values of (|up>, |down>) in D5/2.
    """

    beams: tuple
    gate_kind: GateKind = GateKind.SINGLE_QUBIT_SIGMA_X
    secular_frequency: float = 2e6
    ion_mass: float | None = None
    qubit: tuple = ("+5/2", "+3/2")
    options: ScatteringOptions = field(default_factory=ScatteringOptions)

    def __post_init__(self):
        beams = tuple(self.beams)
        object.__setattr__(self, "beams", beams)
        object.__setattr__(self, "gate_kind", GateKind(self.gate_kind))
        if len(beams) != 2:
            raise GateConfigError("a Raman gate needs exactly two beams")
        if self.gate_kind is GateKind.TWO_QUBIT_ZZ:
            i1, i2 = beams[0].intensity, beams[1].intensity
            if abs(i1 - i2) > 1e-9 * max(i1, i2):
                raise GateConfigError("the zz gate requires equal beam intensities")
        if len(self.qubit) != 2 or self.qubit[0] == self.qubit[1]:
            raise GateConfigError("qubit must name two distinct sublevels")

    def scaled(self, factor: float) -> "GateConfig":
        return replace(self, beams=tuple(b.with_intensity(b.intensity * factor) for b in self.beams))

    def with_wavelength(self, wavelength: float) -> "GateConfig":
        return replace(self, beams=tuple(b.with_wavelength(wavelength) for b in self.beams))

    def states(self, species: SpeciesData) -> tuple[Sublevel, Sublevel]:
        return species.sublevel(D5_LABEL, self.qubit[0]), species.sublevel(D5_LABEL, self.qubit[1])

    def mass(self, species: SpeciesData) -> float:
        return species.ion_mass if self.ion_mass is None else self.ion_mass


@dataclass(frozen=True)
class ErrorBudget:
    """Per-gate error probabilities; ``p_raman`` is the sum of the four channel terms."""

    gate_kind: str
    p_raman: float
    p_leak_S: float
    p_leak_D3: float
    p_leak_D5_outside: float
    p_bitflip: float
    rayleigh_decoherence_bound: float
    recoil_bound: float
    rabi_frequency: float
    gate_time: float
    gamma_raman: float
    lamb_dicke: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _species(species):
    return default_species() if species is None else species


def _e0(intensity: float) -> float:
    return math.sqrt(2.0 * intensity / (sc.c * sc.epsilon_0))


def _pair_sum(s1: Sublevel, b1: LaserField, s2: Sublevel, b2: LaserField, species, opts) -> complex:
    """``sum_k g1(s1,k) g2*(s2,k) / Delta_k`` with Delta_k taken from beam 1."""
    first = _absorption_amplitudes(s1, b1, species, opts)
    second = {k: c for k, _q, c in _absorption_amplitudes(s2, b2, species, opts)}
    total = 0j
    for k, _q, c1 in first:
        if k not in second:
            continue
        # c = A d inv / hbar, so g1 g2* inv1 = c1 (c2 / inv2)* E1 E2 / 4
        c2 = second[k]
        inv2 = _inv_for(s2, k, b2, opts)
        total += c1 * np.conj(c2 / inv2)
    return total * _e0(b1.intensity) * _e0(b2.intensity) / 4.0


def _inv_for(state: Sublevel, k: Sublevel, beam: LaserField, opts) -> float:
    omega_ki = sublevel_angular_frequency(k, opts) - sublevel_angular_frequency(state, opts)
    return _inverse_detuning(beam.angular_frequency, omega_ki, opts, "gate")


def two_photon_rabi(config: GateConfig, species: SpeciesData | None = None) -> float:
    """Two-photon Rabi rate in rad/s (see module conventions).

    Returns 0 when no intermediate connects the qubit states.
    """
    species = _species(species)
    opts = config.options
    up, down = config.states(species)
    b1, b2 = config.beams
    if config.gate_kind is GateKind.SINGLE_QUBIT_SIGMA_X:
        # either beam may supply the up leg; the resonant ordering is the one that drives the flip
        return float(max(abs(_pair_sum(up, b1, down, b2, species, opts)), abs(_pair_sum(up, b2, down, b1, species, opts))))
    c_up = _pair_sum(up, b1, up, b2, species, opts)
    c_down = _pair_sum(down, b1, down, b2, species, opts)
    return float(abs(c_up - c_down))


def lamb_dicke(config: GateConfig, species: SpeciesData | None = None) -> float:
    """``|k1 - k2| sqrt(hbar / (2 m w))`` with ``w = 2 pi secular_frequency``."""
    species = _species(species)
    if not config.secular_frequency > 0:
        raise GateConfigError("secular frequency must be positive")
    dk = config.beams[0].wavevector - config.beams[1].wavevector
    omega = 2 * math.pi * config.secular_frequency
    return float(np.linalg.norm(dk) * math.sqrt(sc.hbar / (2 * config.mass(species) * omega)))


def _state_rates(config: GateConfig, species) -> dict:
    """Absolute Raman rates (Hz) per destination class, averaged over the qubit states."""
    up, down = config.states(species)
    acc = {"S": 0.0, "D3": 0.0, "D5_outside": 0.0, "bitflip": 0.0, "elastic": 0.0}
    for state, other in ((up, down), (down, up)):
        for beam in config.beams:
            br = rate_breakdown(state, beam, species, config.options)
            i = beam.intensity
            acc["S"] += br.by_manifold.get("S1/2", 0.0) * i
            acc["D3"] += br.by_manifold.get("D3/2", 0.0) * i
            acc["elastic"] += br.gamma_elastic * i
            for m, r in br.gamma_back_D5.items():
                key = "bitflip" if m == other.m else "D5_outside"
                acc[key] += r * i
    return {k: v / 2.0 for k, v in acc.items()}


def _gate_time(config: GateConfig, rabi: float, eta: float | None) -> float:
    base = math.pi / (2.0 * rabi)
    if config.gate_kind is GateKind.TWO_QUBIT_ZZ:
        # P_2q = 2 ions * G * t  with  P_2q = (2/eta) * G * base
        return base / eta
    return base


def _elastic_difference_rate(config: GateConfig, species) -> float:
    """Decoherence rate from distinguishable elastic photons, in Hz."""
    up, down = config.states(species)
    total = 0.0
    for beam in config.beams:
        for qp in (-1, 0, 1):
            a_up = kh_amplitude(up, up, beam, qp, species, config.options)
            a_down = kh_amplitude(down, down, beam, qp, species, config.options)
            if a_up == 0 and a_down == 0:
                continue
            omega_s = _emitted_frequency(up, up, beam, config.options)
            total += abs(a_up - a_down) ** 2 * omega_s**3 * _EMIT * _FLUX * beam.intensity
    return total


def rayleigh_decoherence_bound(config: GateConfig, species: SpeciesData | None = None) -> float:
    """Upper bound on dephasing from elastic scattering over one gate.

    Uses the rate of photons whose amplitudes differ between the qubit states,
    ``sum |a_up - a_down|^2`` over beams and emitted polarizations, times the
    gate time and the number of ions.
    """
    species = _species(species)
    rabi = two_photon_rabi(config, species)
    if rabi == 0:
        raise GateConfigError("two-photon Rabi frequency is zero; no gate to bound")
    eta = lamb_dicke(config, species) if config.gate_kind is GateKind.TWO_QUBIT_ZZ else None
    n_ions = 2 if config.gate_kind is GateKind.TWO_QUBIT_ZZ else 1
    return min(1.0, n_ions * _elastic_difference_rate(config, species) * _gate_time(config, rabi, eta))


def recoil_error_bound(config: GateConfig, species: SpeciesData | None = None) -> float:
    """Upper bound on motional error from elastic-scatter recoil over one gate.

    Each elastic event adds at most ``2 eta_1^2`` phonons (absorption plus
    emission kick) with ``eta_1 = k sqrt(hbar / 2 m w)``; the bound is that
    times the expected number of elastic events on all ions.
    """
    species = _species(species)
    rabi = two_photon_rabi(config, species)
    if rabi == 0:
        raise GateConfigError("two-photon Rabi frequency is zero; no gate to bound")
    if not config.secular_frequency > 0:
        raise GateConfigError("secular frequency must be positive")
    two_q = config.gate_kind is GateKind.TWO_QUBIT_ZZ
    eta = lamb_dicke(config, species) if two_q else None
    n_ions = 2 if two_q else 1
    gamma_el = _state_rates(config, species)["elastic"]
    k = 2 * math.pi / config.beams[0].wavelength
    eta1_sq = k**2 * sc.hbar / (2 * config.mass(species) * 2 * math.pi * config.secular_frequency)
    return min(1.0, n_ions * gamma_el * _gate_time(config, rabi, eta) * 2 * eta1_sq)


def error_budget(config: GateConfig, species: SpeciesData | None = None) -> ErrorBudget:
    """Full budget for either gate kind."""
    species = _species(species)
    rabi = two_photon_rabi(config, species)
    if rabi == 0:
        raise GateConfigError("two-photon Rabi frequency is zero (no connecting pathway or zero intensity)")
    two_q = config.gate_kind is GateKind.TWO_QUBIT_ZZ
    eta = None
    factor = math.pi / (2 * rabi)
    if two_q:
        eta = lamb_dicke(config, species)
        if eta == 0:
            raise GateConfigError("Lamb-Dicke parameter is zero (co-propagating beams)")
        factor *= 2.0 / eta
    rates = _state_rates(config, species)
    parts = {key: min(1.0, rates[key] * factor) for key in ("S", "D3", "D5_outside", "bitflip")}
    gamma_raman = rates["S"] + rates["D3"] + rates["D5_outside"] + rates["bitflip"]
    return ErrorBudget(
        gate_kind=config.gate_kind.value,
        p_raman=sum(parts.values()),
        p_leak_S=parts["S"],
        p_leak_D3=parts["D3"],
        p_leak_D5_outside=parts["D5_outside"],
        p_bitflip=parts["bitflip"],
        rayleigh_decoherence_bound=rayleigh_decoherence_bound(config, species),
        recoil_bound=recoil_error_bound(config, species),
        rabi_frequency=rabi,
        gate_time=_gate_time(config, rabi, eta),
        gamma_raman=gamma_raman,
        lamb_dicke=eta,
    )


def one_qubit_error(config: GateConfig, species: SpeciesData | None = None) -> ErrorBudget:
    if config.gate_kind is not GateKind.SINGLE_QUBIT_SIGMA_X:
        raise GateConfigError("one_qubit_error needs a single_qubit_sigma_x config")
    return error_budget(config, species)


def two_qubit_error(config: GateConfig, species: SpeciesData | None = None) -> ErrorBudget:
    if config.gate_kind is not GateKind.TWO_QUBIT_ZZ:
        raise GateConfigError("two_qubit_error needs a two_qubit_zz config")
    return error_budget(config, species)


@dataclass(frozen=True)
class ScanPoint:
    wavelength: float
    error_floor: float  # nan where resonant
    resonant: bool


@dataclass(frozen=True)
class ScanResult:
    points: tuple
    threshold: float | None  # m; longest-wavelength crossing of ERROR_THRESHOLD
    level: float = ERROR_THRESHOLD

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["wavelength_nm", "error_floor", "threshold_flag"])
        for p in self.points:
            if p.resonant:
                flag, value = "resonant", "nan"
            else:
                flag = "below" if p.error_floor < self.level else "above"
                value = f"{p.error_floor:.9e}"
            w.writerow([f"{p.wavelength * 1e9:.6f}", value, flag])
        return buf.getvalue()

    def monotonic_decreasing(self, above: float = 0.0) -> bool:
        vals = [p.error_floor for p in self.points if not p.resonant and p.wavelength > above]
        return all(b < a for a, b in zip(vals, vals[1:]))


def _crossing(points: Sequence[ScanPoint], level: float) -> float | None:
    """Longest wavelength at which the floor crosses ``level``, log-interpolated."""
    valid = [p for p in points if not p.resonant and p.error_floor > 0]
    found = None
    for a, b in zip(valid, valid[1:]):
        fa, fb = math.log(a.error_floor), math.log(b.error_floor)
        lv = math.log(level)
        if (fa - lv) * (fb - lv) <= 0 and fa != fb:
            found = a.wavelength + (lv - fa) / (fb - fa) * (b.wavelength - a.wavelength)
    return found


def wavelength_scan(
    wavelength_range: tuple[float, float],
    steps: int,
    config: GateConfig | None = None,
    species: SpeciesData | None = None,
    level: float = ERROR_THRESHOLD,
) -> ScanResult:
    """Raman error floor of ``config`` on an even wavelength grid.

    Points within the resonance guard of ``config.options`` are marked resonant.
    The reported threshold is the longest wavelength where the floor crosses
    ``level``, so "error below level for all longer wavelengths in the window"
    holds beyond it.
    """
    species = _species(species)
    config = default_two_qubit_config() if config is None else config
    lo, hi = wavelength_range
    if not (0 < lo < hi):
        raise ValueError("wavelength range must satisfy 0 < min < max")
    if steps < 2:
        raise ValueError("need at least two scan points")
    points = []
    for lam in np.linspace(lo, hi, steps):
        try:
            p = error_budget(config.with_wavelength(float(lam)), species).p_raman
            points.append(ScanPoint(float(lam), p, False))
        except ResonanceError:
            points.append(ScanPoint(float(lam), float("nan"), True))
    return ScanResult(tuple(points), _crossing(points, level), level)


# beam powers and waists of the 976 nm setup
DEFAULT_POWERS_W = (0.18, 0.22)
DEFAULT_WAISTS_M = (30e-6, 40e-6)


def default_single_qubit_config(wavelength: float = 976e-9, intensity: float | None = None) -> GateConfig:
    """sigma- and pi beams of equal intensity driving |+5/2> <-> |+3/2>."""
    if intensity is None:
        intensity = intensity_from_power(DEFAULT_POWERS_W[1], DEFAULT_WAISTS_M[1])
    return GateConfig(
        beams=(
            LaserField.named("sigma-", wavelength, intensity, direction=(1.0, 0.0, 0.0)),
            LaserField.named("pi", wavelength, intensity, direction=(0.0, 1.0, 0.0)),
        ),
        gate_kind=GateKind.SINGLE_QUBIT_SIGMA_X,
    )


def default_two_qubit_config(
    wavelength: float = 976e-9, intensity: float | None = None, secular_frequency: float = 2e6
) -> GateConfig:
    """Counter-propagating sigma- beams of equal intensity (light-shift zz gate)."""
    if intensity is None:
        intensity = intensity_from_power(DEFAULT_POWERS_W[1], DEFAULT_WAISTS_M[1])
    return GateConfig(
        beams=(
            LaserField.named("sigma-", wavelength, intensity, direction=(1.0, 0.0, 0.0)),
            LaserField.named("sigma-", wavelength, intensity, direction=(-1.0, 0.0, 0.0)),
        ),
        gate_kind=GateKind.TWO_QUBIT_ZZ,
        secular_frequency=secular_frequency,
    )
