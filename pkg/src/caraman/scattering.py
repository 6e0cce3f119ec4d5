"""Far-detuned scattering rates out of fine-structure sublevels.

Amplitudes follow second-order (Kramers-Heisenberg) perturbation theory with
the intermediate manifolds taken from the species data.  Each dipole matrix
element factorizes through the Wigner-Eckart theorem,

    <k| d_q |i> = <J_i m_i; 1 q | J_k m_k> * sqrt(|<i||d||k>|^2 / (2 J_k + 1)),

and the rate into a final sublevel ``f`` per unit intensity is

    Gamma/I = sum_q' |a_f(q')|^2 * w_s^3 / (3 pi eps0 hbar c^3) / (2 c eps0),

where ``a_f(q') = sum_k <k|d_q'|f> <k|d.eps|i> / (hbar Delta_k)`` and ``w_s`` is
the angular frequency of the emitted photon.  ``1/Delta_k`` includes the
counter-rotating term ``-1/(w_L + w_ki)`` unless disabled.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import constants as sc

from .angular import HalfInt, clebsch_gordan
from .atomic import (
    BOHR_HZ_PER_GAUSS,
    Manifold,
    SpeciesData,
    Sublevel,
    default_species,
    lande_g,
    reduced_dipole_sq,
)

__all__ = [
    "ResonanceError",
    "LaserField",
    "ScatteringOptions",
    "ScatteringChannel",
    "RateBreakdown",
    "POLARIZATIONS",
    "dipole_element",
    "kh_amplitude",
    "channel_rate",
    "rate_per_intensity",
    "scattering_channels",
    "rate_breakdown",
    "differential_stark_shift",
    "stark_shift",
    "intensity_from_power",
    "d5_rate_table",
    "double_scatter_bias",
    "single_event_bias",
    "rate_table_csv",
    "D5_LABEL",
    "ABSORBER_LABELS",
]

D5_LABEL = "D5/2"
ABSORBER_LABELS = ("S1/2", "D3/2")

# emitted-photon prefactor: w^3 / (3 pi eps0 hbar c^3), times 1/(2 c eps0) for E0^2/4 per intensity
_EMIT = 1.0 / (3 * math.pi * sc.epsilon_0 * sc.hbar * sc.c**3)
_FLUX = 1.0 / (2 * sc.c * sc.epsilon_0)

_SQRT_HALF = math.sqrt(0.5)
POLARIZATIONS = {
    "sigma-": (1.0, 0.0, 0.0),
    "pi": (0.0, 1.0, 0.0),
    "sigma+": (0.0, 0.0, 1.0),
    # linear, perpendicular to the quantization axis: x = (e_-1 - e_+1)/sqrt(2)
    "x": (_SQRT_HALF, 0.0, -_SQRT_HALF),
}


class ResonanceError(ValueError):
    """The laser is too close to a dipole resonance for the far-detuned model."""


@dataclass(frozen=True)
class LaserField:
    """Monochromatic plane-wave probe.

    Parameters
    ----------
    wavelength : float
        Vacuum wavelength in m.
    polarization : tuple of complex
        Spherical amplitudes ``(A_-1, A_0, A_+1)``; ``A_q`` drives ``Delta m = q``.
        Must be normalized to 1e-12.
    intensity : float
        W/m^2.  Rate functions return per-intensity values regardless.
    direction : tuple of float
        Propagation unit vector; only used for momentum transfer.
    """

    wavelength: float
    polarization: tuple = (1.0, 0.0, 0.0)
    intensity: float = 1.0
    direction: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.wavelength > 0 or not math.isfinite(self.wavelength):
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        if not self.intensity >= 0:
            raise ValueError(f"intensity must be non-negative, got {self.intensity}")
        pol = tuple(complex(a) for a in self.polarization)
        if len(pol) != 3:
            raise ValueError("polarization needs three spherical amplitudes")
        norm = sum(abs(a) ** 2 for a in pol)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"polarization not normalized (sum |A_q|^2 = {norm})")
        object.__setattr__(self, "polarization", pol)
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if d.shape != (3,) or n == 0:
            raise ValueError("direction must be a nonzero 3-vector")
        object.__setattr__(self, "direction", tuple(float(x) for x in d / n))

    @classmethod
    def named(cls, name: str, wavelength: float, intensity: float = 1.0, direction=(1.0, 0.0, 0.0)):
        """Build from a polarization name: sigma-, pi, sigma+ or x."""
        key = name.strip().lower().replace("sigma_", "sigma").replace("minus", "-").replace("plus", "+")
        if key not in POLARIZATIONS:
            raise ValueError(f"unknown polarization {name!r}; expected one of {sorted(POLARIZATIONS)}")
        return cls(wavelength, POLARIZATIONS[key], intensity, direction)

    @classmethod
    def normalized(cls, wavelength: float, amplitudes, intensity: float = 1.0, direction=(1.0, 0.0, 0.0)):
        amps = np.asarray(amplitudes, dtype=complex)
        norm = np.sqrt(np.sum(np.abs(amps) ** 2))
        if norm == 0:
            raise ValueError("zero polarization vector")
        return cls(wavelength, tuple(amps / norm), intensity, direction)

    @property
    def angular_frequency(self) -> float:
        return 2 * math.pi * sc.c / self.wavelength

    @property
    def wavevector(self) -> np.ndarray:
        return 2 * math.pi / self.wavelength * np.asarray(self.direction)

    def amplitude(self, q: int) -> complex:
        return self.polarization[q + 1]

    def with_intensity(self, intensity: float) -> "LaserField":
        return replace(self, intensity=intensity)

    def with_wavelength(self, wavelength: float) -> "LaserField":
        return replace(self, wavelength=wavelength)

    def describe(self) -> str:
        for name, amps in POLARIZATIONS.items():
            if all(abs(a - b) < 1e-12 for a, b in zip(self.polarization, amps)):
                return name
        return "(" + ", ".join(f"{a:.4g}" for a in self.polarization) + ")"


@dataclass(frozen=True)
class ScatteringOptions:
    """Model switches.

    ``min_detuning_hz`` is the closest allowed approach (|Delta|/2pi) to any
    intermediate resonance before :class:`ResonanceError` is raised.
    """

    b_field_gauss: float = 0.0
    counter_rotating: bool = True
    min_detuning_hz: float = 1e12

    def __post_init__(self):
        if self.b_field_gauss < 0:
            raise ValueError("magnetic field must be non-negative")
        if not self.min_detuning_hz >= 0:
            raise ValueError("min_detuning_hz must be non-negative")


DEFAULT_OPTIONS = ScatteringOptions()


@dataclass(frozen=True)
class ScatteringChannel:
    """One (final sublevel, emitted polarization) outcome of a single scatter."""

    initial: Sublevel
    intermediates: tuple
    final: Sublevel
    absorbed_q: tuple
    emitted_q: int
    rate_per_intensity: float

    @property
    def elastic(self) -> bool:
        return self.final == self.initial


@dataclass(frozen=True)
class RateBreakdown:
    """Per-intensity rates (Hz per W/m^2) out of one sublevel.

    ``gamma_back_D5`` maps each *other* D5/2 sublevel (by its m) to its Raman
    rate; the elastic return to the initial sublevel is ``gamma_elastic``.
    """

    initial: Sublevel
    gamma_SD: float
    gamma_back_D5: Mapping[HalfInt, float]
    gamma_elastic: float
    gamma_total: float
    by_manifold: Mapping[str, float] = field(default_factory=dict)

    @property
    def gamma_Raman(self) -> float:
        return self.gamma_total - self.gamma_elastic

    def scaled(self, intensity: float) -> dict:
        """Absolute rates in Hz at ``intensity``."""
        return {
            "gamma_SD": self.gamma_SD * intensity,
            "gamma_back_D5": sum(self.gamma_back_D5.values()) * intensity,
            "gamma_elastic": self.gamma_elastic * intensity,
            "gamma_Raman": self.gamma_Raman * intensity,
            "gamma_total": self.gamma_total * intensity,
        }


def _species(species: SpeciesData | None) -> SpeciesData:
    return default_species() if species is None else species


def _options(options: ScatteringOptions | None) -> ScatteringOptions:
    return DEFAULT_OPTIONS if options is None else options


def sublevel_angular_frequency(level: Sublevel, options: ScatteringOptions | None = None) -> float:
    opts = _options(options)
    zeeman = lande_g(level.manifold) * BOHR_HZ_PER_GAUSS * opts.b_field_gauss * float(level.m)
    return 2 * math.pi * (level.manifold.energy + zeeman)


@lru_cache(maxsize=256)
def _reduced(species: SpeciesData, upper: str, lower: str) -> float:
    return reduced_dipole_sq(upper, lower, species)


def dipole_element(lower: Sublevel, q: int, upper: Sublevel, species: SpeciesData | None = None) -> float:
    """``<upper| d_q |lower>`` in C m (real, Condon-Shortley phases)."""
    species = _species(species)
    if upper.m.twice != lower.m.twice + 2 * q:
        return 0.0
    up = species.upper(upper.manifold.label)
    if lower.manifold.label not in up.branching:
        return 0.0
    cg = clebsch_gordan(lower.manifold.J, lower.m, 1, q, upper.manifold.J, upper.m)
    if cg == 0.0:
        return 0.0
    red = _reduced(species, upper.manifold.label, lower.manifold.label)
    return cg * math.sqrt(red / upper.manifold.multiplicity)


def _inverse_detuning(omega_l: float, omega_ki: float, opts: ScatteringOptions, what: str) -> float:
    delta = omega_l - omega_ki
    if abs(delta) <= 2 * math.pi * opts.min_detuning_hz or delta == 0:
        raise ResonanceError(
            f"laser is {delta / (2 * math.pi * 1e9):.3g} GHz from the {what} resonance; "
            "the far-detuned model does not apply this close"
        )
    inv = 1.0 / delta
    if opts.counter_rotating:
        inv -= 1.0 / (omega_l + omega_ki)
    return inv


def _absorption_amplitudes(initial: Sublevel, laser: LaserField, species: SpeciesData, opts: ScatteringOptions):
    """``c_k = <k|d.eps|i> / (hbar Delta_k)`` for every reachable intermediate k."""
    if laser.angular_frequency <= 0:
        raise ResonanceError("laser frequency must be positive")
    omega_i = sublevel_angular_frequency(initial, opts)
    out = []
    for up in species.intermediates_for(initial.manifold.label):
        mf_up = up.manifold
        if mf_up.energy <= initial.manifold.energy:
            continue
        # guard on the manifold resonance even when no sublevel is reachable
        _inverse_detuning(
            laser.angular_frequency,
            mf_up.angular_frequency - initial.manifold.angular_frequency,
            opts,
            f"{initial.manifold.label}-{mf_up.label}",
        )
        for q in (-1, 0, 1):
            a_q = laser.amplitude(q)
            if a_q == 0:
                continue
            tm_k = initial.m.twice + 2 * q
            if abs(tm_k) > mf_up.J.twice:
                continue
            k = Sublevel(mf_up, HalfInt(tm_k))
            d = dipole_element(initial, q, k, species)
            if d == 0.0:
                continue
            omega_ki = sublevel_angular_frequency(k, opts) - omega_i
            inv = _inverse_detuning(laser.angular_frequency, omega_ki, opts, f"{initial.label}-{k.label}")
            out.append((k, q, a_q * d * inv / sc.hbar))
    return out


def kh_amplitude(
    initial: Sublevel,
    final: Sublevel,
    laser: LaserField,
    emitted_q: int,
    species: SpeciesData | None = None,
    options: ScatteringOptions | None = None,
) -> complex:
    """Two-photon amplitude ``sum_k <k|d_q'|f><k|d.eps|i> / (hbar Delta_k)``.

    Units C^2 m^2 / J.  Returns exactly 0 when no pathway connects the states.
    """
    species = _species(species)
    opts = _options(options)
    if emitted_q not in (-1, 0, 1):
        raise ValueError(f"emitted_q must be -1, 0 or +1, got {emitted_q}")
    amp = 0j
    for k, _q, c_k in _absorption_amplitudes(initial, laser, species, opts):
        if k.m.twice != final.m.twice + 2 * emitted_q:
            continue
        d = dipole_element(final, emitted_q, k, species)
        if d:
            amp += c_k * d
    return amp


def _emitted_frequency(initial: Sublevel, final: Sublevel, laser: LaserField, opts: ScatteringOptions) -> float:
    return laser.angular_frequency + sublevel_angular_frequency(initial, opts) - sublevel_angular_frequency(final, opts)


def _final_sublevels(initial: Sublevel, species: SpeciesData) -> list[Sublevel]:
    labels: list[str] = []
    for up in species.intermediates_for(initial.manifold.label):
        for lower in up.branching:
            if lower not in labels:
                labels.append(lower)
    labels.sort(key=lambda lab: species.manifold(lab).energy)
    return [s for lab in labels for s in species.sublevels(lab)]


def _channels(initial: Sublevel, laser: LaserField, species: SpeciesData, opts: ScatteringOptions):
    """Yield (final, q', rate, intermediates, absorbed qs) for every nonzero channel."""
    amps = _absorption_amplitudes(initial, laser, species, opts)
    if not amps:
        return
    for final in _final_sublevels(initial, species):
        omega_s = _emitted_frequency(initial, final, laser, opts)
        if omega_s <= 0:
            continue
        for qp in (-1, 0, 1):
            amp = 0j
            used_k, used_q = [], []
            for k, q, c_k in amps:
                if k.m.twice != final.m.twice + 2 * qp:
                    continue
                d = dipole_element(final, qp, k, species)
                if d:
                    amp += c_k * d
                    used_k.append(k.manifold.label)
                    used_q.append(q)
            if not used_k:
                continue
            rate = abs(amp) ** 2 * omega_s**3 * _EMIT * _FLUX
            yield final, qp, rate, tuple(dict.fromkeys(used_k)), tuple(sorted(set(used_q)))


def channel_rate(
    initial: Sublevel,
    final: Sublevel,
    laser: LaserField,
    species: SpeciesData | None = None,
    options: ScatteringOptions | None = None,
) -> float:
    """Rate per intensity into one final sublevel, summed over q'."""
    species = _species(species)
    opts = _options(options)
    omega_s = _emitted_frequency(initial, final, laser, opts)
    if omega_s <= 0:
        return 0.0
    total = 0.0
    for qp in (-1, 0, 1):
        amp = kh_amplitude(initial, final, laser, qp, species, opts)
        total += abs(amp) ** 2
    return total * omega_s**3 * _EMIT * _FLUX


def scattering_channels(
    initial: Sublevel,
    laser: LaserField,
    species: SpeciesData | None = None,
    options: ScatteringOptions | None = None,
) -> list[ScatteringChannel]:
    """All nonzero channels, ordered by final energy, then m (descending), then q'."""
    species = _species(species)
    opts = _options(options)
    return [
        ScatteringChannel(initial, inter, final, qs, qp, rate)
        for final, qp, rate, inter, qs in _channels(initial, laser, species, opts)
    ]


def _destination_match(destination) -> "callable":
    if destination is None:
        destination = ABSORBER_LABELS
    if isinstance(destination, (str, Sublevel)):
        destination = (destination,)
    labels = {d for d in destination if isinstance(d, str)}
    levels = {d for d in destination if isinstance(d, Sublevel)}
    if len(labels) + len(levels) != len(tuple(destination)):
        raise TypeError("destination entries must be manifold labels or Sublevel instances")
    return lambda f: f.manifold.label in labels or f in levels


def rate_per_intensity(
    initial: Sublevel,
    laser: LaserField,
    destination: str | Sublevel | Iterable = ABSORBER_LABELS,
    species: SpeciesData | None = None,
    options: ScatteringOptions | None = None,
) -> float:
    """Scattering rate per unit intensity, Hz/(W/m^2), into ``destination``.

    ``destination`` is a manifold label, a sublevel, or an iterable of either.
    The default is S1/2 and D3/2 together, the levels that leave D5/2.

    Raises
    ------
    ResonanceError
        If the laser is within ``options.min_detuning_hz`` of an intermediate
        resonance.
    """
    species = _species(species)
    opts = _options(options)
    match = _destination_match(destination)
    return sum(rate for final, _qp, rate, _i, _q in _channels(initial, laser, species, opts) if match(final))


def rate_breakdown(
    initial: Sublevel,
    laser: LaserField,
    species: SpeciesData | None = None,
    options: ScatteringOptions | None = None,
) -> RateBreakdown:
    species = _species(species)
    opts = _options(options)
    per_final: dict[Sublevel, float] = {}
    for final, _qp, rate, _i, _q in _channels(initial, laser, species, opts):
        per_final[final] = per_final.get(final, 0.0) + rate
    by_manifold: dict[str, float] = {}
    for f, r in per_final.items():
        by_manifold[f.manifold.label] = by_manifold.get(f.manifold.label, 0.0) + r
    elastic = per_final.get(initial, 0.0)
    back = {
        f.m: r for f, r in per_final.items() if f.manifold.label == initial.manifold.label and f != initial
    }
    leaving = sum(r for f, r in per_final.items() if f.manifold.label != initial.manifold.label)
    gamma_sd = sum(by_manifold.get(lab, 0.0) for lab in ABSORBER_LABELS if lab != initial.manifold.label)
    total = leaving + sum(back.values()) + elastic
    return RateBreakdown(initial, gamma_sd, back, elastic, total, by_manifold)


def stark_shift(
    level: Sublevel,
    laser: LaserField,
    species: SpeciesData | None = None,
    min_detuning_hz: float = 1e9,
    counter_rotating: bool = True,
) -> float:
    """Light shift of ``level`` in Hz per W/m^2.

    Sum over intermediates of ``|Omega_k|^2/4 * (1/Delta_k)`` with
    ``Omega_k = <k|d.eps|level> E0 / hbar``; negative for red detuning.
    """
    species = _species(species)
    opts = ScatteringOptions(counter_rotating=counter_rotating, min_detuning_hz=min_detuning_hz)
    e0_sq = 2.0 / (sc.c * sc.epsilon_0)
    shift = 0.0
    # c_k = A d inv / hbar, so |Omega_k|^2 inv / 4 = |c_k|^2 E0^2 / (4 inv)
    for k, _q, c_k in _absorption_amplitudes(level, laser, species, opts):
        omega_ki = sublevel_angular_frequency(k, opts) - sublevel_angular_frequency(level, opts)
        inv = _inverse_detuning(laser.angular_frequency, omega_ki, opts, "light-shift")
        shift += abs(c_k) ** 2 * e0_sq / (4 * inv)
    return shift / (2 * math.pi)


def differential_stark_shift(
    laser: LaserField,
    a: Sublevel,
    b: Sublevel,
    species: SpeciesData | None = None,
    min_detuning_hz: float = 1e9,
    counter_rotating: bool = True,
) -> float:
    """``stark_shift(a) - stark_shift(b)`` in Hz per W/m^2."""
    species = _species(species)
    return stark_shift(a, laser, species, min_detuning_hz, counter_rotating) - stark_shift(
        b, laser, species, min_detuning_hz, counter_rotating
    )


def intensity_from_power(power: float, waist: float) -> float:
    """Peak intensity ``2 P / (pi w^2)`` of a Gaussian beam, W/m^2."""
    if not waist > 0:
        raise ValueError(f"waist must be positive, got {waist}")
    if power < 0:
        raise ValueError(f"power must be non-negative, got {power}")
    return 2.0 * power / (math.pi * waist**2)


def d5_rate_table(
    laser: LaserField,
    species: SpeciesData | None = None,
    options: ScatteringOptions | None = None,
) -> np.ndarray:
    """Per-intensity rates between D5/2 sublevels and the absorber.

    Returns a 7x7 array ``R[from, to]`` in Hz/(W/m^2).  Indices 0-5 are
    m = +5/2 ... -5/2, index 6 is S1/2 and D3/2 together.  The diagonal is zero
    (elastic scattering leaves the state unchanged) and row 6 is zero.
    """
    species = _species(species)
    subs = species.sublevels(D5_LABEL)
    table = np.zeros((len(subs) + 1, len(subs) + 1))
    index = {s: i for i, s in enumerate(subs)}
    for a, s in enumerate(subs):
        br = rate_breakdown(s, laser, species, options)
        for m, r in br.gamma_back_D5.items():
            table[a, index[species.sublevel(D5_LABEL, m)]] = r
        table[a, -1] = br.gamma_SD
    return table


def _generator(rates: np.ndarray) -> np.ndarray:
    gen = rates.T.copy()
    gen[np.diag_indices_from(gen)] = -rates.sum(axis=1)
    return gen


def double_scatter_bias(
    initial: Sublevel,
    laser: LaserField,
    delay: float | Sequence[float] = 1.0,
    species: SpeciesData | None = None,
    options: ScatteringOptions | None = None,
) -> float:
    """Fractional shortfall of the fitted decay rate caused by scattering back into D5/2.

    The expected survival curve is computed exactly from the rate matrix at
    ``laser.intensity`` (natural decay included) and fitted with the same
    binomial likelihood used on data, with equal weight per delay.  A scalar
    ``delay`` means five equally spaced delays from ``delay/5`` to ``delay``.
    The result is ``(Gamma_SD I - Gamma_fit) / (Gamma_SD I)``.
    """
    from scipy.linalg import expm

    from .fit import fit_decay

    species = _species(species)
    delays = np.atleast_1d(np.asarray(delay, dtype=float))
    if delays.size == 1:
        delays = np.linspace(delays[0] / 5, delays[0], 5)
    if np.any(delays <= 0):
        raise ValueError("delays must be positive")
    subs = species.sublevels(D5_LABEL)
    a = subs.index(initial)
    rates = d5_rate_table(laser, species, options) * laser.intensity
    single = rates[a, -1]
    if single == 0:
        return 0.0
    rates[:-1, -1] += 1.0 / species.d5half_lifetime
    gen = _generator(rates)
    p0 = np.zeros(len(rates))
    p0[a] = 1.0
    surv = np.array([1.0 - (expm(gen * t) @ p0)[-1] for t in delays])
    n = np.full_like(delays, 1e12)
    fit = fit_decay(delays, n, n * surv)
    gamma_fit = fit.rate - 1.0 / species.d5half_lifetime
    return (single - gamma_fit) / single


def single_event_bias(
    initial: Sublevel,
    laser: LaserField,
    species: SpeciesData | None = None,
    options: ScatteringOptions | None = None,
) -> float:
    """Rate deficit if every scatter back into D5/2 lands on a slower-decaying sublevel.

    ``sum_m' (Gamma(i -> m') / Gamma_SD(i)) * (1 - Gamma_SD(m') / Gamma_SD(i))``.
    Intensity independent; a diagnostic, not a fitted-rate bias.
    """
    species = _species(species)
    subs = species.sublevels(D5_LABEL)
    table = d5_rate_table(laser, species, options)
    a = subs.index(initial)
    g0 = table[a, -1]
    if g0 == 0:
        return 0.0
    return float(sum(table[a, b] / g0 * (1 - table[b, -1] / g0) for b in range(len(subs)) if b != a))


def rate_table_csv(
    initials: Iterable[Sublevel],
    lasers: Iterable[LaserField],
    species: SpeciesData | None = None,
    options: ScatteringOptions | None = None,
) -> str:
    """CSV of per-final rates: initial_m, polarization, final_label, final_m, rate_per_intensity_SI."""
    species = _species(species)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["initial_m", "polarization", "final_label", "final_m", "rate_per_intensity_SI"])
    lasers = list(lasers)
    for ini in initials:
        for laser in lasers:
            for final in _final_sublevels(ini, species):
                r = channel_rate(ini, final, laser, species, options)
                w.writerow([ini.m.signed(), laser.describe(), final.manifold.label, final.m.signed(), f"{r:.9e}"])
    return buf.getvalue()
