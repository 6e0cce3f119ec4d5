"""Level structure and radiative data for the ion species.

The bundled ``ca40.json`` holds energies, lifetimes and branching fractions for
40Ca+.  Everything is converted to SI on load (Hz, s, kg) and validated; a
:class:`SpeciesData` instance is immutable afterwards.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from scipy import constants as sc

from .angular import HalfInt, QuantumNumberError

__all__ = [
    "Manifold",
    "Sublevel",
    "UpperLevelData",
    "SpeciesData",
    "SpeciesValidationError",
    "SPECIES_ENV_VAR",
    "load_species",
    "default_species",
    "species_file_hash",
    "reduced_dipole_sq",
    "einstein_a",
    "lande_g",
    "zeeman_splitting",
    "BOHR_HZ_PER_GAUSS",
]

SPECIES_ENV_VAR = "CARAMAN_SPECIES"

# Bohr magneton / h in Hz per gauss
BOHR_HZ_PER_GAUSS = sc.physical_constants["Bohr magneton in Hz/T"][0] * 1e-4

_LOWER_TO_UPPER_ORDER = ("S1/2", "D3/2", "D5/2", "P1/2", "P3/2")


class SpeciesValidationError(ValueError):
    """A species file is malformed or violates a physical invariant."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Manifold:
    label: str
    L: int
    S: HalfInt
    J: HalfInt
    energy: float  # Hz above S1/2

    @property
    def angular_frequency(self) -> float:
        return 2 * math.pi * self.energy

    @property
    def multiplicity(self) -> int:
        return self.J.twice + 1


@dataclass(frozen=True, order=True)
class Sublevel:
    manifold: Manifold = field(compare=False)
    m: HalfInt

    def __post_init__(self):
        if abs(self.m.twice) > self.manifold.J.twice or (self.manifold.J.twice - self.m.twice) % 2:
            raise QuantumNumberError(f"m={self.m} not a sublevel of {self.manifold.label}")

    @property
    def label(self) -> str:
        return f"{self.manifold.label},{self.m.signed()}"

    def __repr__(self) -> str:
        return f"Sublevel({self.label})"

    def __eq__(self, other):
        if not isinstance(other, Sublevel):
            return NotImplemented
        return self.manifold.label == other.manifold.label and self.m == other.m

    def __hash__(self):
        return hash((self.manifold.label, self.m.twice))


@dataclass(frozen=True)
class UpperLevelData:
    manifold: Manifold
    lifetime: float  # s
    branching: Mapping[str, float]
    lifetime_rel_uncertainty: float = 0.0

    @property
    def total_rate(self) -> float:
        return 1.0 / self.lifetime


@dataclass(frozen=True, eq=False)
class SpeciesData:
    name: str
    manifolds: tuple[Manifold, ...]
    upper_levels: tuple[UpperLevelData, ...]
    d5half_lifetime: float  # s
    ion_mass: float  # kg
    d5half_lifetime_uncertainty: float = 0.0
    sources: Mapping[str, str] = field(default_factory=dict)
    path: str | None = None

    def manifold(self, label: str) -> Manifold:
        for mf in self.manifolds:
            if mf.label == label:
                return mf
        raise KeyError(f"no manifold {label!r} in {self.name}")

    def upper(self, label: str) -> UpperLevelData:
        for up in self.upper_levels:
            if up.manifold.label == label:
                return up
        raise KeyError(f"no upper-level data for {label!r}")

    def sublevel(self, label: str, m) -> Sublevel:
        return Sublevel(self.manifold(label), HalfInt.of(m))

    def sublevels(self, label: str) -> list[Sublevel]:
        mf = self.manifold(label)
        return [Sublevel(mf, HalfInt(tm)) for tm in range(mf.J.twice, -mf.J.twice - 1, -2)]

    def intermediates_for(self, lower: str) -> list[UpperLevelData]:
        """Upper levels with a dipole branch down to ``lower``."""
        return [up for up in self.upper_levels if lower in up.branching]

    def transition_frequency(self, upper: str, lower: str) -> float:
        """Angular transition frequency (rad/s)."""
        return self.manifold(upper).angular_frequency - self.manifold(lower).angular_frequency


def _require(obj: Mapping, key: str, where: str):
    if key not in obj:
        raise SpeciesValidationError(f"{where}.{key}" if where else key, "missing")
    return obj[key]


def _positive(value, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise SpeciesValidationError(name, f"not a number: {value!r}") from None
    if not value > 0 or not math.isfinite(value):
        raise SpeciesValidationError(name, f"must be positive, got {value}")
    return value


def _parse(raw: Mapping, path: str | None) -> SpeciesData:
    manifolds = []
    for i, item in enumerate(_require(raw, "manifolds", "")):
        where = f"manifolds[{i}]"
        label = str(_require(item, "label", where))
        try:
            L = int(_require(item, "L", where))
            S = HalfInt.of(_require(item, "S", where))
            J = HalfInt.of(_require(item, "J", where))
        except (QuantumNumberError, ValueError, TypeError) as exc:
            raise SpeciesValidationError(where, str(exc)) from None
        if not (abs(2 * L - S.twice) <= J.twice <= 2 * L + S.twice) or J.twice < 0:
            raise SpeciesValidationError(f"{where}.J", f"J={J} incompatible with L={L}, S={S}")
        energy_thz = float(_require(item, "energy_thz", where))
        manifolds.append(Manifold(label, L, S, J, energy_thz * 1e12))

    labels = [m.label for m in manifolds]
    if len(set(labels)) != len(labels):
        raise SpeciesValidationError("manifolds", "duplicate labels")
    known = [lab for lab in _LOWER_TO_UPPER_ORDER if lab in labels]
    energies = [next(m.energy for m in manifolds if m.label == lab) for lab in known]
    if any(b <= a for a, b in zip(energies, energies[1:])):
        raise SpeciesValidationError("manifolds.energy_thz", f"energies not strictly ordered {known}")
    by_label = {m.label: m for m in manifolds}

    uppers = []
    for i, item in enumerate(_require(raw, "upper_levels", "")):
        where = f"upper_levels[{i}]"
        label = str(_require(item, "manifold", where))
        if label not in by_label:
            raise SpeciesValidationError(f"{where}.manifold", f"unknown manifold {label!r}")
        lifetime = _positive(_require(item, "lifetime_ns", where), f"{where}.lifetime_ns") * 1e-9
        branching = dict(_require(item, "branching", where))
        for lower, frac in branching.items():
            name = f"{where}.branching.{lower}"
            if lower not in by_label:
                raise SpeciesValidationError(name, "unknown lower manifold")
            if not 0.0 < float(frac) < 1.0:
                raise SpeciesValidationError(name, f"fraction {frac} outside (0, 1)")
            if by_label[lower].energy >= by_label[label].energy:
                raise SpeciesValidationError(name, "lower level is not below the upper level")
        total = sum(float(v) for v in branching.values())
        if abs(total - 1.0) > 1e-6:
            raise SpeciesValidationError(f"{where}.branching", f"fractions sum to {total}, not 1")
        rel = float(item.get("lifetime_rel_uncertainty", 0.0))
        uppers.append(
            UpperLevelData(
                by_label[label],
                lifetime,
                MappingProxyType({k: float(v) for k, v in branching.items()}),
                rel,
            )
        )

    tau_nat = _positive(_require(raw, "tau_nat_ms", ""), "tau_nat_ms") * 1e-3
    sigma_nat = float(raw.get("tau_nat_uncertainty_ms", 0.0)) * 1e-3
    mass = _positive(_require(raw, "ion_mass_amu", ""), "ion_mass_amu") * sc.atomic_mass
    return SpeciesData(
        name=str(raw.get("name", "unnamed")),
        manifolds=tuple(manifolds),
        upper_levels=tuple(uppers),
        d5half_lifetime=tau_nat,
        ion_mass=mass,
        d5half_lifetime_uncertainty=sigma_nat,
        sources=MappingProxyType(dict(raw.get("sources", {}))),
        path=path,
    )


def load_species(path: str | os.PathLike) -> SpeciesData:
    """Load and validate a species JSON file.

    Raises
    ------
    SpeciesValidationError
        On any parse failure or invariant violation; ``.field`` names the
        offending entry.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SpeciesValidationError(str(path), f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SpeciesValidationError(str(path), "top level must be an object")
    return _parse(raw, str(path))


def _bundled_path() -> Path:
    return Path(str(resources.files("caraman") / "data" / "ca40.json"))


def default_species(path: str | os.PathLike | None = None) -> SpeciesData:
    """Resolve the species file: explicit path, then $CARAMAN_SPECIES, then bundled."""
    if path is None:
        path = os.environ.get(SPECIES_ENV_VAR) or _bundled_path()
    return load_species(path)


def species_file_hash(species: SpeciesData) -> str:
    if species.path is None:
        return ""
    return hashlib.sha256(Path(species.path).read_bytes()).hexdigest()


def einstein_a(upper: str, lower: str, data: SpeciesData) -> float:
    up = data.upper(upper)
    try:
        return up.branching[lower] / up.lifetime
    except KeyError:
        raise KeyError(f"no transition {upper} -> {lower}") from None


def reduced_dipole_sq(upper: str | Manifold, lower: str | Manifold, data: SpeciesData) -> float:
    """|<lower||d||upper>|^2 in C^2 m^2 from the partial decay rate.

    Uses A = omega^3 |<lower||d||upper>|^2 / (3 pi eps0 hbar c^3 (2 J_upper + 1)).
    """
    upper = upper.label if isinstance(upper, Manifold) else upper
    lower = lower.label if isinstance(lower, Manifold) else lower
    a = einstein_a(upper, lower, data)
    omega = data.transition_frequency(upper, lower)
    two_j1 = data.manifold(upper).multiplicity
    return 3 * math.pi * sc.epsilon_0 * sc.hbar * sc.c**3 * two_j1 * a / omega**3


def lande_g(manifold: Manifold) -> float:
    J = float(manifold.J)
    S = float(manifold.S)
    L = manifold.L
    if J == 0:
        return 0.0
    return 1 + (J * (J + 1) + S * (S + 1) - L * (L + 1)) / (2 * J * (J + 1))


def zeeman_splitting(manifold: Manifold, b_gauss: float) -> float:
    """Splitting between adjacent sublevels in Hz at field ``b_gauss``."""
    if b_gauss < 0:
        raise ValueError("magnetic field must be non-negative")
    return lande_g(manifold) * BOHR_HZ_PER_GAUSS * b_gauss
