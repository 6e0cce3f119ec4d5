"""Exact Wigner 3j and Clebsch-Gordan coefficients.

Quantum numbers are carried as :class:`HalfInt`, which stores twice the value so
that 1/2, 3/2, ... compare exactly.  The Racah sum is evaluated in integer
arithmetic; the only floating-point step is the final square root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Union

__all__ = [
    "HalfInt",
    "QuantumNumberError",
    "wigner3j",
    "wigner3j_exact",
    "clebsch_gordan",
    "clebsch_gordan_exact",
    "sublevels",
]


class QuantumNumberError(ValueError):
    """Raised for angular-momentum arguments outside their allowed domain."""


@dataclass(frozen=True, order=True)
class HalfInt:
    """An integer or half-integer stored as ``twice`` its value."""

    twice: int

    @classmethod
    def of(cls, value: "HalfIntLike") -> "HalfInt":
        if isinstance(value, HalfInt):
            return value
        if isinstance(value, str):
            text = value.strip().replace("+", "")
            value = Fraction(text)
        if isinstance(value, bool):
            raise TypeError("bool is not a quantum number")
        doubled = Fraction(value) * 2
        if doubled.denominator != 1:
            raise QuantumNumberError(f"{value!r} is not an integer or half-integer")
        return cls(int(doubled))

    @property
    def value(self) -> Fraction:
        return Fraction(self.twice, 2)

    @property
    def is_half(self) -> bool:
        return self.twice % 2 != 0

    def __float__(self) -> float:
        return self.twice / 2

    def __add__(self, other: "HalfIntLike") -> "HalfInt":
        return HalfInt(self.twice + HalfInt.of(other).twice)

    __radd__ = __add__

    def __sub__(self, other: "HalfIntLike") -> "HalfInt":
        return HalfInt(self.twice - HalfInt.of(other).twice)

    def __rsub__(self, other: "HalfIntLike") -> "HalfInt":
        return HalfInt(HalfInt.of(other).twice - self.twice)

    def __neg__(self) -> "HalfInt":
        return HalfInt(-self.twice)

    def __abs__(self) -> "HalfInt":
        return HalfInt(abs(self.twice))

    def __str__(self) -> str:
        if self.twice % 2 == 0:
            return str(self.twice // 2)
        return f"{self.twice}/2"

    def signed(self) -> str:
        """Text form with an explicit sign, e.g. ``+5/2``."""
        text = str(self)
        return text if self.twice < 0 else "+" + text


HalfIntLike = Union[HalfInt, int, float, Fraction, str]


def sublevels(j: HalfIntLike) -> list[HalfInt]:
    """Projections m = j, j-1, ..., -j (descending)."""
    tj = HalfInt.of(j).twice
    if tj < 0:
        raise QuantumNumberError(f"negative angular momentum {j!r}")
    return [HalfInt(tm) for tm in range(tj, -tj - 1, -2)]


def _check(tj: int, tm: int) -> None:
    if tj < 0:
        raise QuantumNumberError(f"negative angular momentum j={tj}/2")
    if abs(tm) > tj:
        raise QuantumNumberError(f"|m|={abs(tm)}/2 exceeds j={tj}/2")
    if (tj - tm) % 2:
        raise QuantumNumberError(f"j={tj}/2 and m={tm}/2 differ by a non-integer")


_fact = math.factorial


@lru_cache(maxsize=65536)
def _w3j(tj1: int, tj2: int, tj3: int, tm1: int, tm2: int, tm3: int) -> tuple[int, Fraction]:
    """(sign, value**2) of the 3j symbol; arguments are doubled."""
    for tj, tm in ((tj1, tm1), (tj2, tm2), (tj3, tm3)):
        _check(tj, tm)
    if tm1 + tm2 + tm3 != 0:
        return 0, Fraction(0)
    if tj3 > tj1 + tj2 or tj3 < abs(tj1 - tj2) or (tj1 + tj2 + tj3) % 2:
        return 0, Fraction(0)

    # all combinations below are integers once the checks above pass
    a = (tj1 + tj2 - tj3) // 2
    b = (tj1 - tj2 + tj3) // 2
    c = (-tj1 + tj2 + tj3) // 2
    big = (tj1 + tj2 + tj3) // 2 + 1
    j1pm, j1mm = (tj1 + tm1) // 2, (tj1 - tm1) // 2
    j2pm, j2mm = (tj2 + tm2) // 2, (tj2 - tm2) // 2
    j3pm, j3mm = (tj3 + tm3) // 2, (tj3 - tm3) // 2

    pref = Fraction(_fact(a) * _fact(b) * _fact(c), _fact(big))
    pref *= _fact(j1pm) * _fact(j1mm) * _fact(j2pm) * _fact(j2mm) * _fact(j3pm) * _fact(j3mm)

    # t-range of the Racah sum
    k1 = (tj3 - tj2 + tm1) // 2
    k2 = (tj3 - tj1 - tm2) // 2
    tmin = max(0, -k1, -k2)
    tmax = min(a, j1mm, j2pm)
    total = Fraction(0)
    for t in range(tmin, tmax + 1):
        den = _fact(t) * _fact(k1 + t) * _fact(k2 + t) * _fact(a - t) * _fact(j1mm - t) * _fact(j2pm - t)
        total += Fraction((-1) ** t, den)
    if total == 0:
        return 0, Fraction(0)

    phase_exp = (tj1 - tj2 - tm3) // 2
    sign = (-1) ** (phase_exp % 2) * (1 if total > 0 else -1)
    return sign, pref * total * total


def wigner3j_exact(j1, j2, j3, m1, m2, m3) -> tuple[int, Fraction]:
    """Sign and exact square of the 3j symbol.

    The symbol equals ``sign * sqrt(square)``.
    """
    args = [HalfInt.of(x).twice for x in (j1, j2, j3, m1, m2, m3)]
    return _w3j(*args)


def wigner3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3j symbol ``(j1 j2 j3; m1 m2 m3)``.

    Returns exactly 0.0 if the triangle rule fails or ``m1 + m2 + m3 != 0``.

    Raises
    ------
    QuantumNumberError
        If any ``|m| > j``, ``j < 0`` or ``j - m`` is not an integer.
    """
    sign, sq = wigner3j_exact(j1, j2, j3, m1, m2, m3)
    if sign == 0:
        return 0.0
    return sign * math.sqrt(sq)


def clebsch_gordan_exact(j1, m1, j2, m2, J, M) -> tuple[int, Fraction]:
    """Sign and exact square of ``<j1 m1; j2 m2 | J M>``."""
    tj1, tm1, tj2, tm2, tJ, tM = (HalfInt.of(x).twice for x in (j1, m1, j2, m2, J, M))
    sign, sq = _w3j(tj1, tj2, tJ, tm1, tm2, -tM)
    if sign == 0:
        return 0, Fraction(0)
    phase_exp = (tj1 - tj2 + tM) // 2
    sign *= (-1) ** (phase_exp % 2)
    return sign, sq * (tJ + 1)


def clebsch_gordan(j1, m1, j2, m2, J, M) -> float:
    """Clebsch-Gordan coefficient ``<j1 m1; j2 m2 | J M>`` (Condon-Shortley phase).

    Related to the 3j symbol by
    ``(-1)**(j1 - j2 + M) * sqrt(2J + 1) * wigner3j(j1, j2, J, m1, m2, -M)``.
    """
    sign, sq = clebsch_gordan_exact(j1, m1, j2, m2, J, M)
    if sign == 0:
        return 0.0
    return sign * math.sqrt(sq)
