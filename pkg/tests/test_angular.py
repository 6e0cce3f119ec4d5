import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from caraman.angular import (
    HalfInt,
    QuantumNumberError,
    clebsch_gordan,
    clebsch_gordan_exact,
    sublevels,
    wigner3j,
    wigner3j_exact,
)

import oracles


def test_3j_reference_value():
    assert wigner3j(1, 1, 0, 0, 0, 0) == pytest.approx(-1 / math.sqrt(3), abs=1e-15)


def test_3j_exact_form_is_signed_square():
    sign, sq = wigner3j_exact(1, 1, 0, 0, 0, 0)
    assert (sign, sq) == (-1, Fraction(1, 3))


@pytest.mark.parametrize("ms", [(1, 0, 0), (1, 1, 0), (-1, 0, 0), (1, -1, 1)])
def test_3j_projection_selection_rule(ms):
    assert wigner3j(1, 1, 1, *ms) == 0.0


@pytest.mark.parametrize("m1,m2", [(0.5, 0.5), (0.5, -0.5), (-0.5, 0.5)])
def test_3j_triangle_rule(m1, m2):
    assert wigner3j(0.5, 0.5, 2, m1, m2, -m1 - m2) == 0.0


@pytest.mark.parametrize("j", ["0", "1/2", "1", "5/2", "7/2"])
def test_cg_coupling_to_zero_is_identity(j):
    for m in sublevels(j):
        assert clebsch_gordan(j, m, 0, 0, j, m) == 1.0


def test_cg_projection_not_conserved_is_zero():
    assert clebsch_gordan("5/2", "5/2", 1, -1, "3/2", "1/2") == 0.0


def test_cg_ratio_for_the_three_d52_channels():
    a = clebsch_gordan("5/2", "5/2", 1, -1, "3/2", "3/2") ** 2
    b = clebsch_gordan("5/2", "3/2", 1, -1, "3/2", "1/2") ** 2
    c = clebsch_gordan("5/2", "3/2", 1, 0, "3/2", "3/2") ** 2
    assert a / c == pytest.approx(2.5, rel=1e-14)
    assert b / c == pytest.approx(1.5, rel=1e-14)


def test_cg_exact_squares_are_rational():
    assert clebsch_gordan_exact("5/2", "5/2", 1, -1, "3/2", "3/2") == (1, Fraction(2, 3))


@pytest.mark.parametrize(
    "args",
    [
        (-1, 0, 1, 0, 1, 0),  # negative j
        ("1/2", 1, 1, 0, "1/2", 1),  # |m| > j
        (1, "1/2", 1, 0, 1, "1/2"),  # m and j of different parity
        ("1/3", 0, 1, 0, 1, 0),  # not a half-integer
    ],
)
def test_invalid_quantum_numbers_raise(args):
    with pytest.raises(QuantumNumberError):
        clebsch_gordan(*args)


def test_halfint_parsing_and_sublevels():
    assert HalfInt.of("+5/2") == HalfInt.of(2.5) == HalfInt(5)
    assert [m.signed() for m in sublevels("3/2")] == ["+3/2", "+1/2", "-1/2", "-3/2"]
    with pytest.raises(QuantumNumberError):
        sublevels(-1)


HALVES = [Fraction(k, 2) for k in range(0, 11)]


def _all_cg(j1, j2):
    for m1 in sublevels(j1):
        for m2 in sublevels(j2):
            J = abs(j1 - j2)
            while J <= j1 + j2:
                M = m1.value + m2.value
                if abs(M) <= J:
                    yield m1, m2, J, M
                J += 1


@pytest.mark.parametrize("j1", HALVES[:7], ids=str)
def test_orthonormality_over_J(j1):
    for j2 in HALVES[:7]:
        for m1 in sublevels(j1):
            for m2 in sublevels(j2):
                total = 0.0
                J = abs(j1 - j2)
                while J <= j1 + j2:
                    M = m1.value + m2.value
                    if abs(M) <= J:
                        total += clebsch_gordan(j1, m1, j2, m2, J, M) ** 2
                    J += 1
                assert total == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("j1", HALVES, ids=str)
def test_matches_lowering_operator_oracle(j1):
    for j2 in HALVES:
        table = oracles.cg_table(float(j1), float(j2))
        for m1, m2, J, M in _all_cg(j1, j2):
            expected = table.get((float(m1), float(m2), float(J), float(M)), 0.0)
            assert clebsch_gordan(j1, m1, j2, m2, J, M) == pytest.approx(expected, abs=1e-12)


@st.composite
def triads(draw):
    """Valid (j1, j2, j3, m1, m2, m3) with m1 + m2 + m3 = 0."""
    j1 = draw(st.sampled_from(HALVES))
    j2 = draw(st.sampled_from(HALVES))
    j3 = abs(j1 - j2) + draw(st.integers(0, int(j1 + j2 - abs(j1 - j2))))
    m1 = draw(st.sampled_from(sublevels(j1))).value
    m2 = draw(st.sampled_from(sublevels(j2))).value
    assume(abs(m1 + m2) <= j3)
    return j1, j2, j3, m1, m2, -m1 - m2


@settings(max_examples=300, deadline=None)
@given(triads())
def test_3j_column_permutation_symmetry(t):
    j1, j2, j3, m1, m2, m3 = t
    base = wigner3j(j1, j2, j3, m1, m2, m3)
    odd_sign = (-1) ** int(j1 + j2 + j3)
    cols = [(j1, m1), (j2, m2), (j3, m3)]
    for perm in itertools.permutations(range(3)):
        js = [cols[i][0] for i in perm]
        ms = [cols[i][1] for i in perm]
        parity = sum(1 for a, b in itertools.combinations(perm, 2) if a > b) % 2
        expected = base if parity == 0 else odd_sign * base
        assert wigner3j(*js, *ms) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(triads())
def test_3j_sign_flip_of_all_m(t):
    j1, j2, j3, m1, m2, m3 = t
    sign = (-1) ** int(j1 + j2 + j3)
    assert wigner3j(j1, j2, j3, -m1, -m2, -m3) == pytest.approx(sign * wigner3j(*t), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(triads())
def test_cg_magnitude_bounded_by_one(t):
    j1, j2, J, m1, m2, _ = t
    M = m1 + m2
    M = m1 + m2
    assert abs(clebsch_gordan(j1, m1, j2, m2, J, M)) <= 1.0 + 1e-15


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(HALVES[:7]), st.sampled_from(HALVES[:7]), st.data())
def test_cg_columns_orthonormal_over_m(j1, j2, data):
    # sum over m1, m2 of <..|J M><..|J' M> = delta_JJ'
    lo, hi = abs(j1 - j2), j1 + j2
    J = lo + data.draw(st.integers(0, int(hi - lo)))
    Jp = lo + data.draw(st.integers(0, int(hi - lo)))
    M = data.draw(st.sampled_from(sublevels(min(J, Jp)))).value
    total = 0.0
    for m1 in sublevels(j1):
        m2 = M - m1.value
        if abs(m2) <= j2:
            total += clebsch_gordan(j1, m1, j2, m2, J, M) * clebsch_gordan(j1, m1, j2, m2, Jp, M)
    assert total == pytest.approx(1.0 if J == Jp else 0.0, abs=1e-12)
