from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from mevsim.fixed import TokenAmount, amt, format_micros, parse_micros


def test_parse_floors_extra_digits():
    assert parse_micros("1.2345679") == 1_234_567
    assert parse_micros("0.0000009") == 0
    assert parse_micros(3) == 3_000_000
    assert parse_micros(Fraction(1, 3)) == 333_333


def test_parse_rejects_garbage():
    with pytest.raises(ValueError):
        parse_micros("abc")
    with pytest.raises(ValueError):
        parse_micros("inf")
    with pytest.raises(TypeError):
        parse_micros(True)


def test_format_pads_six_digits():
    assert format_micros(1) == "0.000001"
    assert format_micros(-2_500_000) == "-2.500000"
    assert str(amt("90.90909")) == "90.909090"


def test_amount_is_non_negative_and_immutable():
    with pytest.raises(ValueError):
        TokenAmount(-1)
    with pytest.raises(ValueError):
        amt("1") - amt("2")
    a = amt("1")
    with pytest.raises(AttributeError):
        a.micros = 5


def test_mul_fraction_floors():
    assert amt("1").mul_fraction(1, 3).micros == 333_333
    assert amt("10").scale(Fraction(9, 10)) == amt("9")


@given(st.integers(min_value=0, max_value=10**15))
def test_format_parse_round_trip(m):
    assert parse_micros(format_micros(m)) == m


@given(st.integers(min_value=0, max_value=10**12), st.integers(min_value=0, max_value=10**12))
def test_add_sub_inverse(a, b):
    x, y = TokenAmount(a), TokenAmount(b)
    assert (x + y) - y == x
