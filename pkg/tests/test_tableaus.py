from fractions import Fraction

import numpy as np
import pytest

from volcontract.errors import ContractError
from volcontract.stability import series_coefficients
from volcontract.tableaus import (
    format_tableau,
    load_tableau,
    make_tableau,
    parse_entry,
    parse_tableau,
    resolve_tableau,
    tableau_names,
    tableau_registry,
)


def test_midpoint_entries():
    tab = tableau_registry("midpoint")
    assert tab.s == 1
    assert tab.exact_a == ((Fraction(1, 2),),)
    assert tab.exact_b == (Fraction(1),)


def test_rk3_stability_polynomial():
    coeffs = series_coefficients(tableau_registry("rk3"), 6)
    assert coeffs == [1, 1, Fraction(1, 2), Fraction(1, 6), 0, 0]


def test_gauss2_weights_positive():
    tab = tableau_registry("gauss2")
    np.testing.assert_allclose(tab.b, [0.5, 0.5])
    assert np.all(tab.b > 0)
    np.testing.assert_allclose(tab.c, tab.a.sum(axis=1), atol=1e-15)


@pytest.mark.parametrize("name", tableau_names())
def test_registry_consistency(name):
    tab = tableau_registry(name)
    assert abs(tab.b.sum() - 1.0) <= 1e-14
    np.testing.assert_allclose(tab.c, tab.a.sum(axis=1), atol=1e-14)


def test_inconsistent_weights_rejected():
    with pytest.raises(ContractError):
        make_tableau([[0, 0], [1, 0]], [Fraction(1, 2), Fraction(1, 3)])
    with pytest.raises(ContractError):
        make_tableau([[0.0]], [0.9])


def test_bad_abscissae_rejected():
    with pytest.raises(ContractError):
        make_tableau([[0, 0], [1, 0]], [0.5, 0.5], c=[0.0, 0.5])


def test_unknown_name():
    with pytest.raises(ContractError):
        tableau_registry("rk99")
    with pytest.raises(ContractError):
        resolve_tableau("rk99")


def test_parse_entry():
    assert parse_entry("1/3") == Fraction(1, 3)
    assert parse_entry("-2") == Fraction(-2)
    assert parse_entry("1/4 - sqrt(3)/6") == pytest.approx(0.25 - np.sqrt(3) / 6, abs=1e-16)
    with pytest.raises(ContractError):
        parse_entry("__import__('os')")
    with pytest.raises(ContractError):
        parse_entry("1/")


@pytest.mark.parametrize("name", tableau_names())
def test_text_round_trip(name):
    tab = tableau_registry(name)
    again = parse_tableau(format_tableau(tab))
    np.testing.assert_array_equal(again.a, tab.a)
    np.testing.assert_array_equal(again.b, tab.b)
    assert again.exact_a == tab.exact_a
    assert again.h_star == tab.h_star


def test_load_from_file(tmp_path):
    path = tmp_path / "kutta3.txt"
    path.write_text(
        "# Kutta's third-order method\n"
        "s = 3\n"
        "a = 0, 0, 0 ; 1/2, 0, 0 ; -1, 2, 0\n"
        "b = 1/6, 2/3, 1/6\n"
    )
    tab = load_tableau(path)
    assert tab.name == "kutta3"
    assert resolve_tableau(str(path)).exact_b == (Fraction(1, 6), Fraction(2, 3), Fraction(1, 6))


def test_malformed_file():
    with pytest.raises(ContractError):
        parse_tableau("a = 1/2\n")
    with pytest.raises(ContractError):
        parse_tableau("a = 1/2\nb = 1\ns = 2\n")
    with pytest.raises(ContractError):
        parse_tableau("this is not a tableau\n")
