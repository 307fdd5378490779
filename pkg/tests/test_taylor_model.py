import math

import mpmath
import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from lvinv.errors import DenominatorZero, InvalidParam, ValidationError
from lvinv.taylor_model import (RationalTaylorTerm, TaylorTable, check_admissible, custom_model,
                                evaluate, load_model, preset, taylor_at)


def term(*ts):
    return RationalTaylorTerm(tuple(ts))


# -- oracles -----------------------------------------------------------------

def sympy_table(rt, base, order):
    p, q = sp.symbols("p q")
    expr = sum(sp.Float(c) * p**m * q**n / (1 + p**h) for m, n, h, c in rt.terms)
    out = {}
    for k in range(1, order + 1):
        for m in range(k + 1):
            d = sp.diff(expr, p, m, q, k - m) if k - m else sp.diff(expr, p, m)
            out[(m, k - m)] = float(d.subs({p: base[0], q: base[1]}))
    return out


def fd_derivative(rt, base, m, n, h=1e-5):
    """Central finite difference d^m_u d^n_v with step h, evaluated in 50-digit arithmetic.

    High precision removes the roundoff of nested differences so only the
    O(h^2) truncation error of the stencil remains.
    """
    with mpmath.workdps(50):
        def f(p, q):
            return sum(mpmath.mpf(c) * p**m_ * q**n_ / (1 + p**h_) for m_, n_, h_, c in rt.terms)
        return float(mpmath.diff(f, (mpmath.mpf(base[0]), mpmath.mpf(base[1])), (m, n),
                                 h=mpmath.mpf(h), method="step", direction=0))


# -- evaluate ----------------------------------------------------------------

def test_bazykin_logistic_zero_at_carrying_capacity():
    m = preset("bazykin", {"a": 1, "K": 2, "b": 1, "A": 1})
    assert evaluate(m.F, 2.0, 0.0) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("kind", ["hydra", "holling_tanner", "bazykin"])
def test_terms_vanish_at_base(kind):
    m = preset(kind)
    for b in m.base_solutions:
        assert abs(evaluate(m.F, *b)) <= 1e-12
        assert abs(evaluate(m.G, *b)) <= 1e-12


def test_hydra_interaction_arithmetic():
    # (p + lam v) u v with p = 1, lam = 0.5 at (2, 1); h = 0 divides by 2
    t = RationalTaylorTerm.from_parts({(1, 1): 1.0, (1, 2): 0.5})
    assert evaluate(t, 2.0, 1.0) == pytest.approx(3.0, rel=1e-15)


def test_h0_denominator_is_two():
    assert evaluate(term((1, 0, 0, 1.0)), 3.0, 0.0) == pytest.approx(1.5)


def test_denominator_zero():
    with pytest.raises(DenominatorZero):
        evaluate(term((1, 1, 1, 1.0)), -1.0, 2.0)


def test_invalid_terms_rejected():
    with pytest.raises(ValidationError):
        term((1, 1, 2, 1.0))
    with pytest.raises(ValidationError):
        term((1, 1, 0, 1.0), (1, 1, 0, 2.0))
    with pytest.raises(ValidationError):
        term((-1, 1, 0, 1.0))


# -- taylor_at ---------------------------------------------------------------

def test_uv_at_origin():
    tab = taylor_at(RationalTaylorTerm.from_parts({(1, 1): 1.0}), (0, 0), 2)
    assert tab[(1, 1)] == 1.0
    assert all(c == 0.0 for mn, c in tab.coeffs.items() if mn != (1, 1))


def test_hydra_G_table():
    m = preset("hydra", {"p": 1, "lam": 0.5, "mu": 2})
    _, G = m.tables((0, 0), 3)
    assert G[(1, 1)] == pytest.approx(2.0)
    assert G[(1, 2)] == pytest.approx(2.0)
    others = {mn: c for mn, c in G.coeffs.items() if mn not in ((1, 1), (1, 2), (0, 1))}
    assert all(abs(c) < 1e-14 for c in others.values())


def test_holling_tanner_fd_oracle():
    beta = 2.0
    t = RationalTaylorTerm.from_parts(rational={(1, 1): beta})
    tab = taylor_at(t, (1, 0), 2)
    assert tab[(0, 1)] == pytest.approx(beta / 2, rel=1e-12)
    assert tab[(1, 1)] == pytest.approx(beta / 4, rel=1e-12)
    assert tab[(1, 1)] == pytest.approx(fd_derivative(t, (1.0, 0.0), 1, 1), rel=1e-6)


@pytest.mark.parametrize("kind", ["hydra", "holling_tanner", "bazykin"])
def test_presets_match_sympy(kind):
    m = preset(kind)
    for b in m.base_solutions:
        for rt in (m.F, m.G):
            got = taylor_at(rt, b, 4)
            ref = sympy_table(rt, b, 4)
            for mn, c in ref.items():
                assert got[mn] == pytest.approx(c, rel=1e-12, abs=1e-12)


monomial = st.tuples(st.integers(0, 3), st.integers(0, 3), st.sampled_from([0, 1]),
                     st.floats(-3, 3, allow_nan=False).filter(lambda c: abs(c) > 1e-3))
terms_strategy = st.lists(monomial, min_size=1, max_size=4, unique_by=lambda t: t[:3])
bases = st.tuples(st.floats(0, 2), st.floats(0, 2))


@given(terms_strategy, bases)
def test_taylor_matches_finite_differences(ts, base):
    rt = term(*ts)
    tab = taylor_at(rt, base, 3)
    for (m, n), c in tab.coeffs.items():
        ref = fd_derivative(rt, base, m, n)
        assert c == pytest.approx(ref, rel=1e-6, abs=1e-9)


@given(terms_strategy, bases)
def test_taylor_matches_symbolic(ts, base):
    rt = term(*ts)
    tab = taylor_at(rt, base, 3)
    for mn, c in sympy_table(rt, base, 3).items():
        assert tab[mn] == pytest.approx(c, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_truncation_slope(order):
    m = preset("bazykin")
    base = (0.5, 0.3)
    rt = m.F
    tab = taylor_at(rt, base, order)
    f0 = evaluate(rt, *base)
    deltas = np.array([1e-1, 5e-2, 2.5e-2, 1.25e-2])
    errs = [abs(evaluate(rt, base[0] + d, base[1] + 0.7 * d) - f0 - tab.expand(d, 0.7 * d)) for d in deltas]
    slope = np.polyfit(np.log(deltas), np.log(errs), 1)[0]
    assert slope >= order + 0.9


def test_table_fills_zeros_and_rejects_excess():
    tab = TaylorTable((0, 0), 2, {(1, 1): 3.0})
    assert tab[(2, 0)] == 0.0 and tab[(1, 1)] == 3.0
    with pytest.raises(ValidationError):
        TaylorTable((0, 0), 1, {(1, 1): 3.0})


# -- admissibility -----------------------------------------------------------

def test_u2v2_admissible():
    r = check_admissible(term((2, 2, 0, 1.0)), "A", (0, 0))
    assert r.ok and r.condition_b_ok and r.condition_c_ok and r.condition_d_ok


def test_G_linear_v_allowed():
    r = check_admissible(RationalTaylorTerm.from_parts({(0, 2): 1.0, (0, 1): -0.3}), "B", (0, 0))
    assert r.ok


def test_hydra_unbalanced_flags_F10():
    m = preset("hydra", {"a": 1.5, "b": 1.0})
    r = check_admissible(m.F, "A", (0, 0))
    assert not r.condition_c_ok
    assert any("F_10" in v for v in r.violations)


def test_relaxed_mode_notes_instead_of_violating():
    m = preset("hydra", {"a": 1.5, "b": 1.0})
    r = check_admissible(m.F, "A", (0, 0), relaxed=True)
    assert r.ok and any("F_10" in n for n in r.notes)


def test_holling_tanner_coupling_flagged():
    m = preset("holling_tanner")
    r = check_admissible(m.F, "A", (1, 0), relaxed=True)
    assert any("F_01" in v for v in r.violations)


def test_nonadmissible_value_at_base():
    r = check_admissible(term((0, 0, 0, 1.0)), "A", (0, 0))
    assert not r.condition_b_ok


mixed = st.lists(st.tuples(st.integers(1, 3), st.integers(1, 3),
                           st.floats(-3, 3).filter(lambda c: abs(c) > 1e-6)),
                 min_size=1, max_size=4, unique_by=lambda t: t[:2])


@given(mixed)
def test_mixed_monomials_are_class_A(ts):
    r = check_admissible(term(*[(m, n, 0, c) for m, n, c in ts]), "A", (0, 0))
    assert r.ok


# -- presets and config ------------------------------------------------------

def test_preset_bases():
    assert (0.0, 0.0) in preset("hydra", {"a": 1, "b": 1, "e": 1, "p": 1, "lam": 0.5, "mu": 2, "m": 0.3}).base_solutions
    ht = preset("holling_tanner", {"alpha": 1, "beta": 2, "gamma": 1, "delta": 0.3})
    assert (1.0, 0.0) in ht.base_solutions
    assert evaluate(ht.F, 1.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    bz = preset("bazykin", {"a": 1, "K": 2, "b": 1, "A": 1, "c": 0.5, "d": 1, "h": 0.2})
    assert evaluate(bz.F, 0, 0) == 0 and evaluate(bz.G, 0, 0) == 0


@pytest.mark.parametrize("kind,params", [("hydra", {"p": -1}), ("bazykin", {"K": 0}),
                                         ("holling_tanner", {"beta": -2}), ("nope", {})])
def test_invalid_params(kind, params):
    with pytest.raises(InvalidParam):
        preset(kind, params)


def test_non_equilibrium_base_rejected():
    with pytest.raises(InvalidParam):
        custom_model([(1, 0, 0, 1.0)], [(0, 1, 0, 1.0)], [(1.0, 0.0)])


def test_load_model_custom_and_preset():
    m = load_model({"kind": "custom", "terms_F": [[3, 0, 0, 2.0]], "terms_G": [[0, 1, 0, -0.6]],
                    "base": [[0, 0]], "diffusion": [0.2, 0.1]})
    F, G = m.tables((0, 0), 3)
    assert F[(3, 0)] == pytest.approx(6.0) and G[(0, 1)] == pytest.approx(-0.3)
    assert m.diffusion == (0.2, 0.1)
    p = load_model({"kind": "hydra", "params": {"lambda": 0.25}})
    assert p.params["lam"] == 0.25
    with pytest.raises(ValidationError):
        load_model({"kind": "custom", "terms_F": [[1, 1, 0, 1.0]]})


def test_from_parts_roundtrip_coefficient():
    t = RationalTaylorTerm.from_parts({(2, 1): 3.0})
    assert taylor_at(t, (0, 0), 3)[(2, 1)] == pytest.approx(3.0 * math.factorial(2))
