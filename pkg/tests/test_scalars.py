"""Exact scalar-field arithmetic checks."""

from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from heatker.scalars import (
    Field,
    Mom,
    Rat,
    mom_add,
    mom_cancel,
    mom_dq,
    mom_eval,
    mom_expand_J,
    mom_mul,
    mom_one,
    parse_poly,
    poly_add,
    poly_div_a,
    poly_div_nlin,
    poly_div_oma,
    poly_eval,
    poly_mul,
    rat_equal,
    rat_eval,
)

FLD = Field()

small_fracs = st.fractions(
    min_value=-5, max_value=5, max_denominator=6
)


def rpoly(draw_coeffs):
    p = {}
    for (i, j), c in draw_coeffs.items():
        if c:
            p[(i, j)] = Fraction(c)
    return p


poly_strategy = st.dictionaries(
    st.tuples(st.integers(0, 3), st.integers(0, 3)), small_fracs, max_size=5
).map(rpoly)


class TestPoly:
    def test_parse_roundtrip_eval(self):
        p = parse_poly("(n-2)*n*(n+2)*a^2 - 3*a + 1/2")
        assert poly_eval(p, Fraction(3), Fraction(2)) == 15 * 4 - 6 + Fraction(1, 2)

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_poly("n + q")

    @given(poly_strategy, poly_strategy)
    @settings(max_examples=50)
    def test_mul_matches_eval(self, p, q):
        nv, av = Fraction(5), Fraction(1, 3)
        assert poly_eval(poly_mul(p, q), nv, av) == poly_eval(p, nv, av) * poly_eval(
            q, nv, av
        )

    @given(poly_strategy)
    @settings(max_examples=50)
    def test_linear_division_roundtrip(self, p):
        fac_a = parse_poly("a")
        assert poly_div_a(poly_mul(p, fac_a)) == p or not p
        fac = parse_poly("1 - a")
        q = poly_div_oma(poly_mul(p, fac))
        assert q == p or (not p and q == {})
        nfac = parse_poly("n + 4")
        q = poly_div_nlin(poly_mul(p, nfac), Fraction(4))
        assert q == p or (not p and q == {})

    def test_division_fails_when_inexact(self):
        assert poly_div_a(parse_poly("a + 1")) is None
        assert poly_div_oma(parse_poly("a")) is None
        assert poly_div_nlin(parse_poly("n + 1"), Fraction(2)) is None


class TestRat:
    def test_cancellation(self):
        num = parse_poly("a*(1-a)*(n-2)")
        r = Rat(num, (1, 1, ((Fraction(-2), 1),)))
        assert r.den == (0, 0, ())
        assert r.num == {(0, 0): Fraction(1)}

    def test_add_common_denominator(self):
        oma = (0, 1, ())
        x = Rat(parse_poly("1"), oma)  # 1/(1-a)
        y = Rat(parse_poly("-a"), oma)  # -a/(1-a)
        assert rat_equal(x, Rat(poly_add(parse_poly("1"), {}), (0, 0, ())) if False else x)
        s = poly_add(x.num, y.num)
        assert Rat(s, oma).den == (0, 0, ())  # (1-a)/(1-a) = 1

    def test_eval(self):
        r = Rat(parse_poly("n + a"), (1, 0, ((Fraction(2), 1),)))
        # (n+a)/(a (n+2)) at n=4, a=1/2: 4.5 / (0.5*6) = 3/2
        assert rat_eval(r, Fraction(4), Fraction(1, 2)) == Fraction(3, 2)


class TestField:
    def test_atom_arithmetic_general(self):
        f = Field()
        x = f.mul(f.atom_A(), f.atom_A())
        assert set(x.parts) == {(2, 0)}
        with pytest.raises(ValueError):
            f.atom_L()

    def test_atom_A_folds_fixed(self):
        f = Field(n_fixed=2)
        x = f.atom_A()  # (1-a)^-1
        assert set(x.parts) == {(0, 0)}
        assert x.parts[(0, 0)].den == (0, 1, ())
        y = f.atom_A(-1)
        assert y.parts[(0, 0)].den == (0, 0, ())

    def test_equal_after_clearing(self):
        f = Field()
        # 1/(1-a) - 1 == a/(1-a)
        lhs = f.sub(f.rat(Rat(parse_poly("1"), (0, 1, ()))), f.one())
        rhs = f.rat(Rat(parse_poly("a"), (0, 1, ())))
        assert f.equal(lhs, rhs)

    def test_div_factors_fixed_n(self):
        f = Field(n_fixed=4)
        x = f.div_factors(f.one(), nfacs=((Fraction(2), 1),))  # /(n+2) -> /6
        assert f.equal(x, f.rat(Fraction(1, 6)))

    def test_series_a0_of_atom(self):
        f = Field()
        # A = 1 + (n/2) a + (n/2)(n/2+1)/2 a^2 + ...
        ser = f.series_a0(f.atom_A(), 2)
        assert rat_equal(ser[0], Rat(parse_poly("1")))
        assert rat_equal(ser[1], Rat(parse_poly("1/2 * n")))
        assert rat_equal(ser[2], Rat(parse_poly("1/8 * n^2 + 1/4 * n")))

    def test_series_a0_detects_pole(self):
        f = Field()
        x = f.div_factors(f.one(), a_pow=1)
        with pytest.raises(ZeroDivisionError):
            f.series_a0(x, 1)

    def test_series_a0_cancels_apparent_pole(self):
        f = Field()
        # (A - 1)/a -> n/2 at a = 0
        x = f.div_factors(f.sub(f.atom_A(), f.one()), a_pow=1)
        lim = f.limit_a0(x)
        assert rat_equal(lim, Rat(parse_poly("1/2 * n")))

    def test_series_a0_log_atom(self):
        f = Field(n_fixed=2)
        # ln(1-a)/a -> -1 - a/2 - ...
        x = f.div_factors(f.atom_L(), a_pow=1)
        ser = f.series_a0(x, 1)
        assert rat_equal(ser[0], Rat(parse_poly("-1")))
        assert rat_equal(ser[1], Rat(parse_poly("-1/2")))


class TestMom:
    def test_mul_and_cancel(self):
        f = FLD
        u = Mom({(0, 1): f.one()})  # U
        inv_u = Mom({(0, 0): f.one()}, l=1)  # 1/U
        prod = mom_mul(f, u, inv_u)
        assert prod.l == 0 and prod.m == 0
        assert set(prod.num) == {(0, 0)}

    def test_div_V_exact(self):
        f = FLD
        # V * 1/(U V) = 1/U
        v = Mom({(0, 1): f.one(), (1, 0): f.neg(f.sym_a())})
        inv_uv = Mom({(0, 0): f.one()}, l=1, m=1)
        prod = mom_mul(f, v, inv_uv)
        assert (prod.l, prod.m) == (1, 0)

    def test_principal_symbol_inverse_identity(self):
        # (K - lambda)*inv stays exact through add/mul: (U)*(1/U) - 1 == 0
        f = FLD
        u = Mom({(0, 1): f.one()})
        inv_u = Mom({(0, 0): f.one()}, l=1)
        one = mom_one(f)
        diff = mom_add(f, mom_mul(f, u, inv_u), mom_scale_neg(f, one))
        assert diff.is_zero()

    @given(
        st.integers(0, 2),
        st.integers(0, 2),
        st.integers(0, 2),
    )
    @settings(max_examples=30)
    def test_dq_matches_difference_quotient_symbolically(self, p, l, m):
        # check d/dq via exact evaluation of (N/(U^l V^m)) at shifted q
        f = FLD
        x = Mom({(p, 0): f.one()}, l=l, m=m)
        d = mom_dq(f, x)
        # evaluate derivative exactly using the quotient rule at sample point
        nv, av = Fraction(3), Fraction(1, 3)
        k0, lam = Fraction(7), Fraction(2)
        eps = Fraction(1, 10**8)
        fp = mom_eval(f, x, k0 + eps, lam, nv, av)
        fm = mom_eval(f, x, k0 - eps, lam, nv, av)
        approx = (fp - fm) / (2 * eps)
        exact = mom_eval(f, d, k0, lam, nv, av)
        assert abs(approx - exact) < Fraction(1, 10**6)

    def test_expand_J_simple(self):
        f = FLD
        x = Mom({(1, 0): f.one()}, l=2, m=1)  # K/(U^2 V)
        out = mom_expand_J(f, x)
        assert out == [(1, 2, 1, x.num[(1, 0)], False)]

    def test_expand_J_mixed_positive_power(self):
        f = FLD
        # U / V = 1 + aK/V
        x = Mom({(0, 1): f.one()}, l=0, m=1)
        out = mom_expand_J(f, x)
        shapes = {(p, l, m, flag) for (p, l, m, c, flag) in out}
        assert (1, 0, 1, False) in shapes
        assert (0, 0, 0, True) in shapes


def mom_scale_neg(f, x):
    from heatker.scalars import mom_scale

    return mom_scale(f, x, f.rat(-1))
