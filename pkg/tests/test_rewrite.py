"""Derivative-reordering checks: symbolic examples and exact numeric
validation on random curved backgrounds with torsion."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from heatker.errors import OutOfRange
from heatker.expr import (
    I,
    L,
    R,
    T,
    TensorExpr,
    W,
    X,
    coeff_one,
    coeff_rat,
    factor,
    lo,
    up,
)
from heatker.rewrite import (
    Background,
    apply_bianchi,
    apply_cyclic,
    bianchi_R_remainder,
    bianchi_W_remainder,
    commute_pair,
    commute_pair_expr,
    cyclic_remainder,
    to_canonical_derivative_order,
)
from heatker.scalars import Field

from jetbg import Backg, evaluate_expr, exprs_equal_on_background

FLD = Field()
FULL = Background(torsion=True, gauge=True)


def one_term(factors, value=1):
    return TensorExpr.from_terms(FLD, [(coeff_rat(FLD, value), factors)])


class TestCommutePair:
    def test_biscalar_phase(self):
        # D_mu D_nu l = D_nu D_mu l + T^a_{mu nu} D_a l
        e = commute_pair(
            FLD, coeff_one(FLD), (factor(L, (lo("mu"), lo("nu")), ()),), 0, 0, FULL
        )
        expected = one_term([factor(L, (lo("nu"), lo("mu")), ())]) + one_term(
            [
                factor(T, (), (up("al"), lo("mu"), lo("nu"))),
                factor(L, (lo("al"),), ()),
            ]
        )
        assert e.equals(expected)

    def test_flat_background_plain_swap(self):
        flags = Background(torsion=False, gauge=False)
        e = commute_pair(
            FLD, coeff_one(FLD), (factor(L, (lo("mu"), lo("nu")), ()),), 0, 0, flags
        )
        assert e.equals(one_term([factor(L, (lo("nu"), lo("mu")), ())]))

    def test_transport_gets_gauge_term(self):
        # D_mu D_nu In = D_nu D_mu In + T^a_{mu nu} D_a In + W_{mu nu} In
        e = commute_pair(
            FLD, coeff_one(FLD), (factor(I, (lo("mu"), lo("nu")), ()),), 0, 0, FULL
        )
        expected = (
            one_term([factor(I, (lo("nu"), lo("mu")), ())])
            + one_term(
                [
                    factor(T, (), (up("al"), lo("mu"), lo("nu"))),
                    factor(I, (lo("al"),), ()),
                ]
            )
            + one_term(
                [factor(W, (), (lo("mu"), lo("nu"))), factor(I, (), ())]
            )
        )
        assert e.equals(expected)

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            commute_pair(FLD, coeff_one(FLD), (factor(L, (lo("mu"),), ()),), 0, 0, FULL)

    def test_round_trip(self):
        t = (
            factor(T, (lo("mu"), lo("nu"), lo("rho")), (up("f1"), lo("f2"), lo("f3"))),
        )
        once = commute_pair(FLD, coeff_one(FLD), t, 0, 0, FULL)
        back = TensorExpr(FLD)
        for key, c in once.terms.items():
            fpos = next(
                i
                for i, f in enumerate(key)
                if f[0] == T and len(f[1]) >= 2 and f[1][0][0] == "nu"
            ) if any(f[0] == T and len(f[1]) >= 2 and f[1][0][0] == "nu" for f in key) else None
            if fpos is None:
                back = back + TensorExpr.from_terms(FLD, [(c, key)])
            else:
                back = back + commute_pair(FLD, c, key, fpos, 0, FULL)
        assert back.equals(one_term(list(t)))


class TestNumericSoundness:
    """commute_pair output equals its input on explicit n=3 backgrounds."""

    BG = None

    @classmethod
    def setup_class(cls):
        cls.BG = Backg(seed=7, order=4)

    def _roundtrip(self, factors, fpos, dpos, assign):
        e0 = one_term(list(factors))
        if e0.is_zero():
            return
        e1 = commute_pair(FLD, coeff_one(FLD), tuple(factors), fpos, dpos, FULL)
        v0 = evaluate_expr(e0, self.BG, assign)
        v1 = evaluate_expr(e1, self.BG, assign)
        assert v0 == v1

    def test_second_derivative_of_torsion(self):
        self._roundtrip(
            (factor(T, (lo("m"), lo("n")), (up("p"), lo("q"), lo("r"))),),
            0,
            0,
            {"m": 0, "n": 1, "p": 2, "q": 0, "r": 1},
        )

    def test_endomorphism_commutator_action(self):
        # the gauge term on X must act as a commutator, not left action
        self._roundtrip(
            (factor(X, (lo("m"), lo("n")), (up("p"), up("q"))),),
            0,
            0,
            {"m": 0, "n": 2, "p": 1, "q": 1},
        )

    def test_inner_derivative_correction(self):
        self._roundtrip(
            (factor(W, (lo("m"), lo("n"), lo("r")), (lo("p"), lo("q"))),),
            0,
            0,
            {"m": 1, "n": 0, "r": 2, "p": 0, "q": 2},
        )

    def test_deep_pair_with_outer_prefix(self):
        self._roundtrip(
            (factor(T, (lo("m"), lo("n"), lo("r")), (up("p"), lo("q"), lo("s"))),),
            0,
            1,
            {"m": 2, "n": 1, "r": 0, "p": 0, "q": 1, "s": 2},
        )

    def test_raised_derivative_index(self):
        self._roundtrip(
            (factor(T, (lo("m"), lo("n"), up("r")), (up("p"), lo("q"), lo("s"))),),
            0,
            0,
            {"m": 2, "n": 1, "r": 0, "p": 0, "q": 1, "s": 2},
        )

    @given(st.integers(0, 500))
    @settings(max_examples=50, deadline=None)
    def test_randomized_applications(self, seed):
        rng = random.Random(seed)
        kind, nslots = rng.choice([(T, 3), (R, 4), (W, 2), (X, 2)])
        nd = 2 if kind == R else rng.randint(2, 3)
        labels = [f"i{j}" for j in range(nd + nslots)]
        if kind == T:
            pattern = [True, False, False]
        elif kind == R:
            pattern = [True, False, False, False]
        elif kind == X:
            pattern = [True, True]
        else:
            pattern = [False, False]
        derivs = tuple((labels[j], rng.random() < 0.25) for j in range(nd))
        slots = tuple((labels[nd + j], pattern[j]) for j in range(nslots))
        dpos = rng.randint(0, nd - 2)
        assign = {l: rng.randrange(3) for l in labels}
        self._roundtrip((factor(kind, derivs, slots),), 0, dpos, assign)

    def test_to_canonical_order_numeric(self):
        # third-order derivative fully reordered, checked on the background
        f = (factor(L, (lo("m3"), lo("m2"), lo("m1")), ()),)
        # the phase function cannot be evaluated; use torsion instead
        f = (factor(T, (lo("m3"), lo("m2"), lo("m1")), (up("p"), lo("q"), lo("r"))),)
        e0 = one_term(list(f))
        e1 = to_canonical_derivative_order(e0, FULL)
        for key in e1.terms:
            for fac in key:
                frees = [l for l, _ in fac[1] if l.startswith("m")]
                assert frees == sorted(frees)
        assign = {"m1": 0, "m2": 1, "m3": 2, "p": 1, "q": 2, "r": 0}
        assert evaluate_expr(e0, self.BG, assign) == evaluate_expr(e1, self.BG, assign)


class TestIdentityPasses:
    def _cyclic_lhs(self):
        slots = (up("a"), lo("b"), lo("c"), lo("d"))
        lead = one_term([factor(R, (), slots)])
        rest = TensorExpr.from_terms(
            FLD,
            [
                (coeff_rat(FLD, -s), fs)
                for s, fs in cyclic_remainder(slots, torsion=True)
            ],
        )
        return lead + rest

    def test_cyclic_identity_lhs_vanishes_numerically(self):
        bg = Backg(seed=11, order=3)
        lhs = self._cyclic_lhs()
        zero = TensorExpr(FLD)
        assert exprs_equal_on_background(lhs, zero, bg, nsamples=3)

    def test_apply_cyclic_kills_lhs(self):
        assert apply_cyclic(self._cyclic_lhs(), FULL).is_zero()

    def _bianchi_R_lhs(self):
        alpha = lo("e0")
        slots = (up("a"), lo("b"), lo("c"), lo("d"))
        lead = one_term([factor(R, (alpha,), slots)])
        rest = TensorExpr.from_terms(
            FLD,
            [
                (coeff_rat(FLD, -s), fs)
                for s, fs in bianchi_R_remainder(alpha, slots, torsion=True)
            ],
        )
        return lead + rest

    def test_affine_bianchi_lhs_vanishes_numerically(self):
        bg = Backg(seed=13, order=4)
        assert exprs_equal_on_background(self._bianchi_R_lhs(), TensorExpr(FLD), bg, 2)

    def test_apply_bianchi_kills_lhs(self):
        assert apply_bianchi(self._bianchi_R_lhs(), FULL).is_zero()

    def _bianchi_W_lhs(self):
        alpha = lo("e0")
        slots = (lo("b"), lo("c"))
        lead = one_term([factor(W, (alpha,), slots)])
        rest = TensorExpr.from_terms(
            FLD,
            [
                (coeff_rat(FLD, -s), fs)
                for s, fs in bianchi_W_remainder(alpha, slots, torsion=True)
            ],
        )
        return lead + rest

    def test_gauge_bianchi_lhs_vanishes_numerically(self):
        bg = Backg(seed=17, order=4)
        assert exprs_equal_on_background(self._bianchi_W_lhs(), TensorExpr(FLD), bg, 2)

    def test_apply_bianchi_kills_gauge_lhs(self):
        assert apply_bianchi(self._bianchi_W_lhs(), FULL).is_zero()

    def test_no_match_unchanged(self):
        e = one_term([factor(T, (), (up("a"), lo("b"), lo("c")))])
        assert apply_cyclic(e, FULL).equals(e)
        assert apply_bianchi(e, FULL).equals(e)


class TestCanonicalizePreservesValue:
    def test_canonical_form_equals_raw_on_background(self):
        bg = Backg(seed=23, order=3)
        raw = [
            factor(R, (), (up("a"), lo("b"), lo("m"), lo("n"))),
            factor(T, (), (up("b"), lo("p"), lo("a"))),
        ]
        e = one_term(raw)
        assign = {"m": 0, "n": 2, "p": 1}
        direct = evaluate_expr(e, bg, assign)
        # evaluating again after a second canonicalization must agree
        from heatker.expr import canonicalize

        assert evaluate_expr(canonicalize(e), bg, assign) == direct
