"""Identity engine: derivative reordering and curvature identities.

Covariant derivatives on a manifold with torsion do not commute; swapping
an adjacent pair D_mu D_nu on a factor produces commutator corrections:
one curvature term per slot index and per inner derivative index of the
factor (sign by variance), a torsion transport term T^a_{mu nu} D_a, and
a gauge-curvature term for bundle-valued factors (left action on
transport-type factors, commutator action on endomorphism-valued ones).
Derivative prefixes outside the swapped pair distribute over the
correction products by the ordered Leibniz rule.

The affine and gauge Bianchi identities and the cyclic identity are
implemented as optional simplification passes that rewrite a lead pattern
into the remaining terms of the identity when that shrinks the sum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import OutOfRange
from .expr import (
    BUNDLE,
    Coeff,
    R,
    T,
    TensorExpr,
    W,
    active_slot_positions,
    classify_indices,
    coeff_scale,
    factor,
    fresh_label,
)


@dataclass(frozen=True)
class Background:
    """Which background structures are switched on.

    curvature=False (a flat affine connection) exists for validation runs
    only; the CLI always works on curved manifolds.
    """

    torsion: bool = True
    gauge: bool = True
    curvature: bool = True


def _with_derivs(f, prefix):
    kind, derivs, slots = f
    return (kind, tuple(prefix) + derivs, slots)


def ordered_splits(prefix, nparts):
    """All distributions of an ordered derivative prefix over nparts factors."""
    if not prefix:
        yield [()] * nparts
        return
    for assignment in itertools.product(range(nparts), repeat=len(prefix)):
        parts = [[] for _ in range(nparts)]
        for idx, target in zip(prefix, assignment):
            parts[target].append(idx)
        yield [tuple(p) for p in parts]


def _commute_corrections(f, dpos, flags: Background):
    """Correction products for swapping derivs (dpos, dpos+1) of factor f.

    Returns (swapped_factor, [(sign, [factors...])]) with the outer
    derivative prefix already distributed by the ordered Leibniz rule.
    """
    kind, derivs, slots = f
    if dpos + 2 > len(derivs):
        raise OutOfRange(
            f"factor has {len(derivs)} derivative indices, cannot swap at {dpos}"
        )
    outer = derivs[:dpos]
    i1, i2 = derivs[dpos], derivs[dpos + 1]
    inner = derivs[dpos + 2 :]
    swapped = (kind, outer + (i2, i1) + inner, slots)

    bare = []  # (sign, [factors]) before the outer prefix

    # curvature corrections: one per inner derivative index and per active slot
    positions = [("d", i) for i in range(len(inner))] + [
        ("s", i) for i in active_slot_positions(kind, len(slots))
    ]
    if not flags.curvature:
        positions = []
    for where, i in positions:
        lbl, isup = inner[i] if where == "d" else slots[i]
        dummy = fresh_label()
        if isup:
            rf = factor(R, (), ((lbl, True), (dummy, False), i1, i2))
            newidx = (dummy, True)
            sign = 1
        else:
            rf = factor(R, (), ((dummy, True), (lbl, False), i1, i2))
            newidx = (dummy, False)
            sign = -1
        if where == "d":
            phi = (kind, inner[:i] + (newidx,) + inner[i + 1 :], slots)
        else:
            phi = (kind, inner, slots[:i] + (newidx,) + slots[i + 1 :])
        bare.append((sign, [rf, phi]))

    if flags.torsion:
        dummy = fresh_label()
        tf = factor(T, (), ((dummy, True), i1, i2))
        phi = (kind, ((dummy, False),) + inner, slots)
        bare.append((1, [tf, phi]))

    bundle = BUNDLE.get(kind)
    if flags.gauge and bundle is not None:
        wf = factor(W, (), (i1, i2))
        phi = (kind, inner, slots)
        bare.append((1, [wf, phi]))
        if bundle == "endo":
            bare.append((-1, [phi, wf]))

    products = []
    for sign, prod in bare:
        for split in ordered_splits(outer, len(prod)):
            products.append((sign, [_with_derivs(g, s) for g, s in zip(prod, split)]))
    return swapped, products


def commute_pair(
    fld, coeff: Coeff, factors: tuple, factor_pos: int, deriv_pos: int, flags: Background
) -> TensorExpr:
    """Swap two adjacent covariant derivatives on one factor of a term.

    Returns the term with the pair at (deriv_pos, deriv_pos+1) swapped plus
    all commutator corrections; equal to the input as a tensor.
    """
    if factor_pos >= len(factors):
        raise OutOfRange(f"no factor at position {factor_pos}")
    swapped, products = _commute_corrections(factors[factor_pos], deriv_pos, flags)
    items = [(coeff, factors[:factor_pos] + (swapped,) + factors[factor_pos + 1 :])]
    for sign, prod in products:
        c = coeff if sign > 0 else coeff_scale(fld, coeff, -1)
        items.append((c, factors[:factor_pos] + tuple(prod) + factors[factor_pos + 1 :]))
    return TensorExpr.from_terms(fld, items)


def commute_pair_expr(
    e: TensorExpr, factor_pos: int, deriv_pos: int, flags: Background
) -> TensorExpr:
    """commute_pair applied to every term of a (typically one-term) expression."""
    out = TensorExpr(e.fld)
    for key, c in e.terms.items():
        out = out + commute_pair(e.fld, c, key, factor_pos, deriv_pos, flags)
    return out


def to_canonical_derivative_order(
    e: TensorExpr, flags: Background, label_order: dict | None = None
) -> TensorExpr:
    """Sort every factor's derivative indices into canonical label order.

    Only pairs of free derivative indices are compared (dummy derivative
    indices, which arise inside commutator corrections and are consumed by
    positional table lookups, stay where they are).  Repeated adjacent
    swaps terminate: a swap lowers the inversion count at fixed total
    derivative order, and every correction lowers the total order.
    """
    fld = e.fld

    def rank(lbl):
        if label_order is not None:
            return label_order.get(lbl)
        return lbl

    out = TensorExpr(fld)
    work = list(e.terms.items())
    while work:
        key, c = work.pop()
        free, _ = classify_indices(key)
        spot = None
        for fpos, f in enumerate(key):
            derivs = f[1]
            for dpos in range(len(derivs) - 1):
                l1, l2 = derivs[dpos][0], derivs[dpos + 1][0]
                if l1 in free and l2 in free:
                    r1, r2 = rank(l1), rank(l2)
                    if r1 is not None and r2 is not None and r1 > r2:
                        spot = (fpos, dpos)
                        break
            if spot:
                break
        if spot is None:
            out._accum(c, key)
        else:
            rewritten = commute_pair(fld, c, key, spot[0], spot[1], flags)
            work.extend(rewritten.terms.items())
    return out


# ---------------------------------------------------------------------------
# Bianchi and cyclic identity passes
# ---------------------------------------------------------------------------


def _leibniz_products(fld, coeff, prefix, signed_products):
    """Distribute a derivative prefix over signed multi-factor products."""
    items = []
    for sign, prod in signed_products:
        c = coeff if sign > 0 else coeff_scale(fld, coeff, -1)
        for split in ordered_splits(prefix, len(prod)):
            items.append((c, [_with_derivs(g, s) for g, s in zip(prod, split)]))
    return items


def cyclic_remainder(slots, torsion: bool):
    """-(rest of the cyclic identity) for the lead term R^a_{bcd}.

    R^a_{bcd} = -[R^a_{cdb} + R^a_{dbc} + D_b T^a_{cd} + D_c T^a_{db}
                  + D_d T^a_{bc} + T^a_{bl} T^l_{cd} + T^a_{cl} T^l_{db}
                  + T^a_{dl} T^l_{bc}]
    """
    a, b, c, d = slots
    prods = [
        (-1, [factor(R, (), (a, c, d, b))]),
        (-1, [factor(R, (), (a, d, b, c))]),
    ]
    if torsion:
        for x, y, z in ((b, c, d), (c, d, b), (d, b, c)):
            prods.append((-1, [factor(T, (x,), (a, y, z))]))
        for x, y, z in ((b, c, d), (c, d, b), (d, b, c)):
            lam = fresh_label()
            prods.append(
                (
                    -1,
                    [
                        factor(T, (), (a, x, (lam, False))),
                        factor(T, (), ((lam, True), y, z)),
                    ],
                )
            )
    return prods


def bianchi_R_remainder(alpha, slots, torsion: bool):
    """-(rest of the affine Bianchi identity) for the lead D_alpha R^b_{cde}.

    D_a R^b_{cde} = -[D_d R^b_{cea} + D_e R^b_{cad} + T^l_{ad} R^b_{cel}
                      + T^l_{de} R^b_{cal} + T^l_{ea} R^b_{cdl}]
    """
    b, c, d, e = slots
    prods = [
        (-1, [factor(R, (d,), (b, c, e, alpha))]),
        (-1, [factor(R, (e,), (b, c, alpha, d))]),
    ]
    if torsion:
        for x, y, z in ((alpha, d, e), (d, e, alpha), (e, alpha, d)):
            lam = fresh_label()
            prods.append(
                (
                    -1,
                    [
                        factor(T, (), ((lam, True), x, y)),
                        factor(R, (), (b, c, z, (lam, False))),
                    ],
                )
            )
    return prods


def bianchi_W_remainder(alpha, slots, torsion: bool):
    """-(rest of the gauge Bianchi identity) for the lead D_alpha W_{bc}.

    D_a W_{bc} = -[D_b W_{ca} + D_c W_{ab} + W_{al} T^l_{bc}
                   + W_{bl} T^l_{ca} + W_{cl} T^l_{ab}]
    """
    b, c = slots
    prods = [
        (-1, [factor(W, (b,), (c, alpha))]),
        (-1, [factor(W, (c,), (alpha, b))]),
    ]
    if torsion:
        for x, y, z in ((alpha, b, c), (b, c, alpha), (c, alpha, b)):
            lam = fresh_label()
            prods.append(
                (
                    -1,
                    [
                        factor(W, (), (x, (lam, False))),
                        factor(T, (), ((lam, True), y, z)),
                    ],
                )
            )
    return prods


def _apply_identity_pass(e: TensorExpr, flags: Background, matcher) -> TensorExpr:
    """Greedy simplification: rewrite a lead pattern when it shrinks the sum."""
    fld = e.fld
    improved = True
    while improved:
        improved = False
        for key, c in e.sorted_terms():
            for fpos, f in enumerate(key):
                repl = matcher(f, flags)
                if repl is None:
                    continue
                prefix, prods = repl
                items = _leibniz_products(fld, c, prefix, prods)
                candidate = TensorExpr(fld)
                candidate.terms = dict(e.terms)
                del candidate.terms[key]
                candidate = candidate + TensorExpr.from_terms(
                    fld,
                    [(cc, key[:fpos] + tuple(fs) + key[fpos + 1 :]) for cc, fs in items],
                )
                if candidate.n_terms() < e.n_terms():
                    e = candidate
                    improved = True
                    break
            if improved:
                break
    return e


def apply_cyclic(e: TensorExpr, flags: Background = Background()) -> TensorExpr:
    """Optional simplification with the cyclic identity (term-count greedy)."""

    def matcher(f, fl):
        kind, derivs, slots = f
        if kind != R:
            return None
        return derivs, cyclic_remainder(slots, fl.torsion)

    return _apply_identity_pass(e, flags, matcher)


def apply_bianchi(e: TensorExpr, flags: Background = Background()) -> TensorExpr:
    """Optional simplification with the affine and gauge Bianchi identities."""

    def matcher(f, fl):
        kind, derivs, slots = f
        if not derivs:
            return None
        alpha = derivs[-1]
        prefix = derivs[:-1]
        if kind == R:
            return prefix, bianchi_R_remainder(alpha, slots, fl.torsion)
        if kind == W:
            return prefix, bianchi_W_remainder(alpha, slots, fl.torsion)
        return None

    return _apply_identity_pass(e, flags, matcher)
