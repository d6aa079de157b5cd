"""Abstract-index tensor expressions and canonical forms.

A Term is a scalar coefficient times an ordered product of indexed
factors.  Factors carry a kind (metric, wave vector, torsion, curvature,
gauge curvature, endomorphism, phase function, transport function), an
ordered tuple of covariant-derivative indices (outermost first) and an
ordered tuple of slot indices.  Indices are (label, is_upper) pairs; a
label occurring twice in a term (once up, once down) is a dummy pair.

Canonical form: factors sorted by a total kind order, with bundle-valued
factors (gauge curvature, endomorphism, transport) kept as a trailing
block in their original relative order because they are matrix-valued and
do not commute among themselves; mono-term symmetries are applied with
sign tracking by minimizing over the per-factor symmetry orbits; dummy
labels are renamed positionally with the first occurrence of each pair
normalized to the upper position.  Canonicalization is idempotent and
detects terms that vanish by antisymmetry.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

from .errors import ArityMismatch, InternalInvariant, MalformedIndexing, UnknownIndex
from .scalars import (
    FE,
    Field,
    Mom,
    mom_add,
    mom_is_one,
    mom_mul,
    mom_one,
    mom_scale,
)

# ---------------------------------------------------------------------------
# kinds
# ---------------------------------------------------------------------------

G, K, T, R, W, X, L, I = range(8)

KIND_NAMES = {G: "g", K: "k", T: "T", R: "R", W: "W", X: "X", L: "l", I: "In"}
NAME_KINDS = {v: k for k, v in KIND_NAMES.items()}

# bundle-valued kinds: 'vec' objects are acted on by W from the left,
# 'endo' objects by the commutator.
BUNDLE = {W: "endo", X: "endo", I: "vec"}

TWO_POINT = (L, I)


def active_slot_positions(kind: int, nslots: int):
    """Slot positions that live at the base point x.

    The rank-2 transport function carries one slot at x and one inert slot
    at x'; covariant derivatives at x see only the first.
    """
    if kind == I and nslots == 2:
        return (0,)
    return tuple(range(nslots))

_SLOT_COUNTS = {G: (2,), K: (1,), T: (3,), R: (4,), W: (2,), X: (0, 2), L: (0,), I: (0, 2)}

# sort rank for the non-bundle block of the canonical factor order
_SORT_RANK = {G: 0, K: 1, T: 2, R: 3, L: 4, W: 5, X: 6, I: 7}


def _close_group(nslots: int, gens) -> tuple:
    group = {tuple(range(nslots)): 1}
    frontier = list(group)
    while frontier:
        new = []
        for perm in frontier:
            for gperm, gsign in gens:
                comp = tuple(perm[gperm[i]] for i in range(nslots))
                sign = group[perm] * gsign
                if comp not in group:
                    group[comp] = sign
                    new.append(comp)
                elif group[comp] != sign:
                    # permutation reachable with both signs: orbit collapses to 0
                    # (cannot happen for the groups used here)
                    raise InternalInvariant("inconsistent symmetry group")
        frontier = new
    return tuple(sorted(group.items()))


_GENS = {
    (G, 2): [((1, 0), 1)],
    (T, 3): [((0, 2, 1), -1)],
    # metric-compatible curvature: antisymmetric in the first pair (lowered)
    # and in the last pair
    (R, 4): [((1, 0, 2, 3), -1), ((0, 1, 3, 2), -1)],
    (W, 2): [((1, 0), -1)],
}

_GROUPS = {key: _close_group(key[1], gens) for key, gens in _GENS.items()}
_TRIVIAL_GROUP = ((None, 1),)


def slot_group(kind: int, nslots: int) -> tuple:
    return _GROUPS.get((kind, nslots), ((tuple(range(nslots)), 1),))


# ---------------------------------------------------------------------------
# indices and factors
# ---------------------------------------------------------------------------

_fresh_counter = itertools.count()


def fresh_label() -> str:
    return f"!{next(_fresh_counter)}"


def up(label: str) -> tuple:
    return (label, True)


def lo(label: str) -> tuple:
    return (label, False)


def factor(kind: int, derivs=(), slots=()) -> tuple:
    f = (kind, tuple(derivs), tuple(slots))
    nslots = len(f[2])
    if nslots not in _SLOT_COUNTS[kind]:
        raise InternalInvariant(
            f"{KIND_NAMES[kind]} factor with {nslots} slots"
        )
    if kind in (G, K) and f[1]:
        raise InternalInvariant(f"{KIND_NAMES[kind]} factor cannot carry derivatives")
    return f


def factor_indices(f: tuple):
    return f[1] + f[2]


def term_indices(factors) -> list:
    out = []
    for f in factors:
        out.extend(f[1])
        out.extend(f[2])
    return out


def classify_indices(factors):
    """Return (free: dict label->(up,), dummies: set label); validate."""
    seen: dict = {}
    for lbl, isup in term_indices(factors):
        seen.setdefault(lbl, []).append(isup)
    free, dummies = {}, set()
    for lbl, occ in seen.items():
        if len(occ) == 1:
            free[lbl] = occ[0]
        elif len(occ) == 2:
            if occ[0] == occ[1]:
                raise MalformedIndexing(
                    f"index {lbl!r} occurs twice with equal variance"
                )
            dummies.add(lbl)
        else:
            raise MalformedIndexing(f"index {lbl!r} occurs {len(occ)} times")
    return free, dummies


# ---------------------------------------------------------------------------
# scalar coefficient of a term
# ---------------------------------------------------------------------------


class Coeff:
    """i^ipow times a momentum scalar whose numerator carries the field part."""

    __slots__ = ("ipow", "mom")

    def __init__(self, ipow: int, mom: Mom):
        if ipow not in (0, 1):
            raise InternalInvariant("unnormalized i power; use coeff_make")
        self.ipow = ipow
        self.mom = mom

    def is_zero(self) -> bool:
        return self.mom.is_zero()


def coeff_make(fld: Field, ipow: int, mom: Mom) -> Coeff:
    ipow %= 4
    if ipow >= 2:
        ipow -= 2
        mom = mom_scale(fld, mom, fld.rat(-1))
    return Coeff(ipow, mom)


def coeff_one(fld: Field) -> Coeff:
    return Coeff(0, mom_one(fld))


def coeff_rat(fld: Field, value) -> Coeff:
    return Coeff(0, mom_scale(fld, mom_one(fld), fld.rat(value)))


def coeff_fe(fld: Field, fe: FE) -> Coeff:
    return Coeff(0, mom_scale(fld, mom_one(fld), fe))


def coeff_i(fld: Field) -> Coeff:
    return Coeff(1, mom_one(fld))


def coeff_mul(fld: Field, c1: Coeff, c2: Coeff) -> Coeff:
    return coeff_make(fld, c1.ipow + c2.ipow, mom_mul(fld, c1.mom, c2.mom))


def coeff_scale(fld: Field, c: Coeff, value) -> Coeff:
    fe = value if isinstance(value, FE) else fld.rat(value)
    return Coeff(c.ipow, mom_scale(fld, c.mom, fe))


def coeff_neg(fld: Field, c: Coeff) -> Coeff:
    return coeff_scale(fld, c, -1)


def coeff_add(fld: Field, c1: Coeff, c2: Coeff) -> Coeff:
    if c1.is_zero():
        return c2
    if c2.is_zero():
        return c1
    if c1.ipow != c2.ipow:
        raise InternalInvariant("merging terms of different i-parity")
    return Coeff(c1.ipow, mom_add(fld, c1.mom, c2.mom))


def coeff_equal(fld: Field, c1: Coeff, c2: Coeff) -> bool:
    if c1.is_zero() and c2.is_zero():
        return True
    if c1.ipow != c2.ipow:
        return False
    return coeff_add(fld, c1, coeff_neg(fld, c2)).is_zero()


def coeff_pure_fe(fld: Field, c: Coeff) -> FE:
    """The field part of a coefficient without momentum atoms."""
    if c.is_zero():
        return fld.zero()
    if c.mom.l or c.mom.m or set(c.mom.num) != {(0, 0)}:
        raise InternalInvariant("coefficient carries momentum atoms")
    if c.ipow:
        raise InternalInvariant("coefficient carries a factor of i")
    return c.mom.num[(0, 0)]


# ---------------------------------------------------------------------------
# term canonicalization
# ---------------------------------------------------------------------------

_CANON_CACHE: dict = {}
_CANON_CACHE_MAX = 400_000
_COMBO_LIMIT = 200_000


def _canonicalize_factors(factors: tuple):
    """Canonical form of a factor product.

    Returns (canonical_factors | None, sign); None means the term vanishes
    identically by antisymmetry.
    """
    cached = _CANON_CACHE.get(factors)
    if cached is not None:
        return cached

    free, dummies = classify_indices(factors)

    # self-paired dummies (both ends in one factor): a structural,
    # relabel-invariant tag used to refine sort keys
    self_paired = {
        lbl
        for lbl in dummies
        if any(
            sum(1 for l2, _ in factor_indices(f) if l2 == lbl) == 2 for f in factors
        )
    }

    def index_key(idx):
        lbl, isup = idx
        if lbl in dummies:
            return (0, lbl in self_paired)
        return (1, lbl, isup)

    nonbundle, bundle = [], []
    for f in factors:
        (bundle if f[0] in BUNDLE else nonbundle).append(f)

    # per-factor symmetry images (on slots only)
    def images(f):
        kind, derivs, slots = f
        group = slot_group(kind, len(slots))
        out = {}
        for perm, sign in group:
            ns = tuple(slots[p] for p in perm) if perm is not None else slots
            if ns not in out:
                out[ns] = sign
            elif out[ns] != sign:
                # the same slot arrangement with both signs: the factor is 0
                return None
        return [( (kind, derivs, ns), s) for ns, s in out.items()]

    img_lists = []
    total = 1
    for f in nonbundle + bundle:
        im = images(f)
        if im is None:
            result = (None, 1)
            _cache_store(factors, result)
            return result
        img_lists.append(im)
        total *= len(im)
    if total > _COMBO_LIMIT:
        raise InternalInvariant(f"canonicalization orbit too large ({total})")

    nb_count = len(nonbundle)
    best = None
    best_signs = set()

    for combo in itertools.product(*img_lists):
        sign = 1
        for _, s in combo:
            sign *= s
        nb = [f for f, _ in combo[:nb_count]]
        bd = [f for f, _ in combo[nb_count:]]

        def sort_key(f):
            kind, derivs, slots = f
            return (
                _SORT_RANK[kind],
                len(derivs),
                len(slots),
                tuple(index_key(i) for i in derivs),
                tuple(index_key(i) for i in slots),
            )

        nb_sorted = sorted(nb, key=sort_key)
        # group positions with equal keys for permutation enumeration
        groups = []
        i = 0
        while i < len(nb_sorted):
            j = i
            while j < len(nb_sorted) and sort_key(nb_sorted[j]) == sort_key(nb_sorted[i]):
                j += 1
            groups.append(list(range(i, j)))
            i = j
        perm_iters = [
            itertools.permutations(g) if len(g) > 1 else [tuple(g)] for g in groups
        ]
        for arrangement in itertools.product(*perm_iters):
            order = [p for g in arrangement for p in g]
            seq = [nb_sorted[p] for p in order] + bd
            serial, rebuilt = _serialize(seq, dummies)
            cand = (serial, tuple(rebuilt))
            if best is None or cand[0] < best[0]:
                best = cand
                best_signs = {sign}
            elif cand[0] == best[0]:
                best_signs.add(sign)

    if len(best_signs) == 2:
        result = (None, 1)
    else:
        result = (best[1], best_signs.pop())
    _cache_store(factors, result)
    return result


def _cache_store(key, value):
    if len(_CANON_CACHE) >= _CANON_CACHE_MAX:
        _CANON_CACHE.clear()
    _CANON_CACHE[key] = value


def _serialize(seq, dummies):
    """Serialize a factor sequence, renaming dummies positionally.

    The first occurrence of each dummy pair is normalized to the upper
    position (a variance flip across a dummy pair is an identity).
    Returns (hashable serial, rebuilt factor tuple).
    """
    ids: dict = {}
    serial = []
    rebuilt = []
    for kind, derivs, slots in seq:
        sd, rd = _serialize_indices(derivs, dummies, ids)
        ss, rs = _serialize_indices(slots, dummies, ids)
        serial.append((kind, sd, ss))
        rebuilt.append((kind, rd, rs))
    return tuple(serial), rebuilt


def _serialize_indices(indices, dummies, ids):
    ser = []
    rebuilt = []
    for lbl, isup in indices:
        if lbl in dummies:
            if lbl not in ids:
                ids[lbl] = len(ids)
                ser.append((0, ids[lbl]))
                rebuilt.append((f"~{ids[lbl]}", True))
            else:
                ser.append((0, ids[lbl]))
                rebuilt.append((f"~{ids[lbl]}", False))
        else:
            ser.append((1, lbl, isup))
            rebuilt.append((lbl, isup))
    return tuple(ser), tuple(rebuilt)


# ---------------------------------------------------------------------------
# tensor expressions
# ---------------------------------------------------------------------------


class TensorExpr:
    """A sum of canonical terms: dict factors-tuple -> Coeff."""

    __slots__ = ("fld", "terms")

    def __init__(self, fld: Field):
        self.fld = fld
        self.terms: dict = {}

    # -- construction --------------------------------------------------------

    def _accum(self, coeff: Coeff, factors):
        """Canonicalize one raw term and merge it in (mutating)."""
        if coeff.is_zero():
            return
        canon, sign = _canonicalize_factors(tuple(factors))
        if canon is None:
            return
        if sign < 0:
            coeff = coeff_neg(self.fld, coeff)
        key = tuple(canon)
        if key in self.terms:
            merged = coeff_add(self.fld, self.terms[key], coeff)
            if merged.is_zero():
                del self.terms[key]
            else:
                self.terms[key] = merged
        else:
            self.terms[key] = coeff

    @staticmethod
    def from_terms(fld: Field, items) -> "TensorExpr":
        e = TensorExpr(fld)
        for coeff, factors in items:
            e._accum(coeff, factors)
        return e

    @staticmethod
    def zero(fld: Field) -> "TensorExpr":
        return TensorExpr(fld)

    @staticmethod
    def scalar(fld: Field, coeff: Coeff) -> "TensorExpr":
        return TensorExpr.from_terms(fld, [(coeff, ())])

    # -- queries --------------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def n_terms(self) -> int:
        return len(self.terms)

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: _term_sort_key(kv[0]))

    def free_signature(self):
        """The sorted free-index multiset, or None for the empty expression.

        Raises MalformedIndexing if terms disagree (rank inhomogeneity).
        """
        sig = None
        for key in self.terms:
            free, _ = classify_indices(key)
            s = tuple(sorted((lbl, isup) for lbl, isup in free.items()))
            if sig is None:
                sig = s
            elif sig != s:
                raise MalformedIndexing(f"rank-inhomogeneous expression: {sig} vs {s}")
        return sig

    # -- algebra ---------------------------------------------------------------

    def __add__(self, other: "TensorExpr") -> "TensorExpr":
        e = TensorExpr(self.fld)
        e.terms = dict(self.terms)
        for key, c in other.terms.items():
            if key in e.terms:
                merged = coeff_add(self.fld, e.terms[key], c)
                if merged.is_zero():
                    del e.terms[key]
                else:
                    e.terms[key] = merged
            else:
                e.terms[key] = c
        return e

    def __sub__(self, other: "TensorExpr") -> "TensorExpr":
        return self + other.scaled(-1)

    def scaled(self, value) -> "TensorExpr":
        e = TensorExpr(self.fld)
        for key, c in self.terms.items():
            sc = coeff_scale(self.fld, c, value)
            if not sc.is_zero():
                e.terms[key] = sc
        return e

    def mul_coeff(self, coeff: Coeff) -> "TensorExpr":
        e = TensorExpr(self.fld)
        for key, c in self.terms.items():
            pc = coeff_mul(self.fld, c, coeff)
            if not pc.is_zero():
                e.terms[key] = pc
        return e

    def __mul__(self, other: "TensorExpr") -> "TensorExpr":
        """Tensor product (factor order: self's factors first)."""
        e = TensorExpr(self.fld)
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                k2r = _rename_dummies_fresh(k2)
                e._accum(coeff_mul(self.fld, c1, c2), k1 + k2r)
        return e

    def equals(self, other: "TensorExpr") -> bool:
        return (self - other).is_zero()

    def __repr__(self):
        if not self.terms:
            return "0"
        bits = []
        for key, c in self.sorted_terms():
            fs = " ".join(format_factor(f) for f in key) or "1"
            mark = "i*" if c.ipow else ""
            bits.append(f"({mark}{c.mom!r}) {fs}")
        return "  +  ".join(bits)


def _term_sort_key(key):
    return key


def _rename_dummies_fresh(key):
    _, dummies = classify_indices(key)
    if not dummies:
        return key
    mapping = {lbl: fresh_label() for lbl in dummies}
    return tuple(
        (
            kind,
            tuple((mapping.get(l, l), u) for l, u in derivs),
            tuple((mapping.get(l, l), u) for l, u in slots),
        )
        for kind, derivs, slots in key
    )


def relabel_free(e: TensorExpr, mapping: dict) -> TensorExpr:
    """Rename free index labels; values may be (label) or (label, flip_variance)."""
    out = TensorExpr(e.fld)
    for key, c in e.terms.items():
        free, _ = classify_indices(key)
        new_factors = []
        for kind, derivs, slots in key:
            def fix(idx):
                lbl, isup = idx
                if lbl in free and lbl in mapping:
                    tgt = mapping[lbl]
                    if isinstance(tgt, tuple):
                        return (tgt[0], isup if not tgt[1] else not isup)
                    return (tgt, isup)
                return idx

            new_factors.append(
                (kind, tuple(fix(i) for i in derivs), tuple(fix(i) for i in slots))
            )
        out._accum(c, new_factors)
    return out


def format_factor(f) -> str:
    kind, derivs, slots = f
    name = KIND_NAMES[kind]
    ds = "".join(("D^" if u else "D_") + l + " " for l, u in derivs)
    ss = "".join(("^" if u else "_") + l for l, u in slots)
    return f"{ds}{name}{ss}" if (ds or ss) else name


# ---------------------------------------------------------------------------
# the four public operations
# ---------------------------------------------------------------------------


def canonicalize(e: TensorExpr) -> TensorExpr:
    """Re-canonicalize (idempotent; exposed for the module contract)."""
    out = TensorExpr(e.fld)
    for key, c in e.terms.items():
        out._accum(c, key)
    return out


def contract_metric(e: TensorExpr) -> TensorExpr:
    """Eliminate metric/Kronecker factors against dummy indices.

    After this pass every surviving metric factor touches only free
    indices; full traces delta^a_a contribute the dimension scalar n.
    """
    fld = e.fld
    out = TensorExpr(fld)
    for key, c in e.terms.items():
        factors = list(key)
        coeff = c
        changed = True
        while changed:
            changed = False
            _, dummies = classify_indices(factors)
            for i, f in enumerate(factors):
                if f[0] != G:
                    continue
                (l1, u1), (l2, u2) = f[2]
                if l1 == l2:
                    # g^a_a (mixed variance by validation) -> n
                    coeff = coeff_scale(fld, coeff, fld.sym_n())
                    del factors[i]
                    changed = True
                    break
                hit = None
                for lbl, other in ((l1, (l2, u2)), (l2, (l1, u1))):
                    if lbl not in dummies:
                        continue
                    for j, fj in enumerate(factors):
                        if j == i:
                            continue
                        idxs = factor_indices(fj)
                        if any(l == lbl for l, _ in idxs):
                            hit = (lbl, other, j)
                            break
                    if hit:
                        break
                if hit:
                    lbl, other, j = hit
                    kind, derivs, slots = factors[j]
                    derivs = tuple(other if l == lbl else (l, u) for l, u in derivs)
                    slots = tuple(other if l == lbl else (l, u) for l, u in slots)
                    factors[j] = (kind, derivs, slots)
                    del factors[i]
                    changed = True
                    break
        out._accum(coeff, factors)
    return out


def symmetrize(e: TensorExpr, labels) -> TensorExpr:
    """Normalized symmetrization (weight 1/m!) over the given free labels.

    The unnormalized convention would differ by m!; the projector
    normalization makes the operation idempotent (see README).
    """
    labels = list(labels)
    sig = e.free_signature()
    if sig is not None:
        have = {lbl for lbl, _ in sig}
        for lbl in labels:
            if lbl not in have:
                raise UnknownIndex(f"{lbl!r} is not a free index")
    m = len(labels)
    total = TensorExpr(e.fld)
    for perm in itertools.permutations(labels):
        mapping = {old: new for old, new in zip(labels, perm)}
        total = total + relabel_free(e, mapping)
    return total.scaled(Fraction(1, _factorial(m)))


def _factorial(m: int) -> int:
    out = 1
    for i in range(2, m + 1):
        out *= i
    return out


def substitute(e: TensorExpr, pattern, replacement: TensorExpr) -> TensorExpr:
    """Replace every factor matching the pattern by the replacement.

    The pattern is a single factor whose indices are distinct labels; the
    replacement's free indices must be exactly those labels.  Matching is
    by (kind, derivative count, slot count); pattern indices bind to the
    actual factor's indices positionally, flipping variance as needed.
    """
    pkind, pderivs, pslots = pattern
    plabels = [l for l, _ in pderivs + pslots]
    if len(set(plabels)) != len(plabels):
        raise ArityMismatch("pattern indices must be distinct")
    rsig = replacement.free_signature()
    rlabels = {lbl for lbl, _ in (rsig or ())}
    if not replacement.is_zero() and rlabels != set(plabels):
        raise ArityMismatch(
            f"replacement free indices {sorted(rlabels)} != pattern {sorted(plabels)}"
        )
    fld = e.fld
    out = TensorExpr(fld)
    pidx = pderivs + pslots
    for key, c in e.terms.items():
        _subst_into(
            out, fld, list(key), c, 0, pkind, len(pderivs), len(pslots), pidx, replacement
        )
    return out


def _subst_into(out, fld, factors, coeff, start, pkind, npd, nps, pidx, replacement):
    # scanning resumes after each inserted replacement, so only the original
    # occurrences are rewritten even if the replacement reuses the pattern kind
    for i in range(start, len(factors)):
        f = factors[i]
        if f[0] == pkind and len(f[1]) == npd and len(f[2]) == nps:
            mapping = {}
            for (plbl, pup), (albl, aup) in zip(pidx, f[1] + f[2]):
                mapping[plbl] = (albl, pup != aup)
            inst = relabel_free(replacement, mapping)
            for rkey, rc in inst.terms.items():
                rkey = _rename_dummies_fresh(rkey)
                merged = coeff_mul(fld, coeff, rc)
                # keep the replacement at the matched factor's position so
                # bundle-chain order is preserved
                new_factors = factors[:i] + list(rkey) + factors[i + 1 :]
                _subst_into(
                    out,
                    fld,
                    new_factors,
                    merged,
                    i + len(rkey),
                    pkind,
                    npd,
                    nps,
                    pidx,
                    replacement,
                )
            return
    out._accum(coeff, factors)


def fold_k2(e: TensorExpr) -> TensorExpr:
    """Fold contracted wave-vector pairs k_a k^a into the scalar K = k^2."""
    fld = e.fld
    out = TensorExpr(fld)
    k_mono = Mom({(1, 0): fld.one()})
    for key, c in e.terms.items():
        factors = list(key)
        coeff = c
        changed = True
        while changed:
            changed = False
            kpos = [
                (i, f[2][0]) for i, f in enumerate(factors) if f[0] == K
            ]
            by_label: dict = {}
            for i, (lbl, isup) in kpos:
                by_label.setdefault(lbl, []).append(i)
            for lbl, positions in by_label.items():
                if len(positions) == 2:
                    for i in sorted(positions, reverse=True):
                        del factors[i]
                    coeff = Coeff(coeff.ipow, mom_mul(fld, coeff.mom, k_mono))
                    changed = True
                    break
        out._accum(coeff, factors)
    return out
