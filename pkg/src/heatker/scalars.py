"""Exact scalar-coefficient arithmetic.

The coefficient field of the pipeline: rational functions in the dimension
symbol n and the nonminimality parameter a, with two transcendental atoms
adjoined,

    A = (1-a)^(-n/2)        (symbolic-dimension mode)
    L = ln(1-a)             (fixed even dimension mode)

Everything is exact: polynomial coefficients are Fractions, denominators
are kept in factored form (powers of a, of (1-a), and of monic n-linear
factors), so no general multivariate gcd is ever needed.  Zero testing is
exact.  The pipeline only ever divides by such known factors, never by a
general element, which keeps the representation closed.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


# ---------------------------------------------------------------------------
# polynomials in (n, a) with Fraction coefficients
# ---------------------------------------------------------------------------

# A polynomial is a dict {(n_exp, a_exp): Fraction} with no zero values.

POLY_ZERO: dict = {}
POLY_ONE = {(0, 0): Fraction(1)}


def poly_const(c) -> dict:
    c = Fraction(c)
    return {(0, 0): c} if c else {}


def poly_var(name: str) -> dict:
    if name == "n":
        return {(1, 0): Fraction(1)}
    if name == "a":
        return {(0, 1): Fraction(1)}
    raise ValueError(f"unknown variable {name!r}")


def poly_add(p: dict, q: dict) -> dict:
    r = dict(p)
    for mono, c in q.items():
        s = r.get(mono, 0) + c
        if s:
            r[mono] = s
        else:
            r.pop(mono, None)
    return r


def poly_neg(p: dict) -> dict:
    return {m: -c for m, c in p.items()}


def poly_sub(p: dict, q: dict) -> dict:
    return poly_add(p, poly_neg(q))


def poly_mul(p: dict, q: dict) -> dict:
    r: dict = {}
    for (i1, j1), c1 in p.items():
        for (i2, j2), c2 in q.items():
            mono = (i1 + i2, j1 + j2)
            s = r.get(mono, 0) + c1 * c2
            if s:
                r[mono] = s
            else:
                r.pop(mono, None)
    return r


def poly_scale(p: dict, c) -> dict:
    c = Fraction(c)
    if not c:
        return {}
    return {m: v * c for m, v in p.items()}


def poly_pow(p: dict, e: int) -> dict:
    out = dict(POLY_ONE)
    for _ in range(e):
        out = poly_mul(out, p)
    return out


def poly_eval(p: dict, nv: Fraction, av: Fraction) -> Fraction:
    tot = Fraction(0)
    for (i, j), c in p.items():
        tot += c * nv**i * av**j
    return tot


def poly_subs_n(p: dict, nv: Fraction) -> dict:
    r: dict = {}
    for (i, j), c in p.items():
        s = r.get((0, j), 0) + c * nv**i
        if s:
            r[(0, j)] = s
        else:
            r.pop((0, j), None)
    return r


def poly_subs_a(p: dict, av: Fraction) -> dict:
    r: dict = {}
    for (i, j), c in p.items():
        s = r.get((i, 0), 0) + c * av**j
        if s:
            r[(i, 0)] = s
        else:
            r.pop((i, 0), None)
    return r


def poly_div_a(p: dict):
    """Exact quotient p / a, or None."""
    if any(j == 0 for (_, j) in p):
        return None
    return {(i, j - 1): c for (i, j), c in p.items()}


def poly_div_oma(p: dict):
    """Exact quotient p / (1 - a), or None.

    Division in the variable a with coefficients in Q[n]; the remainder is
    p at a = 1, so the division is exact iff that vanishes.
    """
    if not p:
        return {}
    by_n: dict = {}
    max_a = 0
    for (i, j), c in p.items():
        by_n.setdefault(i, {})[j] = c
        max_a = max(max_a, j)
    out: dict = {}
    for i, coeffs in by_n.items():
        # p_i = (1-a) q_i + r_i with q_{j-1} = q_j - p_j from the top down.
        q = [Fraction(0)] * max(max_a, 1)
        carry = Fraction(0)
        for j in range(max_a, 0, -1):
            q[j - 1] = carry - coeffs.get(j, Fraction(0))
            carry = q[j - 1]
        r = coeffs.get(0, Fraction(0)) - carry
        if r:
            return None
        for j, c in enumerate(q):
            if c:
                out[(i, j)] = c
    return out


def poly_div_nlin(p: dict, q0: Fraction):
    """Exact quotient p / (n + q0), or None (synthetic division in n)."""
    if not p:
        return {}
    by_a: dict = {}
    max_n = 0
    for (i, j), c in p.items():
        by_a.setdefault(j, {})[i] = c
        max_n = max(max_n, i)
    out: dict = {}
    for j, coeffs in by_a.items():
        q = [Fraction(0)] * max(max_n, 1)
        carry = Fraction(0)
        for i in range(max_n, 0, -1):
            ci = coeffs.get(i, Fraction(0)) + carry
            q[i - 1] = ci
            carry = -q0 * ci
        r = coeffs.get(0, Fraction(0)) + carry
        if r:
            return None
        for i, c in enumerate(q):
            if c:
                out[(i, j)] = c
    return out


def poly_str(p: dict) -> str:
    if not p:
        return "0"
    parts = []
    for (i, j) in sorted(p, key=lambda m: (-m[0], -m[1])):
        c = p[(i, j)]
        mono = []
        if i:
            mono.append("n" if i == 1 else f"n^{i}")
        if j:
            mono.append("a" if j == 1 else f"a^{j}")
        body = "*".join(mono)
        if not body:
            parts.append(("+ " if c > 0 else "- ") + str(abs(c)))
        elif abs(c) == 1:
            parts.append(("+ " if c > 0 else "- ") + body)
        else:
            parts.append(("+ " if c > 0 else "- ") + f"{abs(c)}*{body}")
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else ("-" + s[2:])


def parse_poly(text: str) -> dict:
    """Parse '+ - * ^ ( )' expressions in n, a with integer/fraction atoms."""
    tokens: list = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "+-*/^()":
            tokens.append(ch)
            i += 1
        elif ch.isdigit():
            j = i
            while j < len(text) and text[j].isdigit():
                j += 1
            tokens.append(int(text[i:j]))
            i = j
        elif ch in "na":
            tokens.append(ch)
            i += 1
        else:
            raise ValueError(f"bad character {ch!r} in polynomial {text!r}")
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take():
        nonlocal pos
        t = tokens[pos]
        pos += 1
        return t

    def parse_atom():
        t = take()
        if t == "(":
            e = parse_sum()
            if take() != ")":
                raise ValueError("unbalanced parenthesis")
            return e
        if t == "-":
            return poly_neg(parse_atom())
        if isinstance(t, int):
            if peek() == "/":
                take()
                d = take()
                return poly_const(Fraction(t, d))
            return poly_const(t)
        if t in ("n", "a"):
            return poly_var(t)
        raise ValueError(f"unexpected token {t!r}")

    def parse_power():
        base = parse_atom()
        if peek() == "^":
            take()
            return poly_pow(base, take())
        return base

    def parse_prod():
        e = parse_power()
        while peek() == "*":
            take()
            e = poly_mul(e, parse_power())
        return e

    def parse_sum():
        if peek() == "-":
            take()
            e = poly_neg(parse_prod())
        else:
            e = parse_prod()
        while peek() in ("+", "-"):
            op = take()
            rhs = parse_prod()
            e = poly_add(e, rhs) if op == "+" else poly_sub(e, rhs)
        return e

    out = parse_sum()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens in polynomial {text!r}")
    return out


# ---------------------------------------------------------------------------
# rational functions with factored denominators
# ---------------------------------------------------------------------------

# Denominator: (a_pow, oma_pow, nfacs), where nfacs is a sorted tuple of
# (q0: Fraction, exp: int) meaning monic factors (n + q0)^exp.

DEN_ONE = (0, 0, ())


def _nfac_mul(f1: tuple, f2: tuple) -> tuple:
    d: dict = {}
    for q, e in f1:
        d[q] = d.get(q, 0) + e
    for q, e in f2:
        d[q] = d.get(q, 0) + e
    return tuple(sorted((q, e) for q, e in d.items() if e))


def _nfac_max(f1: tuple, f2: tuple) -> tuple:
    d = {q: e for q, e in f1}
    for q, e in f2:
        d[q] = max(d.get(q, 0), e)
    return tuple(sorted(d.items()))


def _nfac_sub(f1: tuple, f2: tuple) -> tuple:
    d = {q: e for q, e in f1}
    for q, e in f2:
        d[q] = d.get(q, 0) - e
    if any(e < 0 for e in d.values()):
        raise ValueError("negative factor exponent")
    return tuple(sorted((q, e) for q, e in d.items() if e))


def den_poly(den: tuple) -> dict:
    a_pow, oma, nfacs = den
    p = dict(POLY_ONE)
    if a_pow:
        p = poly_mul(p, poly_pow(poly_var("a"), a_pow))
    if oma:
        p = poly_mul(p, poly_pow(poly_sub(POLY_ONE, poly_var("a")), oma))
    for q, e in nfacs:
        p = poly_mul(p, poly_pow(poly_add(poly_var("n"), poly_const(q)), e))
    return p


class Rat:
    """Rational function num / (a^i (1-a)^j prod (n+q)^e), exact."""

    __slots__ = ("num", "den")

    def __init__(self, num: dict, den: tuple = DEN_ONE, cancel: bool = True):
        if not num:
            den = DEN_ONE
        elif cancel and den != DEN_ONE:
            a_pow, oma, nfacs = den
            while a_pow:
                q = poly_div_a(num)
                if q is None:
                    break
                num, a_pow = q, a_pow - 1
            while oma:
                q = poly_div_oma(num)
                if q is None:
                    break
                num, oma = q, oma - 1
            new_nfacs = []
            for q0, e in nfacs:
                while e:
                    q = poly_div_nlin(num, q0)
                    if q is None:
                        break
                    num, e = q, e - 1
                if e:
                    new_nfacs.append((q0, e))
            den = (a_pow, oma, tuple(new_nfacs))
        self.num = num
        self.den = den

    def is_zero(self) -> bool:
        return not self.num

    def __repr__(self):
        if self.den == DEN_ONE:
            return poly_str(self.num)
        return f"({poly_str(self.num)}) / ({poly_str(den_poly(self.den))})"


RAT_ZERO = Rat({})
RAT_ONE = Rat(dict(POLY_ONE))


def rat_const(c) -> Rat:
    return Rat(poly_const(c))


def _den_ratio(target: tuple, den: tuple) -> dict:
    a_pow = target[0] - den[0]
    oma = target[1] - den[1]
    nfacs = _nfac_sub(target[2], den[2])
    return den_poly((a_pow, oma, nfacs))


def rat_add(x: Rat, y: Rat) -> Rat:
    if x.is_zero():
        return y
    if y.is_zero():
        return x
    if x.den == y.den:
        return Rat(poly_add(x.num, y.num), x.den)
    target = (
        max(x.den[0], y.den[0]),
        max(x.den[1], y.den[1]),
        _nfac_max(x.den[2], y.den[2]),
    )
    nx = poly_mul(x.num, _den_ratio(target, x.den))
    ny = poly_mul(y.num, _den_ratio(target, y.den))
    return Rat(poly_add(nx, ny), target)


def rat_neg(x: Rat) -> Rat:
    return Rat(poly_neg(x.num), x.den, cancel=False)


def rat_sub(x: Rat, y: Rat) -> Rat:
    return rat_add(x, rat_neg(y))


def rat_mul(x: Rat, y: Rat) -> Rat:
    if x.is_zero() or y.is_zero():
        return RAT_ZERO
    den = (x.den[0] + y.den[0], x.den[1] + y.den[1], _nfac_mul(x.den[2], y.den[2]))
    return Rat(poly_mul(x.num, y.num), den)


def rat_scale(x: Rat, c) -> Rat:
    return Rat(poly_scale(x.num, c), x.den, cancel=False)


def rat_equal(x: Rat, y: Rat) -> bool:
    return rat_sub(x, y).is_zero()


def rat_div_factors(x: Rat, a_pow=0, oma_pow=0, nfacs=(), const=1) -> Rat:
    """Divide by a^a_pow (1-a)^oma_pow prod (n+q)^e and the rational const."""
    c = Fraction(const)
    if c == 0:
        raise ZeroDivisionError("division by zero constant")
    den = (x.den[0] + a_pow, x.den[1] + oma_pow, _nfac_mul(x.den[2], tuple(nfacs)))
    return Rat(poly_scale(x.num, Fraction(1) / c), den)


def rat_eval(x: Rat, nv: Fraction, av: Fraction) -> Fraction:
    dv = poly_eval(den_poly(x.den), nv, av)
    if dv == 0:
        raise ZeroDivisionError("denominator vanishes at sample point")
    return poly_eval(x.num, nv, av) / dv


# ---------------------------------------------------------------------------
# the coefficient field with atoms
# ---------------------------------------------------------------------------


class FE:
    """Field element: sum over atom exponents (i, j) of A^i L^j * Rat."""

    __slots__ = ("parts",)

    def __init__(self, parts: dict):
        self.parts = {k: v for k, v in parts.items() if not v.is_zero()}

    def is_zero(self) -> bool:
        return not self.parts

    def __repr__(self):
        if not self.parts:
            return "0"
        bits = []
        for (i, j) in sorted(self.parts):
            atom = ""
            if i:
                atom += " * A" + (f"^{i}" if i != 1 else "")
            if j:
                atom += " * L" + (f"^{j}" if j != 1 else "")
            bits.append(f"({self.parts[(i, j)]!r}){atom}")
        return " + ".join(bits)


FE_ZERO = FE({})


@dataclass(frozen=True)
class Field:
    """Coefficient-field context.

    n_fixed: None for symbolic dimension, else a fixed even integer >= 2.
    In fixed mode the atom A = (1-a)^(-n/2) collapses to a power of (1-a)
    and the atom L = ln(1-a) becomes available.
    a_fixed: None for symbolic a, else an exact rational value (< 1).
    """

    n_fixed: int | None = None
    a_fixed: Fraction | None = None

    def __post_init__(self):
        if self.n_fixed is not None and (self.n_fixed < 2 or self.n_fixed % 2):
            raise ValueError("fixed dimension must be an even integer >= 2")
        if self.a_fixed is not None and self.a_fixed >= 1:
            raise ValueError("ellipticity requires a < 1")

    # -- constructors -------------------------------------------------------

    def _norm_poly(self, p: dict) -> dict:
        if self.n_fixed is not None and any(i for (i, _) in p):
            p = poly_subs_n(p, Fraction(self.n_fixed))
        if self.a_fixed is not None and any(j for (_, j) in p):
            p = poly_subs_a(p, self.a_fixed)
        return p

    def _norm_den(self, den: tuple):
        """Specialize a denominator; returns (den', scale) with scale rational."""
        a_pow, oma, nfacs = den
        scale = Fraction(1)
        if self.n_fixed is not None and nfacs:
            for q0, e in nfacs:
                val = Fraction(self.n_fixed) + q0
                if val == 0:
                    raise ZeroDivisionError(
                        f"denominator factor (n + {q0}) vanishes at n = {self.n_fixed}"
                    )
                scale *= val**e
            nfacs = ()
        if self.a_fixed is not None:
            if a_pow:
                if self.a_fixed == 0:
                    raise ZeroDivisionError("denominator power of a at a = 0")
                scale *= self.a_fixed**a_pow
                a_pow = 0
            if oma:
                scale *= (1 - self.a_fixed) ** oma
                oma = 0
        return (a_pow, oma, nfacs), scale

    def rat(self, value) -> FE:
        """FE from a Fraction/int, a polynomial dict, or a Rat."""
        if isinstance(value, Rat):
            den, scale = self._norm_den(value.den)
            num = self._norm_poly(value.num)
            if scale != 1:
                num = poly_scale(num, Fraction(1) / scale)
            r = Rat(num, den)
        elif isinstance(value, dict):
            r = Rat(self._norm_poly(value))
        else:
            r = rat_const(value)
        return FE({(0, 0): r})

    def one(self) -> FE:
        return self.rat(1)

    def zero(self) -> FE:
        return FE_ZERO

    def sym_n(self) -> FE:
        return self.rat(poly_var("n"))

    def sym_a(self) -> FE:
        return self.rat(poly_var("a"))

    def atom_A(self, power: int = 1) -> FE:
        """(1-a)^(-n/2) to the given integer power; folds in fixed-n mode."""
        if power == 0:
            return self.one()
        if self.n_fixed is not None:
            e = (self.n_fixed // 2) * power
            if e > 0:
                return self.rat(Rat(dict(POLY_ONE), (0, e, ())))
            return self.rat(poly_pow(poly_sub(POLY_ONE, poly_var("a")), -e))
        return FE({(power, 0): RAT_ONE})

    def atom_L(self, power: int = 1) -> FE:
        """ln(1-a) to the given power (fixed-n mode only)."""
        if power == 0:
            return self.one()
        if self.n_fixed is None:
            raise ValueError("ln(1-a) atom is only available in fixed-n mode")
        return FE({(0, power): RAT_ONE})

    # -- arithmetic ----------------------------------------------------------

    def add(self, x: FE, y: FE) -> FE:
        if x.is_zero():
            return y
        if y.is_zero():
            return x
        parts = dict(x.parts)
        for k, v in y.parts.items():
            parts[k] = rat_add(parts[k], v) if k in parts else v
        return FE(parts)

    def neg(self, x: FE) -> FE:
        return FE({k: rat_neg(v) for k, v in x.parts.items()})

    def sub(self, x: FE, y: FE) -> FE:
        return self.add(x, self.neg(y))

    def mul(self, x: FE, y: FE) -> FE:
        if x.is_zero() or y.is_zero():
            return FE_ZERO
        parts: dict = {}
        for (i1, j1), r1 in x.parts.items():
            for (i2, j2), r2 in y.parts.items():
                k = (i1 + i2, j1 + j2)
                prod = rat_mul(r1, r2)
                parts[k] = rat_add(parts[k], prod) if k in parts else prod
        return FE(parts)

    def scale(self, x: FE, c) -> FE:
        c = Fraction(c)
        if not c:
            return FE_ZERO
        return FE({k: rat_scale(v, c) for k, v in x.parts.items()})

    def div_factors(self, x: FE, a_pow=0, oma_pow=0, nfacs=(), const=1) -> FE:
        """Exact division by a product of known linear factors and a const."""
        den, scale = self._norm_den((a_pow, oma_pow, tuple(nfacs)))
        c = Fraction(const) * scale
        return FE(
            {k: rat_div_factors(v, den[0], den[1], den[2], c) for k, v in x.parts.items()}
        )

    def mul_A(self, x: FE, power: int) -> FE:
        return self.mul(x, self.atom_A(power))

    def is_zero(self, x: FE) -> bool:
        return x.is_zero()

    def equal(self, x: FE, y: FE) -> bool:
        return self.sub(x, y).is_zero()

    # -- analysis ------------------------------------------------------------

    def series_a0(self, x: FE, order: int) -> list:
        """Taylor coefficients of x around a = 0, orders 0..order.

        Returns a list of Rat (rational functions in n alone).  Requires
        symbolic a.  The atoms expand as A = sum_j (n/2)_j a^j / j! and
        L = -sum_{j>=1} a^j / j.  Raises ZeroDivisionError if x has a
        genuine pole at a = 0.
        """
        if self.a_fixed is not None:
            raise ValueError("series_a0 needs symbolic a")
        max_apow = max((r.den[0] for r in x.parts.values()), default=0)
        length = order + 1 + max_apow
        nhalf = (
            poly_const(Fraction(self.n_fixed, 2))
            if self.n_fixed is not None
            else poly_scale(poly_var("n"), Fraction(1, 2))
        )
        # accumulate series with a shared pole offset max_apow
        total = [RAT_ZERO] * length
        for (apow, lpow), r in x.parts.items():
            a_pow, oma, nfacs = r.den
            ser = _poly_a_coeffs(r.num, length)
            if oma:
                geo = [dict(POLY_ONE)] * length
                for _ in range(oma):
                    ser = _series_mul(ser, geo, length)
            if apow:
                s = poly_scale(nhalf, apow)
                acc = [dict(POLY_ONE)]
                term = dict(POLY_ONE)
                for j in range(1, length):
                    term = poly_scale(
                        poly_mul(term, poly_add(s, poly_const(j - 1))), Fraction(1, j)
                    )
                    acc.append(term)
                ser = _series_mul(ser, acc, length)
            for _ in range(lpow):
                ls = [POLY_ZERO] + [poly_const(Fraction(-1, j)) for j in range(1, length)]
                ser = _series_mul(ser, ls, length)
            shift = max_apow - a_pow
            for j, pj in enumerate(ser):
                if pj and j + shift < length:
                    total[j + shift] = rat_add(total[j + shift], Rat(pj, (0, 0, nfacs)))
        for j in range(max_apow):
            if not total[j].is_zero():
                raise ZeroDivisionError(f"pole of order {max_apow - j} at a = 0")
        return total[max_apow : max_apow + order + 1]

    def limit_a0(self, x: FE) -> Rat:
        """Finite limit as a -> 0 (a Rat in n), or ZeroDivisionError."""
        return self.series_a0(x, 0)[0]

    def to_str(self, x: FE) -> str:
        return repr(x)


def _poly_a_coeffs(p: dict, length: int) -> list:
    out = [POLY_ZERO] * length
    for (i, j), c in p.items():
        if j < length:
            out[j] = poly_add(out[j], {(i, 0): c})
    return out


def _series_mul(x: list, y: list, length: int) -> list:
    out = [POLY_ZERO] * length
    for i, xi in enumerate(x):
        if not xi or i >= length:
            continue
        for j, yj in enumerate(y):
            if i + j >= length:
                break
            if yj:
                out[i + j] = poly_add(out[i + j], poly_mul(xi, yj))
    return out


# ---------------------------------------------------------------------------
# momentum scalars (pre-integration propagator atoms)
# ---------------------------------------------------------------------------

# A momentum scalar is N(K, U) / (U^l V^m) with
#   K = k^2 (the squared phase gradient before the coincidence limit),
#   U = K - lambda,    V = (1-a) K - lambda = U - a K,
# N a polynomial {(K_exp, U_exp): FE}, and l, m >= 0.  The class is closed
# under multiplication and under d/dK, d/dU (the chain rule of covariant
# differentiation acts through dq with dU/dq = 1, dV/dq = 1-a).


class Mom:
    __slots__ = ("num", "l", "m")

    def __init__(self, num: dict, l: int = 0, m: int = 0):
        self.num = {k: v for k, v in num.items() if not v.is_zero()}
        self.l = l
        self.m = m

    def is_zero(self) -> bool:
        return not self.num

    def __repr__(self):
        if not self.num:
            return "0"
        bits = []
        for (pk, pu) in sorted(self.num):
            mono = ""
            if pk:
                mono += f" K^{pk}"
            if pu:
                mono += f" U^{pu}"
            bits.append(f"({self.num[(pk, pu)]!r}){mono}")
        s = " + ".join(bits)
        if self.l or self.m:
            s = f"[{s}] / (U^{self.l} V^{self.m})"
        return s


def mom_one(fld: Field) -> Mom:
    return Mom({(0, 0): fld.one()})


def mom_is_one(fld: Field, x: Mom) -> bool:
    return x.l == 0 and x.m == 0 and set(x.num) == {(0, 0)} and fld.equal(
        x.num[(0, 0)], fld.one()
    )


def _momnum_scale(fld: Field, num: dict, fe: FE) -> dict:
    return {k: fld.mul(v, fe) for k, v in num.items()}


def _momnum_add(fld: Field, x: dict, y: dict) -> dict:
    out = dict(x)
    for k, v in y.items():
        out[k] = fld.add(out[k], v) if k in out else v
    return {k: v for k, v in out.items() if not v.is_zero()}


def _momnum_mul(fld: Field, x: dict, y: dict) -> dict:
    out: dict = {}
    for (k1, u1), c1 in x.items():
        for (k2, u2), c2 in y.items():
            key = (k1 + k2, u1 + u2)
            prod = fld.mul(c1, c2)
            out[key] = fld.add(out[key], prod) if key in out else prod
    return {k: v for k, v in out.items() if not v.is_zero()}


def _momnum_mul_V(fld: Field, x: dict) -> dict:
    """Multiply by V = U - a K."""
    neg_a = fld.neg(fld.sym_a())
    out: dict = {}
    for (pk, pu), c in x.items():
        for key, fe in (((pk, pu + 1), c), ((pk + 1, pu), fld.mul(c, neg_a))):
            out[key] = fld.add(out[key], fe) if key in out else fe
    return {k: v for k, v in out.items() if not v.is_zero()}


def _momnum_div_U(fld: Field, x: dict):
    if any(pu == 0 for (_, pu) in x):
        return None
    return {(pk, pu - 1): c for (pk, pu), c in x.items()}


def _momnum_div_V(fld: Field, x: dict):
    """Exact division of N(K, U) by V = U - a K, or None.

    Synthetic division in the U variable: N = sum_j c_j(K) U^j gives
    quotient columns q_{j-1} = c_j + aK q_j and remainder c_0 + aK q_0.
    """
    if not x:
        return {}
    a_sym = fld.sym_a()
    cols: dict = {}
    max_u = 0
    for (pk, pu), c in x.items():
        col = cols.setdefault(pu, {})
        col[pk] = fld.add(col[pk], c) if pk in col else c
        max_u = max(max_u, pu)
    if max_u == 0:
        return None

    def ak_shift(col: dict) -> dict:
        return {pk + 1: fld.mul(c, a_sym) for pk, c in col.items()}

    def col_add(c1: dict, c2: dict) -> dict:
        out = dict(c1)
        for pk, c in c2.items():
            out[pk] = fld.add(out[pk], c) if pk in out else c
        return {pk: c for pk, c in out.items() if not c.is_zero()}

    quot: dict = {}
    prev_q: dict = {}
    for j in range(max_u, 0, -1):
        qj = col_add(cols.get(j, {}), ak_shift(prev_q))
        for pk, c in qj.items():
            quot[(pk, j - 1)] = c
        prev_q = qj
    rem = col_add(cols.get(0, {}), ak_shift(prev_q))
    if rem:
        return None
    return {k: v for k, v in quot.items() if not v.is_zero()}


def mom_mul(fld: Field, x: Mom, y: Mom) -> Mom:
    return mom_cancel(fld, Mom(_momnum_mul(fld, x.num, y.num), x.l + y.l, x.m + y.m))


def mom_add(fld: Field, x: Mom, y: Mom) -> Mom:
    l, m = max(x.l, y.l), max(x.m, y.m)
    nx, ny = x.num, y.num
    for _ in range(l - x.l):
        nx = _momnum_mul(fld, nx, {(0, 1): fld.one()})
    for _ in range(m - x.m):
        nx = _momnum_mul_V(fld, nx)
    for _ in range(l - y.l):
        ny = _momnum_mul(fld, ny, {(0, 1): fld.one()})
    for _ in range(m - y.m):
        ny = _momnum_mul_V(fld, ny)
    return mom_cancel(fld, Mom(_momnum_add(fld, nx, ny), l, m))


def mom_scale(fld: Field, x: Mom, fe: FE) -> Mom:
    return Mom(_momnum_scale(fld, x.num, fe), x.l, x.m)


def mom_cancel(fld: Field, x: Mom) -> Mom:
    num, l, m = x.num, x.l, x.m
    if not num:
        return Mom({}, 0, 0)
    while l:
        q = _momnum_div_U(fld, num)
        if q is None:
            break
        num, l = q, l - 1
    while m:
        q = _momnum_div_V(fld, dict(num))
        if q is None:
            break
        num, m = q, m - 1
    return Mom(num, l, m)


def mom_dq(fld: Field, x: Mom) -> Mom:
    """Derivative with respect to q = k^2 (so dK = dU = 1, dV = 1-a).

    d/dq [N U^-l V^-m] = (N_K + N_U) U^-l V^-m - l N U^-(l+1) V^-m
                         - m (1-a) N U^-l V^-(m+1)
    """
    dn: dict = {}
    for (pk, pu), c in x.num.items():
        if pk:
            key = (pk - 1, pu)
            fe = fld.scale(c, pk)
            dn[key] = fld.add(dn[key], fe) if key in dn else fe
        if pu:
            key = (pk, pu - 1)
            fe = fld.scale(c, pu)
            dn[key] = fld.add(dn[key], fe) if key in dn else fe
    # over the common denominator U^(l+1) V^(m+1):
    num = _momnum_mul_V(fld, _momnum_mul(fld, dn, {(0, 1): fld.one()}))
    if x.l:
        num = _momnum_add(
            fld, num, _momnum_scale(fld, _momnum_mul_V(fld, x.num), fld.rat(-x.l))
        )
    if x.m:
        oma = fld.scale(fld.sub(fld.one(), fld.sym_a()), -x.m)
        num = _momnum_add(
            fld,
            num,
            _momnum_scale(fld, _momnum_mul(fld, x.num, {(0, 1): fld.one()}), oma),
        )
    return mom_cancel(fld, Mom(num, x.l + 1, x.m + 1))


def mom_expand_J(fld: Field, x: Mom) -> list:
    """Expand into closed-form integrand monomials.

    Returns a list of (p, l, m, coeff, pure_poly): coeff * K^p / (U^l V^m)
    with p, l, m >= 0.  pure_poly marks monomials that turned out to be
    polynomial in lambda (positive propagator powers survive); their
    contour integral over the closed contour vanishes.
    """
    a_sym = fld.sym_a()
    out: dict = {}
    work = [((pk, pu - x.l, -x.m), c) for (pk, pu), c in x.num.items()]
    while work:
        (pk, ju, jv), c = work.pop()
        if c.is_zero():
            continue
        if ju > 0 and jv < 0:
            # U = V + aK
            work.append(((pk, ju - 1, jv + 1), c))
            work.append(((pk + 1, ju - 1, jv), fld.mul(c, a_sym)))
            continue
        if jv > 0 and ju < 0:
            # V = U - aK
            work.append(((pk, ju + 1, jv - 1), c))
            work.append(((pk + 1, ju, jv - 1), fld.mul(c, fld.neg(a_sym))))
            continue
        key = (pk, ju, jv)
        out[key] = fld.add(out[key], c) if key in out else c
    result = []
    for (pk, ju, jv), c in sorted(out.items()):
        if c.is_zero():
            continue
        if ju >= 0 and jv >= 0:
            # no propagator atoms left: entire in lambda, contour gives zero
            result.append((pk, 0, 0, c, True))
        else:
            result.append((pk, -ju, -jv, c, False))
    return result


def mom_eval(fld: Field, x: Mom, kval: Fraction, lam: Fraction, nv, av) -> Fraction:
    """Exact evaluation at K = kval, lambda = lam (test helper).

    av must agree with fld.a_fixed when the field has a pinned.
    """
    kval, lam, nv, av = Fraction(kval), Fraction(lam), Fraction(nv), Fraction(av)
    if fld.a_fixed is not None and av != fld.a_fixed:
        raise ValueError("av must equal the field's fixed a")
    U = kval - lam
    V = (1 - av) * kval - lam
    tot = Fraction(0)
    for (pk, pu), c in x.num.items():
        if c.is_zero():
            continue
        if set(c.parts) != {(0, 0)}:
            raise ValueError("momentum scalar with atoms cannot be evaluated here")
        tot += rat_eval(c.parts[(0, 0)], nv, av) * kval**pk * U**pu
    return tot / (U**x.l * V**x.m)
