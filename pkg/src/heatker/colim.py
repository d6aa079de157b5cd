"""Coincidence limits of the phase and transport functions.

The phase function l(x, x', k) and transport function I(x, x') are pinned
down by requiring all symmetrized covariant-derivative coincidence limits
to vanish (orders > 1 for the phase, >= 1 for the transport), together
with [l] = 0, [D_mu l] = k_mu, [I] = identity.  Expanding the symmetrized
condition at order m into all m! derivative orderings, rewriting each to
the canonical ordering (the corrections only involve lower orders already
in the table) and solving the resulting linear relation yields the
nonsymmetrized limits [D_mu1 ... D_mum l] and [D ... I] as universal
polynomials in torsion, curvature, gauge curvature and their derivatives.

Tables are cached on disk in a deterministic, versioned, line-oriented
text format (see save_table / load_table).
"""

from __future__ import annotations

import hashlib
import itertools
import os
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import (
    CorruptFile,
    FlagMismatch,
    InternalInvariant,
    MissingColimOrder,
    UnsolvableOrder,
    VersionMismatch,
)
from .expr import (
    G,
    I,
    K,
    KIND_NAMES,
    L,
    NAME_KINDS,
    R,
    T,
    TensorExpr,
    W,
    X,
    coeff_one,
    coeff_pure_fe,
    coeff_rat,
    factor,
    lo,
    substitute,
    up,
)
from .rewrite import Background, to_canonical_derivative_order
from .scalars import Field

FORMAT_VERSION = 1

# condition labels: the m-th order entry is stored with free derivative
# indices c1 < c2 < ... < cm (all lower); rank-2 transport entries
# additionally carry the active slot s1 (upper) and the inert slot s2.
MAX_TABLE_ORDER = 9


def _clabel(j: int) -> str:
    return f"c{j}"


ACTIVE_SLOT = "s1"
INERT_SLOT = "s2"


@dataclass
class ColimTable:
    target: str  # 'phase' | 'transport'
    rank: int
    flags: Background
    max_order: int
    fld: Field
    entries: dict = field(default_factory=dict)  # order -> TensorExpr

    def entry(self, order: int) -> TensorExpr:
        if order not in self.entries:
            raise MissingColimOrder(
                f"{self.target} table holds orders <= {self.max_order}, "
                f"order {order} requested"
            )
        return self.entries[order]


def _weight(key) -> int:
    from .expr import R as _R, T as _T, W as _W, X as _X

    wt = 0
    for kind, derivs, slots in key:
        wt += len(derivs)
        if kind == _T:
            wt += 1
        elif kind in (_R, _W, _X):
            wt += 2
    return wt


def _kind_factor_count(key, kind) -> int:
    return sum(1 for f in key if f[0] == kind)


def _bootstrap(
    fld: Field,
    flags: Background,
    max_order: int,
    kind: int,
    slots: tuple,
    start_order: int,
    order0_entry: TensorExpr,
    order1_entry: TensorExpr | None,
) -> dict:
    """Shared bootstrap for the phase and transport tables."""
    if max_order > MAX_TABLE_ORDER:
        raise InternalInvariant(f"table order {max_order} > {MAX_TABLE_ORDER}")
    entries = {0: order0_entry}
    if order1_entry is not None:
        entries[1] = order1_entry
    label_order = {_clabel(j): j for j in range(1, MAX_TABLE_ORDER + 1)}
    for m in range(start_order, max_order + 1):
        labels = [lo(_clabel(j)) for j in range(1, m + 1)]
        cond = TensorExpr.from_terms(
            fld,
            [
                (coeff_one(fld), [factor(kind, perm, slots)])
                for perm in itertools.permutations(labels)
            ],
        )
        cond = to_canonical_derivative_order(cond, flags, label_order)
        top_key = (factor(kind, tuple(labels), slots),)
        rest = TensorExpr(fld)
        top_coeff = None
        for key, c in cond.terms.items():
            if key == top_key:
                top_coeff = c
            else:
                rest.terms[key] = c
        fact = 1
        for j in range(2, m + 1):
            fact *= j
        if top_coeff is None or not fld.equal(
            coeff_pure_fe(fld, top_coeff), fld.rat(fact)
        ):
            raise UnsolvableOrder(
                f"order-{m} condition did not produce the canonical limit "
                f"with coefficient {fact}"
            )
        # corrections only hold lower-order two-point factors: substitute
        rest = substitute_entries(rest, {kind: entries}, slots, limit=m - 1)
        entry = rest.scaled(Fraction(-1, fact))
        entries[m] = entry
    return entries


def substitute_entries(e: TensorExpr, tables: dict, slots_by_kind=None, limit=None):
    """Replace each two-point factor by its table entry, by deriv count.

    tables maps factor kind -> {order: entry TensorExpr}.  Entries are
    instantiated positionally: derivative indices bind c1..cm, slots bind
    s1, s2 (variances flip with the binding).
    """
    from .expr import relabel_free, substitute

    fld = e.fld
    out = e
    for kind, entries in tables.items():
        orders = sorted(
            {len(f[1]) for key in out.terms for f in key if f[0] == kind},
            reverse=True,
        )
        for p in orders:
            if limit is not None and p > limit:
                raise InternalInvariant(
                    f"unexpected order-{p} factor during bootstrap at limit {limit}"
                )
            if p not in entries:
                raise MissingColimOrder(
                    f"{KIND_NAMES[kind]} coincidence limit of order {p} not tabulated"
                )
            slots = ()
            for key in out.terms:
                for f in key:
                    if f[0] == kind and len(f[1]) == p:
                        slots = tuple(
                            (f"s{j+1}", j == 0) for j in range(len(f[2]))
                        )
                        break
            pattern = factor(
                kind,
                tuple(lo(_clabel(j)) for j in range(1, p + 1)),
                slots,
            )
            out = substitute(out, pattern, entries[p])
    return out


def build_phase_table(
    max_order: int, flags: Background, fld: Field | None = None
) -> ColimTable:
    """Coincidence limits [D_mu1 ... D_mum l] for m <= max_order."""
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    fld = fld or Field()
    order0 = TensorExpr.zero(fld)  # [l] = 0
    order1 = TensorExpr.from_terms(
        fld, [(coeff_one(fld), [factor(K, (), (lo(_clabel(1)),))])]
    )
    entries = _bootstrap(fld, flags, max_order, L, (), 2, order0, order1)
    table = ColimTable("phase", 0, flags, max_order, fld, entries)
    _check_phase_invariants(table)
    return table


def build_transport_table(
    max_order: int, rank: int, flags: Background, fld: Field | None = None
) -> ColimTable:
    """Coincidence limits [D_mu1 ... D_mum I] for m <= max_order."""
    if rank not in (0, 2):
        raise ValueError("transport rank must be 0 or 2")
    fld = fld or Field()
    if rank == 0:
        slots = ()
        order0 = TensorExpr.from_terms(fld, [(coeff_one(fld), [])])
    else:
        slots = (up(ACTIVE_SLOT), lo(INERT_SLOT))
        order0 = TensorExpr.from_terms(
            fld, [(coeff_one(fld), [factor(G, (), (up(ACTIVE_SLOT), lo(INERT_SLOT)))])]
        )
    entries = _bootstrap(fld, flags, max_order, I, slots, 1, order0, None)
    table = ColimTable("transport", rank, flags, max_order, fld, entries)
    _check_transport_invariants(table)
    return table


def _check_phase_invariants(table: ColimTable):
    for m, e in table.entries.items():
        for key in e.terms:
            if _kind_factor_count(key, K) != 1:
                raise InternalInvariant(f"phase entry {m} not linear in k")
            if m >= 1 and _weight(key) != m - 1:
                raise InternalInvariant(
                    f"phase entry {m} has background weight {_weight(key)}"
                )


def _check_transport_invariants(table: ColimTable):
    for m, e in table.entries.items():
        for key in e.terms:
            if _kind_factor_count(key, K) != 0:
                raise InternalInvariant(f"transport entry {m} contains k")
            if _weight(key) != m:
                raise InternalInvariant(
                    f"transport entry {m} has background weight {_weight(key)}"
                )


# ---------------------------------------------------------------------------
# cache files
# ---------------------------------------------------------------------------


def _coeff_to_str(fld: Field, c) -> str:
    fe = coeff_pure_fe(fld, c)
    if fe.is_zero():
        return "0"
    if set(fe.parts) != {(0, 0)}:
        raise InternalInvariant("table coefficients must be rational")
    rat = fe.parts[(0, 0)]
    if rat.den != (0, 0, ()) or set(rat.num) - {(0, 0)}:
        raise InternalInvariant("table coefficients must be rational numbers")
    return str(rat.num[(0, 0)])


def _index_to_str(idx) -> str:
    lbl, isup = idx
    return ("+" if isup else "-") + lbl


def _index_from_str(s: str):
    if not s or s[0] not in "+-":
        raise CorruptFile(f"bad index token {s!r}")
    return (s[1:], s[0] == "+")


def _factor_to_str(f) -> str:
    kind, derivs, slots = f
    ds = ",".join(_index_to_str(i) for i in derivs)
    ss = ",".join(_index_to_str(i) for i in slots)
    return f"{KIND_NAMES[kind]}[{ds};{ss}]"


def _factor_from_str(s: str):
    try:
        name, rest = s.split("[", 1)
        body = rest.rstrip("]")
        ds, ss = body.split(";")
        kind = NAME_KINDS[name]
        derivs = tuple(_index_from_str(t) for t in ds.split(",") if t)
        slots = tuple(_index_from_str(t) for t in ss.split(",") if t)
        return factor(kind, derivs, slots)
    except (ValueError, KeyError) as exc:
        raise CorruptFile(f"bad factor token {s!r}: {exc}") from exc


def _table_body(table: ColimTable) -> str:
    lines = []
    for m in sorted(table.entries):
        lines.append(f"entry {m}:")
        e = table.entries[m]
        for key, c in e.sorted_terms():
            fs = " ".join(_factor_to_str(f) for f in key)
            lines.append(f"{_coeff_to_str(table.fld, c)} | {fs}".rstrip())
    return "\n".join(lines) + "\n"


def save_table(table: ColimTable, path):
    """Deterministic, checksummed plain-text dump (atomic rename)."""
    body = _table_body(table)
    checksum = hashlib.sha256(body.encode()).hexdigest()
    header = (
        f"version={FORMAT_VERSION}\n"
        f"target={table.target}\n"
        f"rank={table.rank}\n"
        f"torsion={int(table.flags.torsion)}\n"
        f"gauge={int(table.flags.gauge)}\n"
        f"max_order={table.max_order}\n"
        f"checksum={checksum}\n"
    )
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(header + body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_table(
    path,
    fld: Field | None = None,
    *,
    target: str | None = None,
    rank: int | None = None,
    flags: Background | None = None,
    min_order: int | None = None,
) -> ColimTable:
    """Load and verify a cache file; optional expectations are enforced."""
    fld = fld or Field()
    with open(os.fspath(path)) as fh:
        text = fh.read()
    lines = text.splitlines()
    header = {}
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("entry "):
            body_start = i
            break
        if "=" in line:
            k, v = line.split("=", 1)
            header[k] = v
    else:
        body_start = len(lines)
    required = ("version", "target", "rank", "torsion", "gauge", "max_order", "checksum")
    if any(k not in header for k in required):
        raise CorruptFile(f"missing header fields in {path}")
    if int(header["version"]) != FORMAT_VERSION:
        raise VersionMismatch(
            f"cache version {header['version']} != {FORMAT_VERSION}"
        )
    body = "\n".join(lines[body_start:]) + "\n" if body_start < len(lines) else ""
    if hashlib.sha256(body.encode()).hexdigest() != header["checksum"]:
        raise CorruptFile(f"checksum mismatch in {path}")
    file_flags = Background(
        torsion=bool(int(header["torsion"])), gauge=bool(int(header["gauge"]))
    )
    if target is not None and header["target"] != target:
        raise FlagMismatch(f"cache target {header['target']} != {target}")
    if rank is not None and int(header["rank"]) != rank:
        raise FlagMismatch(f"cache rank {header['rank']} != {rank}")
    if flags is not None and (
        file_flags.torsion != flags.torsion or file_flags.gauge != flags.gauge
    ):
        raise FlagMismatch("cache background flags differ from the requested ones")
    max_order = int(header["max_order"])
    if min_order is not None and max_order < min_order:
        raise FlagMismatch(f"cache max_order {max_order} < required {min_order}")

    entries: dict = {}
    current = None
    for line in lines[body_start:]:
        if not line.strip():
            continue
        if line.startswith("entry "):
            m = int(line[len("entry ") : -1])
            current = TensorExpr(fld)
            entries[m] = current
            continue
        if current is None:
            raise CorruptFile("term line before any entry header")
        try:
            coeff_s, _, facs = line.partition(" | ")
            value = Fraction(coeff_s)
            fs = [
                _factor_from_str(tok) for tok in facs.split(" ") if tok
            ]
        except (ValueError, ZeroDivisionError) as exc:
            raise CorruptFile(f"bad term line {line!r}: {exc}") from exc
        current._accum(coeff_rat(fld, value), fs)
    table = ColimTable(
        header["target"], int(header["rank"]), file_flags, max_order, fld, entries
    )
    return table
