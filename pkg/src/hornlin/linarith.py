"""Exact linear integer arithmetic over named variables.

Atomic relations are kept in the normal form  sum(coeff_i * v_i) + constant REL 0
with REL one of '=', '>=', '>'.  Relations written with '=<' or '<' are flipped
on construction.  All arithmetic is arbitrary-precision rational: Fourier-Motzkin
with floats would be unsound.

Rational satisfiability (sat_q) is exact via Fourier-Motzkin elimination with
equalities used as substitutions first.  Integer satisfiability (sat_z) is
branch-and-bound on the rational relaxation and may answer 'unknown' when its
step budget runs out; 'unsat' answers are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional

from .errors import ResourceLimit

Coeffs = tuple[tuple[str, Fraction], ...]

_FLIP = {"=<": ">=", "<=": ">=", "<": ">", "=": "=", ">=": ">=", ">": ">"}

DEFAULT_ROW_BUDGET = 10_000
DEFAULT_Z_BUDGET = 10_000


def norm_coeffs(items: Mapping[str, Fraction] | Iterable[tuple[str, Fraction]]) -> Coeffs:
    acc: dict[str, Fraction] = {}
    pairs = items.items() if isinstance(items, Mapping) else items
    for name, c in pairs:
        c = Fraction(c)
        if name in acc:
            acc[name] += c
        else:
            acc[name] = c
    return tuple(sorted((n, c) for n, c in acc.items() if c != 0))


@dataclass(frozen=True)
class LinAtomicRel:
    coeffs: Coeffs
    constant: Fraction
    rel: str  # '=', '>=' or '>'

    @staticmethod
    def make(coeffs, constant, rel) -> "LinAtomicRel":
        if rel not in _FLIP:
            raise ValueError(f"unknown relation {rel!r}")
        cs = norm_coeffs(coeffs)
        k = Fraction(constant)
        if rel in ("=<", "<=", "<"):
            cs = tuple((n, -c) for n, c in cs)
            k = -k
        return LinAtomicRel(cs, k, _FLIP[rel])

    def is_ground(self) -> bool:
        return not self.coeffs

    def ground_value(self) -> bool:
        assert self.is_ground()
        if self.rel == "=":
            return self.constant == 0
        if self.rel == ">=":
            return self.constant >= 0
        return self.constant > 0

    def vars(self) -> set[str]:
        return {n for n, _ in self.coeffs}

    def eval(self, point: Mapping[str, int | Fraction]) -> bool:
        v = self.constant + sum(c * Fraction(point[n]) for n, c in self.coeffs)
        if self.rel == "=":
            return v == 0
        if self.rel == ">=":
            return v >= 0
        return v > 0

    def scaled_integral(self) -> "LinAtomicRel":
        """Multiply through by the lcm of denominators; solution set unchanged."""
        dens = [c.denominator for _, c in self.coeffs] + [self.constant.denominator]
        m = math.lcm(*dens)
        if m == 1:
            return self
        return LinAtomicRel(
            tuple((n, c * m) for n, c in self.coeffs), self.constant * m, self.rel
        )

    def negated_q(self) -> "LinAtomicRel":
        """Rational negation of an inequality; not defined for '='."""
        assert self.rel != "="
        neg = tuple((n, -c) for n, c in self.coeffs)
        new_rel = ">" if self.rel == ">=" else ">="
        return LinAtomicRel(neg, -self.constant, new_rel)


TRUE_REL = LinAtomicRel((), Fraction(0), "=")
FALSE_REL = LinAtomicRel((), Fraction(-1), ">=")


@dataclass(frozen=True)
class LinConstraint:
    conjuncts: tuple[LinAtomicRel, ...] = ()

    @staticmethod
    def of(*rels: LinAtomicRel) -> "LinConstraint":
        return conjoin(LinConstraint(), LinConstraint(tuple(rels)))

    def is_true(self) -> bool:
        return not self.conjuncts

    def is_false(self) -> bool:
        return any(r.is_ground() and not r.ground_value() for r in self.conjuncts)

    def vars(self) -> set[str]:
        out: set[str] = set()
        for r in self.conjuncts:
            out |= r.vars()
        return out

    def eval(self, point: Mapping[str, int | Fraction]) -> bool:
        return all(r.eval(point) for r in self.conjuncts)


TRUE = LinConstraint()
FALSE = LinConstraint((FALSE_REL,))


def conjoin(c1: LinConstraint, c2: LinConstraint) -> LinConstraint:
    """Concatenate conjuncts, evaluating ground ones and dropping trivial truths."""
    out = []
    for r in c1.conjuncts + c2.conjuncts:
        if r.is_ground():
            if not r.ground_value():
                return FALSE
            continue
        out.append(r)
    return LinConstraint(tuple(out))


# ---------------------------------------------------------------------------
# Fourier-Motzkin machinery.
#
# Rows are mutable dicts during elimination: (coeffs: dict, constant, rel).


def _rows_of(c: LinConstraint):
    return [(dict(r.coeffs), r.constant, r.rel) for r in c.conjuncts]


def _row_ground_ok(row) -> Optional[bool]:
    coeffs, k, rel = row
    if coeffs:
        return None
    if rel == "=":
        return k == 0
    if rel == ">=":
        return k >= 0
    return k > 0


def _subst_row(row, var, expr_coeffs, expr_const):
    """Replace var by the linear expression (expr_coeffs, expr_const) in row."""
    coeffs, k, rel = row
    a = coeffs.pop(var, Fraction(0))
    if a == 0:
        return row
    for n, c in expr_coeffs.items():
        coeffs[n] = coeffs.get(n, Fraction(0)) + a * c
        if coeffs[n] == 0:
            del coeffs[n]
    return (coeffs, k + a * expr_const, rel)


def _fm_eliminate(rows, targets, budget, record=None):
    """Eliminate every variable in `targets` from rows.

    Returns the residual rows, or None if a ground contradiction appears.
    When `record` is a list, per-variable elimination info is appended so a
    witness can be rebuilt by back-substitution.
    """
    rows = [r for r in rows]
    todo = set(targets)
    while todo:
        kept = []
        for row in rows:
            g = _row_ground_ok(row)
            if g is None:
                kept.append(row)
            elif not g:
                return None
        rows = kept
        if len(rows) > budget:
            raise ResourceLimit(f"elimination exceeded {budget} rows")

        # Prefer a variable pinned by an equality, then cheapest product.
        eq_vars = sorted(
            v for v in todo if any(r[2] == "=" and v in r[0] for r in rows)
        )
        if eq_vars:
            var = eq_vars[0]
        else:
            present = sorted(v for v in todo if any(v in r[0] for r in rows))
            if not present:
                for v in sorted(todo):
                    if record is not None:
                        record.append(("free", v))
                todo.clear()
                break
            var = min(
                present,
                key=lambda v: (
                    sum(1 for r in rows if v in r[0] and r[0][v] > 0)
                    * sum(1 for r in rows if v in r[0] and r[0][v] < 0),
                    v,
                ),
            )
        todo.discard(var)

        eq = next((r for r in rows if r[2] == "=" and var in r[0]), None)
        if eq is not None:
            coeffs, k, _ = eq
            a = coeffs[var]
            expr_coeffs = {n: -c / a for n, c in coeffs.items() if n != var}
            expr_const = -k / a
            new_rows = []
            for row in rows:
                if row is eq:
                    continue
                new_rows.append(
                    _subst_row((dict(row[0]), row[1], row[2]), var, expr_coeffs, expr_const)
                )
            rows = new_rows
            if record is not None:
                record.append(("eq", var, expr_coeffs, expr_const))
            continue

        lowers, uppers, rest = [], [], []
        for coeffs, k, rel in rows:
            a = coeffs.get(var, Fraction(0))
            if a == 0:
                rest.append((coeffs, k, rel))
                continue
            # a*var + rest REL 0  =>  var REL' -(rest)/a (flipped when a < 0)
            expr = {n: -c / a for n, c in coeffs.items() if n != var}
            const = -k / a
            strict = rel == ">"
            if a > 0:
                lowers.append((expr, const, strict))
            else:
                uppers.append((expr, const, strict))
        new_rows = rest
        for lo_expr, lo_k, lo_s in lowers:
            for up_expr, up_k, up_s in uppers:
                comb = dict(up_expr)
                for n, c in lo_expr.items():
                    comb[n] = comb.get(n, Fraction(0)) - c
                    if comb[n] == 0:
                        del comb[n]
                new_rows.append((comb, up_k - lo_k, ">" if (lo_s or up_s) else ">="))
        if len(new_rows) > budget:
            raise ResourceLimit(f"elimination exceeded {budget} rows")
        rows = new_rows
        if record is not None:
            record.append(("fm", var, lowers, uppers))
    return rows


def _eval_linear(expr_coeffs, const, point) -> Fraction:
    return const + sum(c * point[n] for n, c in expr_coeffs.items())


def q_solve(c: LinConstraint, budget: int = DEFAULT_ROW_BUDGET) -> Optional[dict[str, Fraction]]:
    """Exact rational witness, or None when c has no rational solution."""
    record: list = []
    rows = _fm_eliminate(_rows_of(c), c.vars(), budget, record)
    if rows is None:
        return None
    for row in rows:
        g = _row_ground_ok(row)
        if g is False:
            return None
    point: dict[str, Fraction] = {}
    for step in reversed(record):
        if step[0] == "free":
            point[step[1]] = Fraction(0)
        elif step[0] == "eq":
            _, var, expr, const = step
            point[var] = _eval_linear(expr, const, point)
        else:
            _, var, lowers, uppers = step
            lo = None  # (value, strict)
            for expr, const, strict in lowers:
                v = _eval_linear(expr, const, point)
                if lo is None or v > lo[0] or (v == lo[0] and strict):
                    lo = (v, strict)
            up = None
            for expr, const, strict in uppers:
                v = _eval_linear(expr, const, point)
                if up is None or v < up[0] or (v == up[0] and strict):
                    up = (v, strict)
            if lo is None and up is None:
                point[var] = Fraction(0)
            elif lo is None:
                point[var] = up[0] - 1
            elif up is None:
                point[var] = lo[0] + 1
            elif lo[0] == up[0]:
                point[var] = lo[0]
            else:
                point[var] = (lo[0] + up[0]) / 2
    return point


def sat_q(c: LinConstraint, budget: int = DEFAULT_ROW_BUDGET) -> bool:
    """Exact rational satisfiability; unsat over Q implies unsat over Z."""
    return q_solve(c, budget) is not None


@dataclass(frozen=True)
class ZResult:
    status: str  # 'sat' | 'unsat' | 'unknown'
    witness: Optional[dict[str, int]] = None


def _tighten_z(c: LinConstraint) -> Optional[LinConstraint]:
    """Integer-exact preprocessing: scale to integer coefficients, turn strict
    inequalities into non-strict ones, divide by the content gcd.

    Returns None when some single conjunct is already integer-infeasible.
    """
    out = []
    for r in c.conjuncts:
        r = r.scaled_integral()
        coeffs = dict(r.coeffs)
        k = r.constant
        rel = r.rel
        if rel == ">":
            k -= 1
            rel = ">="
        if coeffs:
            g = math.gcd(*(abs(int(v.numerator)) for v in coeffs.values()))
            if g > 1:
                if rel == "=":
                    if k.numerator % g != 0:
                        return None
                    k = k / g
                else:  # floor-tighten:  g*e + k >= 0  <=>  e >= ceil(-k/g)
                    k = Fraction(math.floor(k / g))
                coeffs = {n: v / g for n, v in coeffs.items()}
        row = LinAtomicRel(norm_coeffs(coeffs), k, rel)
        if row.is_ground():
            if not row.ground_value():
                return None
            continue
        out.append(row)
    return LinConstraint(tuple(out))


def sat_z(c: LinConstraint, budget: int = DEFAULT_Z_BUDGET) -> ZResult:
    """Branch-and-bound integer feasibility on the rational relaxation.

    'sat' carries an integer witness for every variable of c; 'unsat' is exact;
    'unknown' only on budget exhaustion (e.g. unbounded gap polyhedra).
    """
    assert budget >= 1
    tightened = _tighten_z(c)
    if tightened is None:
        return ZResult("unsat")

    steps = budget
    ran_dry = False
    stack = [tightened]  # depth-first, lower branch on top
    while stack:
        cur = stack.pop()
        if steps <= 0:
            ran_dry = True
            break
        steps -= 1
        point = q_solve(cur)
        if point is None:
            continue
        frac = sorted(n for n, v in point.items() if v.denominator != 1)
        if not frac:
            witness = {n: int(v) for n, v in point.items()}
            for n in c.vars():
                witness.setdefault(n, 0)
            return ZResult("sat", witness)
        var = frac[0]
        v = point[var]
        lo = LinAtomicRel.make({var: 1}, -Fraction(math.floor(v)), "=<")
        hi = LinAtomicRel.make({var: 1}, -Fraction(math.ceil(v)), ">=")
        stack.append(conjoin(cur, LinConstraint((hi,))))
        stack.append(conjoin(cur, LinConstraint((lo,))))
    return ZResult("unknown" if ran_dry else "unsat")


def eliminate(c: LinConstraint, vs: Iterable[str], budget: int = DEFAULT_ROW_BUDGET) -> LinConstraint:
    """Exact rational projection: the result mentions no variable of vs and is
    Q-satisfiable iff exists-vs.c is.  Equalities are used as substitutions first."""
    vs = set(vs) & c.vars()
    if not vs:
        return c
    rows = _fm_eliminate(_rows_of(c), vs, budget)
    if rows is None:
        return FALSE
    out = []
    seen = set()
    for coeffs, k, rel in rows:
        row = LinAtomicRel(norm_coeffs(coeffs), k, rel)
        if row.is_ground():
            if not row.ground_value():
                return FALSE
            continue
        if row not in seen:
            seen.add(row)
            out.append(row)
    return LinConstraint(tuple(out))


@dataclass(frozen=True)
class EntailResult:
    status: str  # 'valid' | 'invalid' | 'unknown'
    witness: Optional[dict[str, int]] = None


def _neg_branches_z(d: LinAtomicRel) -> list[LinAtomicRel]:
    """Integer-exact negation branches of a single conjunct."""
    d = d.scaled_integral()
    if d.rel == "=":
        # not(e = 0)  <=>  e >= 1  or  e <= -1   (integer-valued e)
        ge1 = LinAtomicRel(d.coeffs, d.constant - 1, ">=")
        neg = tuple((n, -c) for n, c in d.coeffs)
        le1 = LinAtomicRel(neg, -d.constant - 1, ">=")
        return [ge1, le1]
    return [d.negated_q()]


def entails(c1: LinConstraint, c2: LinConstraint, budget: int = DEFAULT_Z_BUDGET) -> EntailResult:
    """Valid iff every integer point of c1 satisfies c2.

    Checked conjunct-by-conjunct: c1 and not(d) must be Z-unsat on every
    negation branch.  An 'invalid' verdict carries an integer witness of
    c1 and not(d); 'unknown' is surfaced, never coerced.
    """
    saw_unknown = False
    for d in c2.conjuncts:
        if d.is_ground():
            if d.ground_value():
                continue
            branches = [TRUE_REL]
        else:
            branches = _neg_branches_z(d)
        for b in branches:
            probe = conjoin(c1, LinConstraint((b,))) if not b.is_ground() else c1
            res = sat_z(probe, budget)
            if res.status == "sat":
                return EntailResult("invalid", res.witness)
            if res.status == "unknown":
                saw_unknown = True
    return EntailResult("unknown" if saw_unknown else "valid")
