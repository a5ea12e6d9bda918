"""Clause intermediate representation: terms, atoms, clauses, substitution,
canonical renaming and body-atom flattening.

Terms are restricted to variables, integer constants and linear expressions;
general function symbols are rejected at construction.  Substitutions are plain
var-name -> Term mappings, kept idempotent.  All values are immutable after
construction; fresh-variable generation is confined to a NameGen session.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .errors import HornlinError
from .linarith import (
    FALSE,
    Coeffs,
    LinAtomicRel,
    LinConstraint,
    conjoin,
    norm_coeffs,
    sat_q,
)

CONSTRAINT_RELS = {"=", ">", ">=", "<", "=<", "<="}


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class IntConst:
    value: int


@dataclass(frozen=True)
class LinExpr:
    coeffs: Coeffs
    constant: Fraction


Term = Var | IntConst | LinExpr

Subst = dict[str, Term]


def mk_linexpr(coeffs, constant=0) -> Term:
    """Build a term from a coefficient map, folding degenerate shapes:
    no variables -> IntConst, a bare 1*v -> Var."""
    cs = norm_coeffs(coeffs)
    k = Fraction(constant)
    if not cs:
        if k.denominator != 1:
            raise HornlinError(f"non-integer constant term {k}")
        return IntConst(int(k))
    if len(cs) == 1 and cs[0][1] == 1 and k == 0:
        return Var(cs[0][0])
    return LinExpr(cs, k)


def term_coeffs(t: Term) -> tuple[Coeffs, Fraction]:
    if isinstance(t, Var):
        return ((t.name, Fraction(1)),), Fraction(0)
    if isinstance(t, IntConst):
        return (), Fraction(t.value)
    return t.coeffs, t.constant


def term_vars(t: Term) -> list[str]:
    if isinstance(t, Var):
        return [t.name]
    if isinstance(t, IntConst):
        return []
    return [n for n, _ in t.coeffs]


def subst_term(t: Term, s: Subst) -> Term:
    if isinstance(t, Var):
        return s.get(t.name, t)
    if isinstance(t, IntConst):
        return t
    acc: dict[str, Fraction] = {}
    k = t.constant
    for n, c in t.coeffs:
        r = s.get(n)
        if r is None:
            acc[n] = acc.get(n, Fraction(0)) + c
            continue
        rc, rk = term_coeffs(r)
        k += c * rk
        for m, d in rc:
            acc[m] = acc.get(m, Fraction(0)) + c * d
    return mk_linexpr(acc, k)


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple[Term, ...]

    def __post_init__(self):
        if self.pred in CONSTRAINT_RELS:
            raise HornlinError(f"{self.pred!r} is a constraint relation, not a predicate")

    def vars(self) -> list[str]:
        out: list[str] = []
        for a in self.args:
            out.extend(term_vars(a))
        return out


def subst_atom(a: Atom, s: Subst) -> Atom:
    return Atom(a.pred, tuple(subst_term(t, s) for t in a.args))


def subst_rel(r: LinAtomicRel, s: Subst) -> LinAtomicRel:
    acc: dict[str, Fraction] = {}
    k = r.constant
    for n, c in r.coeffs:
        t = s.get(n)
        if t is None:
            acc[n] = acc.get(n, Fraction(0)) + c
            continue
        tc, tk = term_coeffs(t)
        k += c * tk
        for m, d in tc:
            acc[m] = acc.get(m, Fraction(0)) + c * d
    return LinAtomicRel(norm_coeffs(acc), k, r.rel)


def subst_constraint(c: LinConstraint, s: Subst) -> LinConstraint:
    out = LinConstraint()
    for r in c.conjuncts:
        out = conjoin(out, LinConstraint((subst_rel(r, s),)))
        if out.is_false():
            return FALSE
    return out


@dataclass(frozen=True)
class Clause:
    head: Optional[Atom]  # None means false: a constrained goal
    constraint: LinConstraint
    body: tuple[Atom, ...]

    def is_goal(self) -> bool:
        return self.head is None

    def is_fact(self) -> bool:
        return self.head is not None and not self.body

    def is_linear(self) -> bool:
        return len(self.body) <= 1

    def atoms(self) -> list[Atom]:
        return ([self.head] if self.head else []) + list(self.body)

    def vars(self) -> list[str]:
        """All variables in first-occurrence order: head, constraint, body."""
        seen: dict[str, None] = {}
        for v in self._scan_vars():
            seen.setdefault(v)
        return list(seen)

    def _scan_vars(self):
        if self.head:
            yield from self.head.vars()
        for r in self.constraint.conjuncts:
            for n, _ in r.coeffs:
                yield n
        for a in self.body:
            yield from a.vars()


def clause(head, constraint=None, body=()) -> Clause:
    return Clause(head, constraint if constraint is not None else LinConstraint(), tuple(body))


def apply_subst(c: Clause, s: Subst) -> Clause:
    return Clause(
        subst_atom(c.head, s) if c.head else None,
        subst_constraint(c.constraint, s),
        tuple(subst_atom(a, s) for a in c.body),
    )


# ---------------------------------------------------------------------------
# Unification.


def _walk(t: Term, s: Subst) -> Term:
    while isinstance(t, Var) and t.name in s:
        t = s[t.name]
    return t


def _bind(name: str, t: Term, s: Subst) -> Optional[Subst]:
    if isinstance(t, Var) and t.name == name:
        return s
    if name in term_vars(t):
        return None  # occurs check: X against an expression over X
    s[name] = t
    return s


def _unify_terms(t1: Term, t2: Term, s: Subst) -> Optional[Subst]:
    t1, t2 = _walk(t1, s), _walk(t2, s)
    t1, t2 = subst_term(t1, s), subst_term(t2, s)
    if isinstance(t1, Var):
        return _bind(t1.name, t2, s)
    if isinstance(t2, Var):
        return _bind(t2.name, t1, s)
    if isinstance(t1, IntConst) and isinstance(t2, IntConst):
        return s if t1.value == t2.value else None
    # Expressions unify only when syntactically equal; richer reasoning
    # belongs to the constraint engine and flatten removes the need here.
    return s if t1 == t2 else None


def unify_atoms(a1: Atom, a2: Atom) -> Optional[Subst]:
    """Most general unifier of two atoms, or None.

    Variables bind to terms; linear-expression arguments unify only with
    variables or syntactically equal expressions.
    """
    if a1.pred != a2.pred or len(a1.args) != len(a2.args):
        return None
    s: Subst = {}
    for t1, t2 in zip(a1.args, a2.args):
        if _unify_terms(t1, t2, s) is None:
            return None
    # Resolve chains so the result is idempotent.
    return {v: subst_term(t, s) for v, t in ((v, _walk(Var(v), s)) for v in list(s))}


# ---------------------------------------------------------------------------
# Fresh names / renaming.


class NameGen:
    """Session-scoped fresh-name source; single-writer per transformation."""

    def __init__(self, used: Iterable[str] = ()):
        self.used: set[str] = set(used)
        self._counters: dict[str, int] = {}

    def note(self, names: Iterable[str]) -> None:
        self.used.update(names)

    def fresh(self, base: str) -> str:
        root = base.rstrip("0123456789_") or "V"
        n = self._counters.get(root, 1)
        cand = base if base not in self.used else f"{root}_{n}"
        while cand in self.used:
            n += 1
            cand = f"{root}_{n}"
        self._counters[root] = n + 1
        self.used.add(cand)
        return cand


def rename_apart(c: Clause, gen: NameGen) -> Clause:
    s: Subst = {v: Var(gen.fresh(v)) for v in c.vars()}
    return apply_subst(c, s)


# ---------------------------------------------------------------------------
# Canonical renaming.


_REL_ORDER = {"=": 0, ">=": 1, ">": 2}


def _conjunct_key(r: LinAtomicRel, occ: dict[str, int]):
    big = 1 << 30
    shape = tuple(sorted((c, occ.get(n, big)) for n, c in r.coeffs))
    return (_REL_ORDER[r.rel], len(r.coeffs), shape, r.constant)


def _ordered_rel_vars(r: LinAtomicRel, occ: dict[str, int]) -> list[str]:
    big = 1 << 30
    return [n for n, _ in sorted(r.coeffs, key=lambda p: (occ.get(p[0], big), p[1], p[0]))]


def canonicalize(c: Clause) -> Clause:
    """Rename variables to V0, V1, ... by first occurrence scanning head, then
    the constraint in a fixed normal ordering of its conjuncts, then body
    atoms left to right.  Alpha-equivalent clauses yield identical results."""
    occ: dict[str, int] = {}
    for v in ([] if c.head is None else c.head.vars()):
        occ.setdefault(v, len(occ))
    for a in c.body:
        for v in a.vars():
            occ.setdefault(v, len(occ))

    conj = sorted(c.constraint.conjuncts, key=lambda r: _conjunct_key(r, occ))

    naming: dict[str, int] = {}

    def name_all(vs):
        for v in vs:
            naming.setdefault(v, len(naming))

    if c.head is not None:
        name_all(c.head.vars())
    for r in conj:
        name_all(_ordered_rel_vars(r, occ))
    for a in c.body:
        name_all(a.vars())

    s: Subst = {v: Var(f"V{i}") for v, i in naming.items()}
    out = apply_subst(Clause(c.head, LinConstraint(tuple(conj)), c.body), s)
    # conjunct order is stable under the renaming; re-sort for byte-stability
    occ2: dict[str, int] = {}
    for v in ([] if out.head is None else out.head.vars()):
        occ2.setdefault(v, len(occ2))
    for a in out.body:
        for v in a.vars():
            occ2.setdefault(v, len(occ2))
    conj2 = tuple(sorted(out.constraint.conjuncts, key=lambda r: _conjunct_key(r, occ2)))
    return Clause(out.head, LinConstraint(conj2), out.body)


def canonical_key(c: Clause) -> tuple:
    k = canonicalize(c)
    return (
        None if k.head is None else (k.head.pred, k.head.args),
        k.constraint.conjuncts,
        tuple((a.pred, a.args) for a in k.body),
    )


# ---------------------------------------------------------------------------
# Flattening.


def flatten(c: Clause, gen: Optional[NameGen] = None) -> Clause:
    """Replace every non-variable body-atom argument by a fresh variable,
    adding the defining equality to the constraint.  Variable arguments are
    kept, repetitions included: the sharing pattern is meaningful."""
    gen = gen or NameGen(c.vars())
    gen.note(c.vars())
    extra: list[LinAtomicRel] = []
    body = []
    for a in c.body:
        args = []
        for t in a.args:
            if isinstance(t, Var):
                args.append(t)
                continue
            v = gen.fresh("N")
            cs, k = term_coeffs(t)
            # v = t  recorded as  v - t = 0
            neg = [(n, -c_) for n, c_ in cs]
            neg.append((v, Fraction(1)))
            extra.append(LinAtomicRel(norm_coeffs(neg), -k, "="))
            args.append(Var(v))
        body.append(Atom(a.pred, tuple(args)))
    if not extra:
        return c
    return Clause(c.head, conjoin(c.constraint, LinConstraint(tuple(extra))), tuple(body))


# ---------------------------------------------------------------------------
# Clause simplification: solved-form equalities, projection of purely
# constraint-local variables, optional merging of equally-defined variables.


def _occ_index(c: Clause) -> dict[str, int]:
    occ: dict[str, int] = {}
    for v in c.vars():
        occ.setdefault(v, len(occ))
    return occ


def _anchored(c: Clause) -> set[str]:
    out: set[str] = set()
    if c.head:
        out.update(c.head.vars())
    for a in c.body:
        out.update(a.vars())
    return out


@dataclass
class _Row:
    lead: str
    coeffs: dict[str, Fraction]  # rhs
    const: Fraction
    anchored: bool
    src: int  # original conjunct position, for stable emission

    def rhs_is_var(self):
        return self.const == 0 and len(self.coeffs) == 1 and next(iter(self.coeffs.values())) == 1

    def rhs_is_const(self):
        return not self.coeffs

    def rhs_key(self):
        return (tuple(sorted(self.coeffs.items())), self.const)


def _subst_into(coeffs: dict[str, Fraction], const: Fraction, var: str, rhs: dict[str, Fraction], rhs_k: Fraction):
    a = coeffs.pop(var, Fraction(0))
    if a == 0:
        return coeffs, const
    for n, c in rhs.items():
        coeffs[n] = coeffs.get(n, Fraction(0)) + a * c
        if coeffs[n] == 0:
            del coeffs[n]
    return coeffs, const + a * rhs_k


def simplify_clause(c: Clause, merge: bool = False, drop_redundant: bool = True) -> Clause:
    """Normalize a clause's constraint.

    Equalities are put into a solved form lead = rhs, where the lead variable
    is the latest-occurring one (purely constraint-local variables preferred).
    A lead substitutes into the rest of the constraint when it is
    constraint-local (projection) or when its rhs is a variable or constant;
    a lead defined by a compound expression stays as an explicit conjunct.

    With merge=True, variables with identical defining terms collapse to one
    representative which also replaces them inside head and body atoms; a
    single defining conjunct per representative is kept (none for
    variable-to-variable classes).  Redundant inequalities, entailed over the
    rationals by the remaining conjuncts, are dropped when drop_redundant.
    """
    if c.constraint.is_false():
        return Clause(c.head, FALSE, c.body)
    occ = _occ_index(c)
    anchored = _anchored(c)
    big = 1 << 30

    rows: list[_Row] = []
    ineqs: list[tuple[LinAtomicRel, int]] = []

    def substituters():
        for r in rows:
            if not r.anchored or r.rhs_is_var() or r.rhs_is_const():
                yield r

    for idx, rel in enumerate(c.constraint.conjuncts):
        coeffs = dict(rel.coeffs)
        const = rel.constant
        if rel.rel == "=":
            for r in substituters():
                coeffs, const = _subst_into(coeffs, const, r.lead, r.coeffs, r.const)
            if not coeffs:
                if const != 0:
                    return Clause(c.head, FALSE, c.body)
                continue
            cand = sorted(coeffs, key=lambda v: (0 if v not in anchored else 1, -occ.get(v, big), v))
            lead = cand[0]
            a = coeffs.pop(lead)
            rhs = {n: -v / a for n, v in coeffs.items()}
            rhs_k = -const / a
            row = _Row(lead, rhs, rhs_k, lead in anchored, idx)
            # eliminate the new lead from existing rows' right-hand sides
            if not row.anchored or row.rhs_is_var() or row.rhs_is_const():
                for r in rows:
                    r.coeffs, r.const = _subst_into(r.coeffs, r.const, lead, rhs, rhs_k)
            rows.append(row)
        else:
            ineqs.append((rel, idx))

    # Path-compress shallow chains so every rhs mentions only final names.
    changed = True
    while changed:
        changed = False
        for r in rows:
            for s in substituters():
                if s is r:
                    continue
                if s.lead in r.coeffs:
                    r.coeffs, r.const = _subst_into(r.coeffs, r.const, s.lead, s.coeffs, s.const)
                    changed = True

    # Substitute into inequalities.
    subs = list(substituters())
    new_ineqs: list[tuple[LinAtomicRel, int]] = []
    for rel, idx in ineqs:
        coeffs = dict(rel.coeffs)
        const = rel.constant
        for s in subs:
            coeffs, const = _subst_into(coeffs, const, s.lead, s.coeffs, s.const)
        row = LinAtomicRel(norm_coeffs(coeffs), const, rel.rel)
        if row.is_ground():
            if not row.ground_value():
                return Clause(c.head, FALSE, c.body)
            continue
        new_ineqs.append((row, idx))

    rename: Subst = {}
    kept_rows: list[_Row] = []
    if merge:
        shallow: list[_Row] = []
        deep: list[_Row] = []
        for r in rows:
            if not r.anchored:
                continue
            (shallow if (r.rhs_is_var() or r.rhs_is_const()) else deep).append(r)
        groups: dict[tuple, list[_Row]] = {}
        for r in shallow:
            groups.setdefault(r.rhs_key(), []).append(r)
        for members in groups.values():
            rhs_coeffs, rhs_k = dict(members[0].coeffs), members[0].const
            names = [m.lead for m in members]
            is_var_rhs = members[0].rhs_is_var()
            if is_var_rhs:
                names.append(next(iter(rhs_coeffs)))
            rep = min(names, key=lambda v: (occ.get(v, big), v))
            for n in names:
                if n != rep:
                    rename[n] = Var(rep)
            if not is_var_rhs:
                kept_rows.append(_Row(rep, rhs_coeffs, rhs_k, True, min(m.src for m in members)))
        # variables defined by the same compound term collapse too, once the
        # shallow renaming has been pushed through their right-hand sides
        deep_groups: dict[tuple, list[_Row]] = {}
        for r in deep:
            cs: dict[str, Fraction] = {}
            k = r.const
            for n, v in r.coeffs.items():
                rn = rename.get(n)
                m = rn.name if isinstance(rn, Var) else n
                cs[m] = cs.get(m, Fraction(0)) + v
            r.coeffs = {n: v for n, v in cs.items() if v != 0}
            r.const = k
            deep_groups.setdefault(r.rhs_key(), []).append(r)
        for members in deep_groups.values():
            rep_row = min(members, key=lambda m: (occ.get(m.lead, big), m.lead))
            for m in members:
                if m.lead != rep_row.lead:
                    rename[m.lead] = Var(rep_row.lead)
            kept_rows.append(
                _Row(rep_row.lead, rep_row.coeffs, rep_row.const, True, min(m.src for m in members))
            )
        # path-compress: a class member may map to a lead that was itself
        # merged away afterwards; every target must be final
        def _resolve(v: str) -> str:
            seen = {v}
            while True:
                nxt = rename.get(v)
                if not isinstance(nxt, Var) or nxt.name in seen:
                    return v
                v = nxt.name
                seen.add(v)

        rename = {k: Var(_resolve(k)) for k in rename}
    else:
        kept_rows = [r for r in rows if r.anchored]

    # Rebuild conjuncts in stable source order.
    out_rels: list[tuple[int, LinAtomicRel]] = []
    for r in kept_rows:
        cs = {r.lead: Fraction(1)}
        for n, v in r.coeffs.items():
            cs[n] = cs.get(n, Fraction(0)) - v
        rel = LinAtomicRel(norm_coeffs(cs), -r.const, "=")
        rel = subst_rel(rel, rename) if rename else rel
        if rel.is_ground():
            if not rel.ground_value():
                return Clause(c.head, FALSE, c.body)
            continue
        out_rels.append((r.src, rel))
    for rel, idx in new_ineqs:
        rel = subst_rel(rel, rename) if rename else rel
        if rel.is_ground():
            if not rel.ground_value():
                return Clause(c.head, FALSE, c.body)
            continue
        out_rels.append((idx, rel))
    out_rels.sort(key=lambda p: p[0])

    seen: set[LinAtomicRel] = set()
    uniq: list[LinAtomicRel] = []
    for _, rel in out_rels:
        if rel not in seen:
            seen.add(rel)
            uniq.append(rel)

    if drop_redundant:
        kept: list[LinAtomicRel] = []
        for i, rel in enumerate(uniq):
            if rel.rel == "=":
                kept.append(rel)
                continue
            others = kept + uniq[i + 1 :]
            probe = conjoin(LinConstraint(tuple(others)), LinConstraint((rel.negated_q(),)))
            if probe.is_false() or not sat_q(probe):
                continue  # entailed over Q by the rest
            kept.append(rel)
        uniq = kept

    head = subst_atom(c.head, rename) if (rename and c.head) else c.head
    body = tuple(subst_atom(a, rename) for a in c.body) if rename else c.body
    return Clause(head, LinConstraint(tuple(uniq)), body)


# ---------------------------------------------------------------------------
# Clause sets.


@dataclass(frozen=True)
class ClauseSet:
    clauses: tuple[Clause, ...]
    signatures: Mapping[str, int] = field(default_factory=dict)

    @staticmethod
    def of(clauses: Sequence[Clause]) -> "ClauseSet":
        sigs: dict[str, int] = {}
        for c in clauses:
            for a in c.atoms():
                prev = sigs.setdefault(a.pred, len(a.args))
                if prev != len(a.args):
                    raise HornlinError(
                        f"predicate {a.pred}/{len(a.args)} clashes with earlier arity {prev}"
                    )
        return ClauseSet(tuple(clauses), sigs)

    def __iter__(self):
        return iter(self.clauses)

    def __len__(self):
        return len(self.clauses)

    def goals(self) -> list[Clause]:
        return [c for c in self.clauses if c.is_goal()]

    def definite(self) -> list[Clause]:
        return [c for c in self.clauses if not c.is_goal()]

    def clauses_for(self, pred: str) -> list[Clause]:
        return [c for c in self.clauses if c.head is not None and c.head.pred == pred]

    def all_var_names(self) -> set[str]:
        out: set[str] = set()
        for c in self.clauses:
            out.update(c.vars())
        return out

    def dedup(self) -> "ClauseSet":
        seen: set[tuple] = set()
        out = []
        for c in self.clauses:
            k = canonical_key(c)
            if k not in seen:
                seen.add(k)
                out.append(c)
        return ClauseSet.of(out)
