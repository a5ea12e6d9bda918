"""Prolog-style clause syntax: parser and canonical printer.

    fib(N3,F3) :- N1>=0, N2=N1+1, fib(N1,F1), fib(N2,F2).
    false :- F>1, r_fibonacci(0,F).

Variables start with an uppercase letter or underscore, predicates with a
lowercase letter.  Relations: =, =<, >=, <, >.  Comments run from % to end of
line.  A top-level ';' in a body splits the clause into one clause per
alternative.  Printing then re-parsing is a fixpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .chc import Atom, Clause, ClauseSet, IntConst, LinExpr, Term, Var, mk_linexpr
from .errors import ParseError
from .linarith import LinAtomicRel, LinConstraint

_PUNCT = [":-", ">=", "=<", "<=", "(", ")", "{", "}", ",", ".", ";", "+", "-", "*", "=", "<", ">"]


@dataclass(frozen=True)
class Tok:
    kind: str  # 'int' | 'lname' | 'uname' | punctuation literal
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Tok]:
    toks: list[Tok] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == "%":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(Tok("int", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "uname" if (word[0].isupper() or word[0] == "_") else "lname"
            toks.append(Tok(kind, word, line, col))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                toks.append(Tok(p, p, line, col))
                i += len(p)
                col += len(p)
                break
        else:
            raise ParseError(f"unexpected character {ch!r}", line, col)
    return toks


class _Cursor:
    def __init__(self, toks: list[Tok]):
        self.toks = toks
        self.i = 0

    def peek(self, k=0) -> Optional[Tok]:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def next(self) -> Tok:
        t = self.peek()
        if t is None:
            last = self.toks[-1] if self.toks else None
            raise ParseError(
                "unexpected end of input",
                last.line if last else 1,
                last.col if last else 1,
            )
        self.i += 1
        return t

    def expect(self, kind: str) -> Tok:
        t = self.next()
        if t.kind != kind:
            raise ParseError(f"expected {kind!r}, found {t.text!r}", t.line, t.col)
        return t

    def at(self, kind: str) -> bool:
        t = self.peek()
        return t is not None and t.kind == kind


def _parse_linear(cur: _Cursor) -> tuple[dict[str, Fraction], Fraction]:
    """A linear expression as a coefficient map plus constant."""
    coeffs: dict[str, Fraction] = {}
    const = Fraction(0)

    def add(c: Fraction, v: Optional[str]):
        nonlocal const
        if v is None:
            const += c
        else:
            coeffs[v] = coeffs.get(v, Fraction(0)) + c

    def primary(sign: Fraction):
        t = cur.next()
        if t.kind == "-":
            primary(-sign)
            return
        if t.kind == "(":
            sub_coeffs, sub_const = _parse_linear(cur)
            cur.expect(")")
            for v, c in sub_coeffs.items():
                add(sign * c, v)
            add(sign * sub_const, None)
            return
        if t.kind == "int":
            val = Fraction(int(t.text))
            if cur.at("*"):
                cur.next()
                t2 = cur.next()
                if t2.kind != "uname":
                    raise ParseError("expected a variable after '*'", t2.line, t2.col)
                add(sign * val, t2.text)
            else:
                add(sign * val, None)
            return
        if t.kind == "uname":
            add(sign, t.text)
            return
        raise ParseError(f"expected a linear term, found {t.text!r}", t.line, t.col)

    primary(Fraction(1))
    while cur.at("+") or cur.at("-"):
        op = cur.next()
        primary(Fraction(1) if op.kind == "+" else Fraction(-1))
    return coeffs, const


def _term_of(coeffs: dict[str, Fraction], const: Fraction) -> Term:
    return mk_linexpr(coeffs, const)


def _parse_atom(cur: _Cursor) -> Atom:
    t = cur.expect("lname")
    args: list[Term] = []
    if cur.at("("):
        cur.next()
        while True:
            coeffs, const = _parse_linear(cur)
            args.append(_term_of(coeffs, const))
            if cur.at(","):
                cur.next()
                continue
            cur.expect(")")
            break
    return Atom(t.text, tuple(args))


_RELS = {"=", ">=", "=<", "<=", "<", ">"}


def _parse_body_item(cur: _Cursor):
    """Returns ('atom', Atom) or ('rel', LinAtomicRel) or ('true', None)."""
    t = cur.peek()
    if t is not None and t.kind == "lname":
        nxt = cur.peek(1)
        if t.text == "true" and not (nxt is not None and nxt.kind == "("):
            cur.next()
            return ("true", None)
        if nxt is not None and nxt.kind in _RELS:
            raise ParseError(f"cannot compare predicate {t.text!r}", t.line, t.col)
        return ("atom", _parse_atom(cur))
    lhs_coeffs, lhs_const = _parse_linear(cur)
    op = cur.next()
    if op.kind not in _RELS:
        raise ParseError(f"expected a relation, found {op.text!r}", op.line, op.col)
    rhs_coeffs, rhs_const = _parse_linear(cur)
    for v, c in rhs_coeffs.items():
        lhs_coeffs[v] = lhs_coeffs.get(v, Fraction(0)) - c
    return ("rel", LinAtomicRel.make(lhs_coeffs, lhs_const - rhs_const, op.kind))


def _parse_clause(cur: _Cursor) -> list[Clause]:
    t = cur.peek()
    head: Optional[Atom]
    if t is not None and t.kind == "lname" and t.text == "false":
        cur.next()
        head = None
    else:
        head = _parse_atom(cur)
    alternatives: list[tuple[list[LinAtomicRel], list[Atom]]] = []
    if cur.at(":-"):
        cur.next()
        rels: list[LinAtomicRel] = []
        atoms: list[Atom] = []
        while True:
            kind, item = _parse_body_item(cur)
            if kind == "rel":
                rels.append(item)
            elif kind == "atom":
                atoms.append(item)
            if cur.at(","):
                cur.next()
                continue
            if cur.at(";"):
                cur.next()
                alternatives.append((rels, atoms))
                rels, atoms = [], []
                continue
            break
        alternatives.append((rels, atoms))
    else:
        alternatives.append(([], []))
    cur.expect(".")
    out = []
    for rels, atoms in alternatives:
        constraint = LinConstraint(())
        for r in rels:
            constraint = LinConstraint(constraint.conjuncts + (r,))
        out.append(Clause(head, constraint, tuple(atoms)))
    return out


def parse_clauses(text: str) -> ClauseSet:
    cur = _Cursor(tokenize(text))
    clauses: list[Clause] = []
    while cur.peek() is not None:
        clauses.extend(_parse_clause(cur))
    return ClauseSet.of(clauses)


# ---------------------------------------------------------------------------
# Printing.


def _fmt_monomial(coeff: Fraction, var: str) -> str:
    assert coeff > 0
    return var if coeff == 1 else f"{coeff}*{var}"


def _fmt_sum(parts: list[tuple[Fraction, Optional[str]]]) -> str:
    if not parts:
        return "0"
    chunks = []
    for i, (c, v) in enumerate(parts):
        s = _fmt_monomial(c, v) if v is not None else str(c)
        chunks.append(s if i == 0 else f"+{s}")
    return "".join(chunks)


def _scale_integral(rel: LinAtomicRel) -> LinAtomicRel:
    return rel.scaled_integral()


_MIRROR = {">=": "=<", ">": "<", "=": "="}


def rel_to_text(rel: LinAtomicRel) -> str:
    rel = _scale_integral(rel)
    pos: list[tuple[Fraction, Optional[str]]] = []
    neg: list[tuple[Fraction, Optional[str]]] = []
    for n, c in rel.coeffs:
        (pos if c > 0 else neg).append((abs(c), n))
    k = rel.constant
    if k > 0:
        pos.append((k, None))
    elif k < 0:
        neg.append((-k, None))
    if not pos and neg:
        return f"{_fmt_sum(neg)}{_MIRROR[rel.rel]}0"
    return f"{_fmt_sum(pos)}{rel.rel}{_fmt_sum(neg)}"


def term_to_text(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, IntConst):
        return str(t.value)
    assert isinstance(t, LinExpr)
    if any(c.denominator != 1 for _, c in t.coeffs) or t.constant.denominator != 1:
        # fractional coefficients have no surface syntax; they only arise from
        # engine-internal projections, never from parsed clauses
        raise ParseError(f"cannot print non-integral term {t}")
    out = []
    for i, (n, c) in enumerate(t.coeffs):
        if c > 0:
            out.append(("+" if i else "") + _fmt_monomial(c, n))
        else:
            out.append("-" + _fmt_monomial(-c, n))
    if t.constant > 0:
        out.append(f"+{t.constant}")
    elif t.constant < 0:
        out.append(f"-{-t.constant}")
    return "".join(out)


def atom_to_text(a: Atom) -> str:
    if not a.args:
        return a.pred
    return f"{a.pred}({','.join(term_to_text(t) for t in a.args)})"


def clause_to_text(c: Clause) -> str:
    head = "false" if c.head is None else atom_to_text(c.head)
    items = [rel_to_text(r) for r in c.constraint.conjuncts]
    items += [atom_to_text(a) for a in c.body]
    if not items:
        return f"{head}."
    return f"{head} :- {', '.join(items)}."


def clauses_to_text(cs) -> str:
    return "\n".join(clause_to_text(c) for c in cs) + "\n"
