"""Parser and validator for specification files.

A spec file is a triple header

    { n = N, N >= 0, u = 1, v = 0, t = 0 } fibonacci { fib(N, u) }

followed by Prolog-style clauses defining the postcondition predicate and any
auxiliary predicates.  Binding items are program-variable bindings (to a
parameter or an integer pin), bare constraints over the parameters, or pre
atoms naming a predicate defined among the clauses.  The clauses partition into
the postcondition definition (clauses whose head predicate is the one named in
the right brace) and the auxiliary rest, which must be linear and must not
mention the postcondition predicate.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .chc import Atom, Clause, ClauseSet, IntConst, Var, subst_term, term_coeffs
from .errors import ParseError, SpecError
from .linarith import LinAtomicRel, LinConstraint, conjoin, norm_coeffs, sat_z
from .parser import _Cursor, _parse_atom, _parse_linear, clause_to_text, parse_clauses, tokenize
from .solve import derive_atom_values


@dataclass(frozen=True)
class Binding:
    var: str  # program variable
    kind: str  # 'param' | 'const'
    param: Optional[str] = None
    value: Optional[int] = None


@dataclass(frozen=True)
class SpecTriple:
    program_name: str
    bindings: tuple[Binding, ...]  # one per program variable, in header order
    params: tuple[str, ...]  # distinct parameters in first-appearance order
    pre_constraint: LinConstraint  # inline constraints over the parameters
    pre_atoms: tuple[Atom, ...]  # recursively defined preconditions, if any
    post_pred: str
    result_var: str  # program variable whose final value is the result
    spec: ClauseSet
    f_def: tuple[Clause, ...]
    aux: tuple[Clause, ...]

    def z_vars(self) -> tuple[str, ...]:
        return tuple(b.var for b in self.bindings)

    def binding_for(self, var: str) -> Binding:
        for b in self.bindings:
            if b.var == var:
                return b
        raise KeyError(var)

    def initial_env(self, param_values: dict[str, int]) -> dict[str, int]:
        env = {}
        for b in self.bindings:
            env[b.var] = b.value if b.kind == "const" else param_values[b.param]
        return env

    def pre_clause(self) -> Clause:
        """The synthesized pre definition: pre(params) constrained by the
        header's inline constraints, with any explicit pre atoms in the body."""
        head = Atom("pre", tuple(Var(p) for p in self.params))
        return Clause(head, self.pre_constraint, self.pre_atoms)

    def pre_holds(self, param_values: dict[str, int], depth: int = 12) -> bool:
        point = {p: Fraction(v) for p, v in param_values.items()}
        if not self.pre_constraint.eval(point):
            return False
        for a in self.pre_atoms:
            ground = Atom(
                a.pred,
                tuple(
                    IntConst(param_values[t.name]) if isinstance(t, Var) else t
                    for t in a.args
                ),
            )
            leaves = derive_atom_values(list(self.aux), ground, depth)
            if not any(sat_z(leaf.constraint).status == "sat" for leaf in leaves):
                return False
        return True


def _is_int_token(cur: _Cursor) -> bool:
    t = cur.peek()
    if t is None:
        return False
    if t.kind == "int":
        return True
    if t.kind == "-" and cur.peek(1) is not None and cur.peek(1).kind == "int":
        return True
    return False


def _take_int(cur: _Cursor) -> int:
    if cur.at("-"):
        cur.next()
        return -int(cur.expect("int").text)
    return int(cur.expect("int").text)


def parse_spec(text: str, program=None) -> SpecTriple:
    """Parse a triple header plus clause list.

    With `program` given (an ImpProgram), the bound variables must cover the
    program's variables and the result variable must be one of them.
    """
    cur = _Cursor(tokenize(text))
    cur.expect("{")
    bindings: list[Binding] = []
    params: list[str] = []
    pre_rels: list[LinAtomicRel] = []
    pre_atoms: list[Atom] = []
    bound: set[str] = set()
    while not cur.at("}"):
        t = cur.peek()
        if t is None:
            raise ParseError("unterminated binding block")
        if t.kind == "lname" and cur.peek(1) is not None and cur.peek(1).kind == "=":
            var = cur.next().text
            cur.next()  # '='
            if var in bound:
                raise SpecError(f"program variable {var!r} bound twice")
            bound.add(var)
            if _is_int_token(cur):
                bindings.append(Binding(var, "const", value=_take_int(cur)))
            else:
                p = cur.expect("uname").text
                bindings.append(Binding(var, "param", param=p))
                if p not in params:
                    params.append(p)
        elif t.kind == "lname" and cur.peek(1) is not None and cur.peek(1).kind == "(":
            pre_atoms.append(_parse_atom(cur))
        else:
            lhs_coeffs, lhs_const = _parse_linear(cur)
            op = cur.next()
            if op.kind not in ("=", ">=", "=<", "<=", "<", ">"):
                raise ParseError(f"expected a relation, found {op.text!r}", op.line, op.col)
            rhs_coeffs, rhs_const = _parse_linear(cur)
            for v, c in rhs_coeffs.items():
                lhs_coeffs[v] = lhs_coeffs.get(v, Fraction(0)) - c
            pre_rels.append(LinAtomicRel.make(lhs_coeffs, lhs_const - rhs_const, op.kind))
        if cur.at(","):
            cur.next()
    cur.expect("}")
    name_tok = cur.expect("lname")
    cur.expect("{")
    post_pred = cur.expect("lname").text
    post_args: list[str] = []
    cur.expect("(")
    while True:
        t = cur.next()
        if t.kind not in ("uname", "lname"):
            raise ParseError(f"expected a name in the postcondition, found {t.text!r}", t.line, t.col)
        post_args.append(t.text)
        if cur.at(","):
            cur.next()
            continue
        cur.expect(")")
        break
    cur.expect("}")

    # remaining tokens are the clause program
    rest_toks = cur.toks[cur.i :]
    clause_text_start = rest_toks[0] if rest_toks else None
    clauses = ClauseSet.of([])
    if clause_text_start is not None:
        # re-parse from the raw text to keep parser error positions accurate
        offset = _text_offset(text, clause_text_start)
        clauses = parse_clauses(text[offset:])

    if len(post_args) < 1:
        raise SpecError("postcondition atom needs at least a result variable")
    *leading, result_var = post_args
    if leading != params:
        raise SpecError(
            f"postcondition arguments {leading} must name the parameters {params} in order"
        )
    if result_var not in bound:
        raise SpecError(f"result variable {result_var!r} is not bound in the header")
    clash = set(params) & bound
    if clash:
        raise SpecError(f"parameters must be distinct from program variables: {sorted(clash)}")

    for r in pre_rels:
        extra = r.vars() - set(params)
        if extra:
            raise SpecError(f"pre constraint mentions non-parameters: {sorted(extra)}")
    for a in pre_atoms:
        extra = set(a.vars()) - set(params)
        if extra:
            raise SpecError(f"pre atom mentions non-parameters: {sorted(extra)}")

    f_def = tuple(c for c in clauses if c.head is not None and c.head.pred == post_pred)
    aux = tuple(
        c for c in clauses if not (c.head is not None and c.head.pred == post_pred)
    )
    if not f_def:
        raise SpecError(f"no clause defines the postcondition predicate {post_pred!r}")
    for c in aux:
        if any(a.pred == post_pred for a in c.atoms()):
            raise SpecError(
                f"{post_pred!r} occurs in an auxiliary clause: {clause_to_text(c)}"
            )
        if not c.is_linear():
            raise SpecError(f"auxiliary clause is not linear: {clause_to_text(c)}")
    for c in f_def:
        if len(c.head.args) != len(params) + 1:
            raise SpecError(
                f"{post_pred}/{len(c.head.args)} does not match parameters+result "
                f"({len(params) + 1}): {clause_to_text(c)}"
            )
    aux_preds = {c.head.pred for c in aux if c.head is not None}
    for a in pre_atoms:
        if a.pred not in aux_preds:
            raise SpecError(f"pre predicate {a.pred!r} has no defining clauses")

    if program is not None:
        missing = set(program.variables) - bound
        if missing:
            raise SpecError(f"program variables not bound in the triple: {sorted(missing)}")

    return SpecTriple(
        program_name=name_tok.text,
        bindings=tuple(bindings),
        params=tuple(params),
        pre_constraint=LinConstraint(tuple(pre_rels)),
        pre_atoms=tuple(pre_atoms),
        post_pred=post_pred,
        result_var=result_var,
        spec=clauses,
        f_def=f_def,
        aux=aux,
    )


def _text_offset(text: str, tok) -> int:
    line, col = tok.line, tok.col
    lines = text.split("\n")
    return sum(len(l) + 1 for l in lines[: line - 1]) + (col - 1)


# ---------------------------------------------------------------------------
# Bounded functionality check.


@dataclass(frozen=True)
class SampleReport:
    params: dict[str, int]
    pre_satisfied: bool
    values: tuple[int, ...]  # witnessed result values, sorted
    total_confirmed: bool  # at least one derivation within the depth
    unique: bool
    violation: Optional[tuple[int, int]] = None  # two distinct results


@dataclass(frozen=True)
class FunctionalityReport:
    samples: tuple[SampleReport, ...]

    def has_uniqueness_violation(self) -> bool:
        return any(not s.unique for s in self.samples if s.pre_satisfied)

    def unconfirmed_totality(self) -> list[dict[str, int]]:
        return [s.params for s in self.samples if s.pre_satisfied and not s.total_confirmed]


def _result_rel(ta, tb, rel: str, offset=0) -> LinAtomicRel:
    ca, ka = term_coeffs(ta)
    cb, kb = term_coeffs(tb)
    acc = dict(ca)
    for n, c in cb:
        acc[n] = acc.get(n, Fraction(0)) - c
    return LinAtomicRel.make(acc, ka - kb + offset, rel)


def check_functionality(
    t: SpecTriple, samples: list[dict[str, int]], depth: int = 12, budget: int = 1_000_000
) -> FunctionalityReport:
    """Bounded evidence for totality-on-pre and functionality.

    For each sample satisfying the precondition, every result value derivable
    within `depth` unfolding steps is enumerated.  Finding none is reported as
    unconfirmed totality (the bound may simply be too small), never as failure;
    finding two distinct values is a hard uniqueness violation, with both
    values in the report.
    """
    reports = []
    rules = list(t.f_def) + list(t.aux)
    for sample in samples:
        if not t.pre_holds(sample, depth):
            reports.append(SampleReport(sample, False, (), False, True))
            continue
        query = Atom(
            t.post_pred,
            tuple(IntConst(sample[p]) for p in t.params) + (Var("_RESULT"),),
        )
        leaves = derive_atom_values(rules, query, depth, budget)
        values: set[int] = set()
        terms = []
        for leaf in leaves:
            y = leaf.subst.get("_RESULT", Var("_RESULT"))
            terms.append((y, leaf.constraint))
            z = sat_z(leaf.constraint)
            if z.status == "sat":
                point = {v: Fraction(n) for v, n in z.witness.items()}
                cs, k = term_coeffs(y)
                val = k + sum(c * point.get(n, Fraction(0)) for n, c in cs)
                if val.denominator == 1:
                    values.add(int(val))
        violation = None
        for i in range(len(terms)):
            for j in range(i, len(terms)):
                ya, ca = terms[i]
                # rename the second copy apart
                ren = {v: Var(f"{v}__b") for v in set(cb_vars(terms[j]))}
                yb = subst_term(terms[j][0], ren)
                cb = _rename_constraint(terms[j][1], ren)
                joint = conjoin(ca, cb)
                if joint.is_false():
                    continue
                for rel in (">", "<"):
                    probe = conjoin(joint, LinConstraint((_result_rel(ya, yb, rel),)))
                    z = sat_z(probe)
                    if z.status == "sat":
                        point = {v: Fraction(n) for v, n in z.witness.items()}
                        va = _eval_term_at(ya, point)
                        vb = _eval_term_at(yb, point)
                        violation = (int(va), int(vb))
                        values.update({int(va), int(vb)})
                        break
                if violation:
                    break
            if violation:
                break
        reports.append(
            SampleReport(
                sample,
                True,
                tuple(sorted(values)),
                bool(leaves) and bool(values),
                violation is None,
                violation,
            )
        )
    return FunctionalityReport(tuple(reports))


def cb_vars(term_constraint) -> set[str]:
    y, c = term_constraint
    out = set(c.vars())
    cs, _ = term_coeffs(y)
    out |= {n for n, _ in cs}
    return out


def _rename_constraint(c: LinConstraint, ren) -> LinConstraint:
    out = []
    for r in c.conjuncts:
        acc = {}
        for n, v in r.coeffs:
            m = ren.get(n)
            acc[m.name if m is not None else n] = v
        out.append(LinAtomicRel(norm_coeffs(acc), r.constant, r.rel))
    return LinConstraint(tuple(out))


def _eval_term_at(t, point) -> Fraction:
    cs, k = term_coeffs(t)
    return k + sum(c * point.get(n, Fraction(0)) for n, c in cs)
