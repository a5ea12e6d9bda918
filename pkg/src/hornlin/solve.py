"""Backends: the bounded counterexample oracle, a linear-arithmetic solution
verifier, SMT-LIB HORN emission/ingestion, and an external-solver driver.

The oracle unfolds goals depth-first instead of enumerating ground models:
integer domains make bottom-up ground iteration impossible, while depth-bounded
unfolding with constraint accumulation is complete up to its depth.  Depth is
counted per derivation branch: each body atom's expansion consumes one unit on
its own branch.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .chc import (
    Atom,
    Clause,
    ClauseSet,
    NameGen,
    Subst,
    Var,
    apply_subst,
    mk_linexpr,
    rename_apart,
    simplify_clause,
    subst_atom,
    subst_constraint,
    subst_term,
    term_coeffs,
    term_vars,
    unify_atoms,
)
from .errors import BudgetExhausted, HornlinError, ParseError
from .linarith import (
    LinAtomicRel,
    LinConstraint,
    conjoin,
    sat_q,
    sat_z,
    entails,
)

DEFAULT_DEPTH = 8
DEFAULT_BUDGET = 1_000_000


# ---------------------------------------------------------------------------
# Depth-bounded derivation.


@dataclass(frozen=True)
class DerivStep:
    goal_atom: Atom
    clause_index: int  # index into the definite-clause list
    mgu: tuple[tuple[str, object], ...]


@dataclass(frozen=True)
class Leaf:
    constraint: LinConstraint
    steps: tuple[DerivStep, ...]
    subst: Subst  # composed bindings on the original goal's variables


def _compose_on(base_vars: list[str], acc: Subst, new: Subst) -> Subst:
    out: Subst = {}
    for v in base_vars:
        out[v] = subst_term(acc.get(v, Var(v)), new)
    return out


class _Budget:
    def __init__(self, n: int):
        self.left = n

    def spend(self):
        self.left -= 1
        if self.left < 0:
            raise BudgetExhausted("derivation budget exhausted")


def _project_dead(constraint, pending_atoms, acc: Subst):
    """Drop equality-defined variables that no pending atom or tracked goal
    binding can see any more; keeps the accumulated store small."""
    if len(constraint.conjuncts) < 8:
        return constraint
    live: list[Var] = []
    for a, _ in pending_atoms:
        live.extend(Var(v) for v in a.vars())
    for t in acc.values():
        live.extend(Var(v) for v in term_vars(t))
    probe = Clause(Atom("_live", tuple(live)), constraint, ())
    return simplify_clause(probe, merge=False, drop_redundant=False).constraint


def derive_leaves(
    goal: Clause,
    rules: list[Clause],
    max_depth: int,
    budget: _Budget,
    gen: Optional[NameGen] = None,
):
    """Yield every atom-free expansion of `goal` reachable within max_depth.

    States carry (constraint, [(atom, remaining depth)], trace, composed
    substitution).  Rationally unsatisfiable states are pruned eagerly, which
    keeps completeness: pruned states have no integer solutions either.
    """
    gen = gen or NameGen()
    for r in rules:
        gen.note(r.vars())
    gen.note(goal.vars())
    base_vars = goal.vars()
    init = (goal.constraint, tuple((a, max_depth) for a in goal.body), (), {})
    stack = [init]
    while stack:
        constraint, atoms, steps, acc = stack.pop()
        if not atoms:
            yield Leaf(constraint, steps, acc)
            continue
        (atom, depth), rest = atoms[0], atoms[1:]
        if depth <= 0:
            continue  # this branch cannot finish within the bound
        children = []
        for idx, rule in enumerate(rules):
            if rule.head is None or rule.head.pred != atom.pred:
                continue
            budget.spend()
            rc = rename_apart(rule, gen)
            mgu = unify_atoms(atom, rc.head)
            if mgu is None:
                continue
            new_constraint = conjoin(
                subst_constraint(constraint, mgu), subst_constraint(rc.constraint, mgu)
            )
            if new_constraint.is_false():
                continue
            # equality-only clause constraints extend the store definitionally;
            # skipping the rational check there keeps completeness (leaves are
            # still decided exactly) and saves most eliminations
            if any(r.rel != "=" for r in rule.constraint.conjuncts):
                if not sat_q(new_constraint):
                    continue
            new_atoms = tuple(
                (subst_atom(a, mgu), depth - 1) for a in rc.body
            ) + tuple((subst_atom(a, mgu), d) for a, d in rest)
            step = DerivStep(atom, idx, tuple(sorted(mgu.items())))
            new_acc = _compose_on(base_vars, acc, mgu)
            new_constraint = _project_dead(new_constraint, new_atoms, new_acc)
            children.append((new_constraint, new_atoms, steps + (step,), new_acc))
        # depth-first, first rule explored first
        stack.extend(reversed(children))


# ---------------------------------------------------------------------------
# Oracle results.


@dataclass(frozen=True)
class NoCexUpTo:
    depth: int


@dataclass(frozen=True)
class Cex:
    goal_index: int
    goal: Clause
    steps: tuple[DerivStep, ...]
    constraint: LinConstraint
    witness: dict[str, int]
    goal_binding: Subst

    def goal_instance(self) -> Clause:
        return apply_subst(self.goal, self.goal_binding)


OracleResult = NoCexUpTo | Cex


def bounded_counterexample(
    s: ClauseSet, max_depth: int = DEFAULT_DEPTH, budget: int = DEFAULT_BUDGET
) -> OracleResult:
    """Exhaustively unfold every goal to max_depth; the first integer-feasible
    atom-free expansion is a counterexample with witness.

    Complete up to the depth: no false negatives within max_depth.  Budget
    exhaustion and integer-feasibility timeouts raise BudgetExhausted, kept
    distinct from the NoCexUpTo verdict.
    """
    rules = s.definite()
    goals = s.goals()
    b = _Budget(budget)
    for gi, goal in enumerate(goals):
        for leaf in derive_leaves(goal, rules, max_depth, b):
            z = sat_z(leaf.constraint, budget=max(1, min(b.left, 10_000)))
            if z.status == "unknown":
                raise BudgetExhausted("integer feasibility undecided within budget")
            if z.status == "sat":
                witness = dict(z.witness)
                return Cex(gi, goal, leaf.steps, leaf.constraint, witness, leaf.subst)
    return NoCexUpTo(max_depth)


def replay_cex(s: ClauseSet, cex: Cex) -> bool:
    """Check a counterexample exactly: the recorded witness must satisfy the
    accumulated constraint, and the goal instance must be reproducible."""
    point = {v: Fraction(n) for v, n in cex.witness.items()}
    for v in cex.constraint.vars():
        if v not in point:
            return False
    return cex.constraint.eval(point)


def derive_atom_values(
    rules: ClauseSet | list[Clause],
    query: Atom,
    max_depth: int,
    budget: int = DEFAULT_BUDGET,
    result_var: str = "Y",
):
    """All leaves of the bounded derivation of `query`; used by functionality
    checking and bounded model queries.  The query atom's variables stay free."""
    rule_list = rules.definite() if isinstance(rules, ClauseSet) else list(rules)
    goal = Clause(None, LinConstraint(), (query,))
    b = _Budget(budget)
    return list(derive_leaves(goal, rule_list, max_depth, b))


# ---------------------------------------------------------------------------
# Symbolic interpretations (candidate linear-arithmetic solutions).


@dataclass(frozen=True)
class SymbolicInterp:
    entries: tuple[tuple[str, tuple[str, ...], LinConstraint], ...]

    @staticmethod
    def of(mapping: dict[str, tuple[tuple[str, ...], LinConstraint]]) -> "SymbolicInterp":
        return SymbolicInterp(tuple((p, tuple(vs), c) for p, (vs, c) in mapping.items()))

    def lookup(self, pred: str):
        for p, vs, c in self.entries:
            if p == pred:
                return vs, c
        return None

    def preds(self) -> set[str]:
        return {p for p, _, _ in self.entries}

    def instantiate(self, atom: Atom, gen: NameGen) -> LinConstraint:
        """Substitute the atom's arguments for the formal parameters.
        Instantiation commutes with substitution by construction."""
        got = self.lookup(atom.pred)
        if got is None:
            raise HornlinError(f"no interpretation for predicate {atom.pred!r}")
        params, constraint = got
        if len(params) != len(atom.args):
            raise HornlinError(f"arity mismatch instantiating {atom.pred!r}")
        # formal parameters not among the atom args must not leak or capture
        s: Subst = {}
        inner = set()
        for r in constraint.conjuncts:
            inner |= r.vars()
        for v in inner - set(params):
            s[v] = Var(gen.fresh(v))
        for p, arg in zip(params, atom.args):
            s[p] = arg
        return subst_constraint(constraint, s)


@dataclass(frozen=True)
class ClauseVerdict:
    clause: Clause
    status: str  # 'valid' | 'invalid' | 'unknown'
    witness: Optional[dict[str, int]] = None


def verify_solution(s: ClauseSet, sigma: SymbolicInterp, budget: int = 10_000) -> list[ClauseVerdict]:
    """Per clause: the constraint plus the instantiated body interpretations
    must entail the instantiated head interpretation (false for goals)."""
    missing = {a.pred for c in s for a in c.atoms()} - sigma.preds()
    if missing:
        raise HornlinError(f"interpretation missing predicates: {sorted(missing)}")
    out = []
    for c in s:
        gen = NameGen(c.vars())
        ante = c.constraint
        for a in c.body:
            ante = conjoin(ante, sigma.instantiate(a, gen))
        if c.head is None:
            cons = LinConstraint((LinAtomicRel((), Fraction(-1), ">="),))
        else:
            cons = sigma.instantiate(c.head, gen)
        r = entails(ante, cons, budget)
        out.append(ClauseVerdict(c, r.status, r.witness))
    return out


def all_valid(verdicts: list[ClauseVerdict]) -> bool:
    return all(v.status == "valid" for v in verdicts)


# ---------------------------------------------------------------------------
# SMT-LIB HORN subset.


def _smt_term(coeffs, const) -> str:
    parts = []
    for n, c in coeffs:
        if c == 1:
            parts.append(n)
        elif c == -1:
            parts.append(f"(- {n})")
        elif c < 0:
            parts.append(f"(* (- {-c}) {n})")
        else:
            parts.append(f"(* {c} {n})")
    if const != 0 or not parts:
        parts.append(str(const) if const >= 0 else f"(- {-const})")
    if len(parts) == 1:
        return parts[0]
    return f"(+ {' '.join(parts)})"


def _smt_rel(r: LinAtomicRel) -> str:
    r = r.scaled_integral()
    op = {"=": "=", ">=": ">=", ">": ">"}[r.rel]
    return f"({op} {_smt_term(r.coeffs, r.constant)} 0)"


def _smt_atom(a: Atom) -> str:
    if not a.args:
        return a.pred
    rendered = []
    for t in a.args:
        cs, k = term_coeffs(t)
        rendered.append(_smt_term(cs, k))
    return f"({a.pred} {' '.join(rendered)})"


def emit_smtlib(s: ClauseSet) -> str:
    """Deterministic HORN-logic script: one Int-sorted relation declaration per
    predicate in order of first use, one universally quantified implication per
    clause, goals implying false, then check-sat."""
    lines = ["(set-logic HORN)"]
    seen: dict[str, int] = {}
    for c in s:
        for a in c.atoms():
            seen.setdefault(a.pred, len(a.args))
    for p, n in seen.items():
        args = " ".join(["Int"] * n)
        lines.append(f"(declare-fun {p} ({args}) Bool)")
    for c in s:
        body_parts = [_smt_rel(r) for r in c.constraint.conjuncts]
        body_parts += [_smt_atom(a) for a in c.body]
        if not body_parts:
            body = "true"
        elif len(body_parts) == 1:
            body = body_parts[0]
        else:
            body = f"(and {' '.join(body_parts)})"
        head = "false" if c.head is None else _smt_atom(c.head)
        impl = f"(=> {body} {head})"
        vs = c.vars()
        if vs:
            q = " ".join(f"({v} Int)" for v in vs)
            lines.append(f"(assert (forall ({q}) {impl}))")
        else:
            lines.append(f"(assert {impl})")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


# -- parsing the same subset back ------------------------------------------


def _sexp_tokens(text: str):
    out = []
    i, line, col = 0, 1, 1
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
        elif ch.isspace():
            i += 1
            col += 1
        elif ch == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif ch in "()":
            out.append((ch, line, col))
            i += 1
            col += 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "();":
                j += 1
            out.append((text[i:j], line, col))
            col += j - i
            i = j
    return out


def _sexp_parse(tokens, pos):
    tok, line, col = tokens[pos]
    if tok == "(":
        items = []
        pos += 1
        while True:
            if pos >= len(tokens):
                raise ParseError("unbalanced parenthesis", line, col)
            if tokens[pos][0] == ")":
                return items, pos + 1
            item, pos = _sexp_parse(tokens, pos)
            items.append(item)
    if tok == ")":
        raise ParseError("unexpected ')'", line, col)
    return tok, pos + 1


def _lin_of_sexp(e, preds, where):
    """Linear form (coeffs dict, const) of an arithmetic s-expression."""
    if isinstance(e, str):
        if e.lstrip("-").isdigit():
            return {}, Fraction(int(e))
        if e in preds:
            raise ParseError(f"predicate {e!r} used as a term in {where}")
        if "." in e:
            raise ParseError(f"non-integer literal {e!r} in {where}")
        return {e: Fraction(1)}, Fraction(0)
    op = e[0]
    if op == "+":
        coeffs: dict[str, Fraction] = {}
        const = Fraction(0)
        for sub in e[1:]:
            c2, k2 = _lin_of_sexp(sub, preds, where)
            for n, c in c2.items():
                coeffs[n] = coeffs.get(n, Fraction(0)) + c
            const += k2
        return coeffs, const
    if op == "-":
        first, *rest = e[1:]
        coeffs, const = _lin_of_sexp(first, preds, where)
        if not rest:
            return {n: -c for n, c in coeffs.items()}, -const
        for sub in rest:
            c2, k2 = _lin_of_sexp(sub, preds, where)
            for n, c in c2.items():
                coeffs[n] = coeffs.get(n, Fraction(0)) - c
            const -= k2
        return coeffs, const
    if op == "*":
        coeffs = {}
        const = Fraction(1)
        pending = None
        for sub in e[1:]:
            c2, k2 = _lin_of_sexp(sub, preds, where)
            if c2:
                if pending is not None:
                    raise ParseError(f"nonlinear product in {where}")
                pending = c2
            else:
                const *= k2
        if pending is None:
            return {}, const
        return {n: c * const for n, c in pending.items()}, Fraction(0)
    raise ParseError(f"unsupported arithmetic operator {op!r} in {where}")


_SMT_RELS = {"=": "=", ">=": ">=", ">": ">", "<=": "=<", "<": "<"}


def parse_smtlib(text: str) -> ClauseSet:
    """Inverse of emit_smtlib up to canonical renaming.  Rejects non-Horn
    shapes and non-integer content with a located error."""
    tokens = _sexp_tokens(text)
    preds: dict[str, int] = {}
    clauses: list[Clause] = []
    pos = 0
    while pos < len(tokens):
        form, pos = _sexp_parse(tokens, pos)
        if not isinstance(form, list) or not form:
            raise ParseError("top-level form is not a command")
        cmd = form[0]
        if cmd == "set-logic":
            continue
        if cmd in ("check-sat", "exit", "set-info", "set-option", "get-model"):
            continue
        if cmd == "declare-fun":
            name, arg_sorts, ret = form[1], form[2], form[3]
            if ret != "Bool":
                raise ParseError(f"relation {name!r} must return Bool")
            for srt in arg_sorts:
                if srt != "Int":
                    raise ParseError(f"unsupported sort {srt!r} for {name!r}")
            preds[name] = len(arg_sorts)
            continue
        if cmd == "declare-rel":
            preds[form[1]] = len(form[2])
            continue
        if cmd != "assert":
            raise ParseError(f"unsupported command {cmd!r}")
        body = form[1]
        if isinstance(body, list) and body and body[0] == "forall":
            inner = body[2]
        else:
            inner = body
        clauses.append(_clause_of_impl(inner, preds))
    return ClauseSet.of(clauses)


def _atom_of_sexp(e, preds) -> Atom:
    if isinstance(e, str):
        return Atom(e, ())
    name = e[0]
    args = []
    for sub in e[1:]:
        coeffs, const = _lin_of_sexp(sub, preds, name)
        args.append(mk_linexpr(coeffs, const))
    return Atom(name, tuple(args))


def _clause_of_impl(e, preds) -> Clause:
    rels: list[LinAtomicRel] = []
    atoms: list[Atom] = []

    def eat(item):
        if isinstance(item, str):
            if item == "true":
                return
            if item in preds:
                atoms.append(Atom(item, ()))
                return
            raise ParseError(f"unsupported body item {item!r}")
        op = item[0]
        if op == "and":
            for sub in item[1:]:
                eat(sub)
            return
        if op in _SMT_RELS:
            lc, lk = _lin_of_sexp(item[1], preds, op)
            rc, rk = _lin_of_sexp(item[2], preds, op)
            for n, c in rc.items():
                lc[n] = lc.get(n, Fraction(0)) - c
            rels.append(LinAtomicRel.make(lc, lk - rk, _SMT_RELS[op]))
            return
        if op in preds:
            atoms.append(_atom_of_sexp(item, preds))
            return
        raise ParseError(f"non-Horn construct {op!r} in clause body")

    if not (isinstance(e, list) and e and e[0] == "=>"):
        # a bare head: a fact
        head = _head_of(e, preds)
        return Clause(head, LinConstraint(), ())
    eat(e[1])
    head = _head_of(e[2], preds)
    return Clause(head, LinConstraint(tuple(rels)), tuple(atoms))


def _head_of(e, preds) -> Optional[Atom]:
    if e == "false":
        return None
    if isinstance(e, str):
        if e in preds:
            return Atom(e, ())
        raise ParseError(f"clause head {e!r} is not a declared relation")
    if e[0] in preds:
        return _atom_of_sexp(e, preds)
    raise ParseError(f"clause head {e[0]!r} is not a declared relation")


# ---------------------------------------------------------------------------
# External solver driver.


@dataclass(frozen=True)
class ExternalResult:
    status: str  # 'sat' | 'unsat' | 'timeout' | 'error'
    output: str = ""


def run_external(script: str, solver_command: str, timeout_seconds: float) -> ExternalResult:
    """Write the script to a temp file, run `solver_command <file>`, classify
    the first verdict token.  Models are never interpreted."""
    if not solver_command:
        return ExternalResult("error", "no solver command configured")
    with tempfile.NamedTemporaryFile("w", suffix=".smt2", delete=False) as f:
        f.write(script)
        path = f.name
    cmd = shlex.split(solver_command) + [path]
    try:
        proc = subprocess.run(
            cmd, capture_output=True, text=True, timeout=timeout_seconds
        )
    except subprocess.TimeoutExpired:
        return ExternalResult("timeout")
    except (OSError, ValueError) as e:
        return ExternalResult("error", str(e))
    out = (proc.stdout or "") + "\n" + (proc.stderr or "")
    for line in out.splitlines():
        tok = line.strip().lower()
        if tok == "sat":
            return ExternalResult("sat", out)
        if tok == "unsat":
            return ExternalResult("unsat", out)
        if tok in ("unknown", "timeout"):
            return ExternalResult("timeout", out)
    return ExternalResult("error", out)
