"""The transformation engine: the unfolding rule, removal of the semantic
interpreter from the operational-semantics clauses, and linearization of
nonlinear goals by unfold/define/fold with a shared definitions memo.

A transformation session owns a fresh-name source, a definitions table and a
trace; distinct sessions over distinct inputs are independent.  Outputs are
immutable clause sets and the whole pipeline is deterministic, including the
numbering of introduced predicates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .chc import (
    Atom,
    Clause,
    ClauseSet,
    IntConst,
    NameGen,
    Var,
    apply_subst,
    canonical_key,
    canonicalize,
    flatten,
    rename_apart,
    simplify_clause,
    subst_atom,
    subst_constraint,
    unify_atoms,
)
from .encoder import INTERP_PREDS, OpSemSet
from .errors import HornlinError
from .linarith import LinConstraint, conjoin, eliminate, sat_q
from .parser import clause_to_text
from .solve import SymbolicInterp

MAX_SESSION_ROUNDS = 10_000


# ---------------------------------------------------------------------------
# Trace.


@dataclass(frozen=True)
class TraceStep:
    rule: str  # 'unfold' | 'define' | 'fold'
    subject: Clause
    result: tuple[Clause, ...]
    detail: str = ""

    def line(self) -> str:
        parts = [self.rule, clause_to_text(canonicalize(self.subject))]
        if self.detail:
            parts.append(self.detail)
        for r in self.result:
            parts.append(clause_to_text(canonicalize(r)))
        return "\t".join(parts)


@dataclass
class TransformTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def add(self, rule: str, subject: Clause, result: Iterable[Clause], detail: str = ""):
        self.steps.append(TraceStep(rule, subject, tuple(result), detail))

    def lines(self) -> list[str]:
        return [s.line() for s in self.steps]

    def text(self) -> str:
        return "\n".join(self.lines()) + ("\n" if self.steps else "")


# ---------------------------------------------------------------------------
# Unfolding rule.


def unfold(
    c: Clause,
    pos: int,
    cls: ClauseSet | list[Clause],
    gen: Optional[NameGen] = None,
    trace: Optional[TransformTrace] = None,
) -> list[Clause]:
    """Resolve the body atom at `pos` against every renamed-apart clause head
    it unifies with, keeping results whose combined constraint is satisfiable
    over the rationals.  Dropping rationally unsatisfiable results is safe:
    they have no integer instances either."""
    atom = c.body[pos]
    rules = list(cls)
    if gen is None:
        names = set(c.vars())
        for r in rules:
            names.update(r.vars())
        gen = NameGen(names)
    out = []
    for rule in rules:
        if rule.head is None or rule.head.pred != atom.pred:
            continue
        rc = rename_apart(rule, gen)
        mgu = unify_atoms(atom, rc.head)
        if mgu is None:
            continue
        constraint = conjoin(
            subst_constraint(c.constraint, mgu), subst_constraint(rc.constraint, mgu)
        )
        if constraint.is_false() or not sat_q(constraint):
            continue
        body = (
            tuple(subst_atom(a, mgu) for a in c.body[:pos])
            + tuple(subst_atom(a, mgu) for a in rc.body)
            + tuple(subst_atom(a, mgu) for a in c.body[pos + 1 :])
        )
        head = subst_atom(c.head, mgu) if c.head else None
        out.append(Clause(head, constraint, body))
    if trace is not None:
        trace.add("unfold", c, out, detail=f"@{pos}")
    return out


# ---------------------------------------------------------------------------
# Definitions table.


@dataclass(frozen=True)
class DefEntry:
    pred: str
    head_vars: tuple[str, ...]
    body: tuple[Atom, ...]

    def clause(self) -> Clause:
        return Clause(Atom(self.pred, tuple(Var(v) for v in self.head_vars)), LinConstraint(), self.body)


class DefsTable:
    """Memo of introduced definitions keyed by the canonical form of the pair
    (head-variable tuple, body-atom sequence).  Insertion-ordered; no two
    entries share a key."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self.entries: dict[tuple, DefEntry] = {}
        self._n = 0

    @staticmethod
    def key_of(body: tuple[Atom, ...], head_vars: tuple[str, ...]) -> tuple:
        probe = Clause(Atom("defkey", tuple(Var(v) for v in head_vars)), LinConstraint(), body)
        return canonical_key(probe)

    def lookup_or_define(
        self, body: tuple[Atom, ...], head_vars: tuple[str, ...]
    ) -> tuple[DefEntry, bool]:
        key = self.key_of(body, head_vars)
        hit = self.entries.get(key)
        if hit is not None:
            return hit, False
        self._n += 1
        entry = DefEntry(f"{self.prefix}{self._n}", tuple(head_vars), body)
        self.entries[key] = entry
        return entry, True

    def __len__(self):
        return len(self.entries)

    def ordered(self) -> list[DefEntry]:
        return list(self.entries.values())


def _head_vars_for(e: Clause) -> tuple[str, ...]:
    """vars(body atoms) restricted to vars(head, constraint), ordered by first
    occurrence in the body-atom scan."""
    keep = set(e.head.vars()) if e.head is not None else set()
    keep |= e.constraint.vars()
    seen: dict[str, None] = {}
    for a in e.body:
        for v in a.vars():
            if v in keep:
                seen.setdefault(v)
    return tuple(seen)


# ---------------------------------------------------------------------------
# Removal of the interpreter.


@dataclass(frozen=True)
class AnnotatedClauseSet:
    opsem: OpSemSet

    def unfoldable(self, atom: Atom) -> bool:
        if atom.pred in ("initCf", "finalCf", "tr"):
            return True
        if atom.pred == "reach":
            first = atom.args[0]
            if isinstance(first, IntConst):
                return first.value not in self.opsem.non_unfoldable
            return False  # label still symbolic: wait for tr to pin it
        return False


@dataclass(frozen=True)
class RIResult:
    clauses: ClauseSet
    defs: DefsTable
    trace: TransformTrace


def annotate(opsem: OpSemSet) -> AnnotatedClauseSet:
    return AnnotatedClauseSet(opsem)


def _single_reach_pos(c: Clause) -> Optional[int]:
    positions = [i for i, a in enumerate(c.body) if a.pred == "reach"]
    return positions[0] if len(positions) == 1 else None


def run_ri(opsem: OpSemSet, trace: Optional[TransformTrace] = None) -> RIResult:
    """Specialize away initCf, finalCf, reach and tr.

    Starting from the relation clause, the leftmost atom is unfolded, then
    every unfoldable atom, where a reach atom is unfoldable only when its
    source label is not a back-edge target.  Remaining reach atoms are then
    folded against snapshot definitions (introducing r1, r2, ... as needed),
    which are queued for the same treatment.  Terminates because there are
    finitely many labels and sharing patterns.
    """
    ann = annotate(opsem)
    trace = trace if trace is not None else TransformTrace()
    gen = NameGen(opsem.clauses.all_var_names())
    defs = DefsTable("r")
    r_clause = next(
        c for c in opsem.clauses if c.head is not None and c.head.pred == opsem.r_pred
    )
    queue: list[Clause] = [r_clause]
    out: list[Clause] = []
    rounds = 0
    while queue:
        rounds += 1
        if rounds > MAX_SESSION_ROUNDS:
            raise HornlinError("interpreter removal did not converge")
        c = queue.pop(0)
        spc = unfold(c, 0, opsem.clauses, gen, trace) if c.body else [c]
        # inner loop, FIFO: a clause with an unfoldable atom is taken out and
        # its expansion re-queued, so fully specialized clauses surface first
        while True:
            target = None
            for i, d in enumerate(spc):
                for pos, atom in enumerate(d.body):
                    if ann.unfoldable(atom):
                        target = (i, pos)
                        break
                if target:
                    break
            if target is None:
                break
            i, pos = target
            expanded = unfold(spc[i], pos, opsem.clauses, gen, trace)
            spc = spc[:i] + spc[i + 1 :] + expanded
        # definition & folding on leftover reach snapshots
        folded: list[Clause] = []
        for e in spc:
            pos = _single_reach_pos(e)
            if pos is None:
                leftover = [a for a in e.body if a.pred in INTERP_PREDS]
                if leftover:
                    raise HornlinError(
                        f"unexpected interpreter atoms survive unfolding: {leftover}"
                    )
                folded.append(simplify_clause(e, merge=False))
                continue
            reach_atom = e.body[pos]
            head_vars = tuple(dict.fromkeys(reach_atom.vars()))
            entry, fresh = defs.lookup_or_define((reach_atom,), head_vars)
            if fresh:
                trace.add("define", entry.clause(), [entry.clause()], detail=entry.pred)
                queue.append(entry.clause())
            new_atom = Atom(entry.pred, tuple(Var(v) for v in head_vars))
            result = Clause(
                e.head, e.constraint, e.body[:pos] + (new_atom,) + e.body[pos + 1 :]
            )
            result = simplify_clause(result, merge=False)
            trace.add("fold", e, [result], detail=entry.pred)
            folded.append(result)
        out.extend(folded)

    for c in out:
        for a in c.atoms():
            if a.pred in INTERP_PREDS:
                raise HornlinError("interpreter predicate left in output")
    return RIResult(ClauseSet.of(out).dedup(), defs, trace)


def remove_interpreter(opsem: OpSemSet, trace: Optional[TransformTrace] = None) -> ClauseSet:
    return run_ri(opsem, trace).clauses


# ---------------------------------------------------------------------------
# Linearization.


@dataclass(frozen=True)
class LinResult:
    clauses: ClauseSet
    defs: DefsTable
    trace: TransformTrace


def _cascade_unfold(
    c: Clause, lcls: list[Clause], gen: NameGen, trace: Optional[TransformTrace]
) -> list[Clause]:
    """Unfold c with respect to every body atom, left to right, accumulating
    constraints and pruning rationally unsatisfiable combinations."""
    states = [(c.head, c.constraint, (), c.body)]
    for _ in range(len(c.body)):
        next_states = []
        for head, constraint, done, todo in states:
            atom, rest = todo[0], todo[1:]
            for rule in lcls:
                if rule.head is None or rule.head.pred != atom.pred:
                    continue
                rc = rename_apart(rule, gen)
                mgu = unify_atoms(atom, rc.head)
                if mgu is None:
                    continue
                new_constraint = conjoin(
                    subst_constraint(constraint, mgu), subst_constraint(rc.constraint, mgu)
                )
                if new_constraint.is_false() or not sat_q(new_constraint):
                    continue
                next_states.append(
                    (
                        subst_atom(head, mgu) if head else None,
                        new_constraint,
                        tuple(subst_atom(a, mgu) for a in done)
                        + tuple(subst_atom(a, mgu) for a in rc.body),
                        tuple(subst_atom(a, mgu) for a in rest),
                    )
                )
        states = next_states
    out = [Clause(h, k, d) for h, k, d, _ in states]
    if trace is not None:
        trace.add("unfold", c, out, detail="@all")
    return out


def linearize(
    lcls: ClauseSet | list[Clause],
    gls: ClauseSet | list[Clause],
    trace: Optional[TransformTrace] = None,
) -> ClauseSet:
    return run_lin(lcls, gls, trace).clauses


def run_lin(
    lcls: ClauseSet | list[Clause],
    gls: ClauseSet | list[Clause],
    trace: Optional[TransformTrace] = None,
) -> LinResult:
    """Convert linear clauses plus goals into an equisatisfiable set of linear
    clauses.

    Every queued clause is unfolded with respect to all its body atoms using
    the linear input clauses, each result is rewritten to flat form, and
    multi-atom bodies are folded against definitions (introducing new1, new2,
    ... whose bodies never exceed the widest input goal).  Goals whose
    rewritten body has at most one atom are emitted without folding.
    """
    lcls = list(lcls)
    gls = list(gls)
    for c in lcls:
        if not c.is_linear():
            raise HornlinError(f"input clause is not linear: {clause_to_text(c)}")
    for g in gls:
        if not g.is_goal():
            raise HornlinError(f"processing input must be a goal: {clause_to_text(g)}")
    trace = trace if trace is not None else TransformTrace()
    gen = NameGen()
    for c in lcls + gls:
        gen.note(c.vars())
    defs = DefsTable("new")
    queue: list[Clause] = list(gls)
    transf: list[Clause] = list(lcls)
    rounds = 0
    while queue:
        rounds += 1
        if rounds > MAX_SESSION_ROUNDS:
            raise HornlinError("linearization did not converge")
        c = queue.pop(0)
        unfolded = _cascade_unfold(c, lcls, gen, trace)
        for e in unfolded:
            e = flatten(e, gen)
            e = simplify_clause(e, merge=True)
            k = len(e.body)
            if k == 0 or (e.head is None and k <= 1):
                transf.append(e)
                continue
            head_vars = _head_vars_for(e)
            entry, fresh = defs.lookup_or_define(e.body, head_vars)
            if fresh:
                trace.add("define", entry.clause(), [entry.clause()], detail=entry.pred)
                queue.append(entry.clause())
            folded = Clause(
                e.head,
                e.constraint,
                (Atom(entry.pred, tuple(Var(v) for v in head_vars)),),
            )
            trace.add("fold", e, [folded], detail=entry.pred)
            transf.append(folded)
    out = ClauseSet.of(transf).dedup()
    for c in out:
        if not c.is_linear():  # pragma: no cover - guaranteed by construction
            raise HornlinError(f"nonlinear clause in output: {clause_to_text(c)}")
    return LinResult(out, defs, trace)


# ---------------------------------------------------------------------------
# Solution transport across a transformation.


def transport_solution(defs: DefsTable, sigma: SymbolicInterp) -> SymbolicInterp:
    """Extend a verified interpretation of the input to the introduced
    predicates: each definition newp(X...) <- A1,...,Ak receives the
    conjunction of the interpretations of its body atoms, with body-local
    variables projected out."""
    entries = {p: (vs, c) for p, vs, c in sigma.entries}
    for entry in defs.ordered():
        current = SymbolicInterp.of(entries)
        gen = NameGen(set(entry.head_vars) | {v for a in entry.body for v in a.vars()})
        acc = LinConstraint()
        for a in entry.body:
            acc = conjoin(acc, current.instantiate(a, gen))
        extra = acc.vars() - set(entry.head_vars)
        if extra:
            acc = eliminate(acc, extra)
        entries[entry.pred] = (entry.head_vars, acc)
    return SymbolicInterp.of(entries)


# ---------------------------------------------------------------------------
# Trace replay.


def replay_ri(opsem: OpSemSet, recorded: TransformTrace) -> ClauseSet:
    """Re-run the deterministic transformation and check the recorded trace is
    reproduced step by step; returns the (identical) output."""
    fresh = TransformTrace()
    result = run_ri(opsem, fresh)
    if fresh.lines() != recorded.lines():
        raise HornlinError("interpreter-removal trace does not replay")
    return result.clauses


def replay_lin(lcls, gls, recorded: TransformTrace) -> ClauseSet:
    fresh = TransformTrace()
    result = run_lin(lcls, gls, fresh)
    if fresh.lines() != recorded.lines():
        raise HornlinError("linearization trace does not replay")
    return result.clauses
