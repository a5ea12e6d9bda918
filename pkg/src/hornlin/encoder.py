"""Builds the operational-semantics clause set for a normalized program (the
relation clause, initCf, finalCf, reach, tr) and the partial-correctness goals
derived from the postcondition definition; assembles the combined set.

Configurations are encoded flat: a configuration is a label constant followed
by one integer slot per program variable, so reach has arity 2*(1+s).  The
slot order is the triple's binding order.  Assignments always introduce a
fresh slot variable constrained by an equality; guards of conditional jumps
are emitted in integer-tightened non-strict form, and the else-branch guard is
the exact integer negation (which splits an equality guard into two clauses).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .chc import (
    Atom,
    Clause,
    ClauseSet,
    IntConst,
    NameGen,
    Subst,
    Term,
    Var,
    apply_subst,
    simplify_clause,
    subst_constraint,
    term_coeffs,
    unify_atoms,
)
from .errors import EncodeError
from .imp import Assign, CondJump, Goto, Halt, ImpProgram, back_edge_targets
from .linarith import LinAtomicRel, LinConstraint, conjoin, norm_coeffs
from .specfile import SpecTriple

INTERP_PREDS = ("initCf", "reach", "finalCf", "tr")


@dataclass(frozen=True)
class OpSemSet:
    clauses: ClauseSet
    r_pred: str
    params: tuple[str, ...]
    z_vars: tuple[str, ...]
    label_index: dict[str, int]
    non_unfoldable: frozenset[int]  # label constants of back-edge targets
    result_slot: int

    def label_const(self, label: str) -> IntConst:
        return IntConst(self.label_index[label])


def _slot_name(gen: NameGen, var: str) -> str:
    return gen.fresh(var.upper() if var.upper() != var else f"{var}_S")


def _guard_rel(cond: LinAtomicRel, slot_of: Subst) -> LinAtomicRel:
    acc: dict[str, Fraction] = {}
    for n, c in cond.coeffs:
        t = slot_of[n]
        assert isinstance(t, Var)
        acc[t.name] = acc.get(t.name, Fraction(0)) + c
    return LinAtomicRel(norm_coeffs(acc), cond.constant, cond.rel)


def _tighten(rel: LinAtomicRel) -> LinAtomicRel:
    rel = rel.scaled_integral()
    if rel.rel == ">":
        return LinAtomicRel(rel.coeffs, rel.constant - 1, ">=")
    return rel


def _negate_int(rel: LinAtomicRel) -> list[LinAtomicRel]:
    """Exact integer negation; an equality splits into two inequalities."""
    rel = rel.scaled_integral()
    neg = tuple((n, -c) for n, c in rel.coeffs)
    if rel.rel == "=":
        return [
            LinAtomicRel(rel.coeffs, rel.constant - 1, ">="),
            LinAtomicRel(neg, -rel.constant - 1, ">="),
        ]
    if rel.rel == ">":  # not(e > 0)  <=>  e =< 0
        return [LinAtomicRel(neg, -rel.constant, ">=")]
    return [LinAtomicRel(neg, -rel.constant - 1, ">=")]  # not(e >= 0) <=> e =< -1


def encode_opsem(p: ImpProgram, t: SpecTriple) -> OpSemSet:
    """The relation clause plus initCf, finalCf, two reach clauses and the
    per-command transition clauses (halt is stuck and gets none)."""
    if not p.is_normalized():
        raise EncodeError("program must be in jump-normal form; run normalize_jumps first")
    z_vars = t.z_vars()
    missing = set(p.variables) - set(z_vars)
    if missing:
        raise EncodeError(f"program variables not bound in the triple: {sorted(missing)}")
    reserved = set(INTERP_PREDS) | {f"r_{t.program_name}", "="}
    for c in t.spec:
        for a in c.atoms():
            if a.pred in reserved:
                raise EncodeError(f"specification uses reserved predicate {a.pred!r}")

    label_index = {lc.label: i for i, lc in enumerate(p.commands)}
    halt_label = next(lc.label for lc in p.commands if isinstance(lc.command, Halt))
    r_pred = f"r_{t.program_name}"
    s = len(z_vars)
    result_slot = z_vars.index(t.result_var)

    clauses: list[Clause] = []
    gen = NameGen(set(t.params) | {v.upper() for v in z_vars})

    # relation clause: r(P..., ZK) :- initCf(C0, P...), reach(C0, Ch), finalCf(Ch, ZK)
    gen_r = NameGen()
    c0 = [Var(gen_r.fresh("L0"))] + [Var(gen_r.fresh(v.upper())) for v in z_vars]
    ch = [Var(gen_r.fresh("LH"))] + [Var(gen_r.fresh(v.upper())) for v in z_vars]
    p_args = [Var(p_) for p_ in t.params]
    zk = Var(gen_r.fresh("ZK"))
    clauses.append(
        Clause(
            Atom(r_pred, tuple(p_args) + (zk,)),
            LinConstraint(),
            (
                Atom("initCf", tuple(c0) + tuple(p_args)),
                Atom("reach", tuple(c0) + tuple(ch)),
                Atom("finalCf", tuple(ch) + (zk,)),
            ),
        )
    )

    # initCf: parameters shared into their slots, pinned constants constrained
    gen_i = NameGen(t.params)
    slots: list[Term] = []
    pins: list[LinAtomicRel] = []
    for v in z_vars:
        b = t.binding_for(v)
        if b.kind == "param":
            slots.append(Var(b.param))
        else:
            sv = gen_i.fresh(v.upper())
            slots.append(Var(sv))
            pins.append(LinAtomicRel.make({sv: 1}, -Fraction(b.value), "="))
    pre = conjoin(t.pre_constraint, LinConstraint(tuple(pins)))
    pre_body: list[Atom] = []
    for a in t.pre_atoms:
        inlined = _inline_single_fact(a, t, gen_i)
        if inlined is not None:
            pre = conjoin(pre, inlined)
        else:
            pre_body.append(a)
    clauses.append(
        Clause(
            Atom(
                "initCf",
                (IntConst(label_index[p.commands[0].label]),)
                + tuple(slots)
                + tuple(Var(p_) for p_ in t.params),
            ),
            pre,
            tuple(pre_body),
        )
    )

    # finalCf: the result slot is shared into the output argument
    gen_f = NameGen()
    fslots = [Var(gen_f.fresh(v.upper())) for v in z_vars]
    clauses.append(
        Clause(
            Atom(
                "finalCf",
                (IntConst(label_index[halt_label]),) + tuple(fslots) + (fslots[result_slot],),
            ),
            LinConstraint(),
            (),
        )
    )

    # reach: reflexivity and one-step extension
    gen_re = NameGen()
    x = [Var(gen_re.fresh("L1"))] + [Var(gen_re.fresh(v.upper())) for v in z_vars]
    clauses.append(Clause(Atom("reach", tuple(x) + tuple(x)), LinConstraint(), ()))
    x1 = [Var(gen_re.fresh("LA"))] + [Var(gen_re.fresh(v.upper())) for v in z_vars]
    x2 = [Var(gen_re.fresh("LB"))] + [Var(gen_re.fresh(v.upper())) for v in z_vars]
    x3 = [Var(gen_re.fresh("LC"))] + [Var(gen_re.fresh(v.upper())) for v in z_vars]
    clauses.append(
        Clause(
            Atom("reach", tuple(x1) + tuple(x3)),
            LinConstraint(),
            (Atom("tr", tuple(x1) + tuple(x2)), Atom("reach", tuple(x2) + tuple(x3))),
        )
    )

    # tr: one transition step per command; halt is stuck
    for i, lc in enumerate(p.commands):
        cmd = lc.command
        here = IntConst(label_index[lc.label])
        gen_t = NameGen()
        src = [Var(gen_t.fresh(v.upper())) for v in z_vars]
        slot_of: Subst = {v: src[k] for k, v in enumerate(z_vars)}
        if isinstance(cmd, Assign):
            nxt = p.commands[i + 1].label
            dst = list(src)
            res = Var(gen_t.fresh(z_vars[z_vars.index(cmd.var)].upper() + "1"))
            dst[z_vars.index(cmd.var)] = res
            cs, k = term_coeffs(cmd.expr)
            acc = {res.name: Fraction(1)}
            for n, c in cs:
                sv = slot_of[n]
                acc[sv.name] = acc.get(sv.name, Fraction(0)) - c
            update = LinAtomicRel(norm_coeffs(acc), -k, "=")
            clauses.append(
                Clause(
                    Atom(
                        "tr",
                        (here,) + tuple(src) + (IntConst(label_index[nxt]),) + tuple(dst),
                    ),
                    LinConstraint((update,)),
                    (),
                )
            )
        elif isinstance(cmd, CondJump):
            guard = _guard_rel(cmd.cond, slot_of)
            then_const = IntConst(label_index[cmd.then_label])
            else_const = IntConst(label_index[cmd.else_label])
            clauses.append(
                Clause(
                    Atom("tr", (here,) + tuple(src) + (then_const,) + tuple(src)),
                    LinConstraint((_tighten(guard),)),
                    (),
                )
            )
            for neg in _negate_int(guard):
                clauses.append(
                    Clause(
                        Atom("tr", (here,) + tuple(src) + (else_const,) + tuple(src)),
                        LinConstraint((neg,)),
                        (),
                    )
                )
        elif isinstance(cmd, Goto):
            clauses.append(
                Clause(
                    Atom(
                        "tr",
                        (here,) + tuple(src) + (IntConst(label_index[cmd.target]),) + tuple(src),
                    ),
                    LinConstraint(),
                    (),
                )
            )
        elif isinstance(cmd, Halt):
            pass
        else:  # pragma: no cover
            raise AssertionError(cmd)

    back = back_edge_targets(p)
    return OpSemSet(
        clauses=ClauseSet.of(clauses),
        r_pred=r_pred,
        params=t.params,
        z_vars=z_vars,
        label_index=label_index,
        non_unfoldable=frozenset(label_index[l] for l in back),
        result_slot=result_slot,
    )


def _inline_single_fact(a: Atom, t: SpecTriple, gen: NameGen) -> Optional[LinConstraint]:
    """A pre predicate defined by a single constrained fact is inlined."""
    defs = [c for c in t.aux if c.head is not None and c.head.pred == a.pred]
    if len(defs) != 1 or defs[0].body:
        return None
    from .chc import rename_apart

    fact = rename_apart(defs[0], gen)
    mgu = unify_atoms(a, fact.head)
    if mgu is None:
        return None
    return subst_constraint(fact.constraint, mgu)


# ---------------------------------------------------------------------------
# Partial-correctness goals.


def build_pcorr(t: SpecTriple, r_pred: Optional[str] = None) -> ClauseSet:
    """Two goals per postcondition clause: for f(t1..ts, tY) :- B, emit

        false :- B~, tY > Z, r(t1..ts, Z).
        false :- B~, tY < Z, r(t1..ts, Z).

    where B~ is B with every f occurrence renamed to the program relation and
    Z is fresh.  Output size is exactly 2 * |definition clauses|."""
    r_pred = r_pred or f"r_{t.program_name}"
    goals: list[Clause] = []
    for d in t.f_def:
        gen = NameGen(d.vars())
        *f_args, result_term = d.head.args
        z = Var(gen.fresh("Z"))
        body = tuple(
            Atom(r_pred if a.pred == t.post_pred else a.pred, a.args) for a in d.body
        )
        r_atom = Atom(r_pred, tuple(f_args) + (z,))
        cs, k = term_coeffs(result_term)
        for rel_dir in (">", "<"):
            acc = dict(cs)
            acc[z.name] = acc.get(z.name, Fraction(0)) - 1
            diff = LinAtomicRel(norm_coeffs(acc), k, ">") if rel_dir == ">" else LinAtomicRel(
                norm_coeffs({n: -c for n, c in acc.items()}), -k, ">"
            )
            goal = Clause(
                None,
                conjoin(d.constraint, LinConstraint((diff,))),
                body + (r_atom,),
            )
            goals.append(simplify_clause(goal, merge=False, drop_redundant=True))
    return ClauseSet.of(goals)


def assemble_pc(opsem: OpSemSet, t: SpecTriple) -> ClauseSet:
    """Union of the semantics clauses, the auxiliary clauses and the goals,
    deduplicated under canonical renaming, goals printed last."""
    goals = build_pcorr(t, opsem.r_pred)
    combined = list(opsem.clauses) + list(t.aux) + list(goals)
    return ClauseSet.of(combined).dedup()
