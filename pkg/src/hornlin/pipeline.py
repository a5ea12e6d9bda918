"""Stage glue: program + spec -> semantics clauses -> interpreter removal ->
linearization, plus the counterexample-to-execution replay bridge."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .chc import Clause, ClauseSet, IntConst, Var
from .encoder import OpSemSet, assemble_pc, build_pcorr, encode_opsem
from .errors import HornlinError
from .imp import ImpProgram, interpret, normalize_jumps, parse_imp
from .linarith import sat_z
from .solve import Cex, derive_atom_values
from .specfile import SpecTriple, parse_spec
from .transform import LinResult, RIResult, TransformTrace, run_lin, run_ri


@dataclass(frozen=True)
class PipelineArtifacts:
    program: ImpProgram
    triple: SpecTriple
    opsem: OpSemSet
    pc: ClauseSet  # goals + semantics clauses + auxiliaries
    ri: RIResult
    post_ri: ClauseSet  # specialized clauses + auxiliaries + goals
    lin: LinResult
    post_lin: ClauseSet

    def stage_sets(self) -> dict[str, ClauseSet]:
        return {"pc": self.pc, "ri": self.post_ri, "lin": self.post_lin}


def stage_counts(s: ClauseSet) -> dict[str, int]:
    widths = [len(c.body) for c in s]
    return {
        "clauses": len(s.clauses),
        "goals": len(s.goals()),
        "max_body_width": max(widths) if widths else 0,
    }


def build(program: ImpProgram, triple: SpecTriple,
          ri_trace: Optional[TransformTrace] = None,
          lin_trace: Optional[TransformTrace] = None) -> PipelineArtifacts:
    """Run every stage; the linearization input is the specialized relation
    clauses plus auxiliaries, with all partial-correctness goals processed."""
    program = normalize_jumps(program)
    opsem = encode_opsem(program, triple)
    pc = assemble_pc(opsem, triple)
    ri = run_ri(opsem, ri_trace)
    goals = build_pcorr(triple, opsem.r_pred)
    post_ri = ClauseSet.of(
        list(ri.clauses) + list(triple.aux) + list(goals)
    ).dedup()
    lcls = list(ri.clauses) + list(triple.aux)
    lin = run_lin(lcls, list(goals), lin_trace)
    return PipelineArtifacts(program, triple, opsem, pc, ri, post_ri, lin, lin.clauses)


def build_from_text(imp_text: str, spec_text: str, **kw) -> PipelineArtifacts:
    program = normalize_jumps(parse_imp(imp_text))
    triple = parse_spec(spec_text, program)
    return build(program, triple, **kw)


# ---------------------------------------------------------------------------
# Counterexample replay through the interpreter.


@dataclass(frozen=True)
class ReplayOutcome:
    param_values: dict[str, int]
    final_env: Optional[dict[str, int]]
    actual: Optional[int]
    spec_values: tuple[int, ...]
    violated: bool


def replay_counterexample(
    cex: Cex,
    program: ImpProgram,
    triple: SpecTriple,
    r_pred: str,
    spec_depth: int = 14,
    max_steps: int = 100_000,
) -> ReplayOutcome:
    """Ground a counterexample found on the un-transformed clause set, rerun
    the program on the extracted initial values and compare the final result
    with the bounded denotation of the specification."""
    inst = cex.goal_instance()
    r_atoms = [a for a in inst.body if a.pred == r_pred]
    if not r_atoms:
        raise HornlinError("counterexample goal has no program-relation atom")
    point = {v: Fraction(n) for v, n in cex.witness.items()}

    def value_of(term) -> int:
        from .chc import term_coeffs

        cs, k = term_coeffs(term)
        val = k + sum(c * point.get(n, Fraction(0)) for n, c in cs)
        if val.denominator != 1:
            raise HornlinError("non-integral value in counterexample replay")
        return int(val)

    # any relation atom of the instance identifies violating input values;
    # check them all and report the first actual violation
    outcome = None
    for atom in r_atoms:
        *param_terms, result_term = atom.args
        params = {p: value_of(t) for p, t in zip(triple.params, param_terms)}
        claimed = value_of(result_term)
        if not triple.pre_holds(params):
            continue
        env = triple.initial_env(params)
        run = interpret(program, env, max_steps)
        if run.status != "halted":
            continue
        actual = run.env[triple.result_var]
        spec_values = _spec_values(triple, params, spec_depth)
        violated = actual not in spec_values if spec_values else False
        outcome = ReplayOutcome(params, run.env, actual, spec_values, violated)
        if violated and claimed == actual:
            return outcome
        if violated:
            break
    if outcome is None:
        return ReplayOutcome({}, None, None, (), False)
    return outcome


def _spec_values(triple: SpecTriple, params: dict[str, int], depth: int) -> tuple[int, ...]:
    from .chc import term_coeffs

    query = triple.post_pred
    atom_args = tuple(IntConst(params[p]) for p in triple.params) + (Var("_RESULT"),)
    from .chc import Atom

    leaves = derive_atom_values(
        list(triple.f_def) + list(triple.aux), Atom(query, atom_args), depth
    )
    values = set()
    for leaf in leaves:
        z = sat_z(leaf.constraint)
        if z.status != "sat":
            continue
        pt = {v: Fraction(n) for v, n in z.witness.items()}
        cs, k = term_coeffs(leaf.subst.get("_RESULT", Var("_RESULT")))
        val = k + sum(c * pt.get(n, Fraction(0)) for n, c in cs)
        if val.denominator == 1:
            values.add(int(val))
    return tuple(sorted(values))
