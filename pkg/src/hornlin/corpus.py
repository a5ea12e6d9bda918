"""Desk-scale program corpus: loader and canned specification mutants.

Each item pairs a program file with its specification.  Mutants replace one
postcondition clause by a value-twisted variant whose violation shows up at
the smallest precondition-satisfying parameters, so the bounded oracle finds
the counterexample at shallow depth on the un-transformed clauses too.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .chc import Clause, ClauseSet
from .parser import parse_clauses
from .specfile import SpecTriple, parse_spec

CORPUS_DIR = Path(__file__).resolve().parents[2] / "corpus"


@dataclass(frozen=True)
class Mutant:
    name: str
    clause_index: int  # index into the postcondition definition clauses
    replacement: str  # clause text


@dataclass(frozen=True)
class CorpusItem:
    name: str
    mutants: tuple[Mutant, ...]
    max_param: int = 4  # sampling bound for interpreter cross-checks

    def imp_path(self) -> Path:
        return CORPUS_DIR / f"{self.name}.imp"

    def spec_path(self) -> Path:
        return CORPUS_DIR / f"{self.name}.spec"

    def imp_text(self) -> str:
        return self.imp_path().read_text()

    def spec_text(self) -> str:
        return self.spec_path().read_text()


def apply_mutant(triple: SpecTriple, mutant: Mutant) -> SpecTriple:
    new_clause = parse_clauses(mutant.replacement).clauses[0]
    f_def = list(triple.f_def)
    f_def[mutant.clause_index] = new_clause
    clauses = ClauseSet.of(list(f_def) + list(triple.aux))
    return SpecTriple(
        program_name=triple.program_name,
        bindings=triple.bindings,
        params=triple.params,
        pre_constraint=triple.pre_constraint,
        pre_atoms=triple.pre_atoms,
        post_pred=triple.post_pred,
        result_var=triple.result_var,
        spec=clauses,
        f_def=tuple(f_def),
        aux=triple.aux,
    )


ITEMS: tuple[CorpusItem, ...] = (
    CorpusItem(
        "fibonacci",
        (
            # all three twist the n=0 base: the shortest run already exposes
            # them, so the bounded oracle agrees at one depth across stages
            Mutant("base0_up", 0, "fib(0,2)."),
            Mutant("base0_down", 0, "fib(0,0)."),
            Mutant("base0_far", 0, "fib(0,5)."),
        ),
        max_param=5,
    ),
    CorpusItem(
        "gcd",
        (
            Mutant("diag_up", 0, "gcd(X,X,Z) :- X>=1, Z=X+1."),
            Mutant("diag_down", 0, "gcd(X,X,Z) :- X>=1, Z=X-1."),
            Mutant("diag_zero", 0, "gcd(X,X,Z) :- X>=1, Z=0."),
        ),
        max_param=3,
    ),
    CorpusItem(
        "integer_division",
        (
            Mutant("base_up", 0, "div(A,B,Q) :- A>=0, B>=A+1, Q=1."),
            Mutant("base_down", 0, "div(A,B,Q) :- A>=0, B>=A+1, Q=-1."),
            Mutant("step_up", 1, "div(A,B,Q) :- A>=B, B>=1, A1=A-B, Q=Q1+2, div(A1,B,Q1)."),
        ),
        max_param=3,
    ),
    CorpusItem(
        "remainder",
        (
            Mutant("base_up", 0, "rem(A,B,R) :- A>=0, B>=A+1, R=A+1."),
            Mutant("base_down", 0, "rem(A,B,R) :- A>=0, B>=A+1, R=A-1."),
            Mutant("base_one", 0, "rem(A,B,R) :- A>=0, B>=A+1, R=1."),
        ),
        max_param=3,
    ),
    CorpusItem(
        "sum_first_integers",
        (
            Mutant("base_up", 0, "sum(0,1)."),
            Mutant("base_down", 0, "sum(0,-1)."),
            Mutant("step_up", 1, "sum(N,S) :- N>=1, N1=N-1, S=S1+N+1, sum(N1,S1)."),
        ),
        max_param=4,
    ),
    CorpusItem(
        "integer_multiplication",
        (
            Mutant("base_up", 0, "mult(0,B,1) :- B>=0."),
            Mutant("base_b", 0, "mult(0,B,B) :- B>=1."),
            Mutant("step_up", 1, "mult(A,B,P) :- A>=1, B>=0, A1=A-1, P=P1+B+1, mult(A1,B,P1)."),
        ),
        max_param=3,
    ),
    CorpusItem(
        "hanoi",
        (
            Mutant("base_up", 0, "hanoi(0,1)."),
            Mutant("base_down", 0, "hanoi(0,-1)."),
            Mutant("step_up", 1, "hanoi(N,M) :- N>=1, N1=N-1, M=2*M1+2, hanoi(N1,M1)."),
        ),
        max_param=4,
    ),
    CorpusItem(
        "lucas",
        (
            Mutant("base0_up", 0, "lucas(0,3)."),
            Mutant("base0_down", 0, "lucas(0,1)."),
            Mutant("base0_far", 0, "lucas(0,5)."),
        ),
        max_param=5,
    ),
    CorpusItem(
        "padovan",
        (
            Mutant("base0_up", 0, "pad(0,2)."),
            Mutant("base0_down", 0, "pad(0,0)."),
            Mutant("base0_far", 0, "pad(0,3)."),
        ),
        max_param=6,
    ),
    CorpusItem(
        "perrin",
        (
            Mutant("base0_up", 0, "per(0,4)."),
            Mutant("base0_down", 0, "per(0,2)."),
            Mutant("base0_zero", 0, "per(0,0)."),
        ),
        max_param=6,
    ),
)


def load(name: str):
    """Parsed (program, triple) for a corpus item name."""
    from .imp import normalize_jumps, parse_imp

    item = next(i for i in ITEMS if i.name == name)
    program = normalize_jumps(parse_imp(item.imp_text()))
    triple = parse_spec(item.spec_text(), program)
    return item, program, triple
