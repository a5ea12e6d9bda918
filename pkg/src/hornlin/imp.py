"""Frontend for the C-like imperative language: parsing, normalization of
structured control flow into labeled conditional jumps, and a small-step
interpreter used as a semantics oracle.

Statements are separated by ';', blocks use '{}', labels are written 'name:'.
Conditions are single linear comparisons; compound conditions are written with
nested ifs.  Expressions are linear (no division or modulo), so one transition
stays inside linear integer arithmetic.  Variables are declared implicitly by
use; arithmetic is arbitrary precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .chc import IntConst, Term, Var, mk_linexpr, term_coeffs, term_vars
from .errors import ParseError
from .linarith import LinAtomicRel

DEFAULT_FUEL = 100_000


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Term


@dataclass(frozen=True)
class CondJump:
    cond: LinAtomicRel  # single comparison over program variables
    then_label: str
    else_label: str


@dataclass(frozen=True)
class Goto:
    target: str


@dataclass(frozen=True)
class Halt:
    pass


@dataclass(frozen=True)
class While:
    cond: LinAtomicRel
    body: tuple["LabeledCommand", ...]


@dataclass(frozen=True)
class Ite:
    cond: LinAtomicRel
    then_body: tuple["LabeledCommand", ...]
    else_body: tuple["LabeledCommand", ...]


Command = Assign | CondJump | Goto | Halt | While | Ite


@dataclass(frozen=True)
class LabeledCommand:
    label: str
    command: Command


@dataclass(frozen=True)
class ImpProgram:
    commands: tuple[LabeledCommand, ...]
    variables: tuple[str, ...]  # first textual occurrence order

    def labels(self) -> list[str]:
        return [c.label for c in self.commands]

    def is_normalized(self) -> bool:
        return all(
            isinstance(c.command, (Assign, CondJump, Goto, Halt)) for c in self.commands
        )

    def command_at(self, label: str) -> LabeledCommand:
        for c in self.commands:
            if c.label == label:
                return c
        raise KeyError(label)


# ---------------------------------------------------------------------------
# Parsing.

_REL_TOKENS = ["==", ">=", "=<", "<=", "<", ">", "="]


class _Lex:
    def __init__(self, text: str):
        self.text = text
        self.i = 0
        self.line = 1
        self.col = 1

    def error(self, msg: str) -> ParseError:
        return ParseError(msg, self.line, self.col)

    def _advance(self, n: int):
        for _ in range(n):
            if self.text[self.i] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.i += 1

    def skip_ws(self):
        while self.i < len(self.text):
            ch = self.text[self.i]
            if ch == "%":
                while self.i < len(self.text) and self.text[self.i] != "\n":
                    self._advance(1)
            elif ch.isspace():
                self._advance(1)
            else:
                return

    def eof(self) -> bool:
        self.skip_ws()
        return self.i >= len(self.text)

    def peek_word(self) -> Optional[str]:
        self.skip_ws()
        j = self.i
        if j < len(self.text) and (self.text[j].isalnum() or self.text[j] == "_"):
            k = j
            while k < len(self.text) and (self.text[k].isalnum() or self.text[k] == "_"):
                k += 1
            return self.text[j:k]
        return None

    def take_word(self) -> str:
        w = self.peek_word()
        if w is None:
            raise self.error("expected an identifier")
        self._advance(len(w))
        return w

    def try_punct(self, p: str) -> bool:
        self.skip_ws()
        if self.text.startswith(p, self.i):
            self._advance(len(p))
            return True
        return False

    def expect_punct(self, p: str):
        if not self.try_punct(p):
            raise self.error(f"expected {p!r}")


def _parse_expr(lex: _Lex) -> Term:
    coeffs: dict[str, Fraction] = {}
    const = Fraction(0)

    def primary(sign: Fraction):
        nonlocal const
        lex.skip_ws()
        if lex.try_punct("-"):
            primary(-sign)
            return
        if lex.try_punct("("):
            inner = _parse_expr(lex)
            lex.expect_punct(")")
            ic, ik = term_coeffs(inner)
            for n, c in ic:
                coeffs[n] = coeffs.get(n, Fraction(0)) + sign * c
            const += sign * ik
            return
        w = lex.peek_word()
        if w is None:
            raise lex.error("expected an expression")
        lex.take_word()
        if w.isdigit():
            val = Fraction(int(w))
            if lex.try_punct("*"):
                v = lex.take_word()
                if v.isdigit():
                    raise lex.error("nonlinear product of constants and variables")
                coeffs[v] = coeffs.get(v, Fraction(0)) + sign * val
            else:
                const += sign * val
            return
        if lex.try_punct("*"):
            raise lex.error("nonlinear term: variable * variable is not allowed")
        coeffs[w] = coeffs.get(w, Fraction(0)) + sign

    primary(Fraction(1))
    while True:
        if lex.try_punct("+"):
            primary(Fraction(1))
        elif lex.try_punct("-"):
            primary(Fraction(-1))
        else:
            break
    return mk_linexpr(coeffs, const)


def _parse_cond(lex: _Lex) -> LinAtomicRel:
    lhs = _parse_expr(lex)
    lex.skip_ws()
    for op in _REL_TOKENS:
        if lex.try_punct(op):
            rel = "=" if op == "==" else op
            rhs = _parse_expr(lex)
            lc, lk = term_coeffs(lhs)
            rc, rk = term_coeffs(rhs)
            acc = dict(lc)
            for n, c in rc:
                acc[n] = acc.get(n, Fraction(0)) - c
            return LinAtomicRel.make(acc, lk - rk, rel)
    raise lex.error("expected a comparison operator")


def _parse_block(lex: _Lex) -> list[LabeledCommand]:
    lex.expect_punct("{")
    cmds: list[LabeledCommand] = []
    while True:
        lex.skip_ws()
        if lex.try_punct("}"):
            return cmds
        cmds.extend(_parse_command(lex))
        lex.try_punct(";")


_KEYWORDS = {"while", "if", "else", "goto", "halt"}


def _parse_command(lex: _Lex) -> list[LabeledCommand]:
    lex.skip_ws()
    label = ""
    w = lex.peek_word()
    if w is None:
        raise lex.error("expected a command")
    # optional 'label:'
    save = (lex.i, lex.line, lex.col)
    lex.take_word()
    if lex.try_punct(":"):
        label = w
        lex.skip_ws()
        w = lex.peek_word()
        if w is None:
            raise lex.error("expected a command after label")
    else:
        lex.i, lex.line, lex.col = save
        w = lex.peek_word()

    if w == "while":
        lex.take_word()
        lex.expect_punct("(")
        cond = _parse_cond(lex)
        lex.expect_punct(")")
        body = _parse_block(lex)
        return [LabeledCommand(label, While(cond, tuple(body)))]
    if w == "if":
        lex.take_word()
        lex.expect_punct("(")
        cond = _parse_cond(lex)
        lex.expect_punct(")")
        lex.skip_ws()
        if lex.peek_word() == "goto":
            # jump-normal form: if (c) goto l1 else goto l2
            lex.take_word()
            then_label = lex.take_word()
            if lex.peek_word() != "else":
                raise lex.error("expected 'else' after the then-jump")
            lex.take_word()
            if lex.peek_word() != "goto":
                raise lex.error("expected 'goto' after 'else'")
            lex.take_word()
            else_label = lex.take_word()
            return [LabeledCommand(label, CondJump(cond, then_label, else_label))]
        then_body = _parse_block(lex)
        else_body: list[LabeledCommand] = []
        lex.skip_ws()
        if lex.peek_word() == "else":
            lex.take_word()
            else_body = _parse_block(lex)
        return [LabeledCommand(label, Ite(cond, tuple(then_body), tuple(else_body)))]
    if w == "goto":
        lex.take_word()
        target = lex.take_word()
        return [LabeledCommand(label, Goto(target))]
    if w == "halt":
        lex.take_word()
        return [LabeledCommand(label, Halt())]
    # assignment: var = expr
    var = lex.take_word()
    if var.isdigit() or var in _KEYWORDS:
        raise lex.error(f"cannot assign to {var!r}")
    lex.expect_punct("=")
    expr = _parse_expr(lex)
    return [LabeledCommand(label, Assign(var, expr))]


def _collect_vars(cmds, order: dict[str, None]):
    for lc in cmds:
        c = lc.command
        if isinstance(c, Assign):
            order.setdefault(c.var)
            for v in term_vars(c.expr):
                order.setdefault(v)
        elif isinstance(c, (While, Ite)):
            for n, _ in c.cond.coeffs:
                order.setdefault(n)
            if isinstance(c, While):
                _collect_vars(c.body, order)
            else:
                _collect_vars(c.then_body, order)
                _collect_vars(c.else_body, order)
        elif isinstance(c, CondJump):
            for n, _ in c.cond.coeffs:
                order.setdefault(n)


def parse_imp(text: str) -> ImpProgram:
    """Parse a program, keeping structured while/if nodes.

    Errors carry line/column; duplicate labels and missing or repeated halt
    commands are rejected immediately.
    """
    lex = _Lex(text)
    cmds: list[LabeledCommand] = []
    while not lex.eof():
        cmds.extend(_parse_command(lex))
        lex.try_punct(";")

    def walk(cs):
        for lc in cs:
            yield lc
            c = lc.command
            if isinstance(c, While):
                yield from walk(c.body)
            elif isinstance(c, Ite):
                yield from walk(c.then_body)
                yield from walk(c.else_body)

    halts = [lc for lc in walk(cmds) if isinstance(lc.command, Halt)]
    if not halts:
        raise ParseError("program has no halt command")
    if len(halts) > 1:
        raise ParseError("multiple halt commands; exactly one is required")
    seen_labels: set[str] = set()
    for lc in walk(cmds):
        if lc.label:
            if lc.label in seen_labels:
                raise ParseError(f"duplicate label {lc.label!r}")
            seen_labels.add(lc.label)

    order: dict[str, None] = {}
    _collect_vars(cmds, order)
    return ImpProgram(tuple(cmds), tuple(order))


# ---------------------------------------------------------------------------
# Normalization to jump form.


def normalize_jumps(p: ImpProgram) -> ImpProgram:
    """Desugar while/if into labeled conditional jumps.

    Every while L: while(c){body} becomes 'L: if(c) goto first-body-label
    else goto next-label' with a back-jump at the body's end.  Fresh labels are
    deterministic, derived from the enclosing label and position.  Observable
    behavior (interpret results) is unchanged.
    """
    if p.is_normalized() and all(lc.label for lc in p.commands):
        return p
    out: list[LabeledCommand] = []
    used = set(lbl for lbl in p.labels() if lbl)
    counters: dict[str, int] = {}

    def fresh(base: str) -> str:
        n = counters.get(base, 0)
        cand = base
        while cand in used or cand == "":
            n += 1
            cand = f"{base}_{n}" if base else f"L_{n}"
        counters[base] = n
        used.add(cand)
        return cand

    def label_of(lc: LabeledCommand, hint: str) -> str:
        if lc.label:
            return lc.label
        return fresh(hint)

    def emit(seq, next_label: Optional[str], hint: str):
        """Flatten seq; control after the last command flows to next_label."""
        # pre-assign entry labels so jumps can target them
        labeled = []
        for i, lc in enumerate(seq):
            lbl = lc.label if lc.label else fresh(f"{hint}_{i + 1}" if hint else f"L{i + 1}")
            labeled.append((lbl, lc.command))
        for i, (lbl, cmd) in enumerate(labeled):
            succ = labeled[i + 1][0] if i + 1 < len(labeled) else next_label
            if isinstance(cmd, While):
                if succ is None:
                    raise ParseError(f"loop at {lbl!r} falls off the end of the program")
                if cmd.body:
                    body_entry = cmd.body[0].label or fresh(f"{lbl}_body_1")
                    out.append(LabeledCommand(lbl, CondJump(cmd.cond, body_entry, succ)))
                    emit_body_with_entry(cmd.body, body_entry, lbl, f"{lbl}_body")
                else:
                    out.append(LabeledCommand(lbl, CondJump(cmd.cond, lbl, succ)))
            elif isinstance(cmd, Ite):
                if succ is None:
                    raise ParseError(f"branch at {lbl!r} falls off the end of the program")
                t_entry = (
                    (cmd.then_body[0].label or fresh(f"{lbl}_then_1")) if cmd.then_body else succ
                )
                e_entry = (
                    (cmd.else_body[0].label or fresh(f"{lbl}_else_1")) if cmd.else_body else succ
                )
                out.append(LabeledCommand(lbl, CondJump(cmd.cond, t_entry, e_entry)))
                if cmd.then_body:
                    emit_body_with_entry(cmd.then_body, t_entry, None, f"{lbl}_then", join=succ)
                if cmd.else_body:
                    emit_body_with_entry(cmd.else_body, e_entry, None, f"{lbl}_else", join=succ)
            elif isinstance(cmd, (Assign, Goto, Halt, CondJump)):
                out.append(LabeledCommand(lbl, cmd))
                if isinstance(cmd, Assign) and succ is None:
                    raise ParseError(f"control falls off the end after {lbl!r}")
            else:  # pragma: no cover
                raise AssertionError(cmd)

    def emit_body_with_entry(body, entry_label, back_to, hint, join=None):
        seq = list(body)
        relabeled = [LabeledCommand(entry_label, seq[0].command)] + seq[1:]
        if back_to is not None:
            relabeled.append(LabeledCommand(fresh(f"{hint}_{len(seq) + 1}"), Goto(back_to)))
            emit(relabeled, None, hint)
        else:
            assert join is not None
            last = relabeled[-1].command
            if isinstance(last, (Goto, Halt)):
                emit(relabeled, None, hint)
            else:
                relabeled.append(LabeledCommand(fresh(f"{hint}_{len(seq) + 1}"), Goto(join)))
                emit(relabeled, None, hint)

    emit(list(p.commands), None, "")

    labels = [lc.label for lc in out]
    targets = set()
    for lc in out:
        c = lc.command
        if isinstance(c, Goto):
            targets.add(c.target)
        elif isinstance(c, CondJump):
            targets.add(c.then_label)
            targets.add(c.else_label)
    missing = targets - set(labels)
    if missing:
        raise ParseError(f"jump to unknown label(s): {sorted(missing)}")
    return ImpProgram(tuple(out), p.variables)


def back_edge_targets(p: ImpProgram) -> set[str]:
    """Labels that must not be unfolded through: targets of any jump appearing
    later in command order, and targets of every goto."""
    assert p.is_normalized()
    pos = {lc.label: i for i, lc in enumerate(p.commands)}
    out: set[str] = set()
    for i, lc in enumerate(p.commands):
        c = lc.command
        if isinstance(c, Goto):
            out.add(c.target)
        elif isinstance(c, CondJump):
            for t in (c.then_label, c.else_label):
                if pos[t] <= i:
                    out.add(t)
    return out


# ---------------------------------------------------------------------------
# Interpreter.

Environment = dict[str, int]


@dataclass(frozen=True)
class InterpResult:
    status: str  # 'halted' | 'fuel'
    env: Optional[Environment] = None
    steps: int = 0


def _eval_term(t: Term, env: Environment) -> int:
    cs, k = term_coeffs(t)
    v = k + sum(c * env[n] for n, c in cs)
    assert v.denominator == 1
    return int(v)


def _eval_cond(cond: LinAtomicRel, env: Environment) -> bool:
    return cond.eval(env)


def interpret(p: ImpProgram, env: Environment, max_steps: int = DEFAULT_FUEL) -> InterpResult:
    """Run the deterministic small-step transition relation.

    Structured programs are normalized first (normalization is pure and
    deterministic).  The environment must be total on the program variables.
    """
    p = normalize_jumps(p)
    missing = [v for v in p.variables if v not in env]
    if missing:
        raise ValueError(f"environment missing program variables: {missing}")
    env = dict(env)
    index = {lc.label: i for i, lc in enumerate(p.commands)}
    i = 0
    steps = 0
    while steps < max_steps:
        cmd = p.commands[i].command
        if isinstance(cmd, Halt):
            return InterpResult("halted", env, steps)
        steps += 1
        if isinstance(cmd, Assign):
            env[cmd.var] = _eval_term(cmd.expr, env)
            i += 1
            if i >= len(p.commands):
                raise ParseError("control fell off the end of the program")
        elif isinstance(cmd, Goto):
            i = index[cmd.target]
        elif isinstance(cmd, CondJump):
            i = index[cmd.then_label if _eval_cond(cmd.cond, env) else cmd.else_label]
        else:  # pragma: no cover
            raise AssertionError(cmd)
    if isinstance(p.commands[i].command, Halt):
        return InterpResult("halted", env, steps)
    return InterpResult("fuel", None, steps)
