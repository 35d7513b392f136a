"""Text format for diagram programs (``.snop`` files).

Example::

    space H dim 2;
    atom G : H -> H;
    atom K : H -> H;
    diagram D2 = feedback[1,2](perm[2,1](G * K));

``A then B`` feeds the outputs of ``A`` into ``B``; ``*`` is the tensor
(left-associative); ``#`` starts a comment.  ``perm[..](e)`` and
``ctrl[u](e)`` act on the outputs of ``e``; applied to ``id[..]`` they
denote the bare permutation or control.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .diagram import (Atom, ControlExpr, Ctrl, Dagger, Diagram, DiagramTypeError, Feedback, Id,
                      Involute, Neutral, Perm, Permutation, Seq, Signature, SpaceRef, Star, Tensor,
                      Token, control_tokens, subterms, typecheck)

KEYWORDS = frozenset({"space", "dim", "atom", "control", "involution", "diagram", "then",
                      "id", "perm", "feedback", "ctrl", "dagger"})
NEUTRAL_NAME = "e"


class ParseError(Exception):
    def __init__(self, line: int, column: int, message: str, expected=()):
        self.line = line
        self.column = column
        self.message = message
        self.expected = frozenset(expected)
        super().__init__(str(self))

    def __str__(self):
        exp = f" (expected {', '.join(sorted(self.expected))})" if self.expected else ""
        return f"{self.line}:{self.column}: {self.message}{exp}"


@dataclass
class SourceProgram:
    spaces: dict[str, SpaceRef] = field(default_factory=dict)
    atoms: dict[str, tuple[Signature, Signature]] = field(default_factory=dict)
    controls: dict[str, str | None] = field(default_factory=dict)  # token -> declared involute
    diagrams: dict[str, Diagram] = field(default_factory=dict)

    def diagram(self, name: str | None = None) -> Diagram:
        """The named diagram, or the last one defined."""
        if not self.diagrams:
            raise KeyError("program defines no diagram")
        if name is None:
            return next(reversed(self.diagrams.values()))
        return self.diagrams[name]


# -- lexer -----------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>[0-9]+)
  | (?P<sym>->|\^\*|[;:,\[\]()*=])
""", re.VERBOSE)


@dataclass(frozen=True)
class Lexeme:
    kind: str  # "ident" | "int" | "sym" | "eof"
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Lexeme]:
    out = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(line, col, f"unexpected character {text[pos]!r}")
        chunk = m.group()
        if m.lastgroup != "ws":
            out.append(Lexeme(m.lastgroup, chunk, line, col))
        nl = chunk.count("\n")
        if nl:
            line += nl
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    out.append(Lexeme("eof", "", line, col))
    return out


# -- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.k = 0
        self.prog = SourceProgram()

    @property
    def cur(self) -> Lexeme:
        return self.toks[self.k]

    def fail(self, message: str, expected=(), at: Lexeme | None = None):
        t = at or self.cur
        raise ParseError(t.line, t.column, message, expected)

    def accept(self, text: str) -> bool:
        t = self.cur
        if t.kind in ("sym", "ident") and t.text == text:
            self.k += 1
            return True
        return False

    def expect(self, text: str) -> Lexeme:
        t = self.cur
        if not self.accept(text):
            self.fail(f"unexpected {_show(t)}", {repr(text)})
        return t

    def ident(self, what: str = "identifier") -> Lexeme:
        t = self.cur
        if t.kind != "ident" or t.text in KEYWORDS:
            self.fail(f"unexpected {_show(t)}", {what})
        self.k += 1
        return t

    def integer(self) -> int:
        t = self.cur
        if t.kind != "int":
            self.fail(f"unexpected {_show(t)}", {"integer"})
        self.k += 1
        return int(t.text)

    def fresh(self, t: Lexeme):
        p = self.prog
        if t.text in p.spaces or t.text in p.atoms or t.text in p.controls or t.text in p.diagrams:
            self.fail(f"duplicate name {t.text!r}", at=t)

    # program and declarations

    def program(self) -> SourceProgram:
        pending = []
        while self.cur.kind != "eof":
            t = self.cur
            if self.accept("space"):
                self.space_decl()
            elif self.accept("atom"):
                self.atom_decl()
            elif self.accept("control"):
                pending.extend(self.control_decl())
            elif self.accept("diagram"):
                self.diagram_decl()
            else:
                self.fail(f"unexpected {_show(t)}", {"'space'", "'atom'", "'control'", "'diagram'"})
            self.expect(";")
        for name, target in pending:
            if target.text not in self.prog.controls:
                self.fail(f"involution target {target.text!r} is not a declared control", at=target)
            back = self.prog.controls[target.text]
            if back is not None and back != name:
                self.fail(f"involution of {target.text!r} is {back!r}, not {name!r}", at=target)
        return self.prog

    def space_decl(self):
        name = self.ident("space name")
        self.fresh(name)
        self.expect("dim")
        at = self.cur
        dim = self.integer()
        if dim < 1:
            self.fail("dimension must be positive", at=at)
        self.prog.spaces[name.text] = SpaceRef(name.text, dim)

    def atom_decl(self):
        name = self.ident("atom name")
        self.fresh(name)
        self.expect(":")
        i = self.siglist()
        self.expect("->")
        o = self.siglist()
        self.prog.atoms[name.text] = (i, o)

    def control_decl(self):
        name = self.ident("control name")
        if name.text == NEUTRAL_NAME:
            self.fail(f"{NEUTRAL_NAME!r} names the neutral control", at=name)
        self.fresh(name)
        target = None
        if self.accept("involution"):
            target = self.ident("control name")
        self.prog.controls[name.text] = target.text if target else None
        return [(name.text, target)] if target else []

    def diagram_decl(self):
        name = self.ident("diagram name")
        self.fresh(name)
        self.expect("=")
        start = self.cur
        d = self.expr()
        try:
            typecheck(d, self.prog.atoms)
        except DiagramTypeError as exc:
            raise DiagramTypeError(f"{start.line}:{start.column}: diagram {name.text!r}: {exc}") from None
        self.prog.diagrams[name.text] = d

    def siglist(self) -> Signature:
        if self.accept("("):
            self.expect(")")
            return Signature()
        spaces = [self.space_ref()]
        while self.accept(","):
            spaces.append(self.space_ref())
        return Signature(tuple(spaces))

    def space_ref(self) -> SpaceRef:
        t = self.ident("space name")
        if t.text not in self.prog.spaces:
            self.fail(f"undeclared space {t.text!r}", at=t)
        return self.prog.spaces[t.text]

    # expressions

    def expr(self) -> Diagram:
        d = self.tens()
        while self.accept("then"):
            d = Seq(d, self.tens())
        return d

    def tens(self) -> Diagram:
        d = self.prim()
        while self.accept("*"):
            d = Tensor(d, self.prim())
        return d

    def prim(self) -> Diagram:
        t = self.cur
        if self.accept("id"):
            self.expect("[")
            s = self.siglist()
            self.expect("]")
            return Id(s)
        if self.accept("perm"):
            self.expect("[")
            pi = [self.integer()]
            while self.accept(","):
                pi.append(self.integer())
            self.expect("]")
            body = self.paren_expr()
            p = Permutation(tuple(pi))
            if isinstance(body, Id):
                return Perm(p, body.sig)
            return Seq(body, Perm(p, self.outputs(body, t)))
        if self.accept("feedback"):
            self.expect("[")
            i = self.integer()
            self.expect(",")
            j = self.integer()
            self.expect("]")
            return Feedback(i, j, self.paren_expr())
        if self.accept("ctrl"):
            self.expect("[")
            u = self.ctrl_expr()
            self.expect("]")
            body = self.paren_expr()
            if isinstance(body, Id):
                return Ctrl(u, body.sig, body.sig)
            out = self.outputs(body, t)
            return Seq(body, Ctrl(u, out, out))
        if self.accept("dagger"):
            return Dagger(self.paren_expr())
        if self.accept("("):
            d = self.expr()
            self.expect(")")
            return d
        if t.kind == "ident" and t.text not in KEYWORDS:
            self.k += 1
            if t.text in self.prog.atoms:
                i, o = self.prog.atoms[t.text]
                return Atom(t.text, i, o)
            if t.text in self.prog.diagrams:
                return self.prog.diagrams[t.text]
            self.fail(f"undeclared atom or diagram {t.text!r}", at=t)
        self.fail(f"unexpected {_show(t)}",
                  {"identifier", "'id'", "'perm'", "'feedback'", "'ctrl'", "'dagger'", "'('"})

    def paren_expr(self) -> Diagram:
        self.expect("(")
        d = self.expr()
        self.expect(")")
        return d

    def outputs(self, d: Diagram, at: Lexeme) -> Signature:
        try:
            return typecheck(d)[1]
        except DiagramTypeError as exc:
            raise DiagramTypeError(f"{at.line}:{at.column}: {exc}") from None

    def ctrl_expr(self) -> ControlExpr:
        u = self.ctrl_post()
        while self.accept("*"):
            u = Star(u, self.ctrl_post())
        return u

    def ctrl_post(self) -> ControlExpr:
        u = self.ctrl_atom()
        while self.accept("^*"):
            u = Involute(u)
        return u

    def ctrl_atom(self) -> ControlExpr:
        t = self.cur
        if self.accept("("):
            u = self.ctrl_expr()
            self.expect(")")
            return u
        if t.kind == "ident" and t.text == NEUTRAL_NAME:
            self.k += 1
            return Neutral()
        if t.kind == "ident" and t.text not in KEYWORDS:
            self.k += 1
            if t.text not in self.prog.controls:
                self.fail(f"undeclared control {t.text!r}", at=t)
            return Token(t.text)
        self.fail(f"unexpected {_show(t)}", {"control name", "'e'", "'('"})


def _show(t: Lexeme) -> str:
    return "end of input" if t.kind == "eof" else repr(t.text)


def parse(text: str) -> SourceProgram:
    """Parse a program; raises :class:`ParseError` or :class:`DiagramTypeError`."""
    return _Parser(text).program()


def parse_file(path) -> SourceProgram:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


# -- printer ---------------------------------------------------------------

_SEQ, _TENS, _PRIM = 0, 1, 2


def format_signature(s: Signature) -> str:
    return ", ".join(sp.name for sp in s) if len(s) else "()"


def format_control(u: ControlExpr) -> str:
    return _fmt_ctrl(u, 0)


def _fmt_ctrl(u: ControlExpr, prec: int) -> str:
    if isinstance(u, Token):
        return u.name
    if isinstance(u, Neutral):
        return NEUTRAL_NAME
    if isinstance(u, Involute):
        return _fmt_ctrl(u.inner, 2) + "^*"
    if isinstance(u, Star):
        s = f"{_fmt_ctrl(u.left, 1)} * {_fmt_ctrl(u.right, 2)}"
        return f"({s})" if prec >= 2 else s
    raise TypeError(f"not a control expression: {u!r}")


def format_diagram(d: Diagram) -> str:
    return _fmt(d)[0]


def _fmt(d: Diagram) -> tuple[str, int]:
    if isinstance(d, Id):
        return f"id[{format_signature(d.sig)}]", _PRIM
    if isinstance(d, Atom):
        return d.name, _PRIM
    if isinstance(d, Perm):
        return f"perm[{','.join(map(str, d.pi.mapping))}](id[{format_signature(d.sig)}])", _PRIM
    if isinstance(d, Ctrl):
        if d.in_sig != d.out_sig:
            raise ValueError("only square controls have concrete syntax")
        return f"ctrl[{format_control(d.u)}](id[{format_signature(d.in_sig)}])", _PRIM
    if isinstance(d, Feedback):
        return f"feedback[{d.i},{d.j}]({format_diagram(d.inner)})", _PRIM
    if isinstance(d, Dagger):
        return f"dagger({format_diagram(d.inner)})", _PRIM
    if isinstance(d, Tensor):
        return f"{_operand(d.left)} * {_operand(d.right)}", _TENS
    if isinstance(d, Seq):
        if not isinstance(d.first, Id):
            if isinstance(d.then, Perm):
                return f"perm[{','.join(map(str, d.then.pi.mapping))}]({format_diagram(d.first)})", _PRIM
            if isinstance(d.then, Ctrl) and d.then.in_sig == d.then.out_sig:
                return f"ctrl[{format_control(d.then.u)}]({format_diagram(d.first)})", _PRIM
        left = format_diagram(d.first)
        right, lvl = _fmt(d.then)
        if lvl == _SEQ:
            right = f"({right})"
        return f"{left} then {right}", _SEQ
    raise TypeError(f"not a diagram: {d!r}")


def _operand(d: Diagram) -> str:
    s, lvl = _fmt(d)
    return s if lvl == _PRIM else f"({s})"


def print_program(p: SourceProgram) -> str:
    lines = [f"space {s.name} dim {s.dim};" for s in p.spaces.values()]
    for name, inv in p.controls.items():
        lines.append(f"control {name} involution {inv};" if inv else f"control {name};")
    for name, (i, o) in p.atoms.items():
        lines.append(f"atom {name} : {format_signature(i)} -> {format_signature(o)};")
    for name, d in p.diagrams.items():
        lines.append(f"diagram {name} = {format_diagram(d)};")
    return "\n".join(lines) + "\n"


def program_for(d: Diagram, name: str = "D", controls=()) -> SourceProgram:
    """Smallest program declaring everything ``d`` mentions."""
    p = SourceProgram()
    spaces, atoms, toks = {}, {}, set(controls)
    for t in subterms(d):
        sigs = []
        if isinstance(t, (Id, Perm)):
            sigs = [t.sig]
        elif isinstance(t, Atom):
            sigs = [t.in_sig, t.out_sig]
            atoms[t.name] = (t.in_sig, t.out_sig)
        elif isinstance(t, Ctrl):
            sigs = [t.in_sig, t.out_sig]
            toks |= control_tokens(t.u)
        for s in sigs:
            for sp in s:
                spaces[sp.name] = sp
    p.spaces = dict(sorted(spaces.items()))
    p.controls = {t: None for t in sorted(toks)}
    p.atoms = dict(sorted(atoms.items()))
    p.diagrams = {name: d}
    return p
