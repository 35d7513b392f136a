"""Term-level IR for operator-network wiring diagrams.

Diagrams are immutable trees over the generators identity, tensor,
sequential composition, permutation, feedback, control and dagger.  Each
term carries enough typing information to derive its interface without an
environment.  :func:`to_port_graph` forgets the term structure and keeps
only connectivity.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence


class DiagramTypeError(TypeError):
    """An ill-typed diagram term."""


@dataclass(frozen=True, order=True)
class SpaceRef:
    name: str
    dim: int

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ValueError(f"space {self.name!r} needs a positive dimension, got {self.dim!r}")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Signature:
    """Ordered list of spaces; the empty list is the monoidal unit."""

    spaces: tuple[SpaceRef, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "spaces", tuple(self.spaces))

    @classmethod
    def of(cls, *spaces: SpaceRef) -> "Signature":
        return cls(tuple(spaces))

    def __len__(self):
        return len(self.spaces)

    def __iter__(self):
        return iter(self.spaces)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return Signature(self.spaces[k])
        return self.spaces[k]

    def __add__(self, other: "Signature") -> "Signature":
        return Signature(self.spaces + tuple(other.spaces))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.spaces)

    @property
    def total_dim(self) -> int:
        """Dimension of the tensor product of the spaces (1 for the unit)."""
        return math.prod(self.dims)

    @property
    def width(self) -> int:
        """Dimension of the direct sum of the spaces (0 for the unit)."""
        return sum(self.dims)

    def dim(self, monoidal: str = "tensor") -> int:
        if monoidal == "tensor":
            return self.total_dim
        if monoidal == "sum":
            return self.width
        raise ValueError(f"unknown monoidal product {monoidal!r}")

    def without(self, k: int) -> "Signature":
        """Drop the 1-based port ``k``."""
        return Signature(self.spaces[: k - 1] + self.spaces[k:])

    def __str__(self):
        return "(" + ", ".join(s.name for s in self.spaces) + ")"


def sig(*spaces: SpaceRef) -> Signature:
    return Signature(tuple(spaces))


@dataclass(frozen=True)
class Permutation:
    """A bijection on ``1..n``; ``mapping[k-1]`` is the image of ``k``."""

    mapping: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mapping", tuple(int(m) for m in self.mapping))

    def is_valid(self) -> bool:
        return sorted(self.mapping) == list(range(1, len(self.mapping) + 1))

    def __len__(self):
        return len(self.mapping)

    def __call__(self, k: int) -> int:
        return self.mapping[k - 1]

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.mapping)
        for k, m in enumerate(self.mapping, start=1):
            inv[m - 1] = k
        return Permutation(tuple(inv))

    def apply(self, items: Sequence):
        """Reorder so that position ``k`` holds ``items[pi(k)]``."""
        return tuple(items[m - 1] for m in self.mapping)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(1, n + 1)))

    @classmethod
    def block_swap(cls, n_left: int, n_right: int) -> "Permutation":
        """Moves the right block of ``n_right`` ports in front of the left block."""
        return cls(tuple(range(n_left + 1, n_left + n_right + 1)) + tuple(range(1, n_left + 1)))


# -- control expressions ---------------------------------------------------


class ControlExpr:
    __slots__ = ()


@dataclass(frozen=True)
class Token(ControlExpr):
    name: str


@dataclass(frozen=True)
class Neutral(ControlExpr):
    pass


@dataclass(frozen=True)
class Star(ControlExpr):
    left: ControlExpr
    right: ControlExpr


@dataclass(frozen=True)
class Involute(ControlExpr):
    inner: ControlExpr


Letter = tuple[str, bool]  # (token, involuted)


def control_word(u: ControlExpr) -> tuple[Letter, ...]:
    """Flatten a control expression into a free word in application order.

    ``Star(a, b)`` acts as ``a`` followed by ``b``; the neutral element is the
    empty word and involution reverses the word and flips every letter.
    """
    if isinstance(u, Token):
        return ((u.name, False),)
    if isinstance(u, Neutral):
        return ()
    if isinstance(u, Star):
        return control_word(u.left) + control_word(u.right)
    if isinstance(u, Involute):
        return tuple((t, not inv) for t, inv in reversed(control_word(u.inner)))
    raise DiagramTypeError(f"not a control expression: {u!r}")


def word_to_expr(word: Sequence[Letter]) -> ControlExpr:
    if not word:
        return Neutral()
    exprs = [Involute(Token(t)) if inv else Token(t) for t, inv in word]
    out = exprs[0]
    for e in exprs[1:]:
        out = Star(out, e)
    return out


def control_tokens(u: ControlExpr) -> set[str]:
    return {t for t, _ in control_word(u)}


# -- diagram terms ---------------------------------------------------------


class Diagram:
    """Base class of diagram terms."""

    __slots__ = ()

    @property
    def dom(self) -> Signature:
        return typecheck(self)[0]

    @property
    def cod(self) -> Signature:
        return typecheck(self)[1]

    def __rshift__(self, other: "Diagram") -> "Diagram":
        return Seq(self, other)

    def __matmul__(self, other: "Diagram") -> "Diagram":
        return Tensor(self, other)


@dataclass(frozen=True)
class Id(Diagram):
    sig: Signature


@dataclass(frozen=True)
class Atom(Diagram):
    name: str
    in_sig: Signature
    out_sig: Signature


@dataclass(frozen=True)
class Tensor(Diagram):
    left: Diagram
    right: Diagram


@dataclass(frozen=True)
class Seq(Diagram):
    first: Diagram
    then: Diagram


@dataclass(frozen=True)
class Perm(Diagram):
    pi: Permutation
    sig: Signature


@dataclass(frozen=True)
class Feedback(Diagram):
    """Wire output port ``i`` of ``inner`` back into its input port ``j``."""

    i: int
    j: int
    inner: Diagram


@dataclass(frozen=True)
class Ctrl(Diagram):
    u: ControlExpr
    in_sig: Signature
    out_sig: Signature


@dataclass(frozen=True)
class Dagger(Diagram):
    inner: Diagram


Interface = tuple[Signature, Signature]


def typecheck(d: Diagram, atoms: Mapping[str, Interface] | None = None) -> Interface:
    """Derive ``(in_sig, out_sig)`` of ``d``.

    When ``atoms`` is given every atom must be declared there with the same
    interface.  Raises :class:`DiagramTypeError` on the first violation.
    """
    if atoms is not None:
        _check_atoms(d, atoms)
    return _interface(d)


def _check_atoms(d: Diagram, atoms: Mapping[str, Interface]):
    for a in iter_atoms(d):
        if a.name not in atoms:
            raise DiagramTypeError(f"unknown atom {a.name!r}")
        if tuple(atoms[a.name]) != (a.in_sig, a.out_sig):
            raise DiagramTypeError(f"atom {a.name!r} used with interface {a.in_sig} -> {a.out_sig}, "
                                   f"declared {atoms[a.name][0]} -> {atoms[a.name][1]}")


def _interface(d: Diagram) -> Interface:
    return _derive(d)


def _derive(d: Diagram) -> Interface:
    if isinstance(d, Id):
        return d.sig, d.sig
    if isinstance(d, Atom):
        return d.in_sig, d.out_sig
    if isinstance(d, Tensor):
        li, lo = _interface(d.left)
        ri, ro = _interface(d.right)
        return li + ri, lo + ro
    if isinstance(d, Seq):
        fi, fo = _interface(d.first)
        ti, to = _interface(d.then)
        if fo != ti:
            raise DiagramTypeError(f"cannot compose: output {fo} does not match input {ti}")
        return fi, to
    if isinstance(d, Perm):
        if not d.pi.is_valid():
            raise DiagramTypeError(f"invalid permutation {d.pi.mapping}")
        if len(d.pi) != len(d.sig):
            raise DiagramTypeError(f"permutation of length {len(d.pi)} applied to {len(d.sig)} ports")
        return d.sig, Signature(d.pi.apply(d.sig.spaces))
    if isinstance(d, Feedback):
        ii, io = _interface(d.inner)
        if d.i == d.j:
            raise DiagramTypeError(f"feedback needs distinct port indices, got i = j = {d.i}")
        if not 1 <= d.i <= len(io):
            raise DiagramTypeError(f"feedback output port {d.i} out of range 1..{len(io)}")
        if not 1 <= d.j <= len(ii):
            raise DiagramTypeError(f"feedback input port {d.j} out of range 1..{len(ii)}")
        if io[d.i - 1].dim != ii[d.j - 1].dim:
            raise DiagramTypeError(f"feedback dimension mismatch: output {io[d.i - 1]} "
                                   f"(dim {io[d.i - 1].dim}) vs input {ii[d.j - 1]} (dim {ii[d.j - 1].dim})")
        return ii.without(d.j), io.without(d.i)
    if isinstance(d, Ctrl):
        control_word(d.u)
        if len(d.in_sig) != len(d.out_sig):
            raise DiagramTypeError("control acts componentwise: in and out signatures need equal length")
        return d.in_sig, d.out_sig
    if isinstance(d, Dagger):
        ii, io = _interface(d.inner)
        return io, ii
    raise DiagramTypeError(f"not a diagram: {d!r}")


def iter_atoms(d: Diagram) -> Iterable[Atom]:
    for t in subterms(d):
        if isinstance(t, Atom):
            yield t


def subterms(d: Diagram) -> Iterable[Diagram]:
    stack = [d]
    while stack:
        t = stack.pop()
        yield t
        stack.extend(reversed(children(t)))


def children(d: Diagram) -> tuple[Diagram, ...]:
    if isinstance(d, (Tensor,)):
        return d.left, d.right
    if isinstance(d, Seq):
        return d.first, d.then
    if isinstance(d, (Feedback, Dagger)):
        return (d.inner,)
    return ()


def count_feedback(d: Diagram) -> int:
    return sum(isinstance(t, Feedback) for t in subterms(d))


def permute(pi: Sequence[int] | Permutation, d: Diagram) -> Diagram:
    """``d`` followed by a permutation of its outputs."""
    p = pi if isinstance(pi, Permutation) else Permutation(tuple(pi))
    return Seq(d, Perm(p, _interface(d)[1]))


def controlled(u: ControlExpr, d: Diagram) -> Diagram:
    """``d`` followed by a square control action on its outputs."""
    out = _interface(d)[1]
    return Seq(d, Ctrl(u, out, out))


# -- port graphs -----------------------------------------------------------

# Sources are boundary inputs ("bin", k) or node outputs ("nout", n, p).
# Sinks are boundary outputs ("bout", k) or node inputs ("nin", n, p).
# Port and node indices are 0-based inside the graph.
Endpoint = tuple


@dataclass(frozen=True)
class Node:
    kind: str  # "atom" | "ctrl"
    label: object  # atom name, or control word (tuple of letters)
    dagger: bool
    in_sig: Signature
    out_sig: Signature

    def key(self):
        return (self.kind, repr(self.label), self.dagger,
                tuple((s.name, s.dim) for s in self.in_sig),
                tuple((s.name, s.dim) for s in self.out_sig))


@dataclass(frozen=True)
class PortGraph:
    """Connectivity-only form of a diagram.

    ``wiring`` maps every sink to the unique source feeding it.  Closed
    wires with no endpoint at all are kept as ``circles``.
    """

    in_sig: Signature
    out_sig: Signature
    nodes: tuple[Node, ...]
    wiring: tuple[tuple[Endpoint, Endpoint], ...]
    circles: tuple[SpaceRef, ...] = ()

    @cached_property
    def source_of(self) -> dict:
        return dict(self.wiring)

    @cached_property
    def sink_of(self) -> dict:
        return {src: snk for snk, src in self.wiring}

    def canonical(self) -> "PortGraph":
        """Relabel nodes into the boundary-anchored canonical order."""
        return _canonical_relabel(self)

    def canonical_key(self):
        g = self.canonical()
        return (
            tuple((s.name, s.dim) for s in g.in_sig),
            tuple((s.name, s.dim) for s in g.out_sig),
            tuple(n.key() for n in g.nodes),
            tuple(sorted(g.wiring)),
            tuple(sorted((s.name, s.dim) for s in g.circles)),
        )


class _Builder:
    def __init__(self):
        self.parent: list[int] = []
        self.space: list[SpaceRef] = []
        self.nodes: list[list] = []  # [kind, label, dagger, in_sig, out_sig, in_wires, out_wires]

    def wire(self, space: SpaceRef) -> int:
        self.parent.append(len(self.parent))
        self.space.append(space)
        return len(self.parent) - 1

    def find(self, w: int) -> int:
        while self.parent[w] != w:
            self.parent[w] = self.parent[self.parent[w]]
            w = self.parent[w]
        return w

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra

    def build(self, d: Diagram) -> tuple[list[int], list[int], list[int]]:
        """Returns (input wires, output wires, indices of nodes created)."""
        if isinstance(d, Id):
            ws = [self.wire(s) for s in d.sig]
            return ws, list(ws), []
        if isinstance(d, Atom):
            ins = [self.wire(s) for s in d.in_sig]
            outs = [self.wire(s) for s in d.out_sig]
            self.nodes.append(["atom", d.name, False, d.in_sig, d.out_sig, ins, outs])
            return ins, outs, [len(self.nodes) - 1]
        if isinstance(d, Ctrl):
            ins, outs, made = [], [], []
            word = control_word(d.u)
            for a, b in zip(d.in_sig, d.out_sig):
                wi, wo = self.wire(a), self.wire(b)
                self.nodes.append(["ctrl", word, False, sig(a), sig(b), [wi], [wo]])
                made.append(len(self.nodes) - 1)
                ins.append(wi)
                outs.append(wo)
            return ins, outs, made
        if isinstance(d, Tensor):
            li, lo, ln = self.build(d.left)
            ri, ro, rn = self.build(d.right)
            return li + ri, lo + ro, ln + rn
        if isinstance(d, Seq):
            fi, fo, fn = self.build(d.first)
            ti, to, tn = self.build(d.then)
            for a, b in zip(fo, ti):
                self.union(a, b)
            return fi, to, fn + tn
        if isinstance(d, Perm):
            ws = [self.wire(s) for s in d.sig]
            return ws, list(d.pi.apply(ws)), []
        if isinstance(d, Feedback):
            ins, outs, made = self.build(d.inner)
            self.union(outs[d.i - 1], ins[d.j - 1])
            return ins[: d.j - 1] + ins[d.j:], outs[: d.i - 1] + outs[d.i:], made
        if isinstance(d, Dagger):
            ins, outs, made = self.build(d.inner)
            for n in made:
                node = self.nodes[n]
                square = node[0] == "ctrl" and node[3] == node[4]
                # a square control daggers to its involuted word; no flag needed
                if not square:
                    node[2] = not node[2]
                node[3], node[4] = node[4], node[3]
                node[5], node[6] = node[6], node[5]
                if node[0] == "ctrl":
                    node[1] = tuple((t, not inv) for t, inv in reversed(node[1]))
            return outs, ins, made
        raise DiagramTypeError(f"not a diagram: {d!r}")


def to_port_graph(d: Diagram) -> PortGraph:
    """Flatten ``d`` into a :class:`PortGraph`.

    Tensor becomes disjoint union, sequencing splices wires, permutations
    only reorder boundary wires, feedback becomes a back-wire and dagger
    reverses every wire and flips node labels.  Control acting on ``n``
    wires becomes ``n`` unary control nodes.
    """
    in_sig, out_sig = typecheck(d)
    b = _Builder()
    ins, outs, _ = b.build(d)
    sources: dict[int, Endpoint] = {}
    sinks: dict[int, Endpoint] = {}
    for k, w in enumerate(ins):
        sources[b.find(w)] = ("bin", k)
    for k, w in enumerate(outs):
        sinks[b.find(w)] = ("bout", k)
    for n, node in enumerate(b.nodes):
        for p, w in enumerate(node[5]):
            sinks[b.find(w)] = ("nin", n, p)
        for p, w in enumerate(node[6]):
            sources[b.find(w)] = ("nout", n, p)
    roots = {b.find(w) for w in range(len(b.parent))}
    wiring = []
    circles = []
    for r in sorted(roots):
        if r in sinks and r in sources:
            wiring.append((sinks[r], sources[r]))
        elif r not in sinks and r not in sources:
            members = [w for w in range(len(b.parent)) if b.find(w) == r]
            circles.append(min(b.space[w] for w in members))
        else:  # pragma: no cover - impossible for well-typed terms
            raise DiagramTypeError("dangling wire in port graph")
    nodes = tuple(Node(k, lbl, dg, i, o) for k, lbl, dg, i, o, _, _ in b.nodes)
    return PortGraph(in_sig, out_sig, nodes, tuple(wiring), tuple(sorted(circles)))


def _neighbours(g: PortGraph, n: int) -> list[int | None]:
    """Nodes adjacent to ``n`` in port order (inputs first); None for boundary."""
    node = g.nodes[n]
    out = []
    for p in range(len(node.in_sig)):
        src = g.source_of[("nin", n, p)]
        out.append(src[1] if src[0] == "nout" else None)
    for p in range(len(node.out_sig)):
        snk = g.sink_of[("nout", n, p)]
        out.append(snk[1] if snk[0] == "nin" else None)
    return out


def _bfs(g: PortGraph, seeds: Iterable[int]) -> list[int]:
    order: list[int] = []
    seen: set[int] = set()
    queue: deque[int] = deque()
    for s in seeds:
        if s not in seen:
            seen.add(s)
            order.append(s)
            queue.append(s)
    while queue:
        n = queue.popleft()
        for m in _neighbours(g, n):
            if m is not None and m not in seen:
                seen.add(m)
                order.append(m)
                queue.append(m)
    return order


def _relabel(g: PortGraph, order: Sequence[int], full: bool = True):
    index = {old: new for new, old in enumerate(order)}

    def ep(e):
        return e if e[0] in ("bin", "bout") else (e[0], index[e[1]], e[2])

    nodes = tuple(g.nodes[o] for o in order)
    if full:
        wires = g.wiring
    else:
        wires = [(s, t) for s, t in g.wiring if s[0] == "nin" and s[1] in index]
    return nodes, tuple(sorted((ep(s), ep(t)) for s, t in wires))


def _component_code(g: PortGraph, order: Sequence[int]):
    nodes, wiring = _relabel(g, order, full=False)
    return (tuple(n.key() for n in nodes), wiring)


def _canonical_relabel(g: PortGraph) -> PortGraph:
    seeds = []
    for k in range(len(g.in_sig)):
        snk = g.sink_of[("bin", k)]
        if snk[0] == "nin":
            seeds.append(snk[1])
    for k in range(len(g.out_sig)):
        src = g.source_of[("bout", k)]
        if src[0] == "nout":
            seeds.append(src[1])
    main = _bfs(g, seeds)
    rest = [n for n in range(len(g.nodes)) if n not in set(main)]
    # floating components: exact canonical order = best BFS over all start nodes
    comps = []
    remaining = set(rest)
    while remaining:
        start = min(remaining)
        comp = _bfs(g, [start])
        remaining -= set(comp)
        orders = [_bfs(g, [s]) for s in comp]
        comps.append(min((_component_code(g, o), o) for o in orders))
    comps.sort(key=lambda c: c[0])
    order = list(main) + [n for _, o in comps for n in o]
    nodes, wiring = _relabel(g, order)
    return PortGraph(g.in_sig, g.out_sig, nodes, wiring, g.circles)
