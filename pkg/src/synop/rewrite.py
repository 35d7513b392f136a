"""Equivalence checking for diagrams.

Structural relations (monoidal coherence, yanking, control distribution and
control/permutation naturality) hold on the nose in the port-graph form, so
only the control relations need explicit rewriting: fusion of adjacent
controls on one wire and erasure of the neutral control.  The conditional
relation letting control cross a feedback loop is never assumed; when it is
the only obstacle :func:`equiv` answers :class:`Unknown`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .diagram import (Atom, ControlExpr, Ctrl, Dagger, Diagram, Feedback, Id, Involute,
                      Node, Perm, Permutation, PortGraph, Seq, Signature, Tensor, control_word,
                      sig, to_port_graph, typecheck, word_to_expr)
from .semantics import ControlMonoid, Environment, evaluate


class SignatureMismatch(Exception):
    pass


class ReconstructionError(Exception):
    pass


# -- control words ---------------------------------------------------------


def _reduce_word(word, monoid: ControlMonoid | None):
    if monoid is None:
        return tuple(word)
    t = monoid.resolve(word)
    return () if t == monoid.neutral else ((t, False),)


def simplify_control(u: ControlExpr, monoid: ControlMonoid | None = None) -> ControlExpr:
    """Left-nested ``Star`` of letters; a single token when ``monoid`` is bound."""
    return word_to_expr(_reduce_word(control_word(u), monoid))


# -- term-level normalisation ---------------------------------------------


def _tensor_all(parts: Sequence[Diagram], empty: Signature = Signature()) -> Diagram:
    parts = [p for p in parts if not (isinstance(p, Id) and len(p.sig) == 0)]
    if not parts:
        return Id(empty)
    out = parts[0]
    for p in parts[1:]:
        out = Tensor(out, p)
    return out


def _tensor_operands(d: Diagram) -> list[Diagram]:
    if isinstance(d, Tensor):
        return _tensor_operands(d.left) + _tensor_operands(d.right)
    return [d]


def _seq_chain(d: Diagram) -> list[Diagram]:
    if isinstance(d, Seq):
        return _seq_chain(d.first) + _seq_chain(d.then)
    return [d]


def _is_square_unary_ctrl(d: Diagram) -> bool:
    return isinstance(d, Ctrl) and len(d.in_sig) == 1 and d.in_sig == d.out_sig


def _common_groups(xs: list[Diagram], ys: list[Diagram]):
    """Split two tensor operand lists at their common port boundaries."""
    def cuts(ds, side):
        acc, out = 0, []
        for d in ds:
            acc += len(typecheck(d)[side])
            out.append(acc)
        return out

    cx, cy = cuts(xs, 1), cuts(ys, 0)
    common = sorted(set(cx) & set(cy))
    groups, i, j = [], 0, 0
    for c in common:
        gi = i
        while cx[i] != c:
            i += 1
        gj = j
        while cy[j] != c:
            j += 1
        groups.append((xs[gi:i + 1], ys[gj:j + 1]))
        i += 1
        j += 1
    return groups


def normalize_control(d: Diagram, monoid: ControlMonoid | None = None) -> Diagram:
    """Fuse adjacent controls on a wire, erase neutral controls and push
    multi-wire controls into per-wire factors.  The interface is unchanged."""
    typecheck(d)
    return _norm(d, monoid)


def _norm(d: Diagram, monoid) -> Diagram:
    if isinstance(d, (Id, Atom, Perm)):
        return d
    if isinstance(d, Ctrl):
        word = _reduce_word(control_word(d.u), monoid)
        parts = []
        for a, b in zip(d.in_sig, d.out_sig):
            parts.append(Id(sig(a)) if not word and a == b else Ctrl(word_to_expr(word), sig(a), sig(b)))
        return _drop_ids(_tensor_all(parts, d.in_sig))
    if isinstance(d, Tensor):
        return _tensor_all([_norm(d.left, monoid), _norm(d.right, monoid)],
                           typecheck(d)[0])
    if isinstance(d, Feedback):
        return Feedback(d.i, d.j, _norm(d.inner, monoid))
    if isinstance(d, Dagger):
        return Dagger(_norm(d.inner, monoid))
    if isinstance(d, Seq):
        chain = [c for part in (_norm(d.first, monoid), _norm(d.then, monoid)) for c in _seq_chain(part)]
        return _fuse_chain(chain, monoid, typecheck(d)[0])
    raise TypeError(f"not a diagram: {d!r}")


def _drop_ids(d: Diagram) -> Diagram:
    if isinstance(d, Tensor) and all(isinstance(p, Id) for p in _tensor_operands(d)):
        return Id(typecheck(d)[0])
    return d


def _fuse_chain(chain: list[Diagram], monoid, in_sig: Signature) -> Diagram:
    changed = True
    while changed:
        changed = False
        chain = [c for c in chain if not isinstance(c, Id)]
        for k in range(len(chain) - 1):
            x, y = chain[k], chain[k + 1]
            if _is_square_unary_ctrl(x) and _is_square_unary_ctrl(y) and x.in_sig == y.in_sig:
                word = _reduce_word(control_word(x.u) + control_word(y.u), monoid)
                fused = Id(x.in_sig) if not word else Ctrl(word_to_expr(word), x.in_sig, x.out_sig)
                chain[k:k + 2] = [fused]
                changed = True
                break
            if isinstance(x, Tensor) and isinstance(y, Tensor):
                groups = _common_groups(_tensor_operands(x), _tensor_operands(y))
                if len(groups) > 1:
                    parts = [_fuse_chain(_seq_chain(_tensor_all(gx)) + _seq_chain(_tensor_all(gy)),
                                         monoid, typecheck(_tensor_all(gx))[0])
                             for gx, gy in groups]
                    chain[k:k + 2] = [_drop_ids(_tensor_all(parts))]
                    changed = True
                    break
    if not chain:
        return Id(in_sig)
    out = chain[0]
    for c in chain[1:]:
        out = Seq(out, c)
    return out


# -- dagger ----------------------------------------------------------------


def push_dagger(d: Diagram) -> Diagram:
    """Move every ``Dagger`` down to the atoms.

    Composition order reverses, permutations invert, feedback swaps its port
    indices and square controls involute their word.
    """
    typecheck(d)
    return _push(d)


def _push(d: Diagram) -> Diagram:
    if isinstance(d, (Id, Atom, Perm, Ctrl)):
        return d
    if isinstance(d, Tensor):
        return Tensor(_push(d.left), _push(d.right))
    if isinstance(d, Seq):
        return Seq(_push(d.first), _push(d.then))
    if isinstance(d, Feedback):
        return Feedback(d.i, d.j, _push(d.inner))
    if isinstance(d, Dagger):
        return _dag(d.inner)
    raise TypeError(f"not a diagram: {d!r}")


def _dag(d: Diagram) -> Diagram:
    if isinstance(d, Id):
        return d
    if isinstance(d, Atom):
        return Dagger(d)
    if isinstance(d, Tensor):
        return Tensor(_dag(d.left), _dag(d.right))
    if isinstance(d, Seq):
        return Seq(_dag(d.then), _dag(d.first))
    if isinstance(d, Perm):
        return Perm(d.pi.inverse(), Signature(d.pi.apply(d.sig.spaces)))
    if isinstance(d, Feedback):
        return Feedback(d.j, d.i, _dag(d.inner))
    if isinstance(d, Ctrl):
        if d.in_sig == d.out_sig:
            return Ctrl(simplify_control(Involute(d.u)), d.out_sig, d.in_sig)
        return Dagger(d)
    if isinstance(d, Dagger):
        return _push(d.inner)
    raise TypeError(f"not a diagram: {d!r}")


# -- graph-level control normalisation ------------------------------------


def _square(n: Node) -> bool:
    return n.kind == "ctrl" and n.in_sig == n.out_sig


def _rebuild(g: PortGraph, nodes: dict, src: dict, circles: list) -> PortGraph:
    alive = sorted(nodes)
    index = {old: new for new, old in enumerate(alive)}

    def ep(e):
        return e if e[0] in ("bin", "bout") else (e[0], index[e[1]], e[2])

    wiring = tuple(sorted((ep(s), ep(t)) for s, t in src.items()))
    return PortGraph(g.in_sig, g.out_sig, tuple(nodes[n] for n in alive), wiring,
                     tuple(sorted(circles)))


def simplify_graph_controls(g: PortGraph, monoid: ControlMonoid | None = None,
                            erase: Iterable[int] = ()) -> PortGraph:
    """Fuse chains of square controls on one space and splice out neutral ones.

    Nodes listed in ``erase`` are treated as neutral.
    """
    nodes = dict(enumerate(g.nodes))
    src = dict(g.source_of)
    circles = list(g.circles)
    for n in erase:
        nodes[n] = Node("ctrl", (), False, nodes[n].in_sig, nodes[n].out_sig)
    for n, node in list(nodes.items()):
        if node.kind == "ctrl":
            nodes[n] = Node("ctrl", _reduce_word(node.label, monoid), node.dagger, node.in_sig, node.out_sig)
    changed = True
    while changed:
        changed = False
        sink = {s: t for t, s in src.items()}
        for n in sorted(nodes):
            node = nodes[n]
            if not _square(node):
                continue
            out_sink = sink[("nout", n, 0)]
            if not node.label:
                feed = src.pop(("nin", n, 0))
                if out_sink == ("nin", n, 0):
                    circles.append(node.in_sig[0])
                else:
                    src[out_sink] = feed
                del nodes[n]
                changed = True
                break
            if out_sink[0] == "nin" and out_sink[1] != n and _square(nodes[out_sink[1]]) \
                    and nodes[out_sink[1]].in_sig == node.in_sig:
                m = out_sink[1]
                word = _reduce_word(node.label + nodes[m].label, monoid)
                del src[("nin", m, 0)]
                for t, s in list(src.items()):
                    if s == ("nout", m, 0):
                        src[t] = ("nout", n, 0)
                nodes[n] = Node("ctrl", word, False, node.in_sig, node.out_sig)
                del nodes[m]
                changed = True
                break
    return _rebuild(g, nodes, src, circles)


def loop_controls(g: PortGraph) -> list[int]:
    """Square control nodes lying on a directed cycle of the graph."""
    succ = {n: set() for n in range(len(g.nodes))}
    for t, s in g.wiring:
        if t[0] == "nin" and s[0] == "nout":
            succ[s[1]].add(t[1])
    out = []
    for n, node in enumerate(g.nodes):
        if not _square(node):
            continue
        seen, stack = set(), list(succ[n])
        while stack:
            m = stack.pop()
            if m == n:
                out.append(n)
                break
            if m not in seen:
                seen.add(m)
                stack.extend(succ[m])
    return out


# -- canonical forms -------------------------------------------------------


@dataclass(frozen=True)
class CanonicalForm:
    graph: PortGraph
    key: tuple

    def witness(self) -> Diagram:
        """A diagram whose canonical form is this one."""
        return from_port_graph(self.graph)


def canonical_form_of_graph(g: PortGraph) -> CanonicalForm:
    c = g.canonical()
    return CanonicalForm(c, c.canonical_key())


def canonicalize(d: Diagram, monoid: ControlMonoid | None = None) -> CanonicalForm:
    return canonical_form_of_graph(simplify_graph_controls(to_port_graph(d), monoid))


# -- verdicts --------------------------------------------------------------


@dataclass(frozen=True)
class Equal:
    trace: tuple[str, ...]
    verdict = "equal"


@dataclass(frozen=True)
class Inequivalent:
    witness: str
    verdict = "inequivalent"


@dataclass(frozen=True)
class Unknown:
    reason: str
    semantic_residual: float | None = None
    verdict = "unknown"


EquivVerdict = Equal | Inequivalent | Unknown


def first_difference(a: CanonicalForm, b: CanonicalForm) -> str:
    ga, gb = a.graph, b.graph
    if ga.in_sig != gb.in_sig:
        return f"input boundary {ga.in_sig} vs {gb.in_sig}"
    if ga.out_sig != gb.out_sig:
        return f"output boundary {ga.out_sig} vs {gb.out_sig}"
    if len(ga.nodes) != len(gb.nodes):
        return f"node count {len(ga.nodes)} vs {len(gb.nodes)}"
    for k, (x, y) in enumerate(zip(ga.nodes, gb.nodes)):
        if x.key() != y.key():
            return f"node {k}: {_describe(x)} vs {_describe(y)}"
    wa, wb = dict(ga.wiring), dict(gb.wiring)
    for sink in sorted(set(wa) | set(wb)):
        if wa.get(sink) != wb.get(sink):
            return f"sink {sink} fed by {wa.get(sink)} vs {wb.get(sink)}"
    return f"closed loops {[str(s) for s in ga.circles]} vs {[str(s) for s in gb.circles]}"


def _describe(n: Node) -> str:
    if n.kind == "atom":
        return n.label + ("^dagger" if n.dagger else "")
    word = " * ".join(t + ("^*" if inv else "") for t, inv in n.label) or "e"
    return f"ctrl[{word}] on {n.in_sig}"


def equiv(d1: Diagram, d2: Diagram, monoid: ControlMonoid | None = None,
          envs: Sequence[Environment] = ()) -> EquivVerdict:
    """Decide whether ``d1`` and ``d2`` are identified by the coherence relations.

    ``envs`` enables semantic discharge of an :class:`Unknown` verdict: the
    residual of both evaluations is attached but the verdict stays Unknown.
    """
    i1, i2 = typecheck(d1), typecheck(d2)
    if i1 != i2:
        raise SignatureMismatch(f"{i1[0]} -> {i1[1]} vs {i2[0]} -> {i2[1]}")
    g1 = simplify_graph_controls(to_port_graph(d1), monoid)
    g2 = simplify_graph_controls(to_port_graph(d2), monoid)
    c1, c2 = canonical_form_of_graph(g1), canonical_form_of_graph(g2)
    if c1.key == c2.key:
        return Equal(("port graph", "control fusion" if monoid is None else "control reduction",
                      "canonical labelling"))
    l1, l2 = loop_controls(g1), loop_controls(g2)
    if l1 or l2:
        e1 = canonical_form_of_graph(simplify_graph_controls(g1, monoid, l1))
        e2 = canonical_form_of_graph(simplify_graph_controls(g2, monoid, l2))
        if e1.key == e2.key:
            reason = "equal only if control may cross a feedback loop; its control acts on a fed-back wire"
            residual = None
            if envs:
                residual = max(_residual(d1, d2, env) for env in envs)
                reason += f"; semantic residual {residual:.3e} over {len(envs)} environment(s)"
            return Unknown(reason, residual)
    return Inequivalent(first_difference(c1, c2))


def _residual(d1: Diagram, d2: Diagram, env: Environment) -> float:
    a, b = evaluate(d1, env).matrix, evaluate(d2, env).matrix
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a - b, 2) / (1 + np.linalg.norm(a, 2)))


# -- reconstruction --------------------------------------------------------


def node_diagram(n: Node) -> Diagram:
    if n.kind == "atom":
        return Dagger(Atom(n.label, n.out_sig, n.in_sig)) if n.dagger else Atom(n.label, n.in_sig, n.out_sig)
    if n.dagger:
        word = tuple((t, not inv) for t, inv in reversed(n.label))
        return Dagger(Ctrl(word_to_expr(word), n.out_sig, n.in_sig))
    return Ctrl(word_to_expr(n.label), n.in_sig, n.out_sig)


def from_port_graph(g: PortGraph) -> Diagram:
    """Build a diagram with port graph ``g``: all nodes side by side, one
    permutation routing every wire, then one feedback per node input."""
    if len(g.in_sig) + len(g.out_sig) == 0:
        return _closed(g)
    return _open(g)


def _open(g: PortGraph) -> Diagram:
    a, b = len(g.in_sig), len(g.out_sig)
    parts = [node_diagram(n) for n in g.nodes] + [Id(sig(c)) for c in g.circles]
    in_sigs = [n.in_sig for n in g.nodes] + [sig(c) for c in g.circles]
    out_sigs = [n.out_sig for n in g.nodes] + [sig(c) for c in g.circles]
    m = len(g.nodes)
    off_in, off_out = [], []
    acc_i = acc_o = 0
    for s_in, s_out in zip(in_sigs, out_sigs):
        off_in.append(acc_i)
        off_out.append(acc_o)
        acc_i += len(s_in)
        acc_o += len(s_out)
    src = dict(g.source_of)
    for k in range(len(g.circles)):
        src[("nin", m + k, 0)] = ("nout", m + k, 0)

    def slot(e):
        return e[1] if e[0] == "bin" else a + off_out[e[1]] + e[2]

    node_sinks = [("nin", n, p) for n in range(len(parts)) for p in range(len(in_sigs[n]))]
    outs = [("bout", k) for k in range(b)]
    order = node_sinks + outs if a else outs + node_sinks
    body = _tensor_all([Id(g.in_sig)] + parts)
    body_out = typecheck(body)[1]
    pi = Permutation(tuple(slot(src[t]) + 1 for t in order))
    d: Diagram = Seq(body, Perm(pi, body_out))
    for _ in node_sinks:
        d = Feedback(1, a + 1, d) if a else Feedback(b + 1, 1, d)
    return d


def _subgraph(g: PortGraph, keep: Sequence[int], circles=()) -> PortGraph:
    """Restrict to ``keep``; wires crossing the cut become boundary ports."""
    index = {old: new for new, old in enumerate(keep)}
    ins, outs, wiring = [], [], []
    for t, s in sorted(g.wiring):
        t_in = t[0] == "nin" and t[1] in index
        s_in = s[0] == "nout" and s[1] in index
        if t_in and s_in:
            wiring.append((("nin", index[t[1]], t[2]), ("nout", index[s[1]], s[2])))
        elif t_in:
            wiring.append((("nin", index[t[1]], t[2]), ("bin", len(ins))))
            ins.append(g.nodes[t[1]].in_sig[t[2]])
        elif s_in:
            wiring.append((("bout", len(outs)), ("nout", index[s[1]], s[2])))
            outs.append(g.nodes[s[1]].out_sig[s[2]])
    return PortGraph(Signature(tuple(ins)), Signature(tuple(outs)), tuple(g.nodes[k] for k in keep),
                     tuple(wiring), tuple(circles))


def _closed(g: PortGraph) -> Diagram:
    if not g.nodes:
        if g.circles:
            raise ReconstructionError("closed loops with no boundary are not expressible")
        return Id(Signature())
    succ = {n: set() for n in range(len(g.nodes))}
    for t, s in g.wiring:
        succ[s[1]].add(t[1])
    source = _source_component(succ)
    if len(source) == len(g.nodes):
        if len(g.nodes) == 1 and not g.nodes[0].in_sig and not g.nodes[0].out_sig and not g.circles:
            return node_diagram(g.nodes[0])
        raise ReconstructionError("a strongly connected graph without boundary is not expressible")
    rest = [n for n in range(len(g.nodes)) if n not in source]
    crossing = any(t[0] == "nin" and t[1] in set(rest) and s[1] in source for t, s in g.wiring)
    first = _subgraph(g, sorted(source), g.circles if crossing else ())
    second = _subgraph(g, rest, () if crossing else g.circles)
    if crossing:
        # both halves see the same ordered crossing wires
        return Seq(from_port_graph(first), from_port_graph(second))
    return Tensor(from_port_graph(first), from_port_graph(second))


def _source_component(succ: dict) -> set:
    """A strongly connected component with no incoming edges."""
    nodes = sorted(succ)
    reach = {}
    for n in nodes:
        seen, stack = {n}, [n]
        while stack:
            for m in succ[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        reach[n] = seen
    for n in nodes:
        scc = {m for m in reach[n] if n in reach[m]}
        if not any(n in reach[m] for m in nodes if m not in scc):
            return scc
    raise AssertionError("finite graph has a source component")  # pragma: no cover
