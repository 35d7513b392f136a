"""Seeded random diagrams, rewrites, environments and control monoids.

Everything takes a ``numpy.random.Generator`` so runs are reproducible.
Generated feedback loops always pass the fed output through a fresh atom,
which lets :func:`random_environment` make every loop contractive by
shrinking atom norms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .analysis import well_posedness
from .diagram import (Atom, ControlExpr, Ctrl, Dagger, Diagram, Feedback, Id, Involute, Neutral,
                      Perm, Permutation, Seq, Signature, SpaceRef, Star, Tensor, Token, iter_atoms,
                      sig, typecheck)
from .dsl import SourceProgram
from .semantics import ControlMonoid, Environment

SPACE_NAMES = ("A", "B", "C", "D")
CONTROL_NAMES = ("a", "b", "c", "d")


def random_spaces(rng: np.random.Generator, count: int = 3, max_dim: int = 4) -> list[SpaceRef]:
    return [SpaceRef(SPACE_NAMES[k], int(rng.integers(1, max_dim + 1))) for k in range(count)]


def random_signature(rng, spaces, lo: int = 1, hi: int = 2) -> Signature:
    n = int(rng.integers(lo, hi + 1))
    return Signature(tuple(spaces[int(rng.integers(len(spaces)))] for _ in range(n)))


def random_control(rng, tokens: Sequence[str], depth: int = 2, involution: bool = True) -> ControlExpr:
    r = rng.random()
    if depth <= 0 or r < 0.5:
        return Token(tokens[int(rng.integers(len(tokens)))]) if rng.random() < 0.9 else Neutral()
    if r < 0.8 or not involution:
        return Star(random_control(rng, tokens, depth - 1, involution),
                    random_control(rng, tokens, depth - 1, involution))
    return Involute(random_control(rng, tokens, depth - 1, involution))


@dataclass
class DiagramGenerator:
    """Random well-typed diagrams with at most ``max_atoms`` atoms."""

    rng: np.random.Generator
    spaces: list[SpaceRef]
    tokens: Sequence[str] = ()
    max_atoms: int = 8
    feedback: bool = True
    dagger: bool = True
    involution: bool = True
    atoms: dict = field(default_factory=dict)

    def fresh_atom(self, in_sig: Signature, out_sig: Signature | None = None) -> Atom:
        out_sig = out_sig if out_sig is not None else random_signature(self.rng, self.spaces, 0 if in_sig else 1, 2)
        name = f"G{len(self.atoms)}"
        self.atoms[name] = (in_sig, out_sig)
        return Atom(name, in_sig, out_sig)

    def budget_left(self) -> bool:
        return len(self.atoms) < self.max_atoms

    def diagram(self, depth: int = 3) -> Diagram:
        rng = self.rng
        r = rng.random()
        if depth <= 0 or not self.budget_left():
            if self.budget_left() and r < 0.7:
                return self.fresh_atom(random_signature(rng, self.spaces))
            s = random_signature(rng, self.spaces)
            if self.tokens and r < 0.85:
                return Ctrl(random_control(rng, self.tokens, 1, self.involution), s, s)
            return Id(s)
        if r < 0.25:
            return Tensor(self.diagram(depth - 1), self.diagram(depth - 1))
        if r < 0.55:
            first = self.diagram(depth - 1)
            return Seq(first, self.consumer(typecheck(first)[1], depth - 1))
        if r < 0.85 and self.feedback:
            return self.loop(self.diagram(depth - 1))
        if r < 0.87 and self.dagger:
            return Dagger(self.diagram(depth - 1))
        return self.fresh_atom(random_signature(self.rng, self.spaces)) if self.budget_left() else Id(
            random_signature(rng, self.spaces))

    def consumer(self, s: Signature, depth: int) -> Diagram:
        """A random diagram with input signature ``s``."""
        rng = self.rng
        r = rng.random()
        if len(s) == 0:
            return Id(s) if r < 0.5 or not self.budget_left() else self.fresh_atom(s)
        if r < 0.25:
            return Perm(Permutation(tuple(int(x) + 1 for x in rng.permutation(len(s)))), s)
        if r < 0.4 and self.tokens:
            return Ctrl(random_control(rng, self.tokens, 2, self.involution), s, s)
        if r < 0.6 and len(s) > 1:
            k = int(rng.integers(1, len(s)))
            return Tensor(self.consumer(s[:k], depth - 1), self.consumer(s[k:], depth - 1))
        if r < 0.85 and self.budget_left():
            return self.fresh_atom(s)
        return Id(s)

    def loop(self, x: Diagram) -> Diagram:
        """Close one output of ``x`` onto a matching input, through a fresh atom."""
        ins, outs = typecheck(x)
        pairs = [(i, j) for i in range(1, len(outs) + 1) for j in range(1, len(ins) + 1)
                 if i != j and outs[i - 1] == ins[j - 1]]
        if not pairs and ins and outs and len(self.atoms) + 2 <= self.max_atoms:
            x = Tensor(x, self.fresh_atom(sig(ins[0]), sig(ins[0])))
            ins, outs = typecheck(x)
            pairs = [(len(outs), 1)]
        if not pairs or not self.budget_left():
            return x
        i, j = pairs[int(self.rng.integers(len(pairs)))]
        space = sig(outs[i - 1])
        parts = [Id(sig(outs[k])) for k in range(len(outs))]
        parts[i - 1] = self.fresh_atom(space, space)
        route = parts[0]
        for p in parts[1:]:
            route = Tensor(route, p)
        return Feedback(i, j, Seq(x, route))


def random_diagram(rng, spaces=None, tokens=(), max_atoms: int = 8, depth: int = 3,
                   feedback: bool = True, dagger: bool = True, involution: bool = True) -> Diagram:
    spaces = spaces or random_spaces(rng)
    gen = DiagramGenerator(rng, spaces, tokens, max_atoms, feedback, dagger, involution)
    return gen.diagram(depth)


# -- rewrites --------------------------------------------------------------


def _positions(d: Diagram, path=()):
    yield path, d
    if isinstance(d, Tensor):
        yield from _positions(d.left, path + ("left",))
        yield from _positions(d.right, path + ("right",))
    elif isinstance(d, Seq):
        yield from _positions(d.first, path + ("first",))
        yield from _positions(d.then, path + ("then",))
    elif isinstance(d, (Feedback, Dagger)):
        yield from _positions(d.inner, path + ("inner",))


def _replace(d: Diagram, path, new: Diagram) -> Diagram:
    if not path:
        return new
    head, rest = path[0], path[1:]
    return replace(d, **{head: _replace(getattr(d, head), rest, new)})


def _id_insert(rng, t):
    i, o = typecheck(t)
    r = rng.random()
    if r < 0.4:
        return Seq(Id(i), t)
    if r < 0.8:
        return Seq(t, Id(o))
    return Tensor(t, Id(Signature())) if rng.random() < 0.5 else Tensor(Id(Signature()), t)


def _reassociate(rng, t):
    if isinstance(t, Tensor) and isinstance(t.left, Tensor):
        return Tensor(t.left.left, Tensor(t.left.right, t.right))
    if isinstance(t, Tensor) and isinstance(t.right, Tensor):
        return Tensor(Tensor(t.left, t.right.left), t.right.right)
    return None


def _slide(rng, t):
    if not isinstance(t, Tensor):
        return None
    (li, lo), (ri, ro) = typecheck(t.left), typecheck(t.right)
    pre = Perm(Permutation.block_swap(len(li), len(ri)), li + ri)
    post = Perm(Permutation.block_swap(len(ro), len(lo)), ro + lo)
    return Seq(Seq(pre, Tensor(t.right, t.left)), post)


def _ctrl_split(rng, t):
    if isinstance(t, Ctrl) and isinstance(t.u, Star) and t.in_sig == t.out_sig:
        return Seq(Ctrl(t.u.left, t.in_sig, t.in_sig), Ctrl(t.u.right, t.in_sig, t.in_sig))
    return None


def _ctrl_fuse(rng, t):
    if isinstance(t, Seq) and isinstance(t.first, Ctrl) and isinstance(t.then, Ctrl) \
            and t.first.in_sig == t.first.out_sig == t.then.in_sig == t.then.out_sig:
        return Ctrl(Star(t.first.u, t.then.u), t.first.in_sig, t.first.in_sig)
    if isinstance(t, Seq) and isinstance(t.first, Seq) and isinstance(t.first.then, Ctrl) \
            and isinstance(t.then, Ctrl):
        c1, c2 = t.first.then, t.then
        if c1.in_sig == c1.out_sig == c2.in_sig == c2.out_sig:
            return Seq(t.first.first, Ctrl(Star(c1.u, c2.u), c1.in_sig, c1.in_sig))
    return None


def _neutral_insert(rng, t):
    o = typecheck(t)[1]
    return Seq(t, Ctrl(Neutral(), o, o))


def _neutral_erase(rng, t):
    if isinstance(t, Ctrl) and isinstance(t.u, Neutral) and t.in_sig == t.out_sig:
        return Id(t.in_sig)
    if isinstance(t, Ctrl) and isinstance(t.u, Star) and t.in_sig == t.out_sig:
        if isinstance(t.u.left, Neutral):
            return Ctrl(t.u.right, t.in_sig, t.out_sig)
        if isinstance(t.u.right, Neutral):
            return Ctrl(t.u.left, t.in_sig, t.out_sig)
    return None


def _ctrl_naturality(rng, t):
    if isinstance(t, Ctrl) and t.in_sig == t.out_sig and len(t.in_sig) > 1:
        pi = Permutation(tuple(int(x) + 1 for x in rng.permutation(len(t.in_sig))))
        ps = Signature(pi.apply(t.in_sig.spaces))
        return Seq(Seq(Perm(pi, t.in_sig), Ctrl(t.u, ps, ps)), Perm(pi.inverse(), ps))
    return None


def _ctrl_distribute(rng, t):
    if isinstance(t, Ctrl) and len(t.in_sig) > 1:
        k = int(rng.integers(1, len(t.in_sig)))
        return Tensor(Ctrl(t.u, t.in_sig[:k], t.out_sig[:k]), Ctrl(t.u, t.in_sig[k:], t.out_sig[k:]))
    return None


REWRITES = {
    "id-insert": _id_insert,
    "reassociate": _reassociate,
    "perm-slide": _slide,
    "ctrl-fuse": _ctrl_fuse,
    "ctrl-split": _ctrl_split,
    "neutral-insert": _neutral_insert,
    "neutral-erase": _neutral_erase,
    "ctrl-naturality": _ctrl_naturality,
    "ctrl-distribute": _ctrl_distribute,
}


def random_rewrite(rng, d: Diagram, kinds: Sequence[str] | None = None) -> tuple[Diagram, str]:
    """Apply one randomly chosen applicable rewrite at a random position."""
    kinds = list(kinds or REWRITES)
    positions = list(_positions(d))
    for _ in range(64):
        kind = kinds[int(rng.integers(len(kinds)))]
        path, t = positions[int(rng.integers(len(positions)))]
        new = REWRITES[kind](rng, t)
        if new is not None:
            out = _replace(d, path, new)
            typecheck(out)
            return out, kind
    return Seq(d, Id(typecheck(d)[1])), "id-insert"


def random_rewrites(rng, d: Diagram, count: int, kinds=None) -> tuple[Diagram, list[str]]:
    applied = []
    for _ in range(count):
        d, k = random_rewrite(rng, d, kinds)
        applied.append(k)
    return d, applied


# -- environments ----------------------------------------------------------


def complex_gaussian(rng, rows: int, cols: int) -> np.ndarray:
    return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)


def random_unitary(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(complex_gaussian(rng, n, n))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_atoms(rng, atoms, monoidal: str = "sum", norm: float = 0.5) -> dict:
    out = {}
    for name, (i, o) in sorted(atoms.items()):
        m = complex_gaussian(rng, o.dim(monoidal), i.dim(monoidal))
        n = np.linalg.norm(m, 2) if m.size else 0.0
        out[name] = m * (norm / n) if n > 0 else m
    return out


def atom_interfaces(d: Diagram) -> dict:
    return {a.name: (a.in_sig, a.out_sig) for a in iter_atoms(d)}


def random_environment(rng, d: Diagram, monoid: ControlMonoid | None = None, monoidal: str = "sum",
                       kappa_max: float = 0.9, mode: str = "strict") -> Environment:
    """Gaussian atoms, shrunk until every loop of ``d`` has gain at most ``kappa_max``."""
    atoms = random_atoms(rng, atom_interfaces(d), monoidal)
    for _ in range(80):
        env = Environment(atoms, monoid, feedback_mode=mode, monoidal=monoidal)
        reports = well_posedness(d, env)
        if monoidal == "tensor" or all(r.kappa is not None and r.kappa <= kappa_max and r.error is None
                                       for r in reports):
            return env
        atoms = {k: 0.5 * v for k, v in atoms.items()}
    raise ArithmeticError("could not make every loop contractive")


# -- control monoids -------------------------------------------------------


def _table(tokens, mul):
    return {(a, b): mul(a, b) for a in tokens for b in tokens}


def cyclic_monoid(rng, m: int, spaces: Sequence[SpaceRef], names=CONTROL_NAMES) -> ControlMonoid:
    """``Z_m`` acting by commuting unitaries; involution is the group inverse."""
    tokens = ("u0",) + tuple(names[: m - 1])
    idx = {t: k for k, t in enumerate(tokens)}
    star = _table(tokens, lambda a, b: tokens[(idx[a] + idx[b]) % m])
    invol = {t: tokens[(-idx[t]) % m] for t in tokens}
    inject = {}
    for sp in spaces:
        u = random_unitary(rng, sp.dim)
        charges = rng.integers(0, m, sp.dim)
        for t in tokens[1:]:
            phases = np.exp(2j * np.pi * idx[t] * charges / m)
            inject[(t, sp.name)] = u @ np.diag(phases) @ u.conj().T
    return ControlMonoid(tokens, "u0", star, invol, inject)


def band_monoid(rng, k: int, spaces: Sequence[SpaceRef], names=CONTROL_NAMES) -> ControlMonoid:
    """Right-zero band ``a * b = b`` plus a neutral, acting by rank-one idempotents."""
    tokens = ("u0",) + tuple(names[:k])
    star = _table(tokens, lambda a, b: a if b == "u0" else b)
    inject = {}
    for sp in spaces:
        w = complex_gaussian(rng, sp.dim, 1)
        w = w / np.linalg.norm(w)
        for t in tokens[1:]:
            x = complex_gaussian(rng, sp.dim, 1)
            v = x + (1 - (w.conj().T @ x)[0, 0]) * w
            inject[(t, sp.name)] = v @ w.conj().T
    return ControlMonoid(tokens, "u0", star, None, inject)


def semilattice_monoid(rng, spaces: Sequence[SpaceRef], ground: int = 2,
                       names=CONTROL_NAMES) -> ControlMonoid:
    """Subsets of a small ground set under intersection, acting by orthogonal projectors."""
    subsets = [frozenset(c) for r in range(ground + 1) for c in itertools.combinations(range(ground), r)]
    full = frozenset(range(ground))
    others = [s for s in subsets if s != full][: len(names)]
    elems = [full] + others
    tokens = ("u0",) + tuple(names[: len(others)])
    of = dict(zip(elems, tokens))
    el = dict(zip(tokens, elems))
    star = _table(tokens, lambda a, b: of[el[a] & el[b]])
    invol = {t: t for t in tokens}
    inject = {}
    for sp in spaces:
        groups = rng.integers(0, ground, sp.dim)
        u = random_unitary(rng, sp.dim)
        for t in tokens[1:]:
            mask = np.array([1.0 if g in el[t] else 0.0 for g in groups])
            inject[(t, sp.name)] = u @ np.diag(mask) @ u.conj().T
    return ControlMonoid(tokens, "u0", star, invol, inject)


def random_monoid(rng, spaces: Sequence[SpaceRef], max_tokens: int = 5) -> ControlMonoid:
    kind = int(rng.integers(3))
    if kind == 0:
        return cyclic_monoid(rng, int(rng.integers(2, max_tokens + 1)), spaces)
    if kind == 1:
        return band_monoid(rng, int(rng.integers(1, max_tokens)), spaces)
    return semilattice_monoid(rng, spaces)


# -- programs --------------------------------------------------------------


def random_program(rng, n_diagrams: int = 2) -> SourceProgram:
    spaces = random_spaces(rng, int(rng.integers(1, 4)))
    tokens = list(CONTROL_NAMES[: int(rng.integers(0, 4))])
    gen = DiagramGenerator(rng, spaces, tokens, max_atoms=6)
    diagrams = {}
    for k in range(n_diagrams):
        diagrams[f"D{k}"] = gen.diagram(int(rng.integers(1, 4)))
    controls = {}
    for t in tokens:
        controls[t] = None
    if len(tokens) >= 2 and rng.random() < 0.5:
        controls[tokens[0]] = tokens[1]
    return SourceProgram({s.name: s for s in spaces}, dict(gen.atoms), controls, diagrams)
