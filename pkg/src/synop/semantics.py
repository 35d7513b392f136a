"""Matrix semantics of diagrams.

:func:`evaluate` interprets a diagram as a dense complex matrix given an
:class:`Environment` binding atoms and control tokens.  Two monoidal
products are supported:

``"sum"`` (default)
    port lists are direct sums, tensor of diagrams is block-diagonal and
    feedback closes a loop with the block formula
    ``M_yx + M_yf (I - M_ff)^-1 M_fx``, computed by a truncated Neumann
    series (strict mode) or a direct solve (relaxed mode).

``"tensor"``
    port lists are tensor products, tensor of diagrams is ``kron`` and
    feedback is the partial trace over the fed space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import linalg
from .diagram import (Atom, ControlExpr, Ctrl, Dagger, Diagram, Feedback, Id, Interface, Perm,
                      Seq, Signature, SpaceRef, Tensor, control_word, subterms, typecheck)

MONOIDAL_PRODUCTS = ("sum", "tensor")
FEEDBACK_MODES = ("strict", "relaxed")
MAX_NEUMANN_TERMS = 100_000
CROSSCHECK_TOL = 1e-8
STRICT_MARGIN = 1e-12  # loop gains within this of 1 count as 1


class SemanticsError(Exception):
    pass


class UnboundAtom(SemanticsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnboundToken(SemanticsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class IllPosedFeedback(SemanticsError):
    def __init__(self, kappa: float, message: str | None = None):
        self.kappa = kappa
        super().__init__(message or f"loop gain {kappa:.6g} is not below 1")


class SingularLoop(SemanticsError):
    pass


class EnvironmentInvalid(SemanticsError, ValueError):
    pass


# -- JSON matrices ---------------------------------------------------------


def matrix_from_json(obj) -> np.ndarray:
    try:
        rows, cols, entries = int(obj["rows"]), int(obj["cols"]), obj["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise EnvironmentInvalid(f"matrix needs rows, cols and entries: {exc}") from None
    if len(entries) != rows * cols:
        raise EnvironmentInvalid(f"matrix {rows}x{cols} needs {rows * cols} entries, got {len(entries)}")
    vals = []
    for e in entries:
        if isinstance(e, (int, float)):
            vals.append(complex(e))
        else:
            re, im = e
            vals.append(complex(float(re), float(im)))
    m = np.array(vals, dtype=np.complex128).reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise EnvironmentInvalid("matrix has non-finite entries")
    return m


def matrix_to_json(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=np.complex128)
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]),
            "entries": [[float(z.real), float(z.imag)] for z in m.reshape(-1)]}


# -- control monoid --------------------------------------------------------


@dataclass(frozen=True)
class ControlMonoid:
    """Finite monoid of control tokens with per-space injection matrices.

    ``inject[(token, space)]`` is the matrix by which ``token`` acts on a wire
    of that space.  Missing injections for the neutral token default to the
    identity.  All laws are checked by :meth:`validate`.
    """

    tokens: tuple[str, ...]
    neutral: str
    star: Mapping[tuple[str, str], str]
    involution: Mapping[str, str] | None = None
    inject: Mapping[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def mul(self, a: str, b: str) -> str:
        return self.star[(a, b)]

    def invol(self, a: str) -> str:
        if self.involution is None:
            raise UnboundToken(f"control monoid has no involution (needed for {a}^*)")
        return self.involution[a]

    def resolve(self, u: ControlExpr | Sequence) -> str:
        """Reduce a control expression (or free word) to a single token."""
        word = control_word(u) if isinstance(u, ControlExpr) else tuple(u)
        out = self.neutral
        for t, inv in word:
            if t not in self.tokens:
                raise UnboundToken(f"unknown control token {t!r}")
            out = self.mul(out, self.invol(t) if inv else t)
        return out

    def injection(self, token: str, space: SpaceRef, out_space: SpaceRef | None = None) -> np.ndarray:
        out_space = out_space or space
        m = self.inject.get((token, space.name))
        if m is None:
            if token == self.neutral and out_space.dim == space.dim:
                return linalg.identity(space.dim)
            raise UnboundToken(f"no injection for token {token!r} on space {space.name!r}")
        if m.shape != (out_space.dim, space.dim):
            raise linalg.ShapeError(f"injection {token}@{space.name} has shape {m.shape}, "
                                    f"expected {(out_space.dim, space.dim)}")
        return m

    def validate(self, tol: float = 1e-12):
        """Check the monoid laws and the injection homomorphism; raise on failure."""
        toks = list(self.tokens)
        if len(set(toks)) != len(toks):
            raise EnvironmentInvalid("duplicate control tokens")
        if self.neutral not in toks:
            raise EnvironmentInvalid(f"neutral {self.neutral!r} is not a token")
        for a in toks:
            for b in toks:
                c = self.star.get((a, b))
                if c is None:
                    raise EnvironmentInvalid(f"star table misses {a},{b}")
                if c not in toks:
                    raise EnvironmentInvalid(f"star {a},{b} = {c!r} is not a token")
        for a in toks:
            if self.mul(self.neutral, a) != a or self.mul(a, self.neutral) != a:
                raise EnvironmentInvalid(f"{self.neutral!r} is not neutral for {a!r}")
        for a in toks:
            for b in toks:
                ab = self.mul(a, b)
                for c in toks:
                    if self.mul(ab, c) != self.mul(a, self.mul(b, c)):
                        raise EnvironmentInvalid(f"star is not associative on ({a},{b},{c})")
        if self.involution is not None:
            for a in toks:
                if a not in self.involution or self.involution[a] not in toks:
                    raise EnvironmentInvalid(f"involution undefined on {a!r}")
                if self.invol(self.invol(a)) != a:
                    raise EnvironmentInvalid(f"involution is not involutive on {a!r}")
            for a in toks:
                for b in toks:
                    if self.invol(self.mul(a, b)) != self.mul(self.invol(b), self.invol(a)):
                        raise EnvironmentInvalid(f"involution does not reverse products on ({a},{b})")
        spaces = sorted({s for _, s in self.inject})
        for (t, s) in self.inject:
            if t not in toks:
                raise EnvironmentInvalid(f"injection for unknown token {t!r}")
        for s in spaces:
            mats = {t: self.inject.get((t, s)) for t in toks}
            if mats[self.neutral] is None:
                n = next(m for m in mats.values() if m is not None).shape[1]
                mats[self.neutral] = linalg.identity(n)
            missing = [t for t, m in mats.items() if m is None]
            if missing:
                raise EnvironmentInvalid(f"space {s!r} lacks injections for {missing}")
            e = mats[self.neutral]
            if e.shape[0] != e.shape[1] or not np.array_equal(e, linalg.identity(e.shape[0])):
                raise EnvironmentInvalid(f"neutral injection on {s!r} is not the identity")
            if any(m.shape != e.shape for m in mats.values()):
                continue  # rectangular actions are not composable on one space
            for a in toks:
                for b in toks:
                    lhs = mats[self.mul(a, b)]
                    rhs = mats[b] @ mats[a]
                    if np.max(np.abs(lhs - rhs), initial=0.0) > tol * (1 + np.max(np.abs(rhs), initial=0.0)):
                        raise EnvironmentInvalid(
                            f"injection on {s!r} is not a homomorphism: inject({a}*{b}) != inject({b})inject({a})")
            if self.involution is not None:
                for a in toks:
                    if np.max(np.abs(mats[self.invol(a)] - mats[a].conj().T), initial=0.0) > tol * (
                            1 + np.max(np.abs(mats[a]), initial=0.0)):
                        raise EnvironmentInvalid(f"inject({a}^*) on {s!r} is not the adjoint of inject({a})")

    @classmethod
    def from_json(cls, obj) -> "ControlMonoid":
        try:
            tokens = tuple(obj["tokens"])
            neutral = obj["neutral"]
            star = {}
            for k, v in obj["star"].items():
                a, b = (p.strip() for p in k.split(","))
                star[(a, b)] = v
            involution = dict(obj["involution"]) if obj.get("involution") is not None else None
            inject = {}
            for k, v in obj.get("inject", {}).items():
                t, s = k.split("@")
                inject[(t.strip(), s.strip())] = matrix_from_json(v)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, EnvironmentInvalid):
                raise
            raise EnvironmentInvalid(f"malformed control section: {exc}") from None
        return cls(tokens, neutral, star, involution, inject)

    def to_json(self) -> dict:
        out = {"tokens": list(self.tokens), "neutral": self.neutral,
               "star": {f"{a},{b}": c for (a, b), c in sorted(self.star.items())}}
        if self.involution is not None:
            out["involution"] = dict(sorted(self.involution.items()))
        out["inject"] = {f"{t}@{s}": matrix_to_json(m) for (t, s), m in sorted(self.inject.items())}
        return out


# -- environments ----------------------------------------------------------


@dataclass(frozen=True)
class Environment:
    atoms: Mapping[str, np.ndarray] = field(default_factory=dict)
    control: ControlMonoid | None = None
    feedback_mode: str = "strict"
    tol: float = 1e-12
    monoidal: str = "sum"
    # parameter sweeps replace the injection of one bare token without re-auditing the monoid
    overrides: Mapping[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.feedback_mode not in FEEDBACK_MODES:
            raise EnvironmentInvalid(f"feedback_mode must be one of {FEEDBACK_MODES}")
        if self.monoidal not in MONOIDAL_PRODUCTS:
            raise EnvironmentInvalid(f"monoidal must be one of {MONOIDAL_PRODUCTS}")
        if not self.tol > 0:
            raise EnvironmentInvalid("tol must be positive")
        object.__setattr__(self, "atoms", {k: linalg.as_matrix(v) for k, v in self.atoms.items()})
        if self.control is not None:
            self.control.validate()

    def with_options(self, **kw) -> "Environment":
        return replace(self, **kw)

    def with_override(self, token: str, mats: Mapping[str, np.ndarray]) -> "Environment":
        ov = dict(self.overrides)
        for s, m in mats.items():
            ov[(token, s)] = linalg.as_matrix(m)
        return replace(self, overrides=ov)

    def validate_for(self, atoms: Mapping[str, Interface], spaces: Mapping[str, SpaceRef] | None = None):
        """Check that every declared atom is bound with the right shape."""
        for name, (i, o) in atoms.items():
            if name not in self.atoms:
                raise EnvironmentInvalid(f"atom {name!r} is not bound")
            want = (o.dim(self.monoidal), i.dim(self.monoidal))
            if self.atoms[name].shape != want:
                raise EnvironmentInvalid(f"atom {name!r} bound to shape {self.atoms[name].shape}, needs {want}")
        if spaces is not None and self.control is not None:
            for (t, s), m in self.control.inject.items():
                if s not in spaces:
                    raise EnvironmentInvalid(f"injection {t}@{s} names an undeclared space")
                if m.shape[1] != spaces[s].dim:
                    raise EnvironmentInvalid(f"injection {t}@{s} has {m.shape[1]} columns, space has dim {spaces[s].dim}")

    @classmethod
    def from_json(cls, obj) -> "Environment":
        if not isinstance(obj, dict):
            raise EnvironmentInvalid("environment must be a JSON object")
        atoms = {k: matrix_from_json(v) for k, v in obj.get("atoms", {}).items()}
        control = ControlMonoid.from_json(obj["control"]) if obj.get("control") else None
        opts = obj.get("options", {})
        try:
            return cls(atoms, control, feedback_mode=opts.get("feedback_mode", "strict"),
                       tol=float(opts.get("tol", 1e-12)), monoidal=opts.get("monoidal", "sum"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, EnvironmentInvalid):
                raise
            raise EnvironmentInvalid(str(exc)) from None

    @classmethod
    def load(cls, path) -> "Environment":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise EnvironmentInvalid(f"{path}: {exc}") from None
        return cls.from_json(obj)

    def to_json(self) -> dict:
        out = {"atoms": {k: matrix_to_json(v) for k, v in sorted(self.atoms.items())}}
        if self.control is not None:
            out["control"] = self.control.to_json()
        out["options"] = {"feedback_mode": self.feedback_mode, "tol": self.tol, "monoidal": self.monoidal}
        return out

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")


# -- values ----------------------------------------------------------------


@dataclass(frozen=True)
class FeedbackReport:
    kappa: float | None
    mode: str  # "strict" | "relaxed" | "trace"
    neumann_terms: int = 0
    truncation_bound: float = 0.0
    spectral_radius: float | None = None
    crosscheck: float | None = None
    i: int = 0
    j: int = 0

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("kappa", "mode", "neumann_terms", "truncation_bound",
                                              "spectral_radius", "crosscheck", "i", "j")}


@dataclass(frozen=True)
class OperatorValue:
    matrix: np.ndarray
    in_sig: Signature
    out_sig: Signature
    feedback: tuple[FeedbackReport, ...] = ()

    def to_json(self) -> dict:
        out = matrix_to_json(self.matrix)
        out["in_sig"] = [s.name for s in self.in_sig]
        out["out_sig"] = [s.name for s in self.out_sig]
        return out


@dataclass(frozen=True)
class LoopBlocks:
    yx: np.ndarray
    yf: np.ndarray
    fx: np.ndarray
    ff: np.ndarray


def _port_slices(s: Signature, monoidal: str) -> list[np.ndarray]:
    offs = np.concatenate([[0], np.cumsum(s.dims)]).astype(int)
    return [np.arange(offs[k], offs[k + 1]) for k in range(len(s))]


def loop_blocks(m: OperatorValue, i: int, j: int) -> LoopBlocks:
    """Split a direct-sum operator around output port ``i`` and input port ``j``."""
    outs = _port_slices(m.out_sig, "sum")
    ins = _port_slices(m.in_sig, "sum")
    rf = outs[i - 1]
    ry = np.concatenate([outs[k] for k in range(len(outs)) if k != i - 1] or [np.arange(0)]).astype(int)
    cf = ins[j - 1]
    cx = np.concatenate([ins[k] for k in range(len(ins)) if k != j - 1] or [np.arange(0)]).astype(int)
    a = m.matrix
    return LoopBlocks(a[np.ix_(ry, cx)], a[np.ix_(ry, cf)], a[np.ix_(rf, cx)], a[np.ix_(rf, cf)])


def neumann_series(ff: np.ndarray, fx: np.ndarray, kappa: float, tol: float) -> tuple[np.ndarray, int, float]:
    """Sum ``ff^n fx`` until the tail bound ``kappa^(N+1)/(1-kappa) ||fx||`` drops below ``tol``."""
    nfx = linalg.norm(fx)
    if 0 < kappa < 1 and nfx > 0:
        need = math.log(tol * (1 - kappa) / nfx) / math.log(kappa) - 1
        if need > MAX_NEUMANN_TERMS:
            raise linalg.ConvergenceError(f"Neumann series needs about {need:.3g} terms")
    total = fx.copy()
    term = fx
    n = 0
    bound = kappa / (1 - kappa) * nfx
    while bound >= tol:
        if n >= MAX_NEUMANN_TERMS:
            raise linalg.ConvergenceError(f"Neumann series needs more than {MAX_NEUMANN_TERMS} terms")
        term = ff @ term
        total = total + term
        n += 1
        bound = kappa ** (n + 1) / (1 - kappa) * nfx
    return total, n, bound


def feedback_close(m: OperatorValue, i: int, j: int, mode: str = "strict", tol: float = 1e-12,
                   monoidal: str = "sum") -> OperatorValue:
    """Close output port ``i`` onto input port ``j`` of ``m``."""
    in_sig, out_sig = m.in_sig.without(j), m.out_sig.without(i)
    if m.out_sig[i - 1].dim != m.in_sig[j - 1].dim:
        raise linalg.ShapeError("fed ports have different dimensions")
    if monoidal == "tensor":
        return _partial_trace(m, i, j, in_sig, out_sig)
    b = loop_blocks(m, i, j)
    kappa = linalg.norm(b.ff)
    rho = linalg.spectral_radius(b.ff)
    eye = linalg.identity(b.ff.shape[0])
    if mode == "strict":
        if kappa >= 1 - STRICT_MARGIN:
            raise IllPosedFeedback(kappa)
        z, terms, bound = neumann_series(b.ff, b.fx, kappa, tol)
        try:
            direct = linalg.solve(eye - b.ff, b.fx)
            cross = float(np.linalg.norm(z - direct) / (1 + np.linalg.norm(direct)))
        except linalg.SingularMatrix:  # pragma: no cover - impossible when kappa < 1
            cross = math.inf
        if cross > CROSSCHECK_TOL:
            raise linalg.ConvergenceError(f"Neumann sum disagrees with direct solve ({cross:.3e})")
        report = FeedbackReport(kappa, "strict", terms, bound, rho, cross, i, j)
    elif mode == "relaxed":
        try:
            z = linalg.solve(eye - b.ff, b.fx)
        except linalg.SingularMatrix as exc:
            raise SingularLoop(f"I - M_ff is singular (kappa = {kappa:.6g}): {exc}") from None
        report = FeedbackReport(kappa, "relaxed", 0, 0.0, rho, None, i, j)
    else:
        raise ValueError(f"unknown feedback mode {mode!r}")
    closed = b.yx + b.yf @ z
    return OperatorValue(closed, in_sig, out_sig, m.feedback + (report,))


def _move_last(n: int, k: int) -> tuple[int, ...]:
    return tuple(x for x in range(1, n + 1) if x != k) + (k,)


def _partial_trace(m: OperatorValue, i: int, j: int, in_sig: Signature, out_sig: Signature) -> OperatorValue:
    po = linalg.perm_unitary(_move_last(len(m.out_sig), i), m.out_sig.dims)
    pi = linalg.perm_unitary(_move_last(len(m.in_sig), j), m.in_sig.dims)
    a = po @ m.matrix @ pi.conj().T
    f = m.out_sig[i - 1].dim
    t = a.reshape(out_sig.total_dim, f, in_sig.total_dim, f)
    closed = np.trace(t, axis1=1, axis2=3)
    return OperatorValue(closed, in_sig, out_sig, m.feedback + (FeedbackReport(None, "trace", i=i, j=j),))


# -- evaluation ------------------------------------------------------------


class _Evaluator:
    def __init__(self, env: Environment, on_feedback: Callable | None = None):
        self.env = env
        self.mono = env.monoidal
        self.on_feedback = on_feedback

    def product(self, a, b):
        return linalg.kron(a, b) if self.mono == "tensor" else linalg.direct_sum(a, b)

    def unit(self):
        n = 1 if self.mono == "tensor" else 0
        return np.eye(n, dtype=np.complex128)

    def ctrl_matrix(self, u: ControlExpr, in_sig: Signature, out_sig: Signature) -> np.ndarray:
        out = self.unit()
        word = control_word(u)
        mono = self.env.control
        bare = word[0][0] if len(word) == 1 and not word[0][1] else None
        for a, b in zip(in_sig, out_sig):
            if bare is not None and (bare, a.name) in self.env.overrides:
                m = self.env.overrides[(bare, a.name)]
                if m.shape != (b.dim, a.dim):
                    raise linalg.ShapeError(f"override {bare}@{a.name} has shape {m.shape}")
            elif not word and a.dim == b.dim:
                m = linalg.identity(a.dim)
            elif mono is None:
                raise UnboundToken(f"control {sorted({t for t, _ in word})} used but no control monoid is bound")
            else:
                m = mono.injection(mono.resolve(word), a, b)
            out = self.product(out, m)
        return out

    def run(self, d: Diagram) -> OperatorValue:
        mono = self.mono
        if isinstance(d, Id):
            return OperatorValue(linalg.identity(d.sig.dim(mono)), d.sig, d.sig)
        if isinstance(d, Atom):
            if d.name not in self.env.atoms:
                raise UnboundAtom(f"atom {d.name!r} is not bound in the environment")
            m = self.env.atoms[d.name]
            want = (d.out_sig.dim(mono), d.in_sig.dim(mono))
            if m.shape != want:
                raise linalg.ShapeError(f"atom {d.name!r} bound to shape {m.shape}, needs {want}")
            return OperatorValue(m, d.in_sig, d.out_sig)
        if isinstance(d, Tensor):
            a, b = self.run(d.left), self.run(d.right)
            return OperatorValue(self.product(a.matrix, b.matrix), a.in_sig + b.in_sig,
                                 a.out_sig + b.out_sig, a.feedback + b.feedback)
        if isinstance(d, Seq):
            a, b = self.run(d.first), self.run(d.then)
            return OperatorValue(linalg.matmul(b.matrix, a.matrix), a.in_sig, b.out_sig,
                                 a.feedback + b.feedback)
        if isinstance(d, Perm):
            fn = linalg.perm_unitary if mono == "tensor" else linalg.block_perm
            return OperatorValue(fn(d.pi, d.sig.dims), d.sig, Signature(d.pi.apply(d.sig.spaces)))
        if isinstance(d, Ctrl):
            return OperatorValue(self.ctrl_matrix(d.u, d.in_sig, d.out_sig), d.in_sig, d.out_sig)
        if isinstance(d, Dagger):
            a = self.run(d.inner)
            return OperatorValue(linalg.adjoint(a.matrix), a.out_sig, a.in_sig, a.feedback)
        if isinstance(d, Feedback):
            inner = self.run(d.inner)
            if self.on_feedback is not None:
                return self.on_feedback(self, d, inner)
            return feedback_close(inner, d.i, d.j, self.env.feedback_mode, self.env.tol, mono)
        raise TypeError(f"not a diagram: {d!r}")


def evaluate(d: Diagram, env: Environment) -> OperatorValue:
    """Interpret ``d`` in ``env``."""
    typecheck(d)
    return _Evaluator(env).run(d)


def control_action(u: ControlExpr, s: Signature, env: Environment) -> OperatorValue:
    """The operator by which control ``u`` acts on signature ``s``."""
    return evaluate(Ctrl(u, s, s), env)


def find_feedback(d: Diagram) -> Feedback:
    loops = [t for t in subterms(d) if isinstance(t, Feedback)]
    if len(loops) != 1:
        raise ValueError(f"expected exactly one feedback, found {len(loops)}")
    return loops[0]


def inner_blocks(d: Diagram, env: Environment) -> LoopBlocks:
    """Loop blocks of the single feedback in ``d`` (direct-sum semantics)."""
    if env.monoidal != "sum":
        raise ValueError("loop blocks need the direct-sum semantics")
    fb = find_feedback(d)
    return loop_blocks(evaluate(fb.inner, env), fb.i, fb.j)


@dataclass(frozen=True)
class NormBound:
    actual: float
    bound: float
    kappa: float


def eval_norm_bound(d: Diagram, env: Environment) -> NormBound:
    """Compare the loop contribution of the single feedback in ``d`` with ``||M_yf|| ||M_fx|| / (1 - kappa)``."""
    b = inner_blocks(d, env)
    kappa = linalg.norm(b.ff)
    if kappa >= 1 - STRICT_MARGIN:
        raise IllPosedFeedback(kappa)
    z = linalg.solve(linalg.identity(b.ff.shape[0]) - b.ff, b.fx)
    actual = linalg.norm(b.yf @ z)
    bound = linalg.norm(b.yf) * linalg.norm(b.fx) / (1 - kappa)
    if actual > bound + 1e-9:  # pragma: no cover - excluded by submultiplicativity
        raise ArithmeticError(f"loop norm {actual} exceeds bound {bound}")
    return NormBound(actual, bound, kappa)
