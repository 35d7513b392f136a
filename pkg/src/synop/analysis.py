"""Numerical certificates on top of the matrix semantics."""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import linalg
from .diagram import (Atom, Ctrl, Diagram, Feedback, Id, Perm, Permutation, Seq, Signature,
                      SpaceRef, Tensor, Token, sig)
from .dsl import SourceProgram
from .semantics import (STRICT_MARGIN, ControlMonoid, Environment, IllPosedFeedback, OperatorValue,
                        SemanticsError, SingularLoop, _Evaluator, evaluate, feedback_close,
                        inner_blocks, loop_blocks)

HERMITIAN_TOL = 1e-10
ZERO_TOL = 1e-10


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, (np.floating, np.integer)):
        return _jsonable(x.item())
    if isinstance(x, np.ndarray):
        return [[float(z.real), float(z.imag)] for z in x.reshape(-1)]
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


def report_json(report) -> dict:
    return _jsonable({f.name: getattr(report, f.name) for f in dataclasses.fields(report)})


# -- well-posedness --------------------------------------------------------


@dataclass(frozen=True)
class LoopReport:
    i: int
    j: int
    kappa: float | None
    spectral_radius: float | None
    strict_ok: bool
    relaxed_ok: bool
    mode: str = "sum"
    error: str | None = None


class _Abort(Exception):
    pass


def well_posedness(d: Diagram, env: Environment) -> list[LoopReport]:
    """One report per feedback, innermost first; problems are reported, not raised."""
    reports: list[LoopReport] = []

    def hook(ev: _Evaluator, fb: Feedback, inner: OperatorValue):
        if env.monoidal == "tensor":
            reports.append(LoopReport(fb.i, fb.j, None, None, True, True, "trace"))
            return feedback_close(inner, fb.i, fb.j, monoidal="tensor")
        b = loop_blocks(inner, fb.i, fb.j)
        kappa = linalg.norm(b.ff)
        rho = linalg.spectral_radius(b.ff)
        try:
            closed = feedback_close(inner, fb.i, fb.j, "relaxed", env.tol)
        except SingularLoop as exc:
            reports.append(LoopReport(fb.i, fb.j, kappa, rho, kappa < 1 - STRICT_MARGIN, False, error=str(exc)))
            raise _Abort from None
        reports.append(LoopReport(fb.i, fb.j, kappa, rho, kappa < 1 - STRICT_MARGIN, True))
        return closed

    try:
        _Evaluator(env, hook).run(d)
    except _Abort:
        pass
    except (SemanticsError, linalg.ShapeError, ArithmeticError, TypeError, ValueError) as exc:
        reports.append(LoopReport(0, 0, None, None, False, False, env.monoidal, f"{type(exc).__name__}: {exc}"))
    return reports


# -- control families ------------------------------------------------------

Family = Callable[[float], Mapping[str, np.ndarray]]


def _family_env(env: Environment, token: str, family: Family, t: float) -> Environment:
    return env.with_override(token, family(t))


@dataclass(frozen=True)
class LipschitzReport:
    alpha: float
    L: float
    predicted_bound: float
    empirical_max_ratio: float
    inject_lipschitz: float
    refinement_L: tuple[float, ...]
    diverging: bool


def _pairwise_max(ts, values, dist) -> float:
    best = 0.0
    for a, b in itertools.combinations(range(len(ts)), 2):
        dt = abs(ts[a] - ts[b])
        if dt > 0:
            best = max(best, dist(a, b) / dt)
    return best


def _family_samples(d, env, token, family, ts):
    out = []
    for t in ts:
        b = inner_blocks(d, _family_env(env, token, family, t))
        kappa = linalg.norm(b.ff)
        if kappa >= 1 - STRICT_MARGIN:
            raise IllPosedFeedback(kappa, f"loop gain {kappa:.6g} at t = {t:g} is not below 1")
        x = linalg.solve(linalg.identity(b.ff.shape[0]) - b.ff, b.fx)
        inj = family(t)
        out.append((b, kappa, x, np.concatenate([np.asarray(inj[k]).reshape(-1) for k in sorted(inj)])))
    return out


def _update_lipschitz(ts, samples) -> tuple[float, float, float]:
    r = max(linalg.norm(x) for _, _, x, _ in samples)

    def upd(a, b):
        ba, bb = samples[a][0], samples[b][0]
        return linalg.norm(ba.ff - bb.ff) * r + linalg.norm(ba.fx - bb.fx)

    L = _pairwise_max(ts, samples, upd)
    emp = _pairwise_max(ts, samples, lambda a, b: linalg.norm(samples[a][2] - samples[b][2]))
    inj = _pairwise_max(ts, samples, lambda a, b: float(np.linalg.norm(samples[a][3] - samples[b][3])))
    return L, emp, inj


def control_lipschitz(d: Diagram, env: Environment, token: str, family: Family,
                      samples: Sequence[float], refinements: int = 2) -> LipschitzReport:
    """Lipschitz certificate for the loop fixed point under a control family.

    ``family(t)`` maps space names to the matrix by which ``token`` acts at
    parameter ``t``.  ``L`` bounds ``||T(x, t1) - T(x, t2)|| / |t1 - t2|`` for the
    loop update ``T(x, t) = M_ff(t) x + M_fx(t)`` over the sampled fixed points,
    so ``||X(t1) - X(t2)|| <= L / (1 - alpha) |t1 - t2|``.  ``diverging`` flags a
    family whose ``L`` keeps growing when the grid is refined at midpoints.
    """
    ts = sorted(float(t) for t in samples)
    if len(ts) < 2:
        raise ValueError("need at least two samples")
    data = _family_samples(d, env, token, family, ts)
    alpha = max(k for _, k, _, _ in data)
    L, emp, inj = _update_lipschitz(ts, data)
    history = [L]
    grid, gdata = ts, data
    for _ in range(refinements):
        mids = [(a + b) / 2 for a, b in zip(grid, grid[1:])]
        mdata = _family_samples(d, env, token, family, mids)
        merged = sorted(zip(grid + mids, gdata + mdata), key=lambda p: p[0])
        grid = [t for t, _ in merged]
        gdata = [s for _, s in merged]
        history.append(_update_lipschitz(grid, gdata)[0])
    diverging = history[0] > 0 and all(b > 1.5 * a for a, b in zip(history, history[1:]))
    return LipschitzReport(alpha, L, L / (1 - alpha), emp, inj, tuple(history), diverging)


@dataclass(frozen=True)
class DerivativeReport:
    derivative: np.ndarray
    error: float
    h: float
    t0: float


def control_derivative(d: Diagram, env: Environment, token: str, family: Family,
                       t0: float, h: float = 1e-3) -> DerivativeReport:
    """Central-difference derivative of the closed map in the control parameter.

    Differences at ``h`` and ``h/2`` are Richardson-combined; ``error`` is the
    norm of their difference.
    """
    b = inner_blocks(d, _family_env(env, token, family, t0))
    kappa = linalg.norm(b.ff)
    if kappa >= 1 - STRICT_MARGIN:
        raise IllPosedFeedback(kappa)
    strict = env.with_options(feedback_mode="strict")

    def psi(t):
        return evaluate(d, _family_env(strict, token, family, t)).matrix

    d1 = (psi(t0 + h) - psi(t0 - h)) / (2 * h)
    d2 = (psi(t0 + h / 2) - psi(t0 - h / 2)) / h
    err = float(np.linalg.norm(d1 - d2, 2)) if d1.size else 0.0
    return DerivativeReport((4 * d2 - d1) / 3, err, h, t0)


# -- monoid audit ----------------------------------------------------------


@dataclass(frozen=True)
class MonoidAudit:
    neutral_error: float
    homomorphism_error: float
    naturality_error: float
    ok: bool


def audit_monoid(env: Environment, spaces: Sequence[SpaceRef], max_perms: int = 6,
                 tol: float = 1e-12) -> MonoidAudit:
    """Check neutral, homomorphism and permutation naturality of the control action."""
    mono: ControlMonoid = env.control
    if mono is None:
        raise ValueError("environment binds no control monoid")
    s = Signature(tuple(spaces))
    neutral = homo = nat = 0.0
    for sp in spaces:
        e = mono.injection(mono.neutral, sp)
        neutral = max(neutral, float(np.max(np.abs(e - linalg.identity(sp.dim)), initial=0.0)))
        for a in mono.tokens:
            for b in mono.tokens:
                lhs = mono.injection(mono.mul(a, b), sp)
                rhs = mono.injection(b, sp) @ mono.injection(a, sp)
                homo = max(homo, float(np.max(np.abs(lhs - rhs), initial=0.0)))
    perms = list(itertools.islice(itertools.permutations(range(1, len(s) + 1)), max_perms))
    for a in mono.tokens:
        for p in perms:
            pi = Permutation(p)
            ps = Signature(pi.apply(s.spaces))
            left = evaluate(Seq(Perm(pi, s), Ctrl(Token(a), ps, ps)), env).matrix
            right = evaluate(Seq(Ctrl(Token(a), s, s), Perm(pi, s)), env).matrix
            nat = max(nat, float(np.max(np.abs(left - right), initial=0.0)))
    return MonoidAudit(neutral, homo, nat, neutral == 0.0 and homo <= tol and nat <= tol)


# -- spectral flow ---------------------------------------------------------


class AmbiguousCrossing(ArithmeticError):
    pass


@dataclass(frozen=True)
class SpectralFlowReport:
    crossings: tuple[tuple[float, int], ...]
    sf: int
    kernel_dim_ok: bool
    orientable: bool | None

    @property
    def parity_consistent(self) -> bool | None:
        if self.orientable is None:
            return None
        return self.sf % 2 == (0 if self.orientable else 1)


def _hermitian(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise linalg.ShapeError(f"expected a square matrix, got {a.shape}")
    if np.max(np.abs(a - a.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise ValueError("matrix is not Hermitian within 1e-10")
    return (a + a.conj().T) / 2


def spectral_flow(path: Sequence, is_loop: bool = False, ts: Sequence[float] | None = None) -> SpectralFlowReport:
    """Signed count of eigenvalue zero crossings along a sampled Hermitian path.

    For a loop, ``path`` lists one circuit without repeating the start.
    Eigenvalues are followed in ascending order, which is the optimal
    nearest-neighbour matching for real spectra.  A sample with an eigenvalue
    within 1e-10 of zero is resolved from the nearest nonzero samples on
    either side; :class:`AmbiguousCrossing` is raised when that is impossible.
    """
    mats = [_hermitian(a) for a in path]
    if not mats:
        raise ValueError("empty path")
    n = len(mats)
    if ts is None:
        ts = [k / n for k in range(n)] if is_loop else list(np.linspace(0.0, 1.0, n))
    ts = [float(t) for t in ts]
    evals = np.array([np.linalg.eigvalsh(a) for a in mats])  # ascending
    signs = np.where(np.abs(evals) <= ZERO_TOL, 0, np.sign(evals)).astype(int)
    crossings = []
    for k in range(evals.shape[1]):
        crossings.extend(_index_crossings(signs[:, k], evals[:, k], ts, is_loop))
    crossings.sort()
    kernel_dims = [int(np.sum(np.abs(e) <= 1e-8 * max(1.0, float(np.max(np.abs(e))))))
                   for e in evals]
    kernel_ok = all(kd == 1 for kd in kernel_dims)
    orientable = _orientation(mats) if is_loop and kernel_ok else None
    return SpectralFlowReport(tuple(crossings), sum(d for _, d in crossings), kernel_ok, orientable)


def _index_crossings(sg, vals, ts, is_loop):
    n = len(sg)
    nonzero = [s for s in range(n) if sg[s] != 0]
    if not nonzero:
        if is_loop:
            return []  # eigenvalue stays at zero around the whole loop
        raise AmbiguousCrossing("eigenvalue vanishes along the whole path")
    out = []
    if not is_loop:
        if sg[0] == 0 or sg[-1] == 0:
            raise AmbiguousCrossing("eigenvalue vanishes at a path endpoint; refine or extend the path")
        pairs = list(zip(nonzero, nonzero[1:]))
    else:
        pairs = list(zip(nonzero, nonzero[1:] + nonzero[:1]))
    for a, b in pairs:
        if sg[a] == sg[b]:
            continue
        gap = (b - a) % n if is_loop else b - a
        if gap == 1:
            tb = ts[b] if b > a else ts[b] + 1.0
            w = vals[a] / (vals[a] - vals[b])
            t = ts[a] + w * (tb - ts[a])
            t = t - 1.0 if is_loop and t >= 1.0 else t
        else:
            t = ts[(a + 1) % n]  # first vanishing sample
        out.append((float(t), 1 if sg[b] > sg[a] else -1))
    return out


def _orientation(mats) -> bool:
    vecs = []
    for a in mats:
        w, v = np.linalg.eigh(a)
        vecs.append(v[:, int(np.argmin(np.abs(w)))])
    cur = vecs[0]
    for v in vecs[1:] + vecs[:1]:
        ov = np.vdot(cur, v)
        if abs(ov) < 0.5:
            raise AmbiguousCrossing("kernel line moves too far between samples; refine the loop")
        cur = v * (ov.conjugate() / abs(ov))
    hol = np.vdot(vecs[0], cur)
    return bool(hol.real > 0)


# -- PDE case --------------------------------------------------------------


@dataclass(frozen=True)
class PdeCase:
    env: Environment
    diagrams: dict
    program: SourceProgram
    G: np.ndarray
    K: np.ndarray


def dirichlet_laplacian(n: int) -> np.ndarray:
    return (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)).astype(np.complex128)


def build_pde_case(n: int, gain: float) -> PdeCase:
    """Boundary-control demo on the 1-D Dirichlet Laplacian.

    ``G`` is the inverse Laplacian scaled to norm ``gain``; ``K`` projects onto
    the ``ceil(n/2)`` smoothest eigenvectors.  ``CL`` is unity negative
    feedback through ``K`` with closed map ``(I + G K)^-1 G``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if gain < 0:
        raise ValueError("gain must be non-negative")
    lap = dirichlet_laplacian(n).real
    w, v = np.linalg.eigh(lap)
    inv = v @ np.diag(1 / w) @ v.T
    g = (gain * inv / np.linalg.norm(inv, 2)).astype(np.complex128)
    basis = v[:, : math.ceil(n / 2)]
    k = (basis @ basis.T).astype(np.complex128)
    H = SpaceRef("H", n)
    h, hh = sig(H), sig(H, H)
    G, K = Atom("G", h, h), Atom("K", h, h)
    sum_ = Atom("Sum", hh, h)
    copy = Atom("Copy", h, hh)
    neg_k = Atom("NegK", h, h)
    eye = np.eye(n, dtype=np.complex128)
    atoms = {"G": g, "K": k, "NegK": -k, "Sum": np.hstack([eye, eye]), "Copy": np.vstack([eye, eye])}
    swap = Perm(Permutation((2, 1)), hh)
    diagrams = {
        "D1": Feedback(1, 2, Seq(Tensor(G, K), Tensor(K, G))),
        "D2": Feedback(1, 2, Seq(Tensor(G, K), swap)),
        "CL": Feedback(1, 2, Seq(Seq(Seq(sum_, G), copy), Tensor(neg_k, Id(h)))),
    }
    program = SourceProgram({"H": H}, {"G": (h, h), "K": (h, h), "NegK": (h, h), "Sum": (hh, h),
                                       "Copy": (h, hh)}, {}, dict(diagrams))
    return PdeCase(Environment(atoms, feedback_mode="relaxed"), diagrams, program, g, k)


@dataclass(frozen=True)
class PdeRow:
    diagram: str
    monoidal: str
    mode: str
    status: str
    reference: str
    residual: float | None


def pde_residuals(case: PdeCase) -> list[PdeRow]:
    g, k = case.G, case.K
    n = g.shape[0]
    refs = {
        "CL": ("(I+GK)^-1 G", linalg.solve(np.eye(n) + g @ k, g)),
        "D1": ("G K K G", g @ k @ k @ g),
        "D2": ("G", g),
    }
    rows = []
    for monoidal in ("sum", "tensor"):
        for mode in ("strict", "relaxed"):
            env = case.env.with_options(monoidal=monoidal, feedback_mode=mode)
            for name, d in case.diagrams.items():
                label, ref = refs[name]
                if name == "CL" and monoidal == "tensor":
                    continue  # Sum and Copy are direct-sum maps
                try:
                    m = evaluate(d, env).matrix
                except (SemanticsError, ArithmeticError) as exc:
                    rows.append(PdeRow(name, monoidal, mode, type(exc).__name__, label, None))
                    continue
                res = float(np.linalg.norm(m - ref, 2) / (1 + np.linalg.norm(ref, 2)))
                rows.append(PdeRow(name, monoidal, mode, "ok", label, res))
    return rows
