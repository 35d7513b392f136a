"""Dense complex matrix kernel.

Matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``.  The
functions here add the shape checks, deterministic norm estimation and
pivot-guarded solves the rest of the package relies on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

SVD_MAX_DIM = 64
DEFAULT_MAX_ITER = 10_000
PIVOT_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class SingularMatrix(ArithmeticError):
    pass


class ConvergenceError(ArithmeticError):
    pass


def as_matrix(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if rows is not None and m.shape[0] != rows or cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected shape ({rows}, {cols}), got {m.shape}")
    return m


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.complex128)


def matmul(a, b) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def kron(a, b) -> np.ndarray:
    """Kronecker product, left factor index major."""
    return np.kron(a, b)


def direct_sum(a, b) -> np.ndarray:
    out = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]), dtype=np.complex128)
    out[: a.shape[0], : a.shape[1]] = a
    out[a.shape[0]:, a.shape[1]:] = b
    return out


def adjoint(a) -> np.ndarray:
    return np.conj(a).T


def add(a, b) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}")
    return a + b


def sub(a, b) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"cannot subtract {b.shape} from {a.shape}")
    return a - b


def scale(c: complex, a) -> np.ndarray:
    return c * a


@dataclass(frozen=True)
class NormReport:
    value: float
    method: str  # "svd" | "power-iteration"
    iterations: int
    residual: float

    def __float__(self):
        return self.value


def op_norm(a, tol: float = 1e-12, *, method: str | None = None,
            max_iter: int = DEFAULT_MAX_ITER) -> NormReport:
    """Largest singular value of ``a``.

    Full SVD for matrices up to ``SVD_MAX_DIM`` per side, otherwise power
    iteration on ``a^H a`` from the normalised all-ones vector.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = np.asarray(a, dtype=np.complex128)
    if a.size == 0:
        return NormReport(0.0, "svd", 0, 0.0)
    if method is None:
        method = "svd" if max(a.shape) <= SVD_MAX_DIM else "power-iteration"
    if method == "svd":
        return NormReport(float(np.linalg.svd(a, compute_uv=False)[0]), "svd", 0, 0.0)
    if method != "power-iteration":
        raise ValueError(f"unknown norm method {method!r}")
    x = np.ones(a.shape[1], dtype=np.complex128) / math.sqrt(a.shape[1])
    prev = 0.0
    for it in range(1, max_iter + 1):
        y = a.conj().T @ (a @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # the all-ones start can be orthogonal to the row space; restart on a basis vector
            if it == 1:
                x = np.zeros_like(x)
                x[int(np.argmax(np.linalg.norm(a, axis=0)))] = 1.0
                continue
            return NormReport(0.0, "power-iteration", it, 0.0)
        x = y / ny
        sigma = math.sqrt(ny)
        residual = abs(sigma - prev) / max(sigma, 1e-300)
        if residual <= tol:
            return NormReport(float(np.linalg.norm(a @ x)), "power-iteration", it, residual)
        prev = sigma
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def norm(a) -> float:
    return op_norm(a).value


def spectral_radius(a) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def perm_unitary(pi, dims: Sequence[int]) -> np.ndarray:
    """Unitary reordering tensor factors so output slot k holds input slot pi(k)."""
    mapping = tuple(pi.mapping if hasattr(pi, "mapping") else pi)
    if len(mapping) != len(dims):
        raise ShapeError(f"permutation of length {len(mapping)} for {len(dims)} factors")
    n = math.prod(dims)
    if not mapping:
        return identity(1)
    src = np.arange(n).reshape(tuple(dims))
    # output multi-index (o_1..o_n) with o_k = i_{pi(k)}
    moved = np.transpose(src, [m - 1 for m in mapping]).reshape(-1)
    out = np.zeros((n, n), dtype=np.complex128)
    out[np.arange(n), moved] = 1.0
    return out


def block_perm(pi, dims: Sequence[int]) -> np.ndarray:
    """Direct-sum analogue of :func:`perm_unitary`: reorders blocks."""
    mapping = tuple(pi.mapping if hasattr(pi, "mapping") else pi)
    if len(mapping) != len(dims):
        raise ShapeError(f"permutation of length {len(mapping)} for {len(dims)} blocks")
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    cols = [c for m in mapping for c in range(offsets[m - 1], offsets[m])]
    n = int(offsets[-1])
    out = np.zeros((n, n), dtype=np.complex128)
    out[np.arange(n), cols] = 1.0
    return out


def solve(a, b, pivot_floor: float = PIVOT_FLOOR) -> np.ndarray:
    """Solve ``a x = b`` by partially pivoted LU; refuses tiny pivots."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve needs a square matrix, got {a.shape}")
    vec = b.ndim == 1
    bb = b.reshape(-1, 1) if vec else b
    if bb.shape[0] != a.shape[0]:
        raise ShapeError(f"right-hand side {b.shape} does not match {a.shape}")
    if a.shape[0] == 0:
        return np.zeros(b.shape, dtype=np.complex128)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    smallest = float(np.min(np.abs(np.diag(lu))))
    if smallest < pivot_floor:
        raise SingularMatrix(f"pivot magnitude {smallest:.3e} below {pivot_floor:g}")
    x = scipy.linalg.lu_solve((lu, piv), bb, check_finite=False)
    return x.reshape(-1) if vec else x


# -- currying ----------------------------------------------------------------


@dataclass(frozen=True)
class Curried:
    """``t`` viewed as a map from the first ``split`` input slots into maps on the rest."""

    data: np.ndarray  # shape (prod first dims, out, prod rest dims)
    in_dims: tuple[int, ...]
    split: int

    def __call__(self, *xs) -> np.ndarray:
        if len(xs) != self.split:
            raise ShapeError(f"expected {self.split} leading arguments, got {len(xs)}")
        v = np.ones(1, dtype=np.complex128)
        for x, d in zip(xs, self.in_dims):
            x = np.asarray(x, dtype=np.complex128).reshape(-1)
            if x.shape[0] != d:
                raise ShapeError(f"argument of length {x.shape[0]} for a slot of dim {d}")
            v = np.kron(v, x)
        return np.tensordot(v, self.data, axes=(0, 0))

    def uncurry(self) -> np.ndarray:
        lead, out, rest = self.data.shape
        return np.transpose(self.data, (1, 0, 2)).reshape(out, lead * rest)


def curry(t, in_dims: Sequence[int], split: int) -> Curried:
    t = np.asarray(t, dtype=np.complex128)
    in_dims = tuple(int(d) for d in in_dims)
    if math.prod(in_dims) != t.shape[1]:
        raise ShapeError(f"input dims {in_dims} do not multiply to {t.shape[1]} columns")
    if not 1 <= split < len(in_dims):
        raise ShapeError(f"split must lie in 1..{len(in_dims) - 1}")
    lead = math.prod(in_dims[:split])
    rest = math.prod(in_dims[split:])
    data = np.transpose(t.reshape(t.shape[0], lead, rest), (1, 0, 2))
    return Curried(data, in_dims, split)


def uncurry(c: Curried) -> np.ndarray:
    return c.uncurry()


def multilinear_norm(t, in_dims: Sequence[int], tol: float = 1e-12, *,
                     seeds: int = 8, max_iter: int = 2000) -> NormReport:
    """Lower bound on sup ||T(x_1, ..., x_n)|| over unit vectors x_i.

    Alternating maximisation over the slots, restarted from ``seeds``
    deterministic starting points; the best value is reported.
    """
    t = np.asarray(t, dtype=np.complex128)
    in_dims = tuple(int(d) for d in in_dims)
    if math.prod(in_dims) != t.shape[1]:
        raise ShapeError(f"input dims {in_dims} do not multiply to {t.shape[1]} columns")
    if len(in_dims) <= 1:
        return op_norm(t, tol)
    tensor = t.reshape((t.shape[0],) + in_dims)
    best = 0.0
    best_iters = 0
    best_res = 0.0
    for seed in range(seeds):
        if seed == 0:
            xs = [np.ones(d, dtype=np.complex128) / math.sqrt(d) for d in in_dims]
        else:
            rng = np.random.default_rng(seed)
            xs = []
            for d in in_dims:
                v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
                xs.append(v / np.linalg.norm(v))
        value = 0.0
        res = math.inf
        it = 0
        for it in range(1, max_iter + 1):
            for k in range(len(in_dims)):
                m = _contract_except(tensor, xs, k)
                _, sv, vh = np.linalg.svd(m, full_matrices=False)
                xs[k] = np.conj(vh[0])
                new = float(sv[0])
            res = abs(new - value) / max(new, 1e-300)
            value = new
            if res <= tol:
                break
        if value > best:
            best, best_iters, best_res = value, it, res
    return NormReport(best, "alternating", best_iters, best_res)


def _contract_except(tensor: np.ndarray, xs: list, k: int) -> np.ndarray:
    """Contract every slot except ``k``; the result maps slot ``k`` into the output."""
    m = tensor
    # going right to left keeps the axis of slot s at position 1 + s
    for s in range(len(xs) - 1, -1, -1):
        if s != k:
            m = np.tensordot(m, xs[s], axes=([1 + s], [0]))
    return m.reshape(tensor.shape[0], -1)
