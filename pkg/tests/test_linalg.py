import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synop import linalg

seeds = st.integers(0, 2**32 - 1)


def gaussian(rng, r, c):
    return rng.standard_normal((r, c)) + 1j * rng.standard_normal((r, c))


def test_direct_sum_and_kron_shapes():
    a, b = np.ones((2, 3)), np.ones((1, 4))
    assert linalg.direct_sum(a, b).shape == (3, 7)
    assert linalg.kron(a, b).shape == (2, 12)


def test_op_norm_switches_method_above_svd_limit():
    rng = np.random.default_rng(0)
    a = gaussian(rng, 80, 70)
    rep = linalg.op_norm(a)
    assert rep.method == "power-iteration"
    assert rep.value == pytest.approx(np.linalg.norm(a, 2), rel=1e-8)
    assert linalg.op_norm(a[:5, :5]).method == "svd"


def test_solve_pivot_floor():
    with pytest.raises(linalg.SingularMatrix):
        linalg.solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.eye(2))


def test_block_perm_moves_blocks():
    # output slot k carries input pi(k)
    x = np.arange(5.0)
    m = linalg.block_perm((2, 1), (2, 3))
    assert list(m.real @ x) == [2.0, 3.0, 4.0, 0.0, 1.0]


def test_perm_unitary_is_unitary():
    m = linalg.perm_unitary((3, 1, 2), (2, 3, 2))
    assert np.allclose(m.conj().T @ m, np.eye(12))


def test_curry_shape_error():
    with pytest.raises(linalg.ShapeError):
        linalg.curry(np.ones((2, 5)), (2, 3), 1)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_curry_round_trip_exact(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(1, 4, size=int(rng.integers(2, 4))))
    t = gaussian(rng, int(rng.integers(1, 4)), int(np.prod(dims)))
    split = int(rng.integers(1, len(dims)))
    c = linalg.curry(t, dims, split)
    assert np.array_equal(linalg.uncurry(c), t)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_curried_evaluation_matches_contraction(seed):
    rng = np.random.default_rng(seed)
    t = gaussian(rng, 2, 6)
    x, y = gaussian(rng, 2, 1)[:, 0], gaussian(rng, 3, 1)[:, 0]
    assert np.allclose(linalg.curry(t, (2, 3), 1)(x) @ y, t @ np.kron(x, y))


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_cstar_identity(seed):
    rng = np.random.default_rng(seed)
    a = gaussian(rng, int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    n = linalg.norm(a)
    assert linalg.norm(linalg.adjoint(a) @ a) == pytest.approx(n * n, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_norm_submultiplicative(seed):
    rng = np.random.default_rng(seed)
    a, b = gaussian(rng, 3, 4), gaussian(rng, 4, 2)
    assert linalg.norm(a @ b) <= linalg.norm(a) * linalg.norm(b) * (1 + 1e-12)
    assert linalg.norm(linalg.kron(a, b)) == pytest.approx(linalg.norm(a) * linalg.norm(b), rel=1e-10)


def test_spectral_radius_below_norm():
    a = np.array([[0.0, 2.0], [0.0, 0.0]])
    assert linalg.spectral_radius(a) == pytest.approx(0.0, abs=1e-12)
    assert linalg.norm(a) == pytest.approx(2.0)
