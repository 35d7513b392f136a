import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synop.diagram import (Atom, Ctrl, Dagger, Feedback, Id, Neutral, Perm, Permutation, Seq, SpaceRef, Star,
                           Tensor, Token, sig, typecheck)
from synop.generate import cyclic_monoid, random_diagram, random_environment, random_rewrites, random_spaces
from synop.rewrite import (Equal, Inequivalent, SignatureMismatch, Unknown, canonicalize, equiv, normalize_control,
                           push_dagger, simplify_control)
from synop.semantics import evaluate

X = SpaceRef("X", 2)
A = Atom("A", sig(X), sig(X))
B = Atom("B", sig(X), sig(X))
LOOP = Atom("L", sig(X, X), sig(X, X))
seeds = st.integers(0, 2**32 - 1)


def residual(d1, d2, env):
    a, b = evaluate(d1, env).matrix, evaluate(d2, env).matrix
    return np.linalg.norm(a - b) / (1 + np.linalg.norm(a))


def setup(seed, **kw):
    rng = np.random.default_rng(seed)
    spaces = random_spaces(rng)
    mono = cyclic_monoid(rng, 3, spaces, names=("a", "b"))
    d = random_diagram(rng, spaces, tokens=("a", "b"), max_atoms=6, **kw)
    return rng, mono, d


def test_simplify_control_free_and_reduced():
    u = Star(Star(Token("a"), Neutral()), Token("b"))
    assert simplify_control(u) == Star(Token("a"), Token("b"))
    mono = cyclic_monoid(np.random.default_rng(0), 2, [X], names=("a",))
    assert simplify_control(Star(Token("a"), Token("a")), mono) == Neutral()


def test_bracketing_and_identities_are_equal():
    d1 = Seq(Seq(A, B), Id(sig(X)))
    d2 = Seq(A, Seq(Id(sig(X)), B))
    assert isinstance(equiv(d1, d2), Equal)


def test_order_matters():
    verdict = equiv(Seq(A, B), Seq(B, A))
    assert isinstance(verdict, Inequivalent)
    assert "node" in verdict.witness


def test_signature_mismatch():
    with pytest.raises(SignatureMismatch):
        equiv(A, Tensor(A, A))


def test_control_fusion_is_equal():
    d1 = Seq(Ctrl(Token("a"), sig(X), sig(X)), Ctrl(Token("b"), sig(X), sig(X)))
    d2 = Ctrl(Star(Token("a"), Token("b")), sig(X), sig(X))
    assert isinstance(equiv(d1, d2), Equal)
    assert isinstance(equiv(d1, Ctrl(Star(Token("b"), Token("a")), sig(X), sig(X))), Inequivalent)


def test_control_on_loop_is_unknown():
    with_ctrl = Feedback(1, 2, Seq(LOOP, Tensor(Ctrl(Token("a"), sig(X), sig(X)), Id(sig(X)))))
    bare = Feedback(1, 2, LOOP)
    assert isinstance(equiv(with_ctrl, bare), Unknown)
    rng = np.random.default_rng(3)
    mono = cyclic_monoid(rng, 2, [X], names=("a",))
    envs = [random_environment(rng, with_ctrl, mono) for _ in range(3)]
    verdict = equiv(with_ctrl, bare, mono, envs)
    assert isinstance(verdict, Unknown) and verdict.semantic_residual is not None


def test_perm_slide_is_equal():
    p = Perm(Permutation((2, 1)), sig(X, X))
    d1 = Seq(Tensor(A, B), p)
    d2 = Seq(p, Tensor(B, A))
    assert isinstance(equiv(d1, d2), Equal)


def test_dagger_of_sequence():
    d = Seq(A, B)
    assert isinstance(equiv(Dagger(d), Seq(Dagger(B), Dagger(A))), Equal)
    assert isinstance(equiv(Dagger(Dagger(d)), d), Equal)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_canonicalize_idempotent(seed):
    _, mono, d = setup(seed)
    cf = canonicalize(d, mono)
    w = cf.witness()
    assert typecheck(w) == typecheck(d)
    assert canonicalize(w, mono).key == cf.key


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_witness_is_semantically_faithful(seed):
    rng, mono, d = setup(seed)
    env = random_environment(rng, d, mono)
    assert residual(d, canonicalize(d, mono).witness(), env) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_equiv_is_an_equivalence(seed):
    rng, mono, d = setup(seed)
    d1, _ = random_rewrites(rng, d, 2)
    d2, _ = random_rewrites(rng, d1, 2)
    assert isinstance(equiv(d, d, mono), Equal)
    assert equiv(d, d1, mono).verdict == equiv(d1, d, mono).verdict == "equal"
    assert isinstance(equiv(d, d2, mono), Equal)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_normalize_and_push_dagger_preserve_meaning(seed):
    rng, mono, d = setup(seed)
    env = random_environment(rng, d, mono)
    n = normalize_control(d, mono)
    p = push_dagger(d)
    assert typecheck(n) == typecheck(d) == typecheck(p)
    assert residual(d, n, env) <= 1e-9
    assert residual(d, p, env) <= 1e-9
    assert isinstance(equiv(d, p, mono), Equal)
