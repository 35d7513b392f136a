import pytest

from synop.diagram import (Atom, Ctrl, Dagger, DiagramTypeError, Feedback, Id, Involute, Neutral, Perm,
                           Permutation, Seq, SpaceRef, Star, Token, control_word, count_feedback,
                           sig, to_port_graph, typecheck, word_to_expr)

X, Y, F = SpaceRef("X", 2), SpaceRef("Y", 3), SpaceRef("F", 1)


def test_space_needs_positive_dim():
    with pytest.raises(ValueError):
        SpaceRef("Z", 0)


def test_signature_dims():
    s = sig(X, Y, F)
    assert s.width == 6
    assert s.total_dim == 6
    assert sig().total_dim == 1 and sig().width == 0
    assert s.without(2) == sig(X, F)


def test_permutation_apply_and_inverse():
    p = Permutation((2, 3, 1))
    assert p.apply("abc") == ("b", "c", "a")
    assert p.inverse().apply(p.apply("abc")) == tuple("abc")
    assert not Permutation((1, 1)).is_valid()
    assert Permutation.block_swap(1, 2).mapping == (2, 3, 1)


def test_seq_and_tensor_types():
    a = Atom("A", sig(X), sig(Y))
    b = Atom("B", sig(Y), sig(F))
    assert typecheck(a >> b) == (sig(X), sig(F))
    assert typecheck(a @ b) == (sig(X, Y), sig(Y, F))
    with pytest.raises(DiagramTypeError):
        typecheck(b >> a)


def test_perm_output_order():
    assert typecheck(Perm(Permutation((2, 1)), sig(X, Y))) == (sig(X, Y), sig(Y, X))
    with pytest.raises(DiagramTypeError):
        typecheck(Perm(Permutation((1, 1)), sig(X, Y)))


def test_feedback_types():
    a = Atom("A", sig(X, F), sig(F, Y))
    assert typecheck(Feedback(1, 2, a)) == (sig(X), sig(Y))
    with pytest.raises(DiagramTypeError):
        typecheck(Feedback(2, 2, a))
    with pytest.raises(DiagramTypeError):
        typecheck(Feedback(1, 3, a))


def test_ctrl_and_dagger_types():
    c = Ctrl(Token("u"), sig(X), sig(X))
    assert typecheck(Dagger(Atom("A", sig(X), sig(Y)))) == (sig(Y), sig(X))
    assert typecheck(c) == (sig(X), sig(X))


def test_atom_table_conflict():
    with pytest.raises(DiagramTypeError):
        typecheck(Atom("A", sig(X), sig(Y)), {"A": (sig(Y), sig(X))})


def test_control_words():
    u = Star(Token("a"), Involute(Star(Token("b"), Neutral())))
    w = control_word(u)
    assert w == (("a", False), ("b", True))
    assert control_word(word_to_expr(w)) == w


def test_port_graph_ignores_bracketing():
    a, b, c = (Atom(n, sig(X), sig(X)) for n in "ABC")
    left = Seq(Seq(a, b), c)
    right = Seq(a, Seq(Id(sig(X)), Seq(b, c)))
    assert to_port_graph(left).canonical_key() == to_port_graph(right).canonical_key()
    assert to_port_graph(left).canonical_key() != to_port_graph(Seq(b, Seq(a, c))).canonical_key()


def test_count_feedback():
    a = Atom("A", sig(X, F), sig(F, Y))
    assert count_feedback(Seq(Feedback(1, 2, a), Id(sig(Y)))) == 1
