import numpy as np
import pytest

from synop.analysis import (AmbiguousCrossing, audit_monoid, build_pde_case, control_derivative, control_lipschitz,
                            pde_residuals, report_json, spectral_flow, well_posedness)
from synop.diagram import Atom, Ctrl, Feedback, Seq, SpaceRef, Tensor, Token, sig
from synop.generate import cyclic_monoid
from synop.semantics import ControlMonoid, Environment

U, F, Y = SpaceRef("U", 1), SpaceRef("F", 1), SpaceRef("Y", 1)
GAIN = Feedback(1, 2, Atom("P", sig(U, F), sig(F, Y)))


def gain_env(k):
    return Environment({"P": np.array([[k, -k], [k, -k]])})


@pytest.mark.parametrize("k, strict, relaxed", [(0.5, True, True), (2.0, False, True), (-1.0, True, False)])
def test_well_posedness_gain(k, strict, relaxed):
    (rep,) = well_posedness(GAIN, gain_env(k))
    assert rep.kappa == pytest.approx(abs(k))
    assert (rep.strict_ok, rep.relaxed_ok) == (strict and abs(k) < 1, relaxed)
    assert report_json(rep)["kappa"] == pytest.approx(abs(k))


def controlled_gain():
    # loop gain is the scalar control action c(t) on the fed wire
    inner = Seq(Atom("P", sig(U, F), sig(F, Y)), Tensor(Ctrl(Token("a"), sig(F), sig(F)), Atom("I", sig(Y), sig(Y))))
    mono = ControlMonoid(("e", "a"), "e", {("e", "e"): "e", ("e", "a"): "a", ("a", "e"): "a", ("a", "a"): "a"},
                         None, {("a", "F"): np.array([[1.0]])})
    env = Environment({"P": np.array([[1.0, 1.0], [1.0, 1.0]]), "I": np.eye(1)}, control=mono)
    return Feedback(1, 2, inner), env


def scalar(c):
    return lambda t: {"F": np.array([[c(t)]])}


def test_lipschitz_smooth_family():
    d, env = controlled_gain()
    rep = control_lipschitz(d, env, "a", scalar(lambda t: 0.2 + 0.3 * t), np.linspace(0, 0.5, 6))
    assert rep.alpha < 1
    assert not rep.diverging
    assert rep.empirical_max_ratio <= rep.predicted_bound + 1e-9


def test_lipschitz_flags_step_family():
    d, env = controlled_gain()
    rep = control_lipschitz(d, env, "a", scalar(lambda t: 0.2 if t < 0.25 + 1e-9 else 0.6), np.linspace(0, 0.5, 6))
    assert rep.diverging


def test_derivative_matches_closed_form():
    d, env = controlled_gain()
    # closed map c -> 1 / (1 - c) with c = 0.2 + 0.3 t
    rep = control_derivative(d, env, "a", scalar(lambda t: 0.2 + 0.3 * t), 0.5)
    assert rep.derivative[0, 0].real == pytest.approx(0.3 / (1 - 0.35) ** 2, rel=1e-6)
    assert rep.error < 1e-5


def test_audit_cyclic_monoid():
    X = SpaceRef("X", 3)
    mono = cyclic_monoid(np.random.default_rng(0), 3, [X])
    audit = audit_monoid(Environment(control=mono), [X, X])
    assert audit.ok and audit.homomorphism_error <= 1e-12


def test_spectral_flow_up_crossing():
    rep = spectral_flow([np.array([[2 * t - 1]]) for t in np.linspace(0, 1, 21)])
    assert rep.sf == 1 and rep.crossings[0][1] == 1
    assert rep.crossings[0][0] == pytest.approx(0.5)


def test_spectral_flow_rotation_loop():
    ts = np.arange(40) / 40
    path = [np.array([[np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)], [np.sin(2 * np.pi * t), -np.cos(2 * np.pi * t)]])
            for t in ts]
    rep = spectral_flow(path, is_loop=True)
    assert rep.sf == 0 and rep.crossings == ()


def test_spectral_flow_endpoint_zero_is_ambiguous():
    with pytest.raises(AmbiguousCrossing):
        spectral_flow([np.array([[t]]) for t in np.linspace(0, 1, 5)])


def test_pde_residuals_small():
    case = build_pde_case(4, 0.5)
    rows = {(r.diagram, r.monoidal, r.mode): r for r in pde_residuals(case)}
    assert rows[("CL", "sum", "strict")].residual < 1e-9
    assert rows[("D1", "sum", "relaxed")].residual < 1e-9
    assert rows[("D2", "sum", "relaxed")].status == "SingularLoop"
