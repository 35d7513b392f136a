"""Acceptance criteria, one test per criterion.

Each test prints one ``PASS``/``FAIL`` line; run with ``pytest -s`` to see them.
Reference values come from independent numpy computations, not from the
package's own code paths.
"""

import json
import time

import numpy as np
import pytest

from synop import linalg
from synop.analysis import audit_monoid, build_pde_case, spectral_flow
from synop.diagram import Atom, Dagger, Feedback, SpaceRef, sig
from synop.dsl import parse, print_program
from synop.generate import (REWRITES, complex_gaussian, cyclic_monoid, random_diagram, random_environment,
                            random_monoid, random_program, random_rewrites, random_spaces, random_unitary)
from synop.rewrite import Equal, equiv
from synop.semantics import (ControlMonoid, Environment, EnvironmentInvalid, IllPosedFeedback, SingularLoop,
                             eval_norm_bound, evaluate)


def report(criterion: str, ok: bool, detail: str = "") -> bool:
    print(f"{'PASS' if ok else 'FAIL'} criterion {criterion}" + (f": {detail}" if detail else ""))
    return ok


def rel(a, b):
    return float(np.linalg.norm(a - b, 2) / (1 + np.linalg.norm(a, 2))) if a.size else 0.0


# -- 1 ---------------------------------------------------------------------


def test_1_coherence_soundness():
    rng = np.random.default_rng(20261014)
    start = time.perf_counter()
    not_equal, worst = 0, 0.0
    for _ in range(500):
        spaces = random_spaces(rng, max_dim=4)
        d = random_diagram(rng, spaces, tokens=("a", "b"), max_atoms=8)
        d2, _ = random_rewrites(rng, d, int(rng.integers(1, 6)), sorted(REWRITES))
        mono = cyclic_monoid(rng, 3, spaces, names=("a", "b"))
        if not isinstance(equiv(d, d2, mono), Equal):
            not_equal += 1
        for _ in range(10):
            env = random_environment(rng, d, cyclic_monoid(rng, 3, spaces, names=("a", "b")), kappa_max=0.9)
            worst = max(worst, rel(evaluate(d, env).matrix, evaluate(d2, env).matrix))
    elapsed = time.perf_counter() - start
    ok = not_equal == 0 and worst <= 1e-9 and elapsed < 60
    report("1", ok, f"{not_equal} non-equal verdicts, worst residual {worst:.2e}, {elapsed:.1f} s")
    assert not_equal == 0
    assert worst <= 1e-9
    assert elapsed < 60


# -- 2 ---------------------------------------------------------------------


def test_2_feedback_oracle():
    rng = np.random.default_rng(2)
    worst, excess = 0.0, -np.inf
    for _ in range(200):
        x, f, y = (SpaceRef(n, int(rng.integers(1, 5))) for n in "XFY")
        m = complex_gaussian(rng, f.dim + y.dim, x.dim + f.dim)
        ff = m[: f.dim, x.dim:]
        kappa = rng.uniform(0.05, 0.95)
        m[: f.dim, x.dim:] = ff * (kappa / np.linalg.norm(ff, 2))
        d = Feedback(1, 2, Atom("M", sig(x, f), sig(f, y)))
        env = Environment({"M": m}, feedback_mode="strict", tol=1e-14)
        got = evaluate(d, env).matrix
        fx, ffb, yx, yf = m[: f.dim, : x.dim], m[: f.dim, x.dim:], m[f.dim:, : x.dim], m[f.dim:, x.dim:]
        ref = yx + yf @ np.linalg.solve(np.eye(f.dim) - ffb, fx)
        worst = max(worst, float(np.linalg.norm(got - ref) / (1 + np.linalg.norm(ref))))
        nb = eval_norm_bound(d, env)
        excess = max(excess, nb.actual - nb.bound)
    ok = worst <= 1e-10 and excess <= 1e-9
    report("2", ok, f"worst relative gap {worst:.2e}, max bound excess {excess:.2e}")
    assert worst <= 1e-10
    assert excess <= 1e-9


# -- 3 ---------------------------------------------------------------------

U, F, Y = SpaceRef("U", 1), SpaceRef("F", 1), SpaceRef("Y", 1)
GAIN = Feedback(1, 2, Atom("P", sig(U, F), sig(F, Y)))


def gain_env(k, mode):
    return Environment({"P": np.array([[k, -k], [k, -k]])}, feedback_mode=mode)


def test_3_gain_example():
    details, ok = [], True
    for k in (0.5, 2.0):
        got = evaluate(GAIN, gain_env(k, "relaxed")).matrix[0, 0]
        good = abs(got - k / (1 + k)) <= 1e-12
        ok &= good
        details.append(f"K={k}: {got.real:.15f}")
    try:
        evaluate(GAIN, gain_env(-1.0, "relaxed"))
        singular = False
    except SingularLoop:
        singular = True
    try:
        evaluate(GAIN, gain_env(2.0, "strict"))
        rejected = False
    except IllPosedFeedback:
        rejected = True
    ok &= singular and rejected
    details += [f"K=-1 singular: {singular}", f"strict rejects K=2: {rejected}"]
    report("3", ok, ", ".join(details))
    assert ok


# -- 4 ---------------------------------------------------------------------


def test_4_cstar_and_dagger():
    rng = np.random.default_rng(4)
    worst_cstar = 0.0
    for _ in range(100):
        a = complex_gaussian(rng, int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        n = np.linalg.svd(a, compute_uv=False)[0]
        worst_cstar = max(worst_cstar, abs(linalg.norm(a.conj().T @ a) - n * n) / (n * n))
    worst_dag = 0.0
    for k in range(100):
        monoidal = "sum" if k % 2 == 0 else "tensor"
        d = random_diagram(rng, feedback=False, max_atoms=6)
        env = random_environment(rng, d, monoidal=monoidal)
        m = evaluate(d, env).matrix
        worst_dag = max(worst_dag, float(np.max(np.abs(evaluate(Dagger(d), env).matrix - m.conj().T), initial=0.0)))
    ok = worst_cstar <= 1e-8 and worst_dag <= 1e-10
    report("4", ok, f"C* identity {worst_cstar:.2e}, dagger {worst_dag:.2e}")
    assert worst_cstar <= 1e-8
    assert worst_dag <= 1e-10


# -- 5 ---------------------------------------------------------------------


def test_5_monoid_audit():
    rng = np.random.default_rng(5)
    failures = []
    for k in range(20):
        spaces = random_spaces(rng, int(rng.integers(1, 4)))
        mono = random_monoid(rng, spaces, max_tokens=5)
        assert len(mono.tokens) <= 5
        audit = audit_monoid(Environment(control=mono), spaces, tol=1e-12)
        if not audit.ok:
            failures.append((k, audit))
    good = cyclic_monoid(rng, 3, [SpaceRef("X", 2)]).to_json()
    bad = json.loads(json.dumps(good))
    bad["star"]["a,a"] = "a"
    try:
        Environment.from_json({"atoms": {}, "control": bad})
        rejected = False
    except EnvironmentInvalid as exc:
        rejected = "star" in str(exc)
    ControlMonoid.from_json(good).validate()
    ok = not failures and rejected
    report("5", ok, f"{20 - len(failures)}/20 monoids within 1e-12, inconsistent table rejected: {rejected}")
    assert not failures
    assert rejected


# -- 6 ---------------------------------------------------------------------


def test_6_currying():
    rng = np.random.default_rng(6)
    exact = True
    worst = 0.0
    for _ in range(50):
        n1, n2, m1, m2 = (int(v) for v in rng.integers(1, 5, size=4))
        a, b = complex_gaussian(rng, m1, n1), complex_gaussian(rng, m2, n2)
        t = np.kron(a, b)
        exact &= np.array_equal(linalg.uncurry(linalg.curry(t, (n1, n2), 1)), t)
        ref = np.linalg.svd(a, compute_uv=False)[0] * np.linalg.svd(b, compute_uv=False)[0]
        worst = max(worst, abs(linalg.multilinear_norm(t, (n1, n2)).value - ref))
    ok = bool(exact) and worst <= 1e-6
    report("6", ok, f"round trip exact: {bool(exact)}, multilinear norm gap {worst:.2e}")
    assert exact
    assert worst <= 1e-6


# -- 7 ---------------------------------------------------------------------


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def kernel_loop(rng, twisted: bool, steps: int = 64, extra: int = 2):
    """Loop with a constant one-dimensional kernel; ``twisted`` turns the kernel line by half a turn."""
    rate = 0.5 if twisted else 1.0
    rest = np.diag(rng.uniform(0.5, 2.0, extra) * rng.choice([-1, 1], extra))
    w = random_unitary(rng, 2 + extra)
    path = []
    for t in np.arange(steps) / steps:
        r = rotation(2 * np.pi * rate * t)
        core = r @ np.diag([0.0, 1.0]) @ r.T
        path.append(w @ linalg.direct_sum(core, rest) @ w.conj().T)
    return path


def dense_crossings(family, samples=4000):
    """Independent oracle: signed sign changes of sorted eigenvalues on a dense loop."""
    ev = np.array([np.linalg.eigvalsh(family(t)) for t in np.arange(samples + 1) / samples])
    total = 0
    for k in range(ev.shape[1]):
        s = np.sign(np.where(np.abs(ev[:, k]) < 1e-9, 0, ev[:, k]))
        nz = s[s != 0]
        total += int(np.sum(np.diff(nz) > 0) - np.sum(np.diff(nz) < 0))
    return total


def test_7_spectral_flow_constructed_paths():
    up = spectral_flow([np.array([[2 * t - 1]]) for t in np.linspace(0, 1, 21)])
    loop = spectral_flow([rotation(2 * np.pi * t) @ np.diag([1.0, -1.0]) @ rotation(2 * np.pi * t).T
                          for t in np.arange(40) / 40], is_loop=True)
    ok = up.sf == 1 and loop.sf == 0
    report("7 (paths 1-2)", ok, f"linear path sf={up.sf}, rotation loop sf={loop.sf}")
    assert up.sf == 1
    assert loop.sf == 0


@pytest.mark.xfail(strict=True, reason="a closed finite-dimensional loop has zero spectral flow, so the "
                                       "odd-with-nonorientable path and the parity law cannot both hold")
def test_7_spectral_flow_nonorientable_parity():
    rng = np.random.default_rng(7)
    mobius = spectral_flow(kernel_loop(rng, twisted=True), is_loop=True)

    def family(t):
        r = rotation(np.pi * t)
        return r @ np.diag([0.0, 1.0]) @ r.T

    oracle = dense_crossings(family)
    trials = [spectral_flow(kernel_loop(rng, twisted=k % 2 == 1), is_loop=True) for k in range(20)]
    parity_ok = sum(bool(r.parity_consistent) for r in trials)
    odd_ok = mobius.sf % 2 == 1 and mobius.orientable is False
    ok = odd_ok and parity_ok == 20
    report("7 (path 3 and parity)", ok,
           f"twisted loop sf={mobius.sf} (dense oracle {oracle}), orientable={mobius.orientable}; "
           f"parity holds on {parity_ok}/20 loops")
    assert odd_ok
    assert parity_ok == 20


# -- 8 ---------------------------------------------------------------------


def test_8_pde_demo():
    worst, mismatches = 0.0, []
    for n in (4, 16, 64):
        for gain in (0.5, 0.99, 1.01, 2.0):
            case = build_pde_case(n, gain)
            g, k = case.G, case.K
            ref = np.linalg.inv(np.eye(n) + g @ k) @ g
            cl = case.diagrams["CL"]
            worst = max(worst, rel(ref, evaluate(cl, case.env).matrix))
            small = np.linalg.svd(k @ g, compute_uv=False)[0] < 1
            try:
                got = evaluate(cl, case.env.with_options(feedback_mode="strict")).matrix
                accepted = True
                worst = max(worst, rel(ref, got))
            except IllPosedFeedback:
                accepted = False
            if accepted != small:
                mismatches.append((n, gain))
    ok = worst <= 1e-9 and not mismatches
    report("8", ok, f"worst CL residual {worst:.2e}, strict/gain mismatches {mismatches}")
    assert worst <= 1e-9
    assert not mismatches


# -- 9 ---------------------------------------------------------------------


def test_9_dsl_round_trip():
    rng = np.random.default_rng(9)
    failures = 0
    for _ in range(500):
        prog = random_program(rng, int(rng.integers(1, 4)))
        if parse(print_program(prog)) != prog:
            failures += 1
    report("9", failures == 0, f"{500 - failures}/500 programs round-trip")
    assert failures == 0
