"""Command-line interface: ``synop <command> ...``.

Data goes to standard output (JSON unless ``--pretty``), diagnostics to
standard error.  Exit codes: 0 ok, 1 negative verdict (anything but
equal, or an ill-posed loop), 2 usage error, 3 input error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import linalg
from .analysis import audit_monoid, build_pde_case, pde_residuals, report_json, well_posedness
from .diagram import Dagger, DiagramTypeError, Tensor, count_feedback, iter_atoms, typecheck
from .dsl import ParseError, SourceProgram, parse_file, print_program
from .generate import cyclic_monoid, random_environment
from .rewrite import Equal, Inequivalent, SignatureMismatch, canonicalize, equiv, push_dagger
from .semantics import (Environment, EnvironmentInvalid, IllPosedFeedback, SemanticsError, SingularLoop,
                        UnboundAtom, UnboundToken, eval_norm_bound, evaluate)

OK, NEGATIVE, USAGE, INPUT, NUMERIC = 0, 1, 2, 3, 4
SEMANTIC_TOL = 1e-9


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _emit(args, obj, pretty_text: str | None = None):
    if args.pretty:
        print(pretty_text if pretty_text is not None else json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(json.dumps(obj, sort_keys=True))


def _load_program(path: str) -> SourceProgram:
    try:
        return parse_file(path)
    except OSError as exc:
        raise CliError(INPUT, f"{path}: {exc.strerror or exc}") from None
    except (ParseError, DiagramTypeError) as exc:
        raise CliError(INPUT, f"{path}:{exc}") from None


def _pick(prog: SourceProgram, name: str | None, path: str):
    try:
        return prog.diagram(name)
    except KeyError:
        raise CliError(INPUT, f"{path}: no diagram {name!r}" if name else f"{path}: no diagram defined") from None


def _load_env(args, prog: SourceProgram | None = None) -> Environment:
    if not args.env:
        raise CliError(USAGE, "--env is required")
    try:
        env = Environment.load(args.env)
    except OSError as exc:
        raise CliError(INPUT, f"{args.env}: {exc.strerror or exc}") from None
    except (EnvironmentInvalid, linalg.ShapeError, ValueError) as exc:
        raise CliError(INPUT, f"{args.env}: {exc}") from None
    kw = {}
    if args.mode:
        kw["feedback_mode"] = args.mode
    if args.tol is not None:
        kw["tol"] = args.tol
    env = env.with_options(**kw) if kw else env
    if prog is not None:
        try:
            env.validate_for(prog.atoms, prog.spaces)
        except EnvironmentInvalid as exc:
            raise CliError(INPUT, f"{args.env}: {exc}") from None
    return env


def _sig_names(s) -> list[str]:
    return [sp.name for sp in s]


# -- commands --------------------------------------------------------------


def cmd_check(args) -> int:
    prog = _load_program(args.file)
    out = {}
    for name, d in prog.diagrams.items():
        i, o = typecheck(d)
        out[name] = {"in": _sig_names(i), "out": _sig_names(o),
                     "atoms": sorted({a.name for a in iter_atoms(d)}), "feedbacks": count_feedback(d)}
    lines = [f"{n} : {', '.join(v['in']) or '()'} -> {', '.join(v['out']) or '()'}" for n, v in out.items()]
    _emit(args, {"diagrams": out}, "\n".join(lines))
    return OK


def _witness_program(prog: SourceProgram, diagrams: dict) -> str:
    return print_program(SourceProgram(dict(prog.spaces), dict(prog.atoms), dict(prog.controls), diagrams))


def cmd_normalize(args) -> int:
    prog = _load_program(args.file)
    names = [args.diagram] if args.diagram else list(prog.diagrams)
    witnesses = {n: canonicalize(_pick(prog, n, args.file)).witness() for n in names}
    text = _witness_program(prog, witnesses)
    if args.pretty:
        print(text, end="")
    else:
        print(json.dumps({"program": text}, sort_keys=True))
    return OK


def _random_envs(prog: SourceProgram, d1, d2, trials: int, seed: int) -> list[Environment]:
    rng = np.random.default_rng(seed)
    tokens = list(prog.controls)
    envs = []
    for _ in range(trials):
        mono = None
        if tokens:
            mono = cyclic_monoid(rng, len(tokens) + 1, list(prog.spaces.values()), names=tokens)
        envs.append(random_environment(rng, Tensor(d1, d2), mono))
    return envs


def cmd_equiv(args) -> int:
    pa, pb = _load_program(args.file_a), _load_program(args.file_b)
    d1, d2 = _pick(pa, args.diagram, args.file_a), _pick(pb, args.diagram, args.file_b)
    try:
        verdict = equiv(d1, d2)
    except SignatureMismatch as exc:
        raise CliError(INPUT, f"signatures differ: {exc}") from None
    result = {"verdict": verdict.verdict}
    if isinstance(verdict, Equal):
        result["trace"] = list(verdict.trace)
    elif isinstance(verdict, Inequivalent):
        result["witness"] = verdict.witness
    else:
        result["reason"] = verdict.reason
    if args.semantic:
        envs = [_load_env(args)] if args.env else _random_envs(pa, d1, d2, args.trials, args.seed)
        worst = 0.0
        for env in envs:
            a, b = evaluate(d1, env).matrix, evaluate(d2, env).matrix
            if a.size:
                worst = max(worst, float(np.linalg.norm(a - b, 2) / (1 + np.linalg.norm(a, 2))))
        result["semantic"] = {"trials": len(envs), "max_relative_residual": worst, "seed": args.seed}
        if isinstance(verdict, Equal) and worst > SEMANTIC_TOL:
            _emit(args, result)
            raise CliError(NUMERIC, f"semantic mismatch {worst:.3e} on a structurally equal pair")
    text = f"{verdict.verdict}" + (f": {result.get('witness') or result.get('reason')}"
                                   if not isinstance(verdict, Equal) else "")
    if "semantic" in result:
        text += f"\nsemantic residual {result['semantic']['max_relative_residual']:.3e} over {len(envs)} trial(s)"
    _emit(args, result, text)
    return OK if isinstance(verdict, Equal) else NEGATIVE


def cmd_eval(args) -> int:
    prog = _load_program(args.file)
    d = _pick(prog, args.diagram, args.file)
    env = _load_env(args, prog)
    value = evaluate(d, env)
    obj = value.to_json()
    obj["feedback"] = [r.to_json() for r in value.feedback]
    text = json.dumps(obj, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    elif args.pretty:
        print(np.array2string(value.matrix, precision=6, suppress_small=True))
    else:
        print(text)
    return OK


def cmd_analyze(args) -> int:
    prog = _load_program(args.file)
    d = _pick(prog, args.diagram, args.file)
    env = _load_env(args, prog)
    reports = well_posedness(d, env)
    out = {"well_posedness": [report_json(r) for r in reports]}
    if count_feedback(d) == 1 and env.monoidal == "sum":
        try:
            nb = eval_norm_bound(d, env)
            out["norm_bound"] = report_json(nb)
        except IllPosedFeedback as exc:
            out["norm_bound"] = {"error": str(exc)}
    if env.control is not None:
        spaces = [prog.spaces[s] for s in sorted({s for _, s in env.control.inject})]
        out["monoid_audit"] = report_json(audit_monoid(env, spaces))
    lines = [f"loop[{r.i},{r.j}] kappa={r.kappa} strict={'ok' if r.strict_ok else 'fail'} "
             f"relaxed={'ok' if r.relaxed_ok else 'fail'}" + (f" ({r.error})" if r.error else "")
             for r in reports]
    _emit(args, out, "\n".join(lines) or "no feedback")
    bad = any(not r.relaxed_ok or (env.feedback_mode == "strict" and not r.strict_ok) for r in reports)
    return NEGATIVE if bad else OK


def cmd_dagger(args) -> int:
    prog = _load_program(args.file)
    names = [args.diagram] if args.diagram else list(prog.diagrams)
    text = _witness_program(prog, {n: push_dagger(Dagger(_pick(prog, n, args.file))) for n in names})
    if args.pretty:
        print(text, end="")
    else:
        print(json.dumps({"program": text}, sort_keys=True))
    return OK


def cmd_demo(args) -> int:
    if args.name != "pde":
        raise CliError(USAGE, f"unknown demo {args.name!r}; available: pde")
    rows = []
    for n in args.n:
        case = build_pde_case(n, args.gain)
        kg = float(np.linalg.norm(case.K @ case.G, 2))
        for r in pde_residuals(case):
            row = report_json(r)
            row.update(n=n, gain=args.gain, norm_KG=kg)
            rows.append(row)
    header = f"{'n':>4} {'diagram':<7} {'monoidal':<8} {'mode':<8} {'status':<17} {'reference':<12} residual"
    lines = [header] + [
        f"{r['n']:>4} {r['diagram']:<7} {r['monoidal']:<8} {r['mode']:<8} {r['status']:<17} "
        f"{r['reference']:<12} {'-' if r['residual'] is None else format(r['residual'], '.3e')}"
        for r in rows]
    _emit(args, {"rows": rows}, "\n".join(lines))
    return OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="pretty", action="store_false", help="machine-readable output (default)")
    fmt.add_argument("--pretty", dest="pretty", action="store_true", help="human-readable output")
    common.add_argument("--diagram", help="diagram name (default: all, or the last one)")
    common.add_argument("--env", help="environment JSON file")
    common.add_argument("--mode", choices=("strict", "relaxed"), help="override the feedback mode")
    common.add_argument("--tol", type=float, help="override the Neumann tolerance")
    common.set_defaults(pretty=False)

    p = argparse.ArgumentParser(prog="synop", description="Wiring-diagram calculus toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("check", parents=[common], help="typecheck a program")
    s.add_argument("file")
    s.set_defaults(func=cmd_check)
    s = sub.add_parser("normalize", parents=[common], help="print canonical-form witnesses")
    s.add_argument("file")
    s.set_defaults(func=cmd_normalize)
    s = sub.add_parser("equiv", parents=[common], help="decide structural equivalence")
    s.add_argument("file_a")
    s.add_argument("file_b")
    s.add_argument("--semantic", action="store_true", help="cross-check in random environments")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_equiv)
    s = sub.add_parser("eval", parents=[common], help="evaluate to a matrix")
    s.add_argument("file")
    s.add_argument("--out", help="write the JSON matrix here")
    s.set_defaults(func=cmd_eval)
    s = sub.add_parser("analyze", parents=[common], help="well-posedness and audit reports")
    s.add_argument("file")
    s.set_defaults(func=cmd_analyze)
    s = sub.add_parser("dagger", parents=[common], help="print the daggered program")
    s.add_argument("file")
    s.set_defaults(func=cmd_dagger)
    s = sub.add_parser("demo", parents=[common], help="run a built-in case study")
    s.add_argument("name", help="demo name (pde)")
    s.add_argument("--n", type=int, nargs="+", default=[4, 16, 64])
    s.add_argument("--gain", type=float, default=0.5)
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"synop: {exc}", file=sys.stderr)
        return exc.code
    except (IllPosedFeedback, SingularLoop) as exc:
        print(f"synop: ill-posed feedback: {exc}", file=sys.stderr)
        return NEGATIVE
    except (UnboundAtom, UnboundToken, EnvironmentInvalid, linalg.ShapeError) as exc:
        print(f"synop: input error: {exc}", file=sys.stderr)
        return INPUT
    except (ArithmeticError, SemanticsError) as exc:
        print(f"synop: numeric failure: {exc}", file=sys.stderr)
        return NUMERIC


if __name__ == "__main__":
    sys.exit(main())
