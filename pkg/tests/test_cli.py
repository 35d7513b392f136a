import json
from pathlib import Path

import pytest

from synop.cli import main
from synop.dsl import parse

SAMPLES = Path(__file__).resolve().parent.parent / "samples"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check(capsys):
    code, out, _ = run(capsys, "check", SAMPLES / "gain.snop")
    assert code == 0
    assert json.loads(out)["diagrams"]["Gain"] == {"in": ["U"], "out": ["Y"], "atoms": ["P"], "feedbacks": 1}


def test_eval_strict_gain(capsys):
    code, out, _ = run(capsys, "eval", SAMPLES / "gain.snop", "--env", SAMPLES / "k05.json")
    assert code == 0
    obj = json.loads(out)
    assert obj["entries"][0][0] == pytest.approx(1 / 3, abs=1e-12)
    assert obj["feedback"][0]["mode"] == "strict"


def test_eval_out_file(capsys, tmp_path):
    target = tmp_path / "m.json"
    code, out, _ = run(capsys, "eval", SAMPLES / "gain.snop", "--env", SAMPLES / "k2.json", "--out", target)
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["entries"][0][0] == pytest.approx(2 / 3, abs=1e-12)


@pytest.mark.parametrize("env, mode", [("k2.json", "strict"), ("kneg1.json", "relaxed")])
def test_eval_ill_posed_exit_code(capsys, env, mode):
    code, _, err = run(capsys, "eval", SAMPLES / "gain.snop", "--env", SAMPLES / env, "--mode", mode)
    assert code == 1 and "ill-posed" in err


def test_analyze_reports(capsys):
    code, out, _ = run(capsys, "analyze", SAMPLES / "gain.snop", "--env", SAMPLES / "k2.json")
    assert code == 0
    (rep,) = json.loads(out)["well_posedness"]
    assert rep["strict_ok"] is False and rep["relaxed_ok"] is True


def test_equiv_equal_with_semantics(capsys):
    code, out, _ = run(capsys, "equiv", SAMPLES / "d2a.snop", SAMPLES / "d2b.snop", "--semantic", "--trials", 5)
    assert code == 0
    obj = json.loads(out)
    assert obj["verdict"] == "equal"
    assert obj["semantic"]["max_relative_residual"] <= 1e-9


def test_equiv_is_deterministic(capsys):
    argv = ("equiv", SAMPLES / "d2a.snop", SAMPLES / "d2b.snop", "--semantic", "--trials", 3, "--seed", 7)
    assert run(capsys, *argv)[1] == run(capsys, *argv)[1]


def test_equiv_signature_mismatch(capsys):
    code, _, err = run(capsys, "equiv", SAMPLES / "gain.snop", SAMPLES / "d2a.snop")
    assert code == 3 and "signatures differ" in err


def test_normalize_output_parses(capsys):
    code, out, _ = run(capsys, "normalize", SAMPLES / "d2a.snop")
    assert code == 0
    assert parse(json.loads(out)["program"]).diagrams


def test_dagger_pretty(capsys):
    code, out, _ = run(capsys, "dagger", SAMPLES / "gain.snop", "--pretty")
    assert code == 0
    assert "dagger" in out and parse(out).diagram("Gain") is not None


def test_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "check", tmp_path / "nope.snop")
    assert code == 3 and err


def test_parse_error_is_input_error(capsys, tmp_path):
    bad = tmp_path / "bad.snop"
    bad.write_text("space X dim 2\n")
    code, _, err = run(capsys, "check", bad)
    assert code == 3 and ":1:" in err


def test_eval_requires_env(capsys):
    code, _, _ = run(capsys, "eval", SAMPLES / "gain.snop")
    assert code == 2


def test_demo_pde(capsys):
    code, out, _ = run(capsys, "demo", "pde", "--n", 4)
    assert code == 0
    rows = json.loads(out)["rows"]
    cl = [r for r in rows if r["diagram"] == "CL" and r["mode"] == "strict"]
    assert cl and cl[0]["residual"] < 1e-9


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
