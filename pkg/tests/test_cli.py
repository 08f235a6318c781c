import json
import os
import subprocess
import sys

import jsonschema
import pytest

from lexterm.cli import EXIT_CODES, SCHEMA_PATH, GeneratorSpec, generate_program, main, threads

from conftest import CORPUS, ROOT

GOLDEN = ROOT / "tests" / "golden"
SCHEMA = json.loads(SCHEMA_PATH.read_text())
VOLATILE = {"timings", "seconds", "lp_time", "constraint_time", "program"}


def run_cli(tmp_path, *args):
    out = tmp_path / "report.json"
    code = main([*map(str, args), "--json", str(out)])
    report = json.loads(out.read_text())
    jsonschema.validate(report, SCHEMA)
    assert EXIT_CODES[report["verdict"]] == code
    return code, report


def stable(value):
    if isinstance(value, dict):
        return {k: stable(v) for k, v in value.items() if k not in VOLATILE}
    if isinstance(value, list):
        return [stable(v) for v in value]
    return value


CASES = {
    "prove_double_then_countdown": ("prove", CORPUS / "double_then_countdown.app"),
    "compose_triple_nested": ("compose", CORPUS / "triple_nested.app"),
    "bound_two_loops": ("bound", CORPUS / "two_loops.app", "--at", "x=5,y=7"),
    "verify_double_then_countdown": ("verify", CORPUS / "double_then_countdown.app", CORPUS / "double_then_countdown.cert.json"),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_reports_match_goldens(tmp_path, name):
    _, report = run_cli(tmp_path, *CASES[name])
    text = json.dumps(stable(report), indent=2, sort_keys=True) + "\n"
    path = GOLDEN / f"{name}.json"
    if os.environ.get("LEXTERM_REGEN_GOLDEN"):
        path.write_text(text)
    assert text == path.read_text()


@pytest.mark.parametrize(
    "args,verdict",
    [
        (("prove", CORPUS / "biased_walk.app"), "proved-as-termination"),
        (("prove", CORPUS / "divergent.app"), "no-linlexrsm"),
        (("compose", CORPUS / "divergent.app"), "cannot-prove-compositional"),
        (("bound", CORPUS / "double_then_countdown.app"), "no-eci"),
        (("bound", CORPUS / "biased_walk.app"), "bound-certified"),
        (("verify", CORPUS / "double_then_countdown.app", CORPUS / "double_then_countdown.cert.json", "--epsilon", "2"), "certificate-rejected"),
        (("verify", CORPUS / "biased_walk.app", CORPUS / "double_then_countdown.cert.json"), "certificate-error"),
        (("simulate", CORPUS / "biased_walk.app", "--trials", "50"), "simulated"),
        (("prove", CORPUS / "missing.app"), "input-error"),
    ],
)
def test_verdicts_and_exit_codes(tmp_path, args, verdict):
    code, report = run_cli(tmp_path, *args)
    assert report["verdict"] == verdict and code == EXIT_CODES[verdict]


def test_rejected_certificate_locates_violation(tmp_path):
    _, report = run_cli(tmp_path, "verify", CORPUS / "double_then_countdown.app", CORPUS / "double_then_countdown.cert.json", "--epsilon", "2")
    failures = report["symbolic_check"]["failures"]
    assert failures and all("location" in f and f["clause"] for f in failures)


def test_false_sidecar_is_refused(tmp_path):
    side = tmp_path / "bad.inv"
    side.write_text("loc 1: x >= 5\n")
    code, report = run_cli(tmp_path, "prove", CORPUS / "biased_walk.app", "--invariants", side)
    assert report["verdict"] == "invalid-invariants" and code == 15


def test_simulate_csv_and_seed(tmp_path):
    csv = tmp_path / "trials.csv"
    _, a = run_cli(tmp_path, "simulate", CORPUS / "biased_walk.app", "--trials", "30", "--seed", "4", "--csv", csv)
    _, b = run_cli(tmp_path, "simulate", CORPUS / "biased_walk.app", "--trials", "30", "--seed", "4")
    assert stable(a) == stable(b)
    assert len(csv.read_text().splitlines()) == 31


def test_emit_pcfg(tmp_path):
    dot = tmp_path / "g.dot"
    run_cli(tmp_path, "prove", CORPUS / "biased_walk.app", "--emit-pcfg", dot, "--no-sample-check")
    assert dot.read_text().startswith("digraph")


@pytest.mark.parametrize("n,lines", [(n, 3 * 2**n + 8) for n in range(1, 9)])
def test_generator_size(n, lines):
    assert generate_program(GeneratorSpec(n, seed=0, nondet=True)).count("\n") == lines


def test_generator_is_seeded(tmp_path):
    a = generate_program(GeneratorSpec(3, seed=1, nondet=True))
    assert a == generate_program(GeneratorSpec(3, seed=1, nondet=True))
    assert a != generate_program(GeneratorSpec(3, seed=2, nondet=True))
    with pytest.raises(ValueError):
        GeneratorSpec(0, seed=0, nondet=True)


def test_generated_program_proves(tmp_path):
    prog = tmp_path / "g3.app"
    assert main(["generate", "--n", "3", "-o", str(prog)]) == 0
    _, report = run_cli(tmp_path, "prove", prog)
    assert report["verdict"] == "proved-as-termination" and report["dimension"] <= 3


def test_threads_env(monkeypatch):
    monkeypatch.setenv("LEXTERM_THREADS", "3")
    assert threads() == 3
    monkeypatch.setenv("LEXTERM_THREADS", "junk")
    assert threads() == 1


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lexterm", "prove", str(CORPUS / "biased_walk.app")], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("proved-as-termination | dimension 1")
