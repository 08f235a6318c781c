from pathlib import Path

import pytest

from lexterm.frontend import parse_program
from lexterm.invariants import load_annotations
from lexterm.pcfg import build_pcfg, normalize_guards

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"


def load(name: str):
    """Parse a corpus program; returns (ast, pcfg, invariants)."""
    ast = parse_program((CORPUS / f"{name}.app").read_text())
    g = normalize_guards(build_pcfg(ast))
    return ast, g, load_annotations(ast, g)


def build(source: str):
    ast = parse_program(source)
    g = normalize_guards(build_pcfg(ast))
    return ast, g, load_annotations(ast, g)


@pytest.fixture(scope="session")
def corpus_dir():
    return CORPUS


ACCEPTANCE = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
