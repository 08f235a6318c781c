"""Command line interface: prove, compose, bound, simulate, verify, generate.

Every command can write a JSON report (``--json``) that validates against
``report.schema.json`` shipped with the package.  Exit codes are distinct per
outcome class, see :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import random
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import __version__
from .bounds import NoEci, bound_value, synthesize_eci
from .compositional import NoNcsm, pointwise_ncsm, prove_compositional, verify_ncsm
from .frontend import ParseError, Program, parse_program
from .invariants import check_inductive, check_invariants_empirically, load_annotations
from .lexrsm import (
    CertificateError,
    LexRsmMap,
    NoLinLexRsm,
    SynthesisConfig,
    SynthesisStats,
    certificate_json,
    load_certificate,
    pointwise_check,
    program_digest,
    synthesize,
    verify_symbolically,
)
from .pcfg import build_pcfg, gen_transitions, normalize_guards, validate
from .rational import q_str, to_q
from .sim import SchedulerPolicy, SimulationError, estimate

REPORT_FORMAT = "lexterm-report/1"
SCHEMA_PATH = Path(__file__).with_name("report.schema.json")

EXIT_CODES = {
    "proved-as-termination": 0,
    "bound-certified": 0,
    "simulated": 0,
    "generated": 0,
    "no-linlexrsm": 10,
    "cannot-prove-compositional": 11,
    "no-eci": 12,
    "certificate-rejected": 13,
    "certificate-error": 14,
    "invalid-invariants": 15,
    "internal-error": 16,
    "input-error": 2,
}

THREADS_ENV = "LEXTERM_THREADS"
SAMPLE_BUDGET = 20000


class CliError(Exception):
    """Aborts a command with a verdict and a message."""

    def __init__(self, verdict: str, message: str):
        super().__init__(message)
        self.verdict = verdict
        self.message = message


# ---------------------------------------------------------------------------
# shared pipeline pieces


class Timer:
    PHASES = ("parse", "invariants", "constraint-gen", "lp", "verify", "sample-check", "simulate")

    def __init__(self):
        self.times = {}

    def add(self, phase: str, seconds: float) -> None:
        self.times[phase] = self.times.get(phase, 0.0) + max(0.0, seconds)

    def phase(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.add(name, time.perf_counter() - self.t0)
                return False

        return _Ctx()

    def as_dict(self) -> dict:
        return {k: round(v, 6) for k, v in self.times.items()}


def threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def load_program(path: str, timer: Timer):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError("input-error", f"cannot read {path}: {exc.strerror or exc}") from exc
    with timer.phase("parse"):
        try:
            ast = parse_program(text)
        except ParseError as exc:
            raise CliError("input-error", f"{path}:{exc}") from exc
        except ValueError as exc:
            raise CliError("input-error", f"{path}: {exc}") from exc
        g = normalize_guards(build_pcfg(ast))
        problems = validate(g)
        if problems:
            raise CliError("internal-error", "pCFG construction failed: " + "; ".join(problems))
    return ast, g


def load_invariants(ast: Program, g, sidecar_path: Optional[str], timer: Timer, seed: int, gate: bool = True):
    sidecar = None
    if sidecar_path:
        try:
            sidecar = Path(sidecar_path).read_text()
        except OSError as exc:
            raise CliError("input-error", f"cannot read {sidecar_path}: {exc.strerror or exc}") from exc
    with timer.phase("invariants"):
        try:
            inv = load_annotations(ast, g, sidecar)
        except ValueError as exc:
            raise CliError("input-error", str(exc)) from exc
    if gate:
        with timer.phase("verify"):
            problems = check_inductive(g, inv)
            if problems:
                raise CliError("invalid-invariants", "invariants are not inductive: " + "; ".join(problems[:5]))
            empirical = check_invariants_empirically(g, inv, trials=20, steps=500, seed=seed)
            if not empirical.ok:
                v = empirical.violations[0]
                raise CliError(
                    "invalid-invariants",
                    f"a simulated run leaves the invariant at l{v['location']} (trial {v['trial']}, step {v['step']})",
                )
    return inv


def parse_valuation(text: Optional[str], variables) -> Optional[dict]:
    """``x=5,y=7`` into a dict of rationals."""
    if not text:
        return None
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise CliError("input-error", f"expected name=value in {part!r}")
        name, value = (s.strip() for s in part.split("=", 1))
        if name not in variables:
            raise CliError("input-error", f"unknown variable {name!r}")
        try:
            out[name] = to_q(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise CliError("input-error", f"bad value for {name}: {value!r}") from exc
    return out


def sample_count(requested: Optional[int], transitions: int) -> int:
    """Points per transition for the pointwise oracle, within a total budget."""
    if requested is not None:
        return requested
    return max(3, min(50, SAMPLE_BUDGET // max(1, transitions)))


def base_report(mode: str, path: Optional[str], ast: Optional[Program]) -> dict:
    return {
        "format": REPORT_FORMAT,
        "tool_version": __version__,
        "mode": mode,
        "program": path,
        "program_digest": program_digest(ast) if ast is not None else None,
        "verdict": None,
        "solution": False,
        "dimension": None,
        "certificate": None,
        "invariant_provenance": None,
        "timings": {},
        "seeds": [],
    }


def _provenance(inv) -> dict:
    return {f"l{lid}": inv.provenance.get(lid, "default") for lid, _ in inv.items()}


def _map_rows(g, m: LexRsmMap) -> list:
    return [{f"l{lid}": comp[lid].format(g.variables) for lid in sorted(comp)} for comp in m.components]


def _stats_dict(stats: SynthesisStats) -> dict:
    return {"iterations": stats.iterations, "lp_rows": stats.lp_rows, "lp_columns": stats.lp_columns, "pivots": stats.pivots}


# ---------------------------------------------------------------------------
# prove / compose / bound


def cmd_prove(args) -> dict:
    timer = Timer()
    ast, g = load_program(args.file, timer)
    report = base_report(args.mode, args.file, ast)
    report["seeds"] = [args.seed]
    try:
        cfg = SynthesisConfig(epsilon=args.epsilon)
    except (ValueError, ZeroDivisionError) as exc:
        raise CliError("input-error", f"bad epsilon: {exc}") from exc
    if args.emit_pcfg:
        Path(args.emit_pcfg).write_text(g.to_dot() if args.emit_pcfg.endswith(".dot") else g.dump() + "\n")
    inv = load_invariants(ast, g, args.invariants, timer, args.seed)
    report["invariant_provenance"] = _provenance(inv)
    report["pcfg"] = {"locations": len(g.locations), "transitions": len(g.transitions), "variables": list(g.variables)}
    try:
        if args.compositional:
            _prove_compositional(args, g, inv, cfg, timer, report)
        else:
            _prove_monolithic(args, ast, g, inv, cfg, timer, report)
    finally:
        report["timings"] = timer.as_dict()
    return report


def _prove_monolithic(args, ast, g, inv, cfg, timer, report) -> None:
    stats = SynthesisStats()
    m = synthesize(g, inv, cfg, stats)
    timer.add("constraint-gen", stats.constraint_time)
    timer.add("lp", stats.lp_time)
    report["synthesis"] = _stats_dict(stats)
    if isinstance(m, NoLinLexRsm):
        report["verdict"] = "no-linlexrsm"
        report["reason"] = {"message": m.reason, "iteration": m.iteration, "unranked_transitions": m.unranked}
        return
    _gate(args, g, inv, m, timer, report)
    report["solution"] = True
    report["dimension"] = m.dimension
    report["map"] = _map_rows(g, m)
    report["certificate"] = certificate_json(ast, g, inv, m)
    report["verdict"] = "proved-as-termination"
    if args.bound:
        _bound(args, g, inv, m, timer, report)


def _gate(args, g, inv, m, timer, report) -> None:
    """Never report a certificate that our own checkers reject."""
    with timer.phase("verify"):
        sym = verify_symbolically(g, inv, m)
    report["symbolic_check"] = sym.as_dict()
    if not sym.ok:
        raise CliError("internal-error", "synthesized map failed symbolic verification")
    if args.no_sample_check:
        report["pointwise_check"] = None
        return
    with timer.phase("sample-check"):
        pw = pointwise_check(g, inv, m, sample_count(args.samples, len(gen_transitions(g))), args.seed)
    report["pointwise_check"] = pw.as_dict()
    if not pw.ok:
        raise CliError("internal-error", "synthesized map failed the pointwise oracle")


def _bound(args, g, inv, m, timer, report) -> None:
    if m.epsilon != 1:
        raise CliError("input-error", "runtime bounds need --epsilon 1")
    with timer.phase("lp"):
        cert = synthesize_eci(g, inv, m, verified=True)
    if isinstance(cert, NoEci):
        report["verdict"] = "no-eci"
        report["reason"] = {"message": cert.reason, "component": cert.component, "transition": cert.transition}
        return
    bound = cert.as_dict(g.variables)
    at = parse_valuation(args.at, g.variables)
    if at is not None:
        try:
            bound["at"] = {k: q_str(v) for k, v in at.items()}
            bound["value"] = q_str(bound_value(cert, at, g))
        except ValueError as exc:
            raise CliError("input-error", str(exc)) from exc
    report["bound"] = bound
    report["verdict"] = "bound-certified"


def _prove_compositional(args, g, inv, cfg, timer, report) -> None:
    stats = SynthesisStats()
    result = prove_compositional(g, inv, cfg=cfg, stats=stats)
    timer.add("constraint-gen", stats.constraint_time)
    timer.add("lp", stats.lp_time)
    report["synthesis"] = _stats_dict(stats)
    report["loops"] = result.ledger(g)
    if not result.proved:
        report["verdict"] = "cannot-prove-compositional"
        report["reason"] = {
            "message": result.fallback,
            "failures": [{"loop": f.loop_id, "head": f.head, "reason": f.reason} for f in result.failures],
        }
        return
    checks = []
    for cert in result.certificates:
        with timer.phase("verify"):
            sym = verify_ncsm(g, inv, cert)
        if not sym.ok:
            raise CliError("internal-error", f"NCSM for loop {cert.loop_id} failed symbolic verification")
        entry = {"loop": cert.loop_id, "symbolic_check": sym.as_dict(), "pointwise_check": None}
        if not args.no_sample_check:
            with timer.phase("sample-check"):
                n_gts = len(cert.slice_transitions) + len(cert.nested_transitions)
                pw = pointwise_ncsm(g, inv, cert, sample_count(args.samples, n_gts), args.seed)
            if not pw.ok:
                raise CliError("internal-error", f"NCSM for loop {cert.loop_id} failed the pointwise oracle")
            entry["pointwise_check"] = pw.as_dict()
        checks.append(entry)
    report["loop_checks"] = checks
    report["solution"] = True
    report["dimension"] = max((c.dimension for c in result.certificates), default=0)
    report["verdict"] = "proved-as-termination"


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> dict:
    timer = Timer()
    ast, g = load_program(args.file, timer)
    report = base_report("verify", args.file, ast)
    report["seeds"] = [args.seed]
    try:
        data = json.loads(Path(args.certificate).read_text())
    except OSError as exc:
        raise CliError("input-error", f"cannot read {args.certificate}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError("certificate-error", f"certificate is not JSON: {exc}") from exc
    try:
        m, inv = load_certificate(data, ast, g)
    except CertificateError as exc:
        raise CliError("certificate-error", str(exc)) from exc
    report["invariant_provenance"] = _provenance(inv)
    eps = m.epsilon if args.epsilon is None else to_q(args.epsilon)
    report["epsilon"] = q_str(eps)
    failures = []
    with timer.phase("verify"):
        for problem in check_inductive(g, inv):
            failures.append({"location": None, "transition": None, "component": None, "clause": "invariant not inductive", "detail": problem})
        try:
            sym = verify_symbolically(g, inv, m, epsilon=eps)
        except ValueError as exc:
            raise CliError("certificate-error", str(exc)) from exc
    report["symbolic_check"] = sym.as_dict()
    failures += [f.as_dict() for f in sym.failures]
    if not args.no_sample_check:
        with timer.phase("sample-check"):
            pw = pointwise_check(g, inv, m, sample_count(args.samples, len(gen_transitions(g))), args.seed, epsilon=eps)
        report["pointwise_check"] = pw.as_dict()
    report["failures"] = failures
    report["timings"] = timer.as_dict()
    if failures:
        report["verdict"] = "certificate-rejected"
        return report
    report["verdict"] = "proved-as-termination"
    report["solution"] = True
    report["dimension"] = m.dimension
    report["certificate"] = data
    return report


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> dict:
    timer = Timer()
    ast, g = load_program(args.file, timer)
    report = base_report("simulate", args.file, ast)
    report["seeds"] = [args.seed]
    x_init = parse_valuation(args.at, g.variables) or {}
    for v in g.variables:
        x_init.setdefault(v, to_q(0))
    if not g.init_poly.holds(x_init):
        raise CliError("input-error", "the initial valuation violates @init")
    policy = SchedulerPolicy(args.policy, seed=args.seed)
    with timer.phase("simulate"):
        try:
            est = estimate(g, x_init, policy, args.trials, args.cap, args.seed, keep_per_trial=bool(args.csv), workers=threads())
        except SimulationError as exc:
            raise CliError("input-error", str(exc)) from exc
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["trial", "seed", "terminated", "steps", "iterations"])
            writer.writeheader()
            writer.writerows(est.per_trial)
    report["simulation"] = dict(est.as_dict(), policy=args.policy, cap=args.cap, at={k: q_str(v) for k, v in x_init.items()})
    report["verdict"] = "simulated"
    report["timings"] = timer.as_dict()
    return report


# ---------------------------------------------------------------------------
# generate


@dataclass(frozen=True)
class GeneratorSpec:
    n: int
    seed: int = 0
    nondet: bool = True

    def __post_init__(self):
        if not 1 <= self.n <= 14:
            raise ValueError("n must lie between 1 and 14")


ARM_PROBABILITIES = ("5/8", "2/3", "3/4", "7/8")


def generate_program(spec: GeneratorSpec) -> str:
    """Loop over a counter with ``n`` 0/1 flags and one arm per flag valuation.

    Each iteration flips a flag (chosen nondeterministically, or by a coin
    when ``nondet`` is off) and then runs the one arm of the else-if cascade
    whose guard matches the flags.  Every arm decrements the counter with
    probability above one half and increments it otherwise, so the counter
    drifts down and a one-dimensional map ranks the whole loop.  The text has
    ``3 * 2**n + 8`` lines.
    """
    rng = random.Random(spec.seed)
    flags = [f"b{i}" for i in range(1, spec.n + 1)]
    init = " and ".join(["c >= 0"] + [f"{b} >= 0 and {b} <= 1" for b in flags])
    other = f"{flags[1]} := 1 - {flags[1]}" if spec.n > 1 else "skip"
    lines = [
        f"@init({init})",
        "while c >= 1 do",
        "  if * then" if spec.nondet else "  if prob(1/2) then",
        f"    {flags[0]} := 1 - {flags[0]}",
        "  else",
        f"    {other} fi;",
    ]
    arms = list(itertools.product((1, 0), repeat=spec.n))
    for k, bits in enumerate(arms):
        guard = " and ".join(f"{b} >= 1" if bit else f"{b} < 1" for b, bit in zip(flags, bits))
        if k == 0:
            head = f"  if {guard} then"
        elif k < len(arms) - 1:
            head = f"  else if {guard} then"
        else:
            head = "  else"
        p = rng.choice(ARM_PROBABILITIES)
        lines += [head, f"    if prob({p}) then c := c - 1", "    else c := c + 1 fi"]
    lines.append("  " + " ".join(["fi"] * (len(arms) - 1)))
    lines.append("od")
    return "\n".join(lines) + "\n"


def cmd_generate(args) -> dict:
    try:
        spec = GeneratorSpec(args.n, args.seed, not args.no_nondet)
    except ValueError as exc:
        raise CliError("input-error", str(exc)) from exc
    text = generate_program(spec)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    report = base_report("generate", args.output, None)
    report["seeds"] = [args.seed]
    report["verdict"] = "generated"
    report["generated"] = {"n": spec.n, "nondet": spec.nondet, "lines": text.count("\n"), "if_conditions": 2**spec.n}
    return report


# ---------------------------------------------------------------------------
# argument parsing and entry point


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--json", metavar="OUT", help="write the JSON report to OUT ('-' for stdout)")
    p.add_argument("--seed", type=int, default=0, help="seed for sampling and simulation (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lexterm", description="Termination proofs for affine probabilistic programs.")
    parser.add_argument("--version", action="version", version=f"lexterm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def prove_like(name: str, help_text: str, compositional=False, bound=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("file")
        p.add_argument("--compositional", action="store_true", default=compositional, help="loop-by-loop NCSM proof")
        p.add_argument("--bound", action="store_true", default=bound, help="also derive an expected-runtime bound")
        p.add_argument("--at", help="initial valuation for the bound, e.g. x=5,y=7")
        p.add_argument("--invariants", metavar="FILE", help=".inv sidecar overriding invariants per location")
        p.add_argument("--epsilon", default="1", help="ranking margin (default 1)")
        p.add_argument("--emit-pcfg", metavar="FILE", help="write the pCFG (Graphviz when FILE ends in .dot)")
        p.add_argument("--no-sample-check", action="store_true", help="skip the pointwise oracle")
        p.add_argument("--samples", type=int, help="sample points per transition for the oracle")
        _add_common(p)
        p.set_defaults(handler=cmd_prove, mode=name)

    prove_like("prove", "synthesize and check a lexicographic ranking map")
    prove_like("compose", "alias for prove --compositional", compositional=True)
    prove_like("bound", "alias for prove --bound", bound=True)

    p = sub.add_parser("simulate", help="Monte Carlo runs of a program")
    p.add_argument("file")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--cap", type=int, default=10**6, help="step cap per run")
    p.add_argument("--policy", choices=("uniform", "adversarial"), default="uniform")
    p.add_argument("--at", help="initial valuation, e.g. x=5,y=7")
    p.add_argument("--csv", metavar="FILE", help="per-trial rows as CSV")
    _add_common(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("verify", help="re-check a certificate against a program")
    p.add_argument("file")
    p.add_argument("certificate")
    p.add_argument("--epsilon", default=None, help="override the certificate's ranking margin")
    p.add_argument("--no-sample-check", action="store_true")
    p.add_argument("--samples", type=int)
    _add_common(p)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("generate", help="synthetic scaling benchmark with 2^n arms")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--no-nondet", action="store_true", help="use a coin instead of nondeterministic choice")
    p.add_argument("--output", "-o", help="write the program here instead of stdout")
    _add_common(p)
    p.set_defaults(handler=cmd_generate)
    return parser


def summary_line(report: dict) -> str:
    parts = [report["verdict"]]
    if report.get("dimension") is not None:
        parts.append(f"dimension {report['dimension']}")
    if "bound" in report:
        b = report["bound"]
        parts.append(f"bound {b.get('value', b['bound'])}")
    if "simulation" in report:
        s = report["simulation"]
        parts.append(f"terminated {s['terminated']}/{s['trials']}, mean steps {s['mean_steps']:.4g}")
    if report.get("reason"):
        parts.append(str(report["reason"].get("message")))
    if report.get("failures"):
        f = report["failures"][0]
        where = f"l{f['location']}" if f.get("location") is not None else "invariants"
        parts.append(f"{len(report['failures'])} failure(s), first at {where}: {f['clause']}")
    total = sum(report.get("timings", {}).values())
    if total:
        parts.append(f"{total:.3f}s")
    return " | ".join(parts)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = args.handler(args)
    except CliError as exc:
        print(f"lexterm: {exc.verdict}: {exc.message}", file=sys.stderr)
        report = base_report(getattr(args, "mode", args.command), getattr(args, "file", None), None)
        report["verdict"] = exc.verdict
        report["reason"] = {"message": exc.message}
    json_out = getattr(args, "json", None)
    if json_out:
        text = json.dumps(report, indent=2) + "\n"
        if json_out == "-":
            sys.stdout.write(text)
        else:
            Path(json_out).write_text(text)
    if args.command != "generate" or args.output:
        if json_out != "-":
            print(summary_line(report), file=sys.stderr if args.command == "generate" else sys.stdout)
    return EXIT_CODES[report["verdict"]]


if __name__ == "__main__":
    sys.exit(main())
