"""Probabilistic control-flow graphs.

Locations come in four kinds:

* ``NB`` nondeterministic branching (``if *``),
* ``PB`` probabilistic branching (``if prob(p)``),
* ``D`` deterministic (loop heads, predicate ``if`` heads, the terminal),
* ``A`` assignment (one outgoing transition carrying an update).

Every statement owns an entry location and hands control to a continuation
location, so sequencing identifies the exit of one statement with the entry
of the next.  Loop heads double as the exit of their body.  The terminal
location carries a self-loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .frontend import Assign, DistSpec, If, Interval, Program, Prob, Seq, Skip, Star, While
from .linear import FALSE, TRUE, LinConstraint, LinExpr, Plp, Polyhedron, negate_assertion
from .lp import polyhedron_nonempty_exact
from .rational import ONE, q_str

NB, PB, D, A = "NB", "PB", "D", "A"


@dataclass(frozen=True)
class Update:
    """``var := expr + noise`` where noise is a distribution, an interval or absent."""

    var: str
    expr: LinExpr
    noise: Union[None, DistSpec, Interval] = None

    def format(self, order=None) -> str:
        rhs = self.expr.format(order)
        if self.noise is None:
            return f"{self.var} := {rhs}"
        noise = self.noise.source() if isinstance(self.noise, Interval) else f"sample({self.noise.source()})"
        if self.expr.coeffs or self.expr.const:
            return f"{self.var} := {rhs} + {noise}"
        return f"{self.var} := {noise}"


@dataclass(frozen=True)
class Location:
    lid: int
    kind: str
    note: str = ""


@dataclass(frozen=True)
class Transition:
    tid: int
    src: int
    dst: int
    guard: Union[Plp, Polyhedron] = TRUE
    update: Optional[Update] = None
    prob: Optional[object] = None
    role: str = ""  # enter / exit / then / else / step / term
    loop: Optional[int] = None


@dataclass(frozen=True)
class LoopInfo:
    loop_id: int
    head: int
    locations: frozenset  # head plus every location created for the body
    exit_target: int
    depth: int
    parent: Optional[int]
    children: tuple
    cond: Plp
    annotation: Optional[Polyhedron]
    body_entry: int


@dataclass
class Pcfg:
    variables: tuple
    locations: list
    transitions: list
    init: int
    init_poly: Polyhedron
    term: int
    loops: list = field(default_factory=list)
    normalized: bool = False

    def outgoing(self, lid: int) -> list:
        return self._out()[lid]

    def _out(self):
        cache = getattr(self, "_out_cache", None)
        if cache is None or len(cache[1]) != len(self.transitions):
            table = {loc.lid: [] for loc in self.locations}
            for t in self.transitions:
                table[t.src].append(t)
            cache = (table, list(self.transitions))
            object.__setattr__(self, "_out_cache", cache)
        return cache[0]

    def kind(self, lid: int) -> str:
        return self.locations[lid].kind

    def loop_by_head(self, head: int) -> LoopInfo:
        for info in self.loops:
            if info.head == head:
                return info
        raise KeyError(f"location {head} is not a loop head")

    def label(self, lid: int) -> str:
        return f"l{lid}"

    def dump(self) -> str:
        """One line per location and one per transition."""
        order = self.variables
        lines = [f"variables: {', '.join(order)}", f"init: l{self.init} with {self.init_poly.format(order)}"]
        for loc in self.locations:
            tags = []
            if loc.lid == self.init:
                tags.append("init")
            if loc.lid == self.term:
                tags.append("term")
            extra = f" ({', '.join(tags)})" if tags else ""
            note = f"  # {loc.note}" if loc.note else ""
            lines.append(f"loc l{loc.lid} {loc.kind}{extra}{note}")
        for t in self.transitions:
            lines.append("  " + _transition_text(t, order))
        return "\n".join(lines)

    def to_dot(self) -> str:
        shapes = {NB: "diamond", PB: "circle", D: "box", A: "box"}
        out = ["digraph pcfg {", "  rankdir=TB;"]
        for loc in self.locations:
            style = ', peripheries=2' if loc.lid == self.term else ""
            out.append(f'  l{loc.lid} [shape={shapes[loc.kind]}, label="l{loc.lid} {loc.kind}"{style}];')
        for t in self.transitions:
            out.append(f'  l{t.src} -> l{t.dst} [label="{_edge_label(t, self.variables)}"];')
        out.append("}")
        return "\n".join(out)


def _guard_text(guard, order) -> str:
    if isinstance(guard, Plp):
        return guard.format(order)
    return guard.format(order)


def _edge_label(t: Transition, order) -> str:
    if t.prob is not None:
        return q_str(t.prob)
    if t.update is not None:
        return t.update.format(order)
    g = _guard_text(t.guard, order)
    return "" if g == "true" else g


def _transition_text(t: Transition, order) -> str:
    parts = [f"l{t.src} -> l{t.dst}"]
    if t.prob is not None:
        parts.append(f"p={q_str(t.prob)}")
    if t.update is not None:
        parts.append("{" + t.update.format(order) + "}")
    g = _guard_text(t.guard, order)
    if g != "true":
        parts.append(f"[{g}]")
    if t.role:
        parts.append(f"<{t.role}>")
    return " ".join(parts)


class _Builder:
    def __init__(self, variables):
        self.variables = variables
        self.kinds: dict[int, str] = {}
        self.notes: dict[int, str] = {}
        self.trans: list[dict] = []
        self.next_id = 0
        self.loop_stack: list[list] = []
        self.loops: list[dict] = []

    def new_loc(self, kind: str, note: str = "") -> int:
        lid = self.next_id
        self.next_id += 1
        self.kinds[lid] = kind
        self.notes[lid] = note
        for frame in self.loop_stack:
            frame.append(lid)
        return lid

    def add(self, src, dst, **kw) -> None:
        self.trans.append(dict(src=src, dst=dst, **kw))

    def translate(self, stmt, out: int) -> int:
        if isinstance(stmt, Seq):
            entry = out
            for s in reversed(stmt.stmts):
                entry = self.translate(s, entry)
            return entry
        if isinstance(stmt, Skip):
            loc = self.new_loc(A, "skip")
            self.add(loc, out, role="step")
            return loc
        if isinstance(stmt, Assign):
            upd = Update(stmt.var, stmt.expr, stmt.noise)
            loc = self.new_loc(A, upd.format(self.variables))
            self.add(loc, out, update=upd, role="step")
            return loc
        if isinstance(stmt, If):
            g = stmt.guard
            if isinstance(g, Star):
                loc = self.new_loc(NB, "if *")
            elif isinstance(g, Prob):
                loc = self.new_loc(PB, f"if prob({q_str(g.p)})")
            else:
                loc = self.new_loc(D, f"if {g.format(self.variables)}")
            then_entry = self.translate(stmt.then, out)
            else_entry = self.translate(stmt.orelse, out)
            if isinstance(g, Prob):
                self.add(loc, then_entry, prob=g.p, role="then")
                self.add(loc, else_entry, prob=ONE - g.p, role="else")
            elif isinstance(g, Star):
                self.add(loc, then_entry, role="then")
                self.add(loc, else_entry, role="else")
            else:
                self.add(loc, then_entry, guard=g, role="then")
                self.add(loc, else_entry, guard=_plp_not(g), role="else")
            return loc
        if isinstance(stmt, While):
            head = self.new_loc(D, f"while {stmt.cond.format(self.variables)}")
            record = dict(head=head, cond=stmt.cond, annotation=stmt.invariant, exit_target=out, children=[])
            if self.loop_stack:
                record["parent_head"] = self.loop_stack[-1][0]
            frame = [head]
            self.loop_stack.append(frame)
            body_entry = self.translate(stmt.body, head)
            self.loop_stack.pop()
            record["locations"] = frame
            record["body_entry"] = body_entry
            self.loops.append(record)
            self.add(head, body_entry, guard=stmt.cond, role="enter", loop=head)
            self.add(head, out, guard=_plp_not(stmt.cond), role="exit", loop=head)
            return head
        raise TypeError(f"cannot translate {stmt!r}")


def _plp_not(p: Plp) -> Plp:
    """DNF of the complement of a DNF predicate (strict literals kept)."""
    out = [TRUE]
    for poly in p.disjuncts:
        neg = negate_assertion(poly).disjuncts
        out = [a.conjoin(b) for a in out for b in neg]
        out = [q for q in out if not q.is_trivially_false()]
    return Plp(tuple(out) if out else (FALSE,))


def build_pcfg(ast: Program) -> Pcfg:
    """Translate a program into a pCFG; guards may still be disjunctions."""
    b = _Builder(ast.variables)
    term = b.new_loc(D, "end")
    b.add(term, term, role="term")
    init = b.translate(ast.body, term)

    # renumber locations in depth-first program order, terminal last
    order: list[int] = []
    seen = {term}
    succ: dict[int, list[int]] = {}
    for t in b.trans:
        succ.setdefault(t["src"], []).append(t["dst"])
    stack = [init]
    while stack:
        lid = stack.pop()
        if lid in seen:
            continue
        seen.add(lid)
        order.append(lid)
        for nxt in reversed(succ.get(lid, [])):
            if nxt not in seen:
                stack.append(nxt)
    for lid in sorted(b.kinds):
        if lid not in seen:
            order.append(lid)
            seen.add(lid)
    order.append(term)
    new = {old: i for i, old in enumerate(order)}

    locations = [Location(new[old], b.kinds[old], b.notes[old]) for old in order]
    transitions = []
    for t in sorted(b.trans, key=lambda t: (new[t["src"]], b.trans.index(t))):
        guard = t.get("guard", TRUE)
        if isinstance(guard, Plp) and len(guard.disjuncts) == 1 and guard.disjuncts[0].is_true():
            guard = TRUE
        transitions.append(
            Transition(
                len(transitions),
                new[t["src"]],
                new[t["dst"]],
                guard,
                t.get("update"),
                t.get("prob"),
                t.get("role", ""),
                new[t["loop"]] if t.get("loop") is not None else None,
            )
        )

    heads = {new[r["head"]]: r for r in b.loops}
    loop_ids = {h: i for i, h in enumerate(sorted(heads))}
    infos = []
    for h in sorted(heads):
        r = heads[h]
        parent_head = new[r["parent_head"]] if "parent_head" in r else None
        children = tuple(sorted(new[o["head"]] for o in b.loops if o.get("parent_head") == r["head"]))
        depth = 0
        p = r
        while "parent_head" in p:
            depth += 1
            p = next(o for o in b.loops if o["head"] == p["parent_head"])
        infos.append(
            LoopInfo(
                loop_ids[h],
                h,
                frozenset(new[l] for l in r["locations"]),
                new[r["exit_target"]],
                depth,
                loop_ids[parent_head] if parent_head is not None else None,
                tuple(loop_ids[c] for c in children),
                r["cond"],
                r["annotation"],
                new[r["body_entry"]],
            )
        )
    init_poly = ast.init if ast.init is not None else TRUE
    return Pcfg(tuple(ast.variables), locations, transitions, new[init], init_poly, new[term], infos)


def _disjoint_complement(p: Polyhedron) -> list[Polyhedron]:
    """Pairwise disjoint polyhedra whose union is the complement of ``p``."""
    out = []
    prefix = TRUE
    for c in p.constraints:
        out.append(prefix.conjoin(c.negate()))
        prefix = prefix.conjoin(c)
    return out


def disjoint_split(guard: Plp) -> list[Polyhedron]:
    """Split a disjunction into pairwise disjoint, satisfiable polyhedra.

    The i-th disjunct is conjoined with the complement of every earlier one,
    in source order.  Empty pieces (strict semantics) are dropped.
    """
    pieces: list[Polyhedron] = []
    earlier: list[Polyhedron] = []
    for disj in guard.disjuncts:
        family = [disj]
        for prev in earlier:
            family = [f.conjoin(c) for f in family for c in _disjoint_complement(prev)]
            family = [f for f in family if not f.is_trivially_false() and polyhedron_nonempty_exact(f)]
        family = [f for f in family if not f.is_trivially_false() and polyhedron_nonempty_exact(f)]
        pieces.extend(family)
        earlier.append(disj)
    return pieces


def normalize_guards(g: Pcfg) -> Pcfg:
    """Give every transition a single polyhedron guard by splitting disjunctions."""
    if g.normalized:
        return g
    out: list[Transition] = []
    for t in g.transitions:
        guard = t.guard
        if isinstance(guard, Polyhedron):
            out.append(replace(t, tid=len(out)))
            continue
        if len(guard.disjuncts) == 1:
            piece = guard.disjuncts[0]
            out.append(replace(t, tid=len(out), guard=piece))
            continue
        pieces = disjoint_split(guard)
        if not pieces:
            pieces = [FALSE]
        for piece in pieces:
            out.append(replace(t, tid=len(out), guard=piece))
    return Pcfg(g.variables, g.locations, out, g.init, g.init_poly, g.term, g.loops, normalized=True)


@dataclass(frozen=True)
class GenTransition:
    """A single transition out of a non-probabilistic location, or a whole PB bundle."""

    gid: int
    source: int
    transitions: tuple

    @property
    def is_bundle(self) -> bool:
        return len(self.transitions) > 1 or self.transitions[0].prob is not None

    @property
    def guard(self) -> Polyhedron:
        if self.is_bundle:
            return TRUE
        return self.transitions[0].guard

    def describe(self, order=None) -> str:
        if self.is_bundle:
            return f"l{self.source} (prob. branching)"
        return _transition_text(self.transitions[0], order)


def gen_transitions(g: Pcfg) -> list[GenTransition]:
    """Generalized transitions, excluding the terminal self-loop."""
    if not g.normalized:
        raise ValueError("normalize guards before enumerating generalized transitions")
    out: list[GenTransition] = []
    for loc in g.locations:
        if loc.lid == g.term:
            continue
        outs = g.outgoing(loc.lid)
        if loc.kind == PB:
            out.append(GenTransition(len(out), loc.lid, tuple(outs)))
        else:
            for t in outs:
                out.append(GenTransition(len(out), loc.lid, (t,)))
    return out


def validate(g: Pcfg) -> list[str]:
    """Structural problems with the pCFG; an empty list means well formed."""
    problems = []
    for loc in g.locations:
        outs = g.outgoing(loc.lid)
        if not outs:
            problems.append(f"l{loc.lid} has no outgoing transition")
        if loc.kind == A and len(outs) != 1:
            problems.append(f"assignment location l{loc.lid} has {len(outs)} outgoing transitions")
        if loc.kind == PB:
            total = sum((t.prob for t in outs), 0)
            if total != 1 or any(t.prob is None or t.prob < 0 for t in outs):
                problems.append(f"probabilities at l{loc.lid} do not form a distribution")
        for t in outs:
            if loc.kind != A and t.update is not None:
                problems.append(f"update on a transition leaving non-assignment l{loc.lid}")
            if loc.kind != D and not (isinstance(t.guard, Polyhedron) and t.guard.is_true()):
                problems.append(f"guard on a transition leaving non-deterministic l{loc.lid}")
            if t.update is not None and t.update.var not in g.variables:
                problems.append(f"update of undeclared variable {t.update.var}")
    term_out = g.outgoing(g.term)
    if len(term_out) != 1 or term_out[0].dst != g.term:
        problems.append("terminal location must have exactly its self-loop")
    if g.init_poly is not None and not set(g.init_poly.variables()) <= set(g.variables):
        problems.append("initial condition mentions unknown variables")
    return problems


def enabled(g: Pcfg, lid: int, valuation) -> list[Transition]:
    """Transitions of a deterministic location whose (exact) guard holds."""
    return [t for t in g.outgoing(lid) if t.guard.holds(valuation)]
