"""Parser and pretty printer for affine probabilistic programs.

Surface syntax::

    @init(x >= 0 and y = 3)
    x := 10;
    @invariant(x >= 0)
    while x >= 1 do
      if prob(3/4) then x := x - 1 else x := x + 1 fi;
      y := y + sample(uniform(-3, 1));
      z := ndet([0, inf])
    od

Guards of ``if`` are ``*`` (nondeterministic), ``prob(p)`` or a predicate.
Predicates are built from affine comparisons with ``and``, ``or``, ``not``
and parentheses; they are stored in disjunctive normal form with negation
pushed onto the comparisons.  Statements may be separated by ``;`` or just
by whitespace.  ``#`` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .linear import FALSE, TRUE, LinConstraint, LinExpr, Plp, Polyhedron
from .rational import ONE, ZERO, Q, q_str, to_q


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class DistSpec:
    """A distribution known through its mean and an interval holding its support."""

    name: str
    mean: object
    lo: Optional[object]
    hi: Optional[object]
    params: tuple = ()

    def __post_init__(self):
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise ValueError(f"empty support [{self.lo}, {self.hi}]")
        if (self.lo is not None and self.mean < self.lo) or (self.hi is not None and self.mean > self.hi):
            raise ValueError("mean lies outside the support interval")

    def source(self) -> str:
        if self.name == "custom":
            return f"custom({q_str(self.mean)}, {_bound_str(self.lo, '-')}, {_bound_str(self.hi, '')})"
        return f"{self.name}({', '.join(q_str(p) for p in self.params)})"


def uniform(a, b) -> DistSpec:
    a, b = to_q(a), to_q(b)
    return DistSpec("uniform", (a + b) / 2, a, b, (a, b))


def bernoulli(p) -> DistSpec:
    p = to_q(p)
    if not 0 <= p <= 1:
        raise ValueError("bernoulli parameter outside [0,1]")
    return DistSpec("bernoulli", p, ZERO, ONE, (p,))


def custom(mean, lo, hi) -> DistSpec:
    return DistSpec("custom", to_q(mean), None if lo is None else to_q(lo), None if hi is None else to_q(hi))


@dataclass(frozen=True)
class Interval:
    """Domain of a nondeterministic assignment; ``None`` ends are unbounded."""

    lo: Optional[object]
    hi: Optional[object]

    def __post_init__(self):
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def source(self) -> str:
        return f"ndet([{_bound_str(self.lo, '-')}, {_bound_str(self.hi, '')}])"


def _bound_str(value, sign: str) -> str:
    return f"{sign}inf" if value is None else q_str(value)


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    """``var := expr`` plus an optional additive sample or nondeterministic term."""

    var: str
    expr: LinExpr
    noise: Union[None, DistSpec, Interval] = None


@dataclass(frozen=True)
class Seq:
    stmts: tuple


@dataclass(frozen=True)
class Star:
    pass


@dataclass(frozen=True)
class Prob:
    p: object


@dataclass(frozen=True)
class If:
    guard: Union[Star, Prob, Plp]
    then: object
    orelse: object


@dataclass(frozen=True)
class While:
    cond: Plp
    body: object
    invariant: Optional[Polyhedron] = None


@dataclass(frozen=True)
class Program:
    body: object
    init: Optional[Polyhedron]
    variables: tuple


Stmt = Union[Skip, Assign, Seq, If, While]


def seq(stmts) -> Stmt:
    flat = []
    for s in stmts:
        if isinstance(s, Seq):
            flat.extend(s.stmts)
        else:
            flat.append(s)
    if len(flat) == 1:
        return flat[0]
    return Seq(tuple(flat))


# ---------------------------------------------------------------------------
# Lexer

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+) |
    (?P<comment>\#[^\n]*) |
    (?P<num>\d+\.\d*|\.\d+|\d+) |
    (?P<ident>[A-Za-z_][A-Za-z_0-9']*) |
    (?P<op>:=|<=|>=|==|!=|≤|≥|¬|∧|∨|⋆|[-+*/()\[\],;<>=@⋅·])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "while", "do", "od", "if", "then", "else", "fi", "skip", "prob", "sample",
    "ndet", "and", "or", "not", "inf", "true", "false",
}

_ALIASES = {"≤": "<=", "≥": ">=", "¬": "not", "∧": "and", "∨": "or", "⋆": "*", "⋅": "*", "·": "*", "=": "=="}


@dataclass
class Token:
    kind: str  # num, ident, kw, op, eof
    text: str
    line: int
    col: int
    end: int = 0  # absolute offset just past the token


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        value = m.group()
        col = pos - line_start + 1
        if kind in ("ws", "comment"):
            for i, ch in enumerate(value):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        elif kind == "ident":
            low = value.lower()
            if low in KEYWORDS:
                tokens.append(Token("kw", low, line, col, m.end()))
            else:
                tokens.append(Token("ident", value, line, col, m.end()))
        elif kind == "op":
            value = _ALIASES.get(value, value)
            tokens.append(Token("kw" if value in KEYWORDS else "op", value, line, col, m.end()))
        else:
            tokens.append(Token(kind, value, line, col, m.end()))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# Predicates in DNF: list of conjunctions (lists of constraints)


def _dnf_and(a, b):
    return [x + y for x in a for y in b]


def _dnf_not(a):
    out = [[]]
    for conj in a:
        out = _dnf_and(out, [[c.negate()] for c in conj])
    return out


def _to_plp(dnf) -> Plp:
    polys = []
    for conj in dnf:
        p = Polyhedron(tuple(conj)).simplified()
        if p.is_trivially_false():
            continue
        if p.is_true():
            return Plp((TRUE,))
        if p not in polys:
            polys.append(p)
    return Plp(tuple(polys) if polys else (FALSE,))


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.order: dict[str, None] = {}
        self.assigned: set[str] = set()
        self.declared: set[str] = set()
        self.refs: dict[str, Token] = {}

    # helpers

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        if tok.kind == "eof":
            message = f"{message} at end of input"
        return ParseError(message, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("kw", "op") and self.tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r} but found {found!r}")
        tok = self.tok
        self.i += 1
        return tok

    def note_var(self, name: str, tok: Token) -> None:
        self.order.setdefault(name, None)
        self.refs.setdefault(name, tok)

    # program

    def program(self) -> Program:
        init = None
        while self.at("@") and self.peek().text == "init":
            tok = self.tok
            self.i += 2
            self.expect("(")
            pred = self.predicate()
            self.expect(")")
            self.accept(";")
            poly = self._single(pred, tok, "@init")
            init = poly if init is None else init.conjoin(poly)
            self.declared |= set(poly.variables())
        body = self.statements(("eof",))
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")
        for name, tok in self.refs.items():
            if name not in self.assigned and name not in self.declared:
                raise ParseError(f"variable {name!r} is never assigned or constrained by @init", tok.line, tok.col)
        return Program(body, init, tuple(self.order))

    def _single(self, pred: Plp, tok: Token, what: str) -> Polyhedron:
        if len(pred.disjuncts) != 1:
            raise ParseError(f"{what} must be a conjunction of linear constraints", tok.line, tok.col)
        return pred.disjuncts[0]

    def statements(self, stops) -> Stmt:
        stmts = [self.statement()]
        while True:
            had_semi = self.accept(";")
            if self.tok.kind == "eof" or (self.tok.kind == "kw" and self.tok.text in stops):
                break
            if not had_semi and not self._starts_statement():
                raise self.error(f"unexpected {self.tok.text!r}")
            stmts.append(self.statement())
        return seq(stmts)

    def _starts_statement(self) -> bool:
        t = self.tok
        return t.kind == "ident" or (t.kind == "kw" and t.text in ("skip", "if", "while")) or self.at("@")

    def statement(self) -> Stmt:
        tok = self.tok
        invariant = None
        if self.at("@"):
            name = self.peek()
            if name.text != "invariant":
                raise self.error(f"unknown annotation @{name.text}", name)
            self.i += 2
            self.expect("(")
            pred = self.predicate()
            self.expect(")")
            invariant = self._single(pred, tok, "@invariant")
            if not self.at("while"):
                raise self.error("@invariant must be followed by a while loop")
        if self.accept("skip"):
            return Skip()
        if self.at("while"):
            self.i += 1
            cond = self.predicate()
            self.expect("do")
            body = self.statements(("od",))
            self.expect("od")
            return While(cond, body, invariant)
        if self.at("if"):
            self.i += 1
            guard = self.guard()
            self.expect("then")
            then = self.statements(("else", "fi"))
            orelse: Stmt = Skip()
            if self.accept("else"):
                orelse = self.statements(("fi",))
            self.expect("fi")
            return If(guard, then, orelse)
        if tok.kind == "ident":
            self.i += 1
            self.expect(":=")
            self.note_var(tok.text, tok)
            self.assigned.add(tok.text)
            expr, noise = self.sum_expr(allow_noise=True)
            return Assign(tok.text, expr, noise)
        raise self.error(f"expected a statement but found {tok.text or 'end of input'!r}")

    def guard(self):
        if self.at("*") and self.peek().text == "then":
            self.i += 1
            return Star()
        if self.at("prob"):
            tok = self.tok
            self.i += 1
            self.expect("(")
            expr, _ = self.sum_expr()
            self.expect(")")
            if not expr.is_constant():
                raise ParseError("prob() takes a constant", tok.line, tok.col)
            p = expr.const
            if not 0 <= p <= 1:
                raise ParseError(f"probability {q_str(p)} outside [0,1]", tok.line, tok.col)
            return Prob(p)
        return self.predicate()

    # predicates

    def predicate(self) -> Plp:
        return _to_plp(self.disjunction())

    def disjunction(self):
        out = self.conjunction()
        while self.accept("or"):
            out = out + self.conjunction()
        return out

    def conjunction(self):
        out = self.literal()
        while self.accept("and"):
            out = _dnf_and(out, self.literal())
        return out

    def literal(self):
        if self.accept("not"):
            return _dnf_not(self.literal())
        if self.accept("true"):
            return [[]]
        if self.accept("false"):
            return []
        if self.at("("):
            # either a parenthesised predicate or an expression starting with "("
            save = self.i
            self.i += 1
            try:
                inner = self.disjunction()
                self.expect(")")
                if not self._at_relop():
                    return inner
            except ParseError:
                pass
            self.i = save
        return self.comparison()

    def _at_relop(self) -> bool:
        return self.tok.kind == "op" and self.tok.text in ("<=", ">=", "<", ">", "==")

    def comparison(self):
        lhs, _ = self.sum_expr()
        if not self._at_relop():
            raise self.error("expected a comparison operator")
        conj = []
        while self._at_relop():
            op = self.tok.text
            self.i += 1
            rhs, _ = self.sum_expr()
            if op == "<=":
                conj.append(LinConstraint.le(lhs, rhs))
            elif op == ">=":
                conj.append(LinConstraint.ge(lhs, rhs))
            elif op == "<":
                conj.append(LinConstraint.le(lhs, rhs, strict=True))
            elif op == ">":
                conj.append(LinConstraint.ge(lhs, rhs, strict=True))
            else:
                conj.append(LinConstraint.le(lhs, rhs))
                conj.append(LinConstraint.ge(lhs, rhs))
            lhs = rhs
        return [conj]

    # expressions

    def sum_expr(self, allow_noise: bool = False):
        noise = None
        expr = LinExpr()
        sign = ONE
        if self.accept("-"):
            sign = -ONE
        elif self.accept("+"):
            pass
        while True:
            if self.at("sample") or self.at("ndet"):
                tok = self.tok
                if not allow_noise:
                    raise self.error("sample/ndet may only appear on the right of an assignment")
                if noise is not None:
                    raise self.error("at most one sample/ndet term per assignment")
                if sign != ONE:
                    raise self.error("a sample/ndet term must be added, not subtracted")
                noise = self.noise_term()
            else:
                expr = expr.add_scaled(self.term(), sign)
            if self.accept("+"):
                sign = ONE
            elif self.accept("-"):
                sign = -ONE
            else:
                break
        return expr, noise

    def term(self) -> LinExpr:
        left = self.factor()
        while True:
            tok = self.tok
            if self.accept("*"):
                right = self.factor()
                try:
                    left = left * right
                except ValueError:
                    raise ParseError("non-affine product", tok.line, tok.col) from None
            elif self.accept("/"):
                right = self.factor()
                if not right.is_constant():
                    raise ParseError("non-affine division", tok.line, tok.col)
                if right.const == 0:
                    raise ParseError("division by zero", tok.line, tok.col)
                left = left / right.const
            elif self._implicit_product():
                # 2x or 2(x - 1), written without a space
                right = self.factor()
                left = right * left.const
            else:
                return left

    def _implicit_product(self) -> bool:
        prev = self.tokens[self.i - 1]
        nxt = self.tok
        if prev.kind != "num" or not (nxt.kind == "ident" or self.at("(")):
            return False
        return nxt.line == prev.line and nxt.end - len(nxt.text) == prev.end

    def factor(self) -> LinExpr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return LinExpr.constant(to_q(tok.text))
        if tok.kind == "ident":
            self.i += 1
            self.note_var(tok.text, tok)
            return LinExpr.var(tok.text)
        if self.accept("-"):
            return -self.factor()
        if self.accept("("):
            expr, _ = self.sum_expr()
            self.expect(")")
            return expr
        raise self.error(f"expected an expression but found {tok.text or 'end of input'!r}")

    def number(self, allow_inf: bool = False):
        sign = ONE
        if self.accept("-"):
            sign = -ONE
        elif self.accept("+"):
            pass
        if allow_inf and self.accept("inf"):
            return ("inf", sign)
        expr = self.term()
        if not expr.is_constant():
            raise self.error("expected a constant")
        return sign * expr.const

    def noise_term(self):
        tok = self.tok
        self.i += 1
        self.expect("(")
        if tok.text == "ndet":
            self.expect("[")
            lo = self._end(self.number(allow_inf=True), lower=True)
            self.expect(",")
            hi = self._end(self.number(allow_inf=True), lower=False)
            self.expect("]")
            self.expect(")")
            try:
                return Interval(lo, hi)
            except ValueError as exc:
                raise ParseError(str(exc), tok.line, tok.col) from None
        name_tok = self.tok
        if name_tok.kind not in ("ident",):
            raise self.error("expected a distribution name")
        name = name_tok.text.lower()
        self.i += 1
        close = ")"
        if self.accept("["):
            close = "]"
        else:
            self.expect("(")
        args = [self.number(allow_inf=name == "custom")]
        while self.accept(","):
            args.append(self.number(allow_inf=name == "custom"))
        self.expect(close)
        self.expect(")")
        try:
            if name == "uniform" and len(args) == 2 and not any(isinstance(a, tuple) for a in args):
                return uniform(*args)
            if name == "bernoulli" and len(args) == 1 and not isinstance(args[0], tuple):
                return bernoulli(args[0])
            if name == "custom" and len(args) == 3 and not isinstance(args[0], tuple):
                return custom(args[0], self._end(args[1], True), self._end(args[2], False))
        except ValueError as exc:
            raise ParseError(str(exc), name_tok.line, name_tok.col) from None
        if name not in ("uniform", "bernoulli", "custom"):
            raise ParseError(f"unknown distribution {name_tok.text!r}", name_tok.line, name_tok.col)
        raise ParseError(f"wrong arguments for {name}", name_tok.line, name_tok.col)

    def _end(self, value, lower: bool):
        if isinstance(value, tuple):
            _, sign = value
            if lower and sign > 0 or (not lower and sign < 0):
                raise self.error("infinite end on the wrong side of an interval")
            return None
        return value


def parse_program(source_text: str) -> Program:
    """Parse program text; raises :class:`ParseError` with line and column."""
    return _Parser(source_text).program()


def parse_predicate(text: str) -> Plp:
    p = _Parser(text)
    out = p.predicate()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r}")
    return out


def parse_expression(text: str) -> LinExpr:
    """An affine expression such as ``6c + 2`` (no sample/ndet terms)."""
    p = _Parser(text)
    expr, _ = p.sum_expr()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r}")
    return expr


def parse_assertion(text: str) -> Polyhedron:
    """A conjunction of linear constraints, as used by invariants."""
    pred = parse_predicate(text)
    if len(pred.disjuncts) != 1:
        raise ParseError("expected a conjunction of linear constraints", 1, 1)
    return pred.disjuncts[0]


# ---------------------------------------------------------------------------
# Pretty printer


def _expr_src(expr: LinExpr, order) -> str:
    return expr.format(order)


def _rhs_src(stmt: Assign, order) -> str:
    if stmt.noise is None:
        return _expr_src(stmt.expr, order)
    noise = stmt.noise.source() if isinstance(stmt.noise, Interval) else f"sample({stmt.noise.source()})"
    if stmt.expr.coeffs or stmt.expr.const:
        return f"{_expr_src(stmt.expr, order)} + {noise}"
    return noise


def _plp_src(pred: Plp, order) -> str:
    parts = []
    for p in pred.disjuncts:
        parts.append(p.format(order))
    return " or ".join(parts)


def _lines(stmt, order, indent: int) -> list[str]:
    pad = "  " * indent
    if isinstance(stmt, Skip):
        return [pad + "skip"]
    if isinstance(stmt, Assign):
        return [f"{pad}{stmt.var} := {_rhs_src(stmt, order)}"]
    if isinstance(stmt, Seq):
        out: list[str] = []
        for k, s in enumerate(stmt.stmts):
            block = _lines(s, order, indent)
            if k < len(stmt.stmts) - 1:
                block[-1] += ";"
            out.extend(block)
        return out
    if isinstance(stmt, If):
        g = stmt.guard
        head = "*" if isinstance(g, Star) else f"prob({q_str(g.p)})" if isinstance(g, Prob) else _plp_src(g, order)
        return (
            [f"{pad}if {head} then"]
            + _lines(stmt.then, order, indent + 1)
            + [pad + "else"]
            + _lines(stmt.orelse, order, indent + 1)
            + [pad + "fi"]
        )
    if isinstance(stmt, While):
        out = []
        if stmt.invariant is not None:
            out.append(f"{pad}@invariant({stmt.invariant.format(order)})")
        out.append(f"{pad}while {_plp_src(stmt.cond, order)} do")
        out.extend(_lines(stmt.body, order, indent + 1))
        out.append(pad + "od")
        return out
    raise TypeError(f"not a statement: {stmt!r}")


def pretty_print(ast: Program | Stmt) -> str:
    """Source text that parses back to an identical AST."""
    if isinstance(ast, Program):
        order = ast.variables
        head = [f"@init({ast.init.format(order)})"] if ast.init is not None else []
        return "\n".join(head + _lines(ast.body, order, 0)) + "\n"
    return "\n".join(_lines(ast, None, 0)) + "\n"


def walk(stmt):
    """Pre-order traversal of statements."""
    yield stmt
    if isinstance(stmt, Seq):
        for s in stmt.stmts:
            yield from walk(s)
    elif isinstance(stmt, If):
        yield from walk(stmt.then)
        yield from walk(stmt.orelse)
    elif isinstance(stmt, While):
        yield from walk(stmt.body)
