"""Affine expressions, linear constraints, polyhedra and the Farkas encoder.

Keys of a :class:`LinExpr` are program variable names (``str``) when the
expression talks about program states, and integer ids when it talks about
LP unknowns (template coefficients, Farkas multipliers, epsilons).  Every
coefficient is an exact ``mpq``.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

from .rational import ONE, ZERO, Q, q_str, to_q


class LinExpr:
    """Immutable affine expression ``const + sum(coeffs[k] * k)``."""

    __slots__ = ("coeffs", "const", "_hash")

    def __init__(self, coeffs: Mapping[Hashable, object] | None = None, const=0):
        clean = {}
        if coeffs:
            for key, value in coeffs.items():
                value = value if type(value) is type(ZERO) else to_q(value)
                if value:
                    clean[key] = value
        self.coeffs = clean
        self.const = const if type(const) is type(ZERO) else to_q(const)
        self._hash = None

    @classmethod
    def _raw(cls, coeffs: dict, const) -> "LinExpr":
        # trusted constructor: coeffs already nonzero mpq values
        obj = cls.__new__(cls)
        obj.coeffs = coeffs
        obj.const = const
        obj._hash = None
        return obj

    @classmethod
    def var(cls, key: Hashable, coeff=1) -> "LinExpr":
        return cls({key: coeff})

    @classmethod
    def constant(cls, value) -> "LinExpr":
        return cls(None, value)

    # arithmetic

    def __add__(self, other) -> "LinExpr":
        if not isinstance(other, LinExpr):
            return LinExpr._raw(dict(self.coeffs), self.const + to_q(other))
        return self.add_scaled(other, ONE)

    __radd__ = __add__

    def __neg__(self) -> "LinExpr":
        return LinExpr._raw({k: -v for k, v in self.coeffs.items()}, -self.const)

    def __sub__(self, other) -> "LinExpr":
        if not isinstance(other, LinExpr):
            return LinExpr._raw(dict(self.coeffs), self.const - to_q(other))
        return self.add_scaled(other, -ONE)

    def __rsub__(self, other) -> "LinExpr":
        return (-self) + other

    def __mul__(self, scalar) -> "LinExpr":
        if isinstance(scalar, LinExpr):
            if scalar.is_constant():
                scalar = scalar.const
            elif self.is_constant():
                return scalar * self.const
            else:
                raise ValueError("product of two non-constant expressions is not affine")
        k = to_q(scalar)
        if not k:
            return LinExpr._raw({}, ZERO)
        return LinExpr._raw({key: v * k for key, v in self.coeffs.items()}, self.const * k)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "LinExpr":
        if isinstance(scalar, LinExpr):
            if not scalar.is_constant():
                raise ValueError("division by a non-constant expression is not affine")
            scalar = scalar.const
        k = to_q(scalar)
        if not k:
            raise ZeroDivisionError("division of an affine expression by zero")
        return self * (ONE / k)

    def add_scaled(self, other: "LinExpr", k) -> "LinExpr":
        """Return ``self + k * other`` in one pass."""
        if not k:
            return self
        coeffs = dict(self.coeffs)
        for key, value in other.coeffs.items():
            new = coeffs.get(key, ZERO) + value * k
            if new:
                coeffs[key] = new
            else:
                coeffs.pop(key, None)
        return LinExpr._raw(coeffs, self.const + other.const * k)

    def substitute(self, key: Hashable, replacement: "LinExpr") -> "LinExpr":
        coeff = self.coeffs.get(key)
        if coeff is None:
            return self
        coeffs = dict(self.coeffs)
        del coeffs[key]
        return LinExpr._raw(coeffs, self.const).add_scaled(replacement, coeff)

    def rename(self, mapping: Mapping[Hashable, Hashable]) -> "LinExpr":
        coeffs: dict = {}
        for key, value in self.coeffs.items():
            target = mapping.get(key, key)
            new = coeffs.get(target, ZERO) + value
            if new:
                coeffs[target] = new
            else:
                coeffs.pop(target, None)
        return LinExpr._raw(coeffs, self.const)

    # queries

    def coeff(self, key: Hashable):
        return self.coeffs.get(key, ZERO)

    def variables(self) -> frozenset:
        return frozenset(self.coeffs)

    def is_constant(self) -> bool:
        return not self.coeffs

    def linear_part(self) -> "LinExpr":
        return LinExpr._raw(dict(self.coeffs), ZERO)

    def evaluate(self, valuation: Mapping[Hashable, object]):
        total = self.const
        for key, value in self.coeffs.items():
            try:
                point = valuation[key]
            except KeyError:
                raise KeyError(f"valuation has no value for {key!r}") from None
            total += value * point
        return total

    # identity

    def _key(self):
        return (frozenset(self.coeffs.items()), self.const)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinExpr):
            return NotImplemented
        return self.const == other.const and self.coeffs == other.coeffs

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self._key())
        return self._hash

    def format(self, order: Iterable[Hashable] | None = None) -> str:
        keys = list(order) if order is not None else sorted(self.coeffs, key=str)
        keys = [k for k in keys if k in self.coeffs] + [
            k for k in sorted(self.coeffs, key=str) if k not in set(keys)
        ]
        parts: list[str] = []
        for key in keys:
            c = self.coeffs[key]
            mag = abs(c)
            sign = "-" if c < 0 else "+"
            body = str(key) if mag == 1 else f"{q_str(mag)}*{key}"
            parts.append((sign, body))
        if self.const or not parts:
            c = self.const
            parts.append(("-" if c < 0 else "+", q_str(abs(c))))
        text = ""
        for i, (sign, body) in enumerate(parts):
            if i == 0:
                text = body if sign == "+" else f"-{body}"
            else:
                text += f" {sign} {body}"
        return text

    def __repr__(self) -> str:
        return f"LinExpr({self.format()})"

    __str__ = format


def evaluate(expr: LinExpr, valuation: Mapping[Hashable, object]):
    """Exact value of ``expr`` at ``valuation``; missing variables raise KeyError."""
    return expr.evaluate(valuation)


@dataclass(frozen=True)
class LinConstraint:
    """``expr <= 0`` or, when ``strict``, ``expr < 0``."""

    expr: LinExpr
    strict: bool = False

    @staticmethod
    def le(lhs, rhs, strict: bool = False) -> "LinConstraint":
        return LinConstraint(_as_expr(lhs) - _as_expr(rhs), strict)

    @staticmethod
    def ge(lhs, rhs, strict: bool = False) -> "LinConstraint":
        return LinConstraint(_as_expr(rhs) - _as_expr(lhs), strict)

    def negate(self) -> "LinConstraint":
        return LinConstraint(-self.expr, not self.strict)

    def weakened(self) -> "LinConstraint":
        return LinConstraint(self.expr, False) if self.strict else self

    def holds(self, valuation: Mapping[Hashable, object]) -> bool:
        value = self.expr.evaluate(valuation)
        return value < 0 if self.strict else value <= 0

    def variables(self) -> frozenset:
        return self.expr.variables()

    def trivial(self) -> bool | None:
        """True/False when the constraint has no variables, else None."""
        if not self.expr.is_constant():
            return None
        c = self.expr.const
        return c < 0 if self.strict else c <= 0

    def format(self, order=None) -> str:
        """Human form with variables on the left and the constant on the right."""
        expr = self.expr
        if expr.is_constant():
            op = "<" if self.strict else "<="
            return f"{q_str(expr.const)} {op} 0"
        keys = list(order) if order is not None else sorted(expr.coeffs, key=str)
        keys = [k for k in keys if k in expr.coeffs] + [
            k for k in sorted(expr.coeffs, key=str) if k not in set(keys)
        ]
        lead = expr.coeffs[keys[0]]
        if lead < 0:
            lhs = -expr.linear_part()
            op = ">" if self.strict else ">="
            rhs = expr.const
        else:
            lhs = expr.linear_part()
            op = "<" if self.strict else "<="
            rhs = -expr.const
        return f"{lhs.format(keys)} {op} {q_str(rhs)}"

    def __str__(self) -> str:
        return self.format()


def _as_expr(value) -> LinExpr:
    if isinstance(value, LinExpr):
        return value
    if isinstance(value, str):
        return LinExpr.var(value)
    return LinExpr.constant(value)


@dataclass(frozen=True)
class Polyhedron:
    """Finite conjunction of linear constraints; the empty conjunction is true."""

    constraints: tuple[LinConstraint, ...] = ()

    @staticmethod
    def of(*constraints: LinConstraint) -> "Polyhedron":
        return Polyhedron(tuple(constraints))

    def conjoin(self, other: "Polyhedron | LinConstraint") -> "Polyhedron":
        if isinstance(other, LinConstraint):
            return Polyhedron(self.constraints + (other,)).simplified()
        return Polyhedron(self.constraints + other.constraints).simplified()

    def holds(self, valuation) -> bool:
        return all(c.holds(valuation) for c in self.constraints)

    def weakened(self) -> "Polyhedron":
        if not any(c.strict for c in self.constraints):
            return self
        return Polyhedron(tuple(c.weakened() for c in self.constraints)).simplified()

    def has_strict(self) -> bool:
        return any(c.strict for c in self.constraints)

    def variables(self) -> frozenset:
        out: set = set()
        for c in self.constraints:
            out |= c.variables()
        return frozenset(out)

    def is_trivially_false(self) -> bool:
        return any(c.trivial() is False for c in self.constraints)

    def is_true(self) -> bool:
        return not self.constraints

    def simplified(self) -> "Polyhedron":
        """Drop constant-true constraints and exact duplicates, keep order."""
        seen = set()
        kept = []
        for c in self.constraints:
            verdict = c.trivial()
            if verdict is True:
                continue
            if verdict is False:
                return FALSE
            if c in seen:
                continue
            seen.add(c)
            kept.append(c)
        return Polyhedron(tuple(kept))

    def substitute(self, key, replacement: LinExpr) -> "Polyhedron":
        return Polyhedron(
            tuple(LinConstraint(c.expr.substitute(key, replacement), c.strict) for c in self.constraints)
        ).simplified()

    def format(self, order=None) -> str:
        if not self.constraints:
            return "true"
        return " and ".join(c.format(order) for c in self.constraints)

    def __str__(self) -> str:
        return self.format()


TRUE = Polyhedron(())
FALSE = Polyhedron((LinConstraint(LinExpr.constant(1)),))


@dataclass(frozen=True)
class Plp:
    """Finite disjunction of polyhedra."""

    disjuncts: tuple[Polyhedron, ...]

    def __post_init__(self):
        if not self.disjuncts:
            raise ValueError("a disjunction needs at least one polyhedron")

    def holds(self, valuation) -> bool:
        return any(p.holds(valuation) for p in self.disjuncts)

    def format(self, order=None) -> str:
        if len(self.disjuncts) == 1:
            return self.disjuncts[0].format(order)
        return " or ".join(
            "(" + p.format(order) + ")" if len(p.constraints) > 1 else p.format(order)
            for p in self.disjuncts
        )

    def __str__(self) -> str:
        return self.format()


def negate_assertion(p: Polyhedron) -> Plp:
    """Complement of a conjunction as a disjunction of strict single literals.

    Callers weaken the strict literals when they build constraint systems.
    The complement of ``true`` is the unsatisfiable polyhedron ``1 <= 0``.
    """
    if not p.constraints:
        return Plp((FALSE,))
    return Plp(tuple(Polyhedron((c.negate(),)) for c in p.constraints))


# ---------------------------------------------------------------------------
# Symbolic templates and the Farkas encoding


class UnknownPool:
    """Issues globally unique integer ids for LP unknowns."""

    def __init__(self):
        self._counter = itertools.count()
        self._lock = threading.Lock()
        self.names: dict[int, str] = {}

    def fresh(self, name: str) -> int:
        with self._lock:
            uid = next(self._counter)
            self.names[uid] = name
        return uid

    def name(self, uid: int) -> str:
        return self.names.get(uid, f"u{uid}")

    def __len__(self) -> int:
        return len(self.names)


class SymAffine:
    """Affine expression over program variables with symbolic coefficients.

    ``coeffs[v]`` and ``const`` are :class:`LinExpr` over LP unknown ids.
    """

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: Mapping[str, LinExpr] | None = None, const: LinExpr | None = None):
        self.coeffs = {k: v for k, v in (coeffs or {}).items() if v.coeffs or v.const}
        self.const = const if const is not None else LinExpr()

    @staticmethod
    def concrete(expr: LinExpr) -> "SymAffine":
        return SymAffine({k: LinExpr.constant(v) for k, v in expr.coeffs.items()}, LinExpr.constant(expr.const))

    def __add__(self, other: "SymAffine") -> "SymAffine":
        coeffs = dict(self.coeffs)
        for k, v in other.coeffs.items():
            coeffs[k] = coeffs[k] + v if k in coeffs else v
        return SymAffine(coeffs, self.const + other.const)

    def scale(self, k) -> "SymAffine":
        k = to_q(k)
        return SymAffine({v: e * k for v, e in self.coeffs.items()}, self.const * k)

    def __sub__(self, other: "SymAffine") -> "SymAffine":
        return self + other.scale(-1)

    def add_unknown_const(self, uid: int, coeff=1) -> "SymAffine":
        return SymAffine(dict(self.coeffs), self.const + LinExpr.var(uid, coeff))

    def substitute(self, var: str, replacement: LinExpr) -> "SymAffine":
        """Replace program variable ``var`` by a concrete affine expression."""
        sym = self.coeffs.get(var)
        if sym is None:
            return self
        coeffs = {k: v for k, v in self.coeffs.items() if k != var}
        for key, c in replacement.coeffs.items():
            coeffs[key] = coeffs[key].add_scaled(sym, c) if key in coeffs else sym * c
        return SymAffine(coeffs, self.const.add_scaled(sym, replacement.const))

    def instantiate(self, solution: Mapping[int, object]) -> LinExpr:
        def val(e: LinExpr):
            return e.const + sum((c * to_q(solution.get(k, 0)) for k, c in e.coeffs.items()), ZERO)

        return LinExpr({k: val(v) for k, v in self.coeffs.items()}, val(self.const))

    def unknowns(self) -> set:
        out = set(self.const.coeffs)
        for e in self.coeffs.values():
            out |= set(e.coeffs)
        return out

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}: {v}" for k, v in sorted(self.coeffs.items()))
        return f"SymAffine({{{inner}}}, {self.const})"


@dataclass
class Template:
    """Per-location affine template ``sum a_v * v + b`` with fresh unknown ids."""

    variables: tuple[str, ...]
    coeff_ids: dict = field(default_factory=dict)   # location -> {var: id}
    const_ids: dict = field(default_factory=dict)   # location -> id

    @staticmethod
    def build(locations: Iterable, variables: Iterable[str], pool: UnknownPool, tag: str = "eta") -> "Template":
        variables = tuple(variables)
        tpl = Template(variables)
        for loc in locations:
            tpl.coeff_ids[loc] = {v: pool.fresh(f"{tag}[{loc}].{v}") for v in variables}
            tpl.const_ids[loc] = pool.fresh(f"{tag}[{loc}].1")
        return tpl

    def at(self, loc) -> SymAffine:
        return SymAffine(
            {v: LinExpr.var(uid) for v, uid in self.coeff_ids[loc].items()},
            LinExpr.var(self.const_ids[loc]),
        )

    def unknowns(self) -> list[int]:
        out = []
        for loc in self.coeff_ids:
            out.extend(self.coeff_ids[loc].values())
            out.append(self.const_ids[loc])
        return out

    def instantiate(self, solution: Mapping[int, object]) -> dict:
        return {loc: self.at(loc).instantiate(solution) for loc in self.coeff_ids}


@dataclass
class FarkasRow:
    """``expr == 0`` or ``expr <= 0`` over unknown and multiplier ids."""

    expr: LinExpr
    relation: str  # "==" or "<="


@dataclass
class FarkasSystem:
    rows: list[FarkasRow]
    multipliers: list[int]
    tag: str = ""

    def dump(self, names: UnknownPool | None = None) -> str:
        label = (lambda k: names.name(k)) if names else str
        lines = [f"\\ block {self.tag}"]
        for row in self.rows:
            expr = row.expr.rename({k: label(k) for k in row.expr.coeffs})
            lines.append(f"  {expr.linear_part().format() if expr.coeffs else '0'} {row.relation} {q_str(-expr.const)}")
        if self.multipliers:
            lines.append("  " + ", ".join(label(m) for m in self.multipliers) + " >= 0")
        return "\n".join(lines)


def block_key(premise: Polyhedron, target: SymAffine) -> tuple:
    """Two entailment queries with equal keys yield the same Farkas system."""
    cons = relevant_constraints([c.expr for c in premise.weakened().constraints], set(target.coeffs))
    return frozenset(cons), frozenset(target.coeffs.items()), target.const


def entails(
    premise: Polyhedron,
    target: SymAffine,
    pool: UnknownPool,
    tag: str = "",
    eliminate: bool = True,
) -> FarkasSystem:
    """Constraints on the unknowns equivalent to ``target <= 0`` on all of ``premise``.

    Uses the affine Farkas lemma: on a nonempty polyhedron ``{e_k(x) <= 0}``,
    ``t(x) <= 0`` holds everywhere iff ``t = sum lambda_k e_k - mu`` for some
    ``lambda, mu >= 0``.  Strict premise constraints are weakened first.  The
    caller must have checked that the premise is satisfiable.

    With ``eliminate`` the multipliers of single-variable bounds are solved
    for in closed form, which gives an equivalent but much smaller system.
    """
    constraints = relevant_constraints([c.expr for c in premise.weakened().constraints], set(target.coeffs))
    rows: list[FarkasRow] = []
    multipliers: list[int] = []
    const_row = target.const  # D(u) - sum lambda_k b_k, built up below

    general: list[LinExpr] = []
    bounds: dict[str, list[LinExpr]] = {}
    if eliminate:
        for e in constraints:
            if len(e.coeffs) == 1:
                (v,) = e.coeffs
                bounds.setdefault(v, []).append(e)
            else:
                general.append(e)
        tangled = set()
        for e in general:
            tangled |= set(e.coeffs)
        for v in list(bounds):
            if v in tangled:
                general.extend(bounds.pop(v))
    else:
        general = list(constraints)

    # equality rows for variables touched by general constraints
    lam_ids = []
    for i, e in enumerate(general):
        lam = pool.fresh(f"lam[{tag}#{i}]")
        lam_ids.append(lam)
        multipliers.append(lam)
        const_row = const_row.add_scaled(LinExpr.var(lam), -e.const)
    general_vars = set()
    for e in general:
        general_vars |= set(e.coeffs)
    for v in sorted(general_vars | (set(target.coeffs) - set(bounds)), key=str):
        row = target.coeffs.get(v, LinExpr())
        for lam, e in zip(lam_ids, general):
            a = e.coeffs.get(v)
            if a:
                row = row.add_scaled(LinExpr.var(lam), -a)
        if row.coeffs or row.const:
            rows.append(FarkasRow(row, "=="))

    # closed-form multipliers for pure bounds on one variable
    for v, items in bounds.items():
        lower = upper = None  # tightest bounds as values
        for e in items:
            a = e.coeffs[v]
            value = -e.const / a
            if a < 0:  # a*x + b <= 0 with a < 0 means x >= value
                lower = value if lower is None or value > lower else lower
            else:
                upper = value if upper is None or value < upper else upper
        cv = target.coeffs.get(v, LinExpr())
        if not cv.coeffs and not cv.const:
            continue
        if lower is not None and upper is not None and lower == upper:
            const_row = const_row.add_scaled(cv, lower)
        elif lower is not None and upper is not None:
            # C_v = lam_hi - lam_lo; substitute lam_hi = C_v + lam_lo
            lam = pool.fresh(f"lam[{tag}:{v}]")
            multipliers.append(lam)
            rows.append(FarkasRow(-(cv + LinExpr.var(lam)), "<="))
            const_row = const_row.add_scaled(LinExpr.var(lam), upper - lower).add_scaled(cv, upper)
        elif lower is not None:
            rows.append(FarkasRow(cv, "<="))
            const_row = const_row.add_scaled(cv, lower)
        elif upper is not None:
            rows.append(FarkasRow(-cv, "<="))
            const_row = const_row.add_scaled(cv, upper)
    rows.append(FarkasRow(const_row, "<="))
    rows = [r for r in rows if r.expr.coeffs or not _row_trivially_true(r)]
    return FarkasSystem(rows, multipliers, tag)


def relevant_constraints(constraints: list, wanted: set) -> list:
    """Constraints connected to ``wanted`` through shared variables.

    On a nonempty polyhedron the other constraints form an independent
    factor, so dropping them changes no entailment about ``wanted``.
    """
    reach = set(wanted)
    keep = [False] * len(constraints)
    changed = True
    while changed:
        changed = False
        for i, e in enumerate(constraints):
            if not keep[i] and (not e.coeffs or reach & set(e.coeffs)):
                keep[i] = True
                reach |= set(e.coeffs)
                changed = True
    return [e for e, k in zip(constraints, keep) if k]


def _row_trivially_true(row: FarkasRow) -> bool:
    c = row.expr.const
    return c == 0 if row.relation == "==" else c <= 0
