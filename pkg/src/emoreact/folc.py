"""Rule DSL parsing and product T-norm compilation.

A rule ``A => B1 | B2`` is turned into the polynomial ``1 - a + a*B`` where
``B`` folds the consequents with the product T-conorm ``x + y - x*y``.
The penalty attached to a rule is ``-log(max(poly, eps))``.

DSL, one rule per line::

    ANTECEDENT => CONSEQ ( "|" CONSEQ )* ( "@w=" FLOAT )?

``#`` starts a comment and ``!p`` stands for ``1 - p``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Mapping, Sequence

from .labels import EMOTION, EMOTIONS, REACTION, REACTIONS

DEFAULT_CLAMP_EPSILON = 1e-7
DEFAULT_STRONG_WEIGHT = 1.0
DEFAULT_WEAK_WEIGHT = 0.2
# 1-based ids of the rules the default set trusts less
WEAK_RULE_IDS = (4, 7, 8)


class RuleError(ValueError):
    """Raised for any problem in a rule source; carries the location."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class SameTaskRuleWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Predicate:
    task: str
    class_index: int
    name: str

    def __str__(self) -> str:
        return self.name


def _build_predicates() -> dict[str, Predicate]:
    table = {}
    for i, name in enumerate(REACTIONS):
        table[name] = Predicate(REACTION, i, name)
    for i, name in enumerate(EMOTIONS):
        table[name] = Predicate(EMOTION, i, name)
    return table


PREDICATES = _build_predicates()


def predicate(name: str) -> Predicate:
    try:
        return PREDICATES[name]
    except KeyError:
        raise RuleError(f"unknown predicate {name!r}") from None


@dataclass(frozen=True)
class Literal:
    predicate: Predicate
    negated: bool = False

    @property
    def name(self) -> str:
        return self.predicate.name

    @property
    def task(self) -> str:
        return self.predicate.task

    def __str__(self) -> str:
        return ("!" if self.negated else "") + self.predicate.name


@dataclass(frozen=True)
class FOLRule:
    antecedent: Literal
    consequents: tuple[Literal, ...]
    weight: float = 1.0
    id: int = 0

    def __post_init__(self):
        if not self.consequents:
            raise RuleError("empty consequent list")
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise RuleError(f"rule weight must be a finite nonnegative number, got {self.weight}")

    @property
    def same_task(self) -> bool:
        """True when some consequent lives on the antecedent's side."""
        return any(c.task == self.antecedent.task for c in self.consequents)

    def with_weight(self, weight: float) -> "FOLRule":
        return FOLRule(self.antecedent, self.consequents, weight, self.id)

    @property
    def formula(self) -> str:
        return f"{self.antecedent} => " + " | ".join(str(c) for c in self.consequents)

    def __str__(self) -> str:
        return f"{self.formula} @w={self.weight:g}"


# ---------------------------------------------------------------------------
# Polynomial expression trees


class Poly:
    """Base class of the polynomial expression tree."""

    precedence = 3

    def evaluate(self, lookup: Callable[[Predicate], object]):
        """Evaluate with ``lookup`` supplying variable values.

        Only ``+``, ``-`` and ``*`` are applied, so values may be floats,
        numpy arrays or tape nodes alike.
        """
        raise NotImplementedError

    def variables(self) -> list[Predicate]:
        seen: dict[Predicate, None] = {}
        self._collect(seen)
        return list(seen)

    def _collect(self, seen):
        pass


@dataclass(frozen=True)
class Const(Poly):
    value: float

    def evaluate(self, lookup):
        return self.value

    def __str__(self):
        v = self.value
        return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class Var(Poly):
    predicate: Predicate

    def evaluate(self, lookup):
        return lookup(self.predicate)

    def _collect(self, seen):
        seen.setdefault(self.predicate, None)

    def __str__(self):
        return self.predicate.name


@dataclass(frozen=True)
class _Binary(Poly):
    left: Poly
    right: Poly
    symbol = "?"

    def _collect(self, seen):
        self.left._collect(seen)
        self.right._collect(seen)

    def _wrap(self, child: Poly, strict: bool) -> str:
        text = str(child)
        if child.precedence < self.precedence or (strict and child.precedence == self.precedence):
            return f"({text})"
        return text

    def __str__(self):
        return f"{self._wrap(self.left, False)}{self.symbol}{self._wrap(self.right, self.strict_right)}"


@dataclass(frozen=True)
class Add(_Binary):
    precedence = 1
    symbol = " + "
    strict_right = False

    def evaluate(self, lookup):
        return self.left.evaluate(lookup) + self.right.evaluate(lookup)


@dataclass(frozen=True)
class Sub(_Binary):
    precedence = 1
    symbol = " - "
    strict_right = True

    def evaluate(self, lookup):
        return self.left.evaluate(lookup) - self.right.evaluate(lookup)


@dataclass(frozen=True)
class Mul(_Binary):
    precedence = 2
    symbol = "*"
    strict_right = True

    def evaluate(self, lookup):
        return self.left.evaluate(lookup) * self.right.evaluate(lookup)


def literal_poly(lit: Literal) -> Poly:
    var = Var(lit.predicate)
    return Sub(Const(1.0), var) if lit.negated else var


def t_conorm(a: Poly, b: Poly) -> Poly:
    return Sub(Add(a, b), Mul(a, b))


def implication(a: Poly, b: Poly) -> Poly:
    return Add(Sub(Const(1.0), a), Mul(a, b))


# ---------------------------------------------------------------------------
# Compiled constraints


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class CompiledConstraint:
    rule: FOLRule
    poly: Poly
    clamp_epsilon: float = DEFAULT_CLAMP_EPSILON
    variables: tuple[Predicate, ...] = field(default=(), compare=False)

    @property
    def weight(self) -> float:
        return self.rule.weight


def compile_rule(rule: FOLRule, clamp_epsilon: float = DEFAULT_CLAMP_EPSILON) -> CompiledConstraint:
    body = literal_poly(rule.consequents[0])
    for lit in rule.consequents[1:]:
        body = t_conorm(body, literal_poly(lit))
    poly = implication(literal_poly(rule.antecedent), body)
    return CompiledConstraint(rule, poly, clamp_epsilon, tuple(poly.variables()))


def compile_rules(rules: Iterable[FOLRule], clamp_epsilon: float = DEFAULT_CLAMP_EPSILON) -> list[CompiledConstraint]:
    return [compile_rule(r, clamp_epsilon) for r in rules]


def _lookup_from(assignment: Mapping) -> Callable[[Predicate], float]:
    def lookup(pred: Predicate) -> float:
        if pred in assignment:
            value = assignment[pred]
        elif pred.name in assignment:
            value = assignment[pred.name]
        else:
            raise AssignmentError(f"no value for predicate {pred.name!r}")
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise AssignmentError(f"value {value} for {pred.name!r} is outside [0, 1]")
        return value

    return lookup


def eval_poly(c: CompiledConstraint, assignment: Mapping) -> float:
    """Truth degree of the rule under ``assignment`` (keys: Predicate or name)."""
    return float(c.poly.evaluate(_lookup_from(assignment)))


def eval_penalty(c: CompiledConstraint, assignment: Mapping) -> float:
    return -math.log(max(eval_poly(c, assignment), c.clamp_epsilon))


def print_poly(c: CompiledConstraint | Poly) -> str:
    poly = c.poly if isinstance(c, CompiledConstraint) else c
    return str(poly)


# ---------------------------------------------------------------------------
# Parser


_PUNCT = {"=>", "|", "!", "@w="}


def _tokenize(line: str, lineno: int) -> list[tuple[str, str, int]]:
    tokens = []
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch == "#":
            break
        if ch.isspace():
            i += 1
            continue
        col = i + 1
        if line.startswith("=>", i):
            tokens.append(("=>", "=>", col))
            i += 2
        elif line.startswith("@w=", i):
            tokens.append(("@w=", "@w=", col))
            i += 3
        elif ch in "|!":
            tokens.append((ch, ch, col))
            i += 1
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (line[j].isalnum() or line[j] == "_"):
                j += 1
            tokens.append(("NAME", line[i:j], col))
            i = j
        elif ch.isdigit() or ch in "+-.":
            j = i + 1
            while j < n and (line[j].isalnum() or line[j] in ".+-"):
                j += 1
            tokens.append(("NUMBER", line[i:j], col))
            i = j
        else:
            raise RuleError(f"unexpected character {ch!r}", lineno, col)
    return tokens


class _LineParser:
    def __init__(self, tokens, lineno: int, line_len: int):
        self.tokens = tokens
        self.pos = 0
        self.lineno = lineno
        self.end_col = line_len + 1

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else ("EOL", "", self.end_col)

    def expect(self, kind: str, what: str):
        tok = self.peek()
        if tok[0] != kind:
            found = "end of line" if tok[0] == "EOL" else repr(tok[1])
            raise RuleError(f"expected {what}, found {found}", self.lineno, tok[2])
        self.pos += 1
        return tok

    def literal(self) -> Literal:
        negated = False
        while self.peek()[0] == "!":
            self.pos += 1
            negated = not negated
        _, name, col = self.expect("NAME", "predicate name")
        if name not in PREDICATES:
            raise RuleError(f"unknown predicate {name!r}", self.lineno, col)
        return Literal(PREDICATES[name], negated)

    def rule(self, rule_id: int) -> FOLRule:
        antecedent = self.literal()
        self.expect("=>", "'=>'")
        if self.peek()[0] in ("EOL", "@w="):
            raise RuleError("empty consequent list", self.lineno, self.peek()[2])
        consequents = [self.literal()]
        while self.peek()[0] == "|":
            self.pos += 1
            consequents.append(self.literal())
        weight = 1.0
        if self.peek()[0] == "@w=":
            self.pos += 1
            _, text, col = self.expect("NUMBER", "weight")
            try:
                weight = float(text)
            except ValueError:
                raise RuleError(f"bad weight {text!r}", self.lineno, col) from None
            if not (math.isfinite(weight) and weight >= 0):
                raise RuleError(f"weight must be finite and >= 0, got {text}", self.lineno, col)
        tok = self.peek()
        if tok[0] != "EOL":
            raise RuleError(f"unexpected {tok[1]!r}", self.lineno, tok[2])
        return FOLRule(antecedent, tuple(consequents), weight, rule_id)


def parse_rules(source: str) -> list[FOLRule]:
    """Parse DSL text; ids run from 1 in file order over non-comment lines."""
    rules = []
    for lineno, line in enumerate(source.splitlines(), start=1):
        tokens = _tokenize(line, lineno)
        if not tokens:
            continue
        rule = _LineParser(tokens, lineno, len(line)).rule(len(rules) + 1)
        if rule.same_task:
            warnings.warn(f"line {lineno}: rule '{rule}' links predicates of the same task", SameTaskRuleWarning, stacklevel=2)
        rules.append(rule)
    return rules


def load_rules(path) -> list[FOLRule]:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read())


def default_rules_text() -> str:
    return resources.files("emoreact").joinpath("rules/default.fol").read_text(encoding="utf-8")


def default_ruleset(w_strong: float = DEFAULT_STRONG_WEIGHT, w_weak: float = DEFAULT_WEAK_WEIGHT) -> list[FOLRule]:
    """The eleven reaction/emotion rules, rules 4, 7 and 8 weighted ``w_weak``."""
    rules = parse_rules(default_rules_text())
    return [r.with_weight(w_weak if r.id in WEAK_RULE_IDS else w_strong) for r in rules]


def reweight(rules: Sequence[FOLRule], weights: Sequence[float]) -> list[FOLRule]:
    if len(weights) != len(rules):
        raise ValueError(f"expected {len(rules)} weights, got {len(weights)}")
    return [r.with_weight(float(w)) for r, w in zip(rules, weights)]


# ---------------------------------------------------------------------------
# Grid oracle


GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def reference_truth(rule: FOLRule, values: Mapping[str, float]) -> float:
    """Product-semantics truth computed straight from the rule's literals."""
    def lit(l: Literal) -> float:
        v = float(values[l.name])
        return 1.0 - v if l.negated else v

    body = 0.0
    for c in rule.consequents:
        b = lit(c)
        body = body + b - body * b
    a = lit(rule.antecedent)
    return 1.0 - a + a * body


def classical_truth(rule: FOLRule, values: Mapping[str, float]) -> float:
    def lit(l: Literal) -> bool:
        v = bool(values[l.name])
        return not v if l.negated else v

    return float(not lit(rule.antecedent) or any(lit(c) for c in rule.consequents))


@dataclass
class GridReport:
    rule_id: int
    points: int
    max_error: float
    boolean_mismatches: int

    def ok(self, tol: float = 1e-12) -> bool:
        return self.max_error <= tol and self.boolean_mismatches == 0


def check_grid(c: CompiledConstraint, grid: Sequence[float] = GRID) -> GridReport:
    """Compare the compiled polynomial with the reference evaluators on a grid."""
    names = [p.name for p in c.variables]
    worst, points = 0.0, 0
    for combo in itertools.product(grid, repeat=len(names)):
        values = dict(zip(names, combo))
        worst = max(worst, abs(eval_poly(c, values) - reference_truth(c.rule, values)))
        points += 1
    mismatches = 0
    for combo in itertools.product((0.0, 1.0), repeat=len(names)):
        values = dict(zip(names, combo))
        mismatches += eval_poly(c, values) != classical_truth(c.rule, values)
    return GridReport(c.rule.id, points, worst, mismatches)
