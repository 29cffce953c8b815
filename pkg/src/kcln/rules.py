"""Preference-rule language: parsing, formatting and vocabulary checks.

One rule per line::

    attr(E1,"AI"), attr(E2,"domain"), cites(E2,E1) => label(E2,"irrelevant")+

Body literals are joined by ``,``; head preferences by ``;``. A preference
ends in ``+`` (preferred label) or ``-`` (non-preferred label). Upper-case
terms are variables, lower-case identifiers are entity constants. A body
literal whose second argument is a string is an attribute test on a feature
of the first argument; otherwise it is a relation between two entity terms.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, Union


class RuleSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Variable:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Constant:
    name: str

    def __str__(self):
        return self.name


Term = Union[Variable, Constant]


@dataclass(frozen=True)
class AttributeAtom:
    entity: Term
    feature: str
    predicate: str = "attr"

    def __str__(self):
        return f'{self.predicate}({self.entity},"{self.feature}")'


@dataclass(frozen=True)
class RelationAtom:
    relation: str
    src: Term
    dst: Term

    def __str__(self):
        return f"{self.relation}({self.src},{self.dst})"


BodyLiteral = Union[AttributeAtom, RelationAtom]


class Polarity(enum.Enum):
    PREFERRED = "+"
    NON_PREFERRED = "-"


@dataclass(frozen=True)
class LabelPreference:
    entity: Term
    label: str
    polarity: Polarity = Polarity.PREFERRED

    def __str__(self):
        return f'label({self.entity},"{self.label}"){self.polarity.value}'


@dataclass(frozen=True)
class PreferenceRule:
    body: tuple[BodyLiteral, ...]
    head: tuple[LabelPreference, ...]
    source_line: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        object.__setattr__(self, "head", tuple(self.head))
        if not self.body:
            raise ValueError("rule body must not be empty")
        if not self.head:
            raise ValueError("rule head must not be empty")
        for lit in self.body:
            name = lit.feature if isinstance(lit, AttributeAtom) else lit.relation
            if not name:
                raise ValueError("empty feature/relation name in body")
        unbound = [v.name for v in self.head_variables() if v not in set(self.variables())]
        if unbound:
            raise ValueError(f"head variable {unbound[0]} does not occur in the body")

    def variables(self) -> list[Variable]:
        """Body variables in order of first appearance."""
        out: list[Variable] = []
        for lit in self.body:
            terms = (lit.entity,) if isinstance(lit, AttributeAtom) else (lit.src, lit.dst)
            for t in terms:
                if isinstance(t, Variable) and t not in out:
                    out.append(t)
        return out

    def head_variables(self) -> list[Variable]:
        return [p.entity for p in self.head if isinstance(p.entity, Variable)]

    def __str__(self):
        return f"{', '.join(map(str, self.body))} => {'; '.join(map(str, self.head))}"


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[PreferenceRule, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))

    def __iter__(self) -> Iterator[PreferenceRule]:
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#.*)
  | (?P<arrow>=>)
  | (?P<string>"[^"\n]*")
  | (?P<badstring>"[^"\n]*$)
  | (?P<variable>[A-Z][A-Za-z0-9_]*)
  | (?P<ident>[a-z][A-Za-z0-9_]*)
  | (?P<punct>[(),;+\-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    column: int


def _tokenize(line: str, lineno: int) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            raise RuleSyntaxError(f"unexpected character {line[pos]!r}", lineno, pos + 1)
        kind = m.lastgroup
        if kind == "badstring":
            raise RuleSyntaxError("unterminated string", lineno, pos + 1)
        if kind == "punct":
            kind = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, m.group(), pos + 1))
        pos = m.end()
    tokens.append(_Token("eol", "", len(line) + 1))
    return tokens


class _LineParser:
    def __init__(self, tokens: list[_Token], lineno: int):
        self.tokens = tokens
        self.pos = 0
        self.lineno = lineno

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        found = "end of line" if tok.kind == "eol" else repr(tok.text)
        return RuleSyntaxError(f"{message}, found {found}", self.lineno, tok.column)

    def expect(self, kind: str, what: str | None = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise self.error(f"expected {what or repr(kind)}")
        self.pos += 1
        return tok

    def term(self) -> Term:
        tok = self.peek()
        if tok.kind == "variable":
            self.pos += 1
            return Variable(tok.text)
        if tok.kind == "ident":
            self.pos += 1
            return Constant(tok.text)
        raise self.error("expected a variable or entity constant")

    def literal(self) -> BodyLiteral:
        name = self.expect("ident", "a predicate name").text
        self.expect("(")
        first = self.term()
        self.expect(",")
        if self.peek().kind == "string":
            feature = self.expect("string").text[1:-1]
            if not feature:
                raise self.error("empty feature name", self.tokens[self.pos - 1])
            self.expect(")")
            return AttributeAtom(first, feature, name)
        second = self.term()
        self.expect(")")
        return RelationAtom(name, first, second)

    def preference(self) -> LabelPreference:
        tok = self.expect("ident", "'label'")
        if tok.text != "label":
            raise self.error("expected 'label'", tok)
        self.expect("(")
        entity = self.term()
        self.expect(",")
        label = self.expect("string", "a quoted label name").text[1:-1]
        if not label:
            raise self.error("empty label name", self.tokens[self.pos - 1])
        self.expect(")")
        sign = self.peek()
        if sign.kind not in ("+", "-"):
            raise self.error("expected '+' or '-'")
        self.pos += 1
        return LabelPreference(entity, label, Polarity(sign.kind))

    def rule(self) -> PreferenceRule:
        body = [self.literal()]
        while self.peek().kind == ",":
            self.pos += 1
            body.append(self.literal())
        self.expect("arrow", "'=>'")
        head_start = self.peek()
        head = [self.preference()]
        while self.peek().kind == ";":
            self.pos += 1
            head.append(self.preference())
        self.expect("eol", "end of rule")
        body_vars = {v for lit in body for v in _terms(lit) if isinstance(v, Variable)}
        for pref in head:
            if isinstance(pref.entity, Variable) and pref.entity not in body_vars:
                raise RuleSyntaxError(
                    f"head variable {pref.entity.name} does not occur in the body",
                    self.lineno,
                    head_start.column,
                )
        return PreferenceRule(tuple(body), tuple(head), self.lineno)


def _terms(lit: BodyLiteral) -> tuple[Term, ...]:
    return (lit.entity,) if isinstance(lit, AttributeAtom) else (lit.src, lit.dst)


def parse_rules(text: str) -> RuleSet:
    """Parse rule text into a :class:`RuleSet` (one rule per non-blank line)."""
    rules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(line, lineno)
        if tokens[0].kind == "eol":
            continue
        rules.append(_LineParser(tokens, lineno).rule())
    return RuleSet(tuple(rules))


def load_rules(path) -> RuleSet:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read())


def format_rules(rs: RuleSet) -> str:
    """Canonical text; ``parse_rules(format_rules(rs)) == rs``."""
    return "".join(f"{rule}\n" for rule in rs)


def validate_against(rs: RuleSet, g) -> list[str]:
    """Warnings for feature, relation, label and constant names unknown to ``g``."""
    warnings = []
    for k, rule in enumerate(rs):
        where = f"rule {k + 1} (line {rule.source_line})" if rule.source_line else f"rule {k + 1}"
        for lit in rule.body:
            if isinstance(lit, AttributeAtom):
                if g.feature_index(lit.feature) is None:
                    warnings.append(f"{where}: unknown feature {lit.feature!r}")
            elif g.relation_index(lit.relation) is None:
                warnings.append(f"{where}: unknown relation {lit.relation!r}")
            for t in _terms(lit):
                if isinstance(t, Constant) and g.entity_index(t.name) is None:
                    warnings.append(f"{where}: unknown entity {t.name!r}")
        for pref in rule.head:
            if g.label_index(pref.label) is None:
                warnings.append(f"{where}: unknown label {pref.label!r}")
            if isinstance(pref.entity, Constant) and g.entity_index(pref.entity.name) is None:
                warnings.append(f"{where}: unknown entity {pref.entity.name!r}")
    return warnings
