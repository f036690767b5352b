"""Condition/action rule scripts executed on control gates.

Grammar (one statement per rule, ';' terminated, '#' comments):

    rule    := "ON" ("READ" | "INPUT" n) "WHEN" cond "DO" action ("," action)* ";"
    cond    := "TRUE" | term (("AND" | "OR") term)*
    term    := FIELD op literal
    op      := == != < > <= >=
    action  := ALARM(code) | SET(field, literal) | RELAY(n, ON|OFF) | LOG

AND/OR chain left to right with equal precedence. Literals are typed
against the field when the known-field context is supplied: integer/date
fields take integer literals, real fields numeric literals, string and
character fields quoted literals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional

MAX_ALARM_CODE = 16

_OPS = ("==", "!=", "<=", ">=", "<", ">")
_KEYWORDS = {"ON", "READ", "INPUT", "WHEN", "DO", "TRUE", "AND", "OR",
             "ALARM", "SET", "RELAY", "LOG", "OFF"}


class GateScriptError(Exception):
    pass


class GateScriptSyntaxError(GateScriptError):
    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{message} (line {line}, col {col})")
        self.line = line
        self.col = col


class GateScriptSemanticError(GateScriptError):
    pass


class TooManyRules(GateScriptError):
    pass


@dataclass(frozen=True)
class Term:
    field: str
    op: str
    literal: Any

    def evaluate(self, lookup: Callable[[str], Any]) -> bool:
        value = lookup(self.field)
        if value is None:
            return False
        try:
            if self.op == "==":
                return value == self.literal
            if self.op == "!=":
                return value != self.literal
            if self.op == "<":
                return value < self.literal
            if self.op == ">":
                return value > self.literal
            if self.op == "<=":
                return value <= self.literal
            return value >= self.literal
        except TypeError:
            return False


@dataclass(frozen=True)
class Condition:
    # None first means literal TRUE
    first: Optional[Term]
    rest: tuple[tuple[str, Term], ...] = ()

    def evaluate(self, lookup: Callable[[str], Any]) -> bool:
        if self.first is None:
            return True
        acc = self.first.evaluate(lookup)
        for op, term in self.rest:
            if op == "AND":
                acc = acc and term.evaluate(lookup)
            else:
                acc = acc or term.evaluate(lookup)
        return acc


ACTION_ALARM = "ALARM"
ACTION_SET = "SET"
ACTION_RELAY = "RELAY"
ACTION_LOG = "LOG"


@dataclass(frozen=True)
class Action:
    kind: str
    args: tuple = ()


TRIGGER_READ = "READ"
TRIGGER_INPUT = "INPUT"


@dataclass(frozen=True)
class Rule:
    trigger: str
    input_index: Optional[int]
    condition: Condition
    actions: tuple[Action, ...]


@dataclass(frozen=True)
class _Token:
    kind: str  # 'word' | 'int' | 'real' | 'str' | 'op' | 'punct' | 'eof'
    value: Any
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_col = col
        two = text[i:i + 2]
        if two in ("==", "!=", "<=", ">="):
            tokens.append(_Token("op", two, line, start_col))
            i += 2
            col += 2
            continue
        if c in "<>":
            tokens.append(_Token("op", c, line, start_col))
            i += 1
            col += 1
            continue
        if c in "(),;":
            tokens.append(_Token("punct", c, line, start_col))
            i += 1
            col += 1
            continue
        if c in "'\"":
            quote = c
            j = i + 1
            buf = []
            while j < n and text[j] != quote:
                if text[j] == "\n":
                    raise GateScriptSyntaxError("unterminated string literal", line, start_col)
                buf.append(text[j])
                j += 1
            if j >= n:
                raise GateScriptSyntaxError("unterminated string literal", line, start_col)
            tokens.append(_Token("str", "".join(buf), line, start_col))
            col += (j + 1 - i)
            i = j + 1
            continue
        if c.isdigit() or (c == "-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            lit = text[i:j]
            if lit.count(".") > 1:
                raise GateScriptSyntaxError(f"bad number {lit!r}", line, start_col)
            if "." in lit:
                tokens.append(_Token("real", float(lit), line, start_col))
            else:
                tokens.append(_Token("int", int(lit), line, start_col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("word", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        raise GateScriptSyntaxError(f"unexpected character {c!r}", line, start_col)
    tokens.append(_Token("eof", None, line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]) -> None:
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message: str, tok: Optional[_Token] = None) -> None:
        tok = tok or self.peek()
        raise GateScriptSyntaxError(message, tok.line, tok.col)

    def expect_word(self, word: str) -> _Token:
        tok = self.next()
        if tok.kind != "word" or tok.value != word:
            self.fail(f"expected {word!r}", tok)
        return tok

    def expect_punct(self, punct: str) -> _Token:
        tok = self.next()
        if tok.kind != "punct" or tok.value != punct:
            self.fail(f"expected {punct!r}", tok)
        return tok

    def parse_script(self) -> list[Rule]:
        rules = []
        while self.peek().kind != "eof":
            rules.append(self.parse_rule())
        return rules

    def parse_rule(self) -> Rule:
        self.expect_word("ON")
        tok = self.next()
        if tok.kind != "word" or tok.value not in (TRIGGER_READ, TRIGGER_INPUT):
            self.fail("expected READ or INPUT after ON", tok)
        input_index = None
        trigger = tok.value
        if trigger == TRIGGER_INPUT:
            num = self.next()
            if num.kind != "int" or num.value < 0:
                self.fail("expected input number after INPUT", num)
            input_index = num.value
        self.expect_word("WHEN")
        condition = self.parse_condition()
        self.expect_word("DO")
        actions = [self.parse_action()]
        while self.peek().kind == "punct" and self.peek().value == ",":
            self.next()
            actions.append(self.parse_action())
        self.expect_punct(";")
        return Rule(trigger=trigger, input_index=input_index,
                    condition=condition, actions=tuple(actions))

    def parse_condition(self) -> Condition:
        tok = self.peek()
        if tok.kind == "word" and tok.value == "TRUE":
            self.next()
            return Condition(first=None)
        first = self.parse_term()
        rest = []
        while self.peek().kind == "word" and self.peek().value in ("AND", "OR"):
            op = self.next().value
            rest.append((op, self.parse_term()))
        return Condition(first=first, rest=tuple(rest))

    def parse_term(self) -> Term:
        name = self.next()
        if name.kind != "word" or name.value in _KEYWORDS:
            self.fail("expected field name", name)
        op = self.next()
        if op.kind != "op":
            self.fail("expected comparison operator", op)
        lit = self.next()
        if lit.kind not in ("int", "real", "str"):
            self.fail("expected literal", lit)
        return Term(field=name.value, op=op.value, literal=lit.value)

    def parse_action(self) -> Action:
        tok = self.next()
        if tok.kind != "word":
            self.fail("expected action", tok)
        if tok.value == ACTION_LOG:
            return Action(ACTION_LOG)
        if tok.value == ACTION_ALARM:
            self.expect_punct("(")
            code = self.next()
            if code.kind != "int" or not 1 <= code.value <= MAX_ALARM_CODE:
                self.fail(f"alarm code must be 1..{MAX_ALARM_CODE}", code)
            self.expect_punct(")")
            return Action(ACTION_ALARM, (code.value,))
        if tok.value == ACTION_SET:
            self.expect_punct("(")
            name = self.next()
            if name.kind != "word" or name.value in _KEYWORDS:
                self.fail("expected field name in SET", name)
            self.expect_punct(",")
            lit = self.next()
            if lit.kind not in ("int", "real", "str"):
                self.fail("expected literal in SET", lit)
            self.expect_punct(")")
            return Action(ACTION_SET, (name.value, lit.value))
        if tok.value == ACTION_RELAY:
            self.expect_punct("(")
            num = self.next()
            if num.kind != "int" or num.value < 0:
                self.fail("expected relay number", num)
            self.expect_punct(",")
            state = self.next()
            if state.kind != "word" or state.value not in ("ON", "OFF"):
                self.fail("expected ON or OFF", state)
            self.expect_punct(")")
            return Action(ACTION_RELAY, (num.value, state.value == "ON"))
        self.fail(f"unknown action {tok.value!r}", tok)
        raise AssertionError  # unreachable


def _check_literal_type(field_name: str, literal: Any, kinds: dict, where: str) -> None:
    kind = kinds[field_name]
    if kind in ("integer", "date"):
        if not isinstance(literal, int):
            raise GateScriptSemanticError(
                f"{where}: field {field_name} needs an integer literal")
    elif kind == "real":
        if not isinstance(literal, (int, float)):
            raise GateScriptSemanticError(
                f"{where}: field {field_name} needs a numeric literal")
    else:  # string / character
        if not isinstance(literal, str):
            raise GateScriptSemanticError(
                f"{where}: field {field_name} needs a quoted literal")


def parse_script(text: str, *, tier=None, field_kinds: Optional[dict] = None) -> tuple[Rule, ...]:
    """Parse rule text; optionally enforce tier capabilities and field types.

    `tier` is a gate tier profile carrier (anything with max_rules, relays,
    can_modify_tags); `field_kinds` maps known field names to their type
    kind. Either may be omitted for a pure syntax check.
    """
    rules = tuple(_Parser(_tokenize(text)).parse_script())

    if tier is not None:
        for rule in rules:
            for action in rule.actions:
                if action.kind == ACTION_SET and not tier.can_modify_tags:
                    raise GateScriptSemanticError(
                        f"SET is not available on {tier.name} gates")
                if action.kind == ACTION_RELAY and action.args[0] >= tier.relays:
                    raise GateScriptSemanticError(
                        f"relay {action.args[0]} outside {tier.name} profile "
                        f"({tier.relays} relays)")
            if rule.trigger == TRIGGER_INPUT and rule.input_index >= tier.inputs:
                raise GateScriptSemanticError(
                    f"input {rule.input_index} outside {tier.name} profile "
                    f"({tier.inputs} inputs)")
        if len(rules) > tier.max_rules:
            if tier.max_rules == 0:
                raise GateScriptSemanticError(f"{tier.name} gates do not run scripts")
            raise TooManyRules(f"{len(rules)} rules exceed the {tier.max_rules} limit")

    for rule in rules:
        for action in rule.actions:
            if action.kind == ACTION_SET and rule.trigger == TRIGGER_INPUT:
                raise GateScriptSemanticError("SET needs a tag context; not valid in ON INPUT")

    if field_kinds is not None:
        for rule in rules:
            terms = ([] if rule.condition.first is None else [rule.condition.first])
            terms += [t for _, t in rule.condition.rest]
            for term in terms:
                if term.field not in field_kinds:
                    raise GateScriptSemanticError(f"unknown field {term.field}")
                _check_literal_type(term.field, term.literal, field_kinds, "condition")
            for action in rule.actions:
                if action.kind == ACTION_SET:
                    name, literal = action.args
                    if name not in field_kinds:
                        raise GateScriptSemanticError(f"unknown field {name}")
                    _check_literal_type(name, literal, field_kinds, "SET")
    return rules
