"""API-call parsing and sub-tree matching.

parse_call() extracts the first parseable invocation from free text under a
small call grammar: dotted callee, positional and keyword arguments, quoted
strings (quote style normalized away), decimal numbers, booleans,
identifiers, nested calls, and bracketed lists. subtree_match() decides the
structural-accuracy question: does any call node in the generated tree name
the reference API and carry all of its required keyword arguments?

Matching rules are deliberately explicit so reported numbers are
reproducible: callee comparison tolerates one missing leading namespace
only when both trailing two segments agree, value comparison is
normalized-text equality (strip quotes, trim whitespace, case-sensitive),
and positional arguments never satisfy named reference arguments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .corpus import ApiRef

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER = re.compile(r"[+-]?\d+(?:\.\d*)?(?:[eE][+-]?\d+)?")
_IDENT_CHAR = re.compile(r"[A-Za-z0-9_.]")

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'", '"': '"', "0": "\0"}


class ParseCallError(Exception):
    """Raised when a snippet contains no parseable API call."""

    def __init__(self, message: str, position: int):
        super().__init__(message)
        self.position = position


@dataclass
class AstValue:
    kind: str  # "string" | "number" | "bool" | "identifier" | "call" | "list"
    value: object
    text: str  # source span (strings: unescaped content)


@dataclass
class ApiCallAst:
    callee: list[str]
    positional: list[AstValue] = field(default_factory=list)
    keyword: dict[str, AstValue] = field(default_factory=dict)
    text: str = ""


class _Fail(Exception):
    pass


class _Scanner:
    def __init__(self, src: str, pos: int):
        self.src = src
        self.pos = pos
        self.high = pos  # furthest position reached, for error reporting

    def _advance(self, pos: int) -> None:
        self.pos = pos
        if pos > self.high:
            self.high = pos

    def skip_ws(self) -> None:
        while self.pos < len(self.src) and self.src[self.pos] in " \t\r\n":
            self._advance(self.pos + 1)

    def peek(self) -> str:
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def take(self, ch: str) -> None:
        if self.peek() != ch:
            raise _Fail(f"expected {ch!r} at {self.pos}")
        self._advance(self.pos + 1)

    def match_regex(self, pattern: re.Pattern) -> str:
        m = pattern.match(self.src, self.pos)
        if not m:
            raise _Fail(f"no match for {pattern.pattern} at {self.pos}")
        self._advance(m.end())
        return m.group(0)

    def parse_dotted_name(self) -> list[str]:
        segments = [self.match_regex(_IDENT)]
        while True:
            save = self.pos
            self.skip_ws()
            if self.peek() == ".":
                self.take(".")
                self.skip_ws()
                try:
                    segments.append(self.match_regex(_IDENT))
                except _Fail:
                    self.pos = save
                    break
            else:
                self.pos = save
                break
        return segments

    def parse_string(self) -> str:
        quote = self.peek()
        if quote not in "'\"":
            raise _Fail(f"expected quote at {self.pos}")
        self._advance(self.pos + 1)
        out: list[str] = []
        while True:
            if self.pos >= len(self.src):
                raise _Fail("unterminated string")
            ch = self.src[self.pos]
            if ch == "\\" and self.pos + 1 < len(self.src):
                nxt = self.src[self.pos + 1]
                out.append(_ESCAPES.get(nxt, nxt))
                self._advance(self.pos + 2)
            elif ch == quote:
                self._advance(self.pos + 1)
                return "".join(out)
            else:
                out.append(ch)
                self._advance(self.pos + 1)

    def parse_value(self) -> AstValue:
        self.skip_ws()
        start = self.pos
        ch = self.peek()
        if ch in "'\"":
            content = self.parse_string()
            return AstValue("string", content, content)
        if ch == "[":
            return self.parse_list()
        if ch.isdigit() or (ch in "+-" and self.pos + 1 < len(self.src) and self.src[self.pos + 1].isdigit()):
            literal = self.match_regex(_NUMBER)
            return AstValue("number", literal, literal)
        if _IDENT.match(self.src, self.pos):
            name = self.parse_dotted_name()
            dotted = ".".join(name)
            if dotted in ("True", "true", "False", "false"):
                return AstValue("bool", dotted in ("True", "true"), dotted)
            save = self.pos
            self.skip_ws()
            if self.peek() == "(":
                call = self.parse_call_body(name, start)
                return AstValue("call", call, call.text)
            self.pos = save
            return AstValue("identifier", dotted, dotted)
        raise _Fail(f"no value at {self.pos}")

    def parse_list(self) -> AstValue:
        start = self.pos
        self.take("[")
        items: list[AstValue] = []
        self.skip_ws()
        if self.peek() == "]":
            self.take("]")
            return AstValue("list", items, self.src[start:self.pos])
        while True:
            items.append(self.parse_value())
            self.skip_ws()
            if self.peek() == ",":
                self.take(",")
                self.skip_ws()
                if self.peek() == "]":  # trailing comma
                    break
                continue
            break
        self.take("]")
        return AstValue("list", items, self.src[start:self.pos])

    def parse_call_body(self, callee: list[str], start: int) -> ApiCallAst:
        self.skip_ws()
        self.take("(")
        positional: list[AstValue] = []
        keyword: dict[str, AstValue] = {}
        self.skip_ws()
        if self.peek() == ")":
            self.take(")")
            return ApiCallAst(callee, positional, keyword, self.src[start:self.pos])
        while True:
            self.skip_ws()
            arg_name = None
            save = self.pos
            m = _IDENT.match(self.src, self.pos)
            if m:
                after = m.end()
                while after < len(self.src) and self.src[after] in " \t":
                    after += 1
                if after < len(self.src) and self.src[after] == "=" and self.src[after + 1:after + 2] != "=":
                    arg_name = m.group(0)
                    self._advance(after + 1)
            if arg_name is None:
                self.pos = save
                positional.append(self.parse_value())
            else:
                keyword[arg_name] = self.parse_value()
            self.skip_ws()
            if self.peek() == ",":
                self.take(",")
                self.skip_ws()
                if self.peek() == ")":  # trailing comma
                    break
                continue
            break
        self.take(")")
        return ApiCallAst(callee, positional, keyword, self.src[start:self.pos])


def parse_call(snippet: str) -> ApiCallAst:
    """Parse the first API invocation found in the snippet.

    Surrounding prose is skipped by attempting a parse at every identifier
    start that does not continue a preceding name.
    """
    high = 0
    for m in _IDENT.finditer(snippet):
        start = m.start()
        if start > 0 and _IDENT_CHAR.match(snippet[start - 1]):
            continue
        scanner = _Scanner(snippet, start)
        try:
            callee = scanner.parse_dotted_name()
            return scanner.parse_call_body(callee, start)
        except _Fail:
            high = max(high, scanner.high)
    raise ParseCallError(f"no parseable call in snippet (scanned to position {high})", high)


def iter_calls(node: ApiCallAst):
    """Yield every call node in the tree: the root and all nested calls."""
    yield node
    for value in list(node.positional) + list(node.keyword.values()):
        yield from _iter_value_calls(value)


def _iter_value_calls(value: AstValue):
    if value.kind == "call":
        yield from iter_calls(value.value)
    elif value.kind == "list":
        for item in value.value:
            yield from _iter_value_calls(item)


def normalize_value_text(text: str) -> str:
    """Strip one layer of symmetric quotes and trim whitespace."""
    t = text.strip()
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "'\"":
        t = t[1:-1]
    return t.strip()


def _callee_matches(generated: list[str], reference: list[str]) -> tuple[bool, bool]:
    if generated == reference:
        return True, False
    if len(generated) >= 2 and len(reference) >= 2 and generated[-2:] == reference[-2:]:
        return True, True
    return False, False


def _node_matches(node: ApiCallAst, ref_callee: list[str], required: dict[str, str]) -> tuple[bool, bool]:
    ok, lenient = _callee_matches(node.callee, ref_callee)
    if not ok:
        return False, False
    for name, req_value in required.items():
        got = node.keyword.get(name)
        if got is None:
            return False, False
        if normalize_value_text(got.text) != normalize_value_text(req_value):
            return False, False
    return True, lenient


def subtree_match_detail(generated: ApiCallAst, reference: ApiRef) -> tuple[bool, bool]:
    """Like subtree_match, also reporting whether callee leniency was used."""
    ref_call = parse_call(reference.api_call)
    for node in iter_calls(generated):
        ok, lenient = _node_matches(node, ref_call.callee, reference.api_arguments)
        if ok:
            return True, lenient
    return False, False


def subtree_match(generated: ApiCallAst, reference: ApiRef) -> bool:
    """True iff some call node matches the reference callee and carries all required args."""
    return subtree_match_detail(generated, reference)[0]


def ast_accuracy(pairs: list[tuple[ApiRef, str]]) -> float:
    """Fraction of (gold API, answer text) pairs whose answer structurally matches.

    Answers with no parseable call count as non-matches.
    """
    if not pairs:
        raise ValueError("no examples to score")
    hits = 0
    for ref, answer in pairs:
        try:
            generated = parse_call(answer)
        except ParseCallError:
            continue
        if subtree_match(generated, ref):
            hits += 1
    return hits / len(pairs)
