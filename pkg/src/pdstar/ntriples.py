"""N-Triples parsing and canonical serialization.

The parser is line-oriented: input may be split at line boundaries and
handled by parallel tasks.  Serialization is single-streamed and canonical,
one line per triple in (s, p, o) id order, so equal triple sets produce
byte-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional, TextIO, Union

from .terms import Term, TermKind


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True, slots=True)
class ParsedStatement:
    s: Term
    p: Term
    o: Term
    line: int


@dataclass
class ParseStats:
    lines: int = 0
    statements: int = 0
    skipped: int = 0
    errors: list = field(default_factory=list)


_IRI_FORBIDDEN = set('<>"{}|^`\\') | {chr(c) for c in range(0x21)}
_ECHARS = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f",
           '"': '"', "'": "'", "\\": "\\"}
_BLANK_FIRST = set("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_")
_BLANK_REST = _BLANK_FIRST | set(".-")
_LANG_ALPHA = set("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz")
_LANG_ALNUM = _LANG_ALPHA | set("0123456789")


def _skip_ws(text: str, i: int) -> int:
    n = len(text)
    while i < n and text[i] in " \t":
        i += 1
    return i


def _parse_uchar(text: str, i: int, line: int) -> tuple[str, int]:
    # i points at the char after the backslash
    width = 4 if text[i] == "u" else 8
    hexpart = text[i + 1:i + 1 + width]
    if len(hexpart) != width or any(c not in "0123456789abcdefABCDEF" for c in hexpart):
        raise ParseError("bad \\u escape", line, i + 1)
    try:
        return chr(int(hexpart, 16)), i + 1 + width
    except ValueError:
        raise ParseError("escape out of range", line, i + 1) from None


def parse_term(text: str, i: int, line: int) -> tuple[Term, int]:
    """Parse one RDF term starting at index ``i``; returns (term, next index)."""
    n = len(text)
    if i >= n:
        raise ParseError("expected a term", line, i + 1)
    c = text[i]
    if c == "<":
        out = []
        j = i + 1
        while j < n and text[j] != ">":
            ch = text[j]
            if ch == "\\" and j + 1 < n and text[j + 1] in "uU":
                ch, j = _parse_uchar(text, j + 1, line)
                out.append(ch)
                continue
            if ch in _IRI_FORBIDDEN:
                raise ParseError(f"character {ch!r} not allowed in IRI", line, j + 1)
            out.append(ch)
            j += 1
        if j >= n:
            raise ParseError("unterminated IRI", line, i + 1)
        if j == i + 1:
            raise ParseError("empty IRI", line, i + 1)
        value = "".join(out)
        if any(ch.isspace() for ch in value):
            raise ParseError("whitespace in IRI", line, i + 1)
        return Term.iri(value), j + 1
    if c == "_":
        if i + 1 >= n or text[i + 1] != ":":
            raise ParseError("expected ':' after '_'", line, i + 2)
        j = i + 2
        if j >= n or text[j] not in _BLANK_FIRST:
            raise ParseError("bad blank node label", line, j + 1)
        j += 1
        while j < n and text[j] in _BLANK_REST:
            j += 1
        label = text[i + 2:j]
        while label.endswith("."):
            j -= 1
            label = label[:-1]
        return Term.blank(label), j
    if c == '"':
        out = []
        j = i + 1
        while j < n:
            ch = text[j]
            if ch == '"':
                break
            if ch == "\\":
                if j + 1 >= n:
                    raise ParseError("dangling escape", line, j + 1)
                esc = text[j + 1]
                if esc in "uU":
                    ch, j = _parse_uchar(text, j + 1, line)
                    out.append(ch)
                    continue
                if esc not in _ECHARS:
                    raise ParseError(f"unknown escape '\\{esc}'", line, j + 1)
                out.append(_ECHARS[esc])
                j += 2
                continue
            if ch in "\n\r":
                raise ParseError("newline inside literal", line, j + 1)
            out.append(ch)
            j += 1
        else:
            raise ParseError("unterminated literal", line, i + 1)
        value = "".join(out)
        j += 1
        if j < n and text[j] == "@":
            k = j + 1
            if k >= n or text[k] not in _LANG_ALPHA:
                raise ParseError("bad language tag", line, k + 1)
            while k < n and text[k] in _LANG_ALPHA:
                k += 1
            while k < n and text[k] == "-":
                k += 1
                if k >= n or text[k] not in _LANG_ALNUM:
                    raise ParseError("bad language tag", line, k + 1)
                while k < n and text[k] in _LANG_ALNUM:
                    k += 1
            return Term.literal(value, lang=text[j + 1:k]), k
        if text.startswith("^^", j):
            dt, k = parse_term(text, j + 2, line)
            if dt.kind is not TermKind.IRI:
                raise ParseError("datatype must be an IRI", line, j + 3)
            return Term.literal(value, datatype=dt.lexical), k
        return Term.literal(value), j
    raise ParseError(f"unexpected character {c!r}", line, i + 1)


def parse_line(text: str, line: int) -> Optional[ParsedStatement]:
    """Parse one N-Triples line; returns None for blank/comment lines."""
    i = _skip_ws(text, 0)
    if i >= len(text) or text[i] == "#" or text[i] in "\r\n":
        return None
    s, i = parse_term(text, i, line)
    if s.kind is TermKind.LITERAL:
        raise ParseError("literal not allowed as subject", line, 1)
    j = _skip_ws(text, i)
    if j == i:
        raise ParseError("expected whitespace after subject", line, i + 1)
    p, i = parse_term(text, j, line)
    if p.kind is not TermKind.IRI:
        raise ParseError("predicate must be an IRI", line, j + 1)
    j = _skip_ws(text, i)
    if j == i:
        raise ParseError("expected whitespace after predicate", line, i + 1)
    o, i = parse_term(text, j, line)
    i = _skip_ws(text, i)
    if i >= len(text) or text[i] != ".":
        raise ParseError("expected '.' at end of statement", line, i + 1)
    i = _skip_ws(text, i + 1)
    if i < len(text) and text[i] not in "#\r\n":
        raise ParseError("trailing characters after '.'", line, i + 1)
    return ParsedStatement(s, p, o, line)


def parse_ntriples(source: Union[Iterable[str], IO[bytes]], *,
                   lenient: bool = False,
                   stats: Optional[ParseStats] = None) -> Iterator[ParsedStatement]:
    """Yield one statement per well-formed line of ``source``.

    ``source`` is an iterable of text lines or a binary stream (decoded as
    UTF-8).  In strict mode (default) the first malformed line raises
    ParseError; in lenient mode malformed lines are skipped and counted on
    ``stats``.
    """
    lines: Iterable[str]
    if hasattr(source, "read"):
        lines = (raw.decode("utf-8") for raw in source)  # type: ignore[union-attr]
    else:
        lines = source  # type: ignore[assignment]
    for lineno, text in enumerate(lines, start=1):
        if stats is not None:
            stats.lines += 1
        try:
            stmt = parse_line(text, lineno)
        except ParseError as exc:
            if not lenient:
                raise
            if stats is not None:
                stats.skipped += 1
                stats.errors.append(exc)
            continue
        if stmt is not None:
            if stats is not None:
                stats.statements += 1
            yield stmt


def escape_literal(value: str) -> str:
    out = []
    for ch in value:
        if ch == "\\":
            out.append("\\\\")
        elif ch == '"':
            out.append('\\"')
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


def format_term(term: Term) -> str:
    if term.kind is TermKind.IRI:
        return f"<{term.lexical}>"
    if term.kind is TermKind.BLANK:
        return f"_:{term.lexical}"
    body = f'"{escape_literal(term.lexical)}"'
    if term.datatype is not None:
        return f"{body}^^<{term.datatype}>"
    if term.lang is not None:
        return f"{body}@{term.lang}"
    return body


def format_triple(triple: tuple[int, int, int], dictionary) -> str:
    s, p, o = triple
    return (f"{format_term(dictionary.resolve(s))} "
            f"{format_term(dictionary.resolve(p))} "
            f"{format_term(dictionary.resolve(o))} .")


def serialize_ntriples(triples: Iterable[tuple[int, int, int]], dictionary,
                       out: TextIO) -> int:
    """Write canonical N-Triples: one line per triple, sorted by (s, p, o)."""
    count = 0
    for triple in sorted(triples):
        out.write(format_triple(triple, dictionary))
        out.write("\n")
        count += 1
    return count
