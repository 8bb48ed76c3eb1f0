"""Interned RDF terms and the term/id dictionary shared by all engine phases.

Every subject, predicate and object is mapped to a dense 64-bit integer id so
that joins, indexes and shuffle keys operate on fixed-width values.  A small
low range of ids is pre-assigned to the schema vocabulary the rule tables use,
so rules can be written as integer constants before any data is loaded.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Iterator, Optional


RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS_NS = "http://www.w3.org/2000/01/rdf-schema#"
OWL_NS = "http://www.w3.org/2002/07/owl#"
XSD_NS = "http://www.w3.org/2001/XMLSchema#"

RDF_TYPE_IRI = RDF_NS + "type"
SUBCLASS_IRI = RDFS_NS + "subClassOf"
SUBPROPERTY_IRI = RDFS_NS + "subPropertyOf"
SAMEAS_IRI = OWL_NS + "sameAs"
SYMMETRIC_IRI = OWL_NS + "SymmetricProperty"


class TermKind(IntEnum):
    IRI = 0
    LITERAL = 1
    BLANK = 2


class TermError(ValueError):
    """Raised when a term violates the structural invariants."""


class UnknownTermIdError(KeyError):
    def __init__(self, term_id: int):
        super().__init__(f"no term with id {term_id}")
        self.term_id = term_id


class DictionarySealedError(RuntimeError):
    """Raised when interning a new term into a sealed dictionary."""


@dataclass(frozen=True, slots=True)
class Term:
    kind: TermKind
    lexical: str
    datatype: Optional[str] = None
    lang: Optional[str] = None

    @staticmethod
    def iri(value: str) -> "Term":
        return Term(TermKind.IRI, value)

    @staticmethod
    def literal(value: str, datatype: Optional[str] = None,
                lang: Optional[str] = None) -> "Term":
        return Term(TermKind.LITERAL, value, datatype, lang)

    @staticmethod
    def blank(label: str) -> "Term":
        return Term(TermKind.BLANK, label)

    def validate(self) -> None:
        if self.kind is not TermKind.LITERAL:
            if self.datatype is not None or self.lang is not None:
                raise TermError(
                    f"{self.kind.name} term may not carry a datatype or language tag")
        elif self.datatype is not None and self.lang is not None:
            raise TermError("literal may carry a datatype or a language tag, not both")
        if self.kind is TermKind.IRI:
            if not self.lexical:
                raise TermError("IRI must be non-empty")
            if any(c.isspace() for c in self.lexical):
                raise TermError(f"IRI contains whitespace: {self.lexical!r}")
        if self.kind is TermKind.BLANK and not self.lexical:
            raise TermError("blank node label must be non-empty")
        if self.datatype is not None:
            if not self.datatype or any(c.isspace() for c in self.datatype):
                raise TermError(f"malformed datatype IRI: {self.datatype!r}")

    def sort_key(self) -> tuple:
        return (int(self.kind), self.lexical, self.datatype or "", self.lang or "")


# Reserved vocabulary, in this fixed documented order.  The ids below are
# stable across every dictionary instance.
RDF_TYPE = 0
SUBCLASS = 1
SUBPROPERTY = 2
SAMEAS = 3
SYMMETRIC = 4

RESERVED_TERMS: tuple[Term, ...] = (
    Term.iri(RDF_TYPE_IRI),
    Term.iri(SUBCLASS_IRI),
    Term.iri(SUBPROPERTY_IRI),
    Term.iri(SAMEAS_IRI),
    Term.iri(SYMMETRIC_IRI),
)

RESERVED_IDS = frozenset(range(len(RESERVED_TERMS)))

# Dynamic ids start above the reserved range, leaving headroom for future
# vocabulary additions without shifting user terms.
FIRST_DYNAMIC_ID = 16

_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")
_DUMP_MAGIC = b"PDTERMD1"


class TermDictionary:
    """Bidirectional term interning with two-phase id assignment.

    While loading, ids are provisional and interning is thread-safe.  After
    ``seal()`` the non-reserved terms are renumbered in lexicographic order,
    making every id a pure function of term content rather than of load
    order or worker count.  A sealed dictionary is immutable and may be
    shared read-only across any number of tasks.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._by_term: dict[Term, int] = {t: i for i, t in enumerate(RESERVED_TERMS)}
        self._by_id: dict[int, Term] = {i: t for i, t in enumerate(RESERVED_TERMS)}
        self._next_id = FIRST_DYNAMIC_ID
        self._sealed = False

    @property
    def sealed(self) -> bool:
        return self._sealed

    def __len__(self) -> int:
        return len(self._by_term)

    @property
    def dynamic_count(self) -> int:
        return len(self._by_term) - len(RESERVED_TERMS)

    def intern(self, term: Term) -> int:
        term.validate()
        with self._lock:
            found = self._by_term.get(term)
            if found is not None:
                return found
            if self._sealed:
                raise DictionarySealedError(
                    f"cannot intern new term into a sealed dictionary: {term!r}")
            term_id = self._next_id
            self._next_id += 1
            self._by_term[term] = term_id
            self._by_id[term_id] = term
            return term_id

    def extend(self, term: Term) -> int:
        """Intern into a sealed dictionary, appending past the sealed range.

        Single-threaded use only (rule-file constants loaded before workers
        start); ids remain deterministic because call order is fixed.
        """
        term.validate()
        found = self._by_term.get(term)
        if found is not None:
            return found
        if not self._sealed:
            return self.intern(term)
        term_id = self._next_id
        self._next_id += 1
        self._by_term[term] = term_id
        self._by_id[term_id] = term
        return term_id

    def lookup(self, term: Term) -> Optional[int]:
        return self._by_term.get(term)

    def resolve(self, term_id: int) -> Term:
        try:
            return self._by_id[term_id]
        except KeyError:
            raise UnknownTermIdError(term_id) from None

    def __contains__(self, term_id: int) -> bool:
        return term_id in self._by_id

    def seal(self) -> dict[int, int]:
        """Renumber dynamic terms lexicographically; returns old->new id map.

        Reserved ids are unchanged.  Idempotent: sealing a sealed dictionary
        returns an identity mapping.
        """
        with self._lock:
            remap = {i: i for i in range(len(RESERVED_TERMS))}
            if self._sealed:
                remap.update({i: i for i in self._by_id if i >= FIRST_DYNAMIC_ID})
                return remap
            dynamic = [(t, i) for t, i in self._by_term.items()
                       if i >= FIRST_DYNAMIC_ID]
            dynamic.sort(key=lambda pair: pair[0].sort_key())
            by_term = {t: i for i, t in enumerate(RESERVED_TERMS)}
            by_id = {i: t for i, t in enumerate(RESERVED_TERMS)}
            for offset, (term, old_id) in enumerate(dynamic):
                new_id = FIRST_DYNAMIC_ID + offset
                remap[old_id] = new_id
                by_term[term] = new_id
                by_id[new_id] = term
            self._by_term = by_term
            self._by_id = by_id
            self._next_id = FIRST_DYNAMIC_ID + len(dynamic)
            self._sealed = True
            return remap

    def iter_sorted(self) -> Iterator[tuple[int, Term]]:
        for term_id in sorted(self._by_id):
            yield term_id, self._by_id[term_id]

    # Binary dump: sorted (id, kind, lexical) records with little-endian
    # 64-bit ids and 32-bit length-prefixed UTF-8 strings.  A flags byte
    # follows the kind so literal datatype/language fields round-trip.
    def dump(self, out: BinaryIO) -> None:
        out.write(_DUMP_MAGIC)
        out.write(_U32.pack(len(self._by_id)))
        for term_id, term in self.iter_sorted():
            out.write(_U64.pack(term_id))
            flags = (1 if term.datatype is not None else 0) | \
                    (2 if term.lang is not None else 0)
            out.write(bytes((int(term.kind), flags)))
            _write_str(out, term.lexical)
            if term.datatype is not None:
                _write_str(out, term.datatype)
            if term.lang is not None:
                _write_str(out, term.lang)

    @classmethod
    def load(cls, stream: BinaryIO) -> "TermDictionary":
        magic = stream.read(len(_DUMP_MAGIC))
        if magic != _DUMP_MAGIC:
            raise ValueError("not a term dictionary dump")
        (count,) = _U32.unpack(stream.read(4))
        dic = cls()
        by_term: dict[Term, int] = {}
        by_id: dict[int, Term] = {}
        max_id = FIRST_DYNAMIC_ID - 1
        for _ in range(count):
            (term_id,) = _U64.unpack(stream.read(8))
            kind_b, flags = stream.read(2)
            lexical = _read_str(stream)
            datatype = _read_str(stream) if flags & 1 else None
            lang = _read_str(stream) if flags & 2 else None
            term = Term(TermKind(kind_b), lexical, datatype, lang)
            by_term[term] = term_id
            by_id[term_id] = term
            max_id = max(max_id, term_id)
        for i, t in enumerate(RESERVED_TERMS):
            if by_id.get(i) != t:
                raise ValueError(f"dump is missing reserved term {t.lexical}")
        dic._by_term = by_term
        dic._by_id = by_id
        dic._next_id = max_id + 1
        dic._sealed = True
        return dic


def _write_str(out: BinaryIO, s: str) -> None:
    data = s.encode("utf-8")
    out.write(_U32.pack(len(data)))
    out.write(data)


def _read_str(stream: BinaryIO) -> str:
    (n,) = _U32.unpack(stream.read(4))
    return stream.read(n).decode("utf-8")
