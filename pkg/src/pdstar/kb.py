"""Triple storage: ABox/TBox sets, sort-order indexes, sameAs equivalence map.

Triples are plain ``(s, p, o)`` int tuples.  The store is mutated in
single-writer phases and queried through immutable snapshots; indexes are
sorted arrays rebuilt at phase boundaries rather than balanced structures,
which fits the bulk-load-then-query workload.

owl:sameAs statements are never kept as triples.  They feed a union-find
forest whose class representative is the minimum member id; every stored
triple mentions representatives only, and answers are expanded back through
the map on output.  This keeps sameAs state linear in the number of
equivalent individuals instead of the quadratic explicit closure.
"""

from __future__ import annotations

from bisect import bisect_left, insort
from typing import Iterable, Iterator, Optional

from .terms import RDF_TYPE, SAMEAS, SUBCLASS, SUBPROPERTY, SYMMETRIC, RESERVED_IDS

Triple = tuple[int, int, int]
# A lookup mask: None marks an unconstrained position.
Mask = tuple[Optional[int], Optional[int], Optional[int]]


class UnsupportedVocabularyError(ValueError):
    """Data uses the schema vocabulary in a way this engine rejects."""


def is_tbox_triple(t: Triple) -> bool:
    """Terminological statements: the closed predicate list the rules use."""
    p = t[1]
    if p == SUBCLASS or p == SUBPROPERTY:
        return True
    return p == RDF_TYPE and t[2] == SYMMETRIC


class EquivalenceMap:
    """Union-find forest over term ids; class representative = minimum id."""

    def __init__(self):
        self.parent: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.parent)

    def find(self, x: int) -> int:
        parent = self.parent
        if x not in parent:
            return x
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        self.parent.setdefault(ra, ra)
        self.parent.setdefault(rb, rb)
        rep = min(ra, rb)
        self.parent[ra] = rep
        self.parent[rb] = rep
        return rep

    @property
    def registered(self) -> Iterable[int]:
        """Ids that appeared in some sameAs statement."""
        return self.parent.keys()

    def class_of(self, x: int) -> list[int]:
        """All registered members of x's class (just [x] if unregistered)."""
        if x not in self.parent:
            return [x]
        rep = self.find(x)
        return [m for m in self.parent if self.find(m) == rep]

    def classes(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for m in self.parent:
            out.setdefault(self.find(m), []).append(m)
        for members in out.values():
            members.sort()
        return out

    def canonical_triple(self, t: Triple) -> Triple:
        if not self.parent:
            return t
        return (self.find(t[0]), self.find(t[1]), self.find(t[2]))

    def sameas_matches(self, mask: Mask) -> list[Triple]:
        """Synthesize the (member, sameAs, member) pairs matching a mask.

        The explicit sameAs closure of a class of n registered ids is exactly
        the n*n member pairs; they are generated on demand instead of stored.
        """
        s, p, o = mask
        if p is not None and p != SAMEAS:
            return []
        out = []
        if s is not None:
            if s not in self.parent:
                return []
            members = self.class_of(s)
            if o is not None:
                return [(s, SAMEAS, o)] if o in members else []
            return [(s, SAMEAS, m) for m in members]
        if o is not None:
            if o not in self.parent:
                return []
            return [(m, SAMEAS, o) for m in self.class_of(o)]
        for members in self.classes().values():
            out.extend((a, SAMEAS, b) for a in members for b in members)
        return out

    def copy(self) -> "EquivalenceMap":
        dup = EquivalenceMap()
        dup.parent = dict(self.parent)
        return dup


class KnowledgeBase:
    def __init__(self):
        self.tbox: set[Triple] = set()
        self.abox: set[Triple] = set()
        self.eq = EquivalenceMap()
        self.canonicalized = False
        self.materialized = False
        self.rounds: Optional[int] = None
        self.version = 0
        self._spo: list[Triple] = []
        self._pos: list[Triple] = []
        self._osp: list[Triple] = []
        self._dirty = False

    def __len__(self) -> int:
        return len(self.tbox) + len(self.abox)

    def __contains__(self, t: Triple) -> bool:
        return t in self.abox or t in self.tbox

    def all_triples(self) -> Iterator[Triple]:
        yield from self.tbox
        yield from self.abox

    def insert(self, t: Triple) -> bool:
        """Add one triple; returns True iff it was absent."""
        box = self.tbox if is_tbox_triple(t) else self.abox
        if t in box:
            return False
        box.add(t)
        self.version += 1
        self.materialized = False
        if self._dirty:
            return True
        # Keep small incremental inserts cheap without a full rebuild.
        insort(self._spo, t)
        insort(self._pos, (t[1], t[2], t[0]))
        insort(self._osp, (t[2], t[0], t[1]))
        return True

    def bulk_add(self, triples: Iterable[Triple]) -> int:
        added = 0
        for t in triples:
            box = self.tbox if is_tbox_triple(t) else self.abox
            if t not in box:
                box.add(t)
                added += 1
        if added:
            self.version += 1
            self.materialized = False
            self._dirty = True
        return added

    def rebuild_indexes(self) -> None:
        triples = list(self.tbox)
        triples.extend(self.abox)
        triples.sort()
        self._spo = triples
        self._pos = sorted((p, o, s) for s, p, o in triples)
        self._osp = sorted((o, s, p) for s, p, o in triples)
        self._dirty = False

    def _ensure_indexes(self) -> None:
        if self._dirty:
            self.rebuild_indexes()

    def lookup(self, mask: Mask) -> list[Triple]:
        """All stored triples matching the mask.

        Index choice by bound-position prefix: SPO when s is bound, POS when
        only p (and maybe o) is bound, OSP when only o is bound.
        """
        self._ensure_indexes()
        s, p, o = mask
        if s is not None:
            rows = _scan(self._spo, s, p)
            out = []
            for t in rows:
                if p is not None and t[1] != p:
                    continue
                if o is not None and t[2] != o:
                    continue
                out.append(t)
            return out
        if p is not None:
            rows = _scan(self._pos, p, o)
            return [(rs, rp, ro) for rp, ro, rs in rows
                    if o is None or ro == o]
        if o is not None:
            rows = _scan(self._osp, o, None)
            return [(rs, rp, ro) for ro, rs, rp in rows]
        return list(self._spo)

    def matches(self, mask: Mask, *, include_sameas: bool = True) -> list[Triple]:
        """Stored matches plus synthesized sameAs pairs."""
        out = self.lookup(mask)
        if include_sameas and self.eq.parent:
            out.extend(self.eq.sameas_matches(mask))
        return out

    def canonicalize(self) -> "KnowledgeBase":
        """Fold owl:sameAs statements into the equivalence map and rewrite
        every triple to use class representatives.

        The sameAs triples themselves are removed from the working set; the
        map is kept for answer expansion.  Rejects equivalences over the
        reserved schema vocabulary and property hierarchies that redeclare
        owl:sameAs, since those would silently change rule semantics.
        """
        sameas = [t for t in self.abox if t[1] == SAMEAS]
        _check_sameas_subproperty(self.tbox)
        for s, _, o in sameas:
            if s in RESERVED_IDS or o in RESERVED_IDS:
                raise UnsupportedVocabularyError(
                    "owl:sameAs over the reserved schema vocabulary is not supported")
            self.eq.union(s, o)
        if self.eq.parent:
            self.abox = {self.eq.canonical_triple(t) for t in self.abox
                         if t[1] != SAMEAS}
            self.tbox = {self.eq.canonical_triple(t) for t in self.tbox}
        else:
            self.abox = {t for t in self.abox if t[1] != SAMEAS}
        self.canonicalized = True
        self.version += 1
        self._dirty = True
        return self

    def fold_sameas(self, pairs: Iterable[tuple[int, int]]) -> bool:
        """Union derived equivalences and re-canonicalize; True if changed."""
        before = {m: self.eq.find(m) for m in self.eq.parent}
        for a, b in pairs:
            if a in RESERVED_IDS or b in RESERVED_IDS:
                raise UnsupportedVocabularyError(
                    "derived owl:sameAs over reserved vocabulary is not supported")
            self.eq.union(a, b)
        changed = set(self.eq.parent) != set(before) or \
            any(self.eq.find(m) != rep for m, rep in before.items())
        if changed:
            self.abox = {self.eq.canonical_triple(t) for t in self.abox}
            self.tbox = {self.eq.canonical_triple(t) for t in self.tbox}
            self.version += 1
            self._dirty = True
        return changed

    def stats(self) -> dict:
        reps = {self.eq.find(m) for m in self.eq.parent}
        return {
            "triples": len(self),
            "tbox": len(self.tbox),
            "abox": len(self.abox),
            "equivalence_classes": len(reps),
            "equivalence_members": len(self.eq.parent),
        }


def _scan(index: list[Triple], first: int, second: Optional[int]) -> list[Triple]:
    """Rows of a sorted index whose first (and optionally second) field match."""
    if second is not None:
        lo = bisect_left(index, (first, second, 0))
        hi = bisect_left(index, (first, second + 1, 0))
    else:
        lo = bisect_left(index, (first, 0, 0))
        hi = bisect_left(index, (first + 1, 0, 0))
    return index[lo:hi]


def _check_sameas_subproperty(tbox: set[Triple]) -> None:
    # Reject any property whose superproperty chain reaches owl:sameAs;
    # treating such assertions as equivalences is out of scope.
    edges: dict[int, set[int]] = {}
    for s, p, o in tbox:
        if p == SUBPROPERTY:
            edges.setdefault(o, set()).add(s)
    stack = [SAMEAS]
    seen = set()
    while stack:
        node = stack.pop()
        for sub in edges.get(node, ()):
            if sub not in seen:
                seen.add(sub)
                stack.append(sub)
    if seen - {SAMEAS}:
        raise UnsupportedVocabularyError(
            "properties declared rdfs:subPropertyOf owl:sameAs are not supported")


def expand_answers(eq: EquivalenceMap, answers: Iterable[Triple]) -> list[Triple]:
    """Replace each answer by every combination of class members.

    Inverts canonicalization so callers see original identifiers.  All three
    positions are expanded because canonicalization rewrites all three.
    """
    if not eq.parent:
        out = set(answers)
        return sorted(out)
    out: set[Triple] = set()
    members = _member_cache(eq)
    for s, p, o in answers:
        for ms in members.get(s, (s,)):
            for mp in members.get(p, (p,)):
                for mo in members.get(o, (o,)):
                    out.add((ms, mp, mo))
    return sorted(out)


def _member_cache(eq: EquivalenceMap) -> dict[int, list[int]]:
    classes = eq.classes()
    return {rep: members for rep, members in classes.items()}
