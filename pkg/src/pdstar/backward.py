"""Goal-driven query answering with precomputed terminological patterns,
reasoning-tree pruning, and tabling.

A goal is answered by direct store matches plus, for every rule whose
consequent unifies with it, a join over the rule's antecedents (terminological
ones first).  Terminological antecedents are answered from a store of
precomputed pattern closures; when such an antecedent has no matches the
whole rule branch is pruned, since the antecedent can only get more specific.
Non-terminological antecedents recurse.

Answered subgoals are memoized (tabling), and cyclic goals contribute their
currently known answers only, with the whole evaluation re-run to a fixpoint
until answer sets stabilize, so cyclic schemas terminate.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .config import RunConfig
from .kb import KnowledgeBase, Triple, expand_answers
from .materialize import build_tbox_closure, materialize
from .rules import (Pattern, Rule, Var, active_ruleset, apply_rule,
                    format_pattern, match_triple, pattern_mask, substitute,
                    unify_consequent)
from .terms import (RDF_TYPE, RESERVED_IDS, SAMEAS, SUBCLASS, SUBPROPERTY,
                    SYMMETRIC)

_EMPTY: frozenset = frozenset()
_VOCAB_PREDICATES = (RDF_TYPE, SUBCLASS, SUBPROPERTY, SAMEAS)


class DepthLimitError(RuntimeError):
    def __init__(self, chain: tuple[Pattern, ...]):
        super().__init__(f"goal recursion exceeded depth limit "
                         f"({len(chain)} goals deep)")
        self.chain = chain


class ModeStateError(RuntimeError):
    """Query mode requires engine state that is not present."""


@dataclass
class QueryStats:
    goals: int = 0
    kb_lookups: int = 0
    rule_expansions: Counter = field(default_factory=Counter)
    pruned: Counter = field(default_factory=Counter)

    def total_expansions(self) -> int:
        return sum(self.rule_expansions.values())


def is_terminological(pattern: Pattern) -> bool:
    """Patterns whose predicate or object is reserved schema vocabulary.

    rdf:type with an arbitrary class object stays non-terminological;
    otherwise every type query would count as precomputable.
    """
    s, p, o = pattern
    if isinstance(p, int):
        if p in (SUBCLASS, SUBPROPERTY, SAMEAS):
            return True
        if p == RDF_TYPE and o == SYMMETRIC:
            return True
    return isinstance(o, int) and o in RESERVED_IDS


def normalize_goal(pattern: Pattern) -> tuple:
    """Rename variables positionally so equal-shaped goals share table keys."""
    names: dict[str, str] = {}
    out = []
    for a in pattern:
        if isinstance(a, Var):
            out.append(names.setdefault(a.name, f"_{len(names)}"))
        else:
            out.append(a)
    return tuple(out)


class TerminologicalStore:
    """Complete answer sets for the terminological pattern shapes the
    ruleset can ask.  ``lookup`` returns None for shapes outside its
    coverage, which callers treat as "recurse instead"."""

    def __init__(self, subclasses: dict[int, frozenset[int]],
                 superproperties: dict[int, frozenset[int]],
                 symmetric: frozenset[int], kb: KnowledgeBase):
        self.subclasses = subclasses
        self.superproperties = superproperties
        self.symmetric = symmetric
        self._eq = kb.eq
        self.kb_version = kb.version

    def lookup(self, pattern: Pattern) -> Optional[list[Triple]]:
        s, p, o = pattern
        if not isinstance(p, int):
            return None
        if p == SUBCLASS or p == SUBPROPERTY:
            table = self.subclasses if p == SUBCLASS else self.superproperties
            if isinstance(s, int):
                cands = [(s, p, sup) for sup in table.get(s, _EMPTY)]
            else:
                cands = [(sub, p, sup)
                         for sub, sups in table.items() for sup in sups]
        elif p == RDF_TYPE and o == SYMMETRIC:
            cands = [(m, RDF_TYPE, SYMMETRIC) for m in self.symmetric]
        elif p == SAMEAS:
            cands = self._eq.sameas_matches(pattern_mask(pattern))
        else:
            return None
        return [t for t in cands if match_triple(pattern, t) is not None]

    def covered(self, pattern: Pattern) -> bool:
        return self.lookup(pattern) is not None


def _vocabulary_is_remapped(closure) -> bool:
    # Non-standard schemas can pull reserved predicates into derived facts
    # (a property declared below rdf:type, or a reserved predicate made
    # symmetric).  The fast TBox-only precompute would then be incomplete.
    for sups in closure.superproperties.values():
        if any(v in sups for v in _VOCAB_PREDICATES):
            return True
    return any(v in closure.symmetric for v in _VOCAB_PREDICATES)


def precompute_terminological(kb: KnowledgeBase,
                              rules: Optional[list[Rule]] = None,
                              config: Optional[RunConfig] = None) -> TerminologicalStore:
    """Close the terminological patterns over the current store.

    The schema is small, so this is a fast in-memory fixpoint: transitive
    subclass/subproperty closures plus every property whose type chain
    reaches the symmetric-property class.  Schemas that remap the reserved
    vocabulary itself fall back to a full materialization of a copy, keeping
    the stored sets complete (pruning must never lose answers).
    """
    config = config or RunConfig()
    closure = build_tbox_closure(kb.tbox)
    if _vocabulary_is_remapped(closure):
        snapshot = _copy_for_precompute(kb)
        materialize(snapshot, rules, config)
        full = build_tbox_closure(snapshot.tbox)
        return TerminologicalStore(full.superclasses, full.superproperties,
                                   full.symmetric, kb)
    symmetric = set(closure.symmetric)
    for s, p, o in kb.abox:
        if p == RDF_TYPE and SYMMETRIC in closure.superclasses_of(o):
            symmetric.add(s)
    return TerminologicalStore(closure.superclasses, closure.superproperties,
                               frozenset(symmetric), kb)


def _copy_for_precompute(kb: KnowledgeBase) -> KnowledgeBase:
    dup = KnowledgeBase()
    dup.tbox = set(kb.tbox)
    dup.abox = set(kb.abox)
    dup.eq = kb.eq.copy()
    dup.canonicalized = kb.canonicalized
    return dup


class Tabler:
    """Memo of answered subgoals plus the cycle machinery.

    ``table`` holds answers from completed evaluation passes and only ever
    grows; ``pass_done`` holds answers completed within the current pass.
    Goals re-entered while in flight (cycles) read the previous pass's
    answers, and the caller re-runs passes until nothing grows.
    """

    def __init__(self, kb_version: int = 0):
        self.kb_version = kb_version
        self.table: dict[tuple, set[Triple]] = {}
        self.pass_done: dict[tuple, set[Triple]] = {}
        self.in_flight: set[tuple] = set()
        self.reentered = False
        # Keys whose table entries are known stable (set once an evaluation
        # reached its fixpoint); safe to reuse across queries on the same
        # store snapshot.
        self.completed: set[tuple] = set()

    def begin_pass(self) -> None:
        self.pass_done = {}
        self.in_flight = set()
        self.reentered = False

    def merge_pass(self) -> bool:
        grew = False
        for key, answers in self.pass_done.items():
            old = self.table.get(key)
            if old is None:
                self.table[key] = set(answers)
                if answers:
                    grew = True
            elif not answers <= old:
                old |= answers
                grew = True
        return grew

    def answers_for(self, goal: Pattern) -> set[Triple]:
        return self.table.get(normalize_goal(goal), set())


def ti_reason(goal: Pattern, kb: KnowledgeBase, rules: list[Rule],
              store: Optional[TerminologicalStore] = None,
              table: Optional[Tabler] = None, *,
              prune: Optional[bool] = None,
              tabling: bool = True,
              config: Optional[RunConfig] = None,
              stats: Optional[QueryStats] = None) -> set[Triple]:
    """Answer a goal pattern against the store under the ruleset.

    With a terminological store the reasoner runs in hybrid mode: covered
    antecedents are answered from the store and empty ones prune their rule.
    Without a store every antecedent recurses (pure backward chaining).
    """
    config = config or RunConfig()
    stats = stats if stats is not None else QueryStats()
    table = table if table is not None else Tabler(kb.version)
    if prune is None:
        prune = store is not None
    depth_limit = config.depth_limit

    def solve(goal: Pattern, depth: int, chain: tuple) -> set[Triple]:
        key = normalize_goal(goal)
        if key in table.in_flight:
            table.reentered = True
            return table.table.get(key, set())
        if tabling:
            if key in table.completed:
                return table.table[key]
            done = table.pass_done.get(key)
            if done is not None:
                return done
        if depth > depth_limit:
            raise DepthLimitError(chain + (goal,))
        stats.goals += 1
        table.in_flight.add(key)
        try:
            stats.kb_lookups += 1
            candidates = set(kb.matches(pattern_mask(goal)))
            if store is not None:
                stored = store.lookup(goal)
                if stored is not None:
                    candidates.update(stored)
            answers = {t for t in candidates
                       if match_triple(goal, t) is not None}
            for rule in rules:
                theta = unify_consequent(rule, goal)
                if theta is None:
                    continue
                ordered = sorted(
                    rule.antecedents,
                    key=lambda a: 0 if is_terminological(substitute(a, theta)) else 1)
                if prune and store is not None:
                    reason = None
                    for a in ordered:
                        pa = substitute(a, theta)
                        got = store.lookup(pa)
                        if got is not None and not got:
                            reason = pa
                            break
                    if reason is not None:
                        stats.pruned[rule.name] += 1
                        continue
                stats.rule_expansions[rule.name] += 1
                bindings = [theta]
                for a in ordered:
                    extended = []
                    for b in bindings:
                        pa = substitute(a, b)
                        sub: Optional[Iterable[Triple]] = None
                        if store is not None:
                            sub = store.lookup(pa)
                        if sub is None:
                            sub = solve(pa, depth + 1, chain + (goal,))
                        for t in sub:
                            nb = match_triple(a, t, b)
                            if nb is not None:
                                extended.append(nb)
                    bindings = extended
                    if not bindings:
                        break
                if bindings:
                    answers.update(
                        t for t in apply_rule(rule, bindings)
                        if match_triple(goal, t) is not None)
        finally:
            table.in_flight.discard(key)
        table.pass_done[key] = answers
        return answers

    while True:
        table.begin_pass()
        answers = solve(goal, 0, ())
        grew = table.merge_pass()
        if not table.reentered or not grew:
            if tabling:
                table.completed.update(table.pass_done)
            return answers


# -- reasoning tree ---------------------------------------------------------

@dataclass
class Leaf:
    pattern: Pattern
    source: str  # "kb", "store" or "cycle"
    matches: tuple[Triple, ...]


@dataclass
class AndNode:
    rule: str
    pruned: bool = False
    prune_reason: Optional[Pattern] = None
    children: list = field(default_factory=list)


@dataclass
class OrNode:
    goal: Pattern
    children: list
    answers: tuple[Triple, ...]


def explain(goal: Pattern, kb: KnowledgeBase, rules: list[Rule],
            store: Optional[TerminologicalStore] = None, *,
            prune: Optional[bool] = None,
            config: Optional[RunConfig] = None,
            stats: Optional[QueryStats] = None) -> OrNode:
    """Same traversal as ``ti_reason`` but retaining the OR/AND tree,
    including pruned branches marked with the antecedent that pruned them."""
    config = config or RunConfig()
    if prune is None:
        prune = store is not None
    table = Tabler(kb.version)
    ti_reason(goal, kb, rules, store, table, prune=prune, config=config,
              stats=stats)
    path: set[tuple] = set()

    def build(goal: Pattern, depth: int) -> OrNode:
        if depth > config.depth_limit:
            raise DepthLimitError((goal,))
        key = normalize_goal(goal)
        kb_matches = tuple(sorted(
            t for t in kb.matches(pattern_mask(goal))
            if match_triple(goal, t) is not None))
        children: list = [Leaf(goal, "kb", kb_matches)]
        if store is not None:
            stored = store.lookup(goal)
            if stored is not None:
                children.append(Leaf(goal, "store", tuple(sorted(stored))))
        path.add(key)
        for rule in rules:
            theta = unify_consequent(rule, goal)
            if theta is None:
                continue
            ordered = sorted(
                rule.antecedents,
                key=lambda a: 0 if is_terminological(substitute(a, theta)) else 1)
            if prune and store is not None:
                empty = None
                for a in ordered:
                    pa = substitute(a, theta)
                    got = store.lookup(pa)
                    if got is not None and not got:
                        empty = pa
                        break
                if empty is not None:
                    children.append(AndNode(rule.name, pruned=True,
                                            prune_reason=empty))
                    continue
            kids: list = []
            for a in ordered:
                pa = substitute(a, theta)
                if store is not None:
                    stored = store.lookup(pa)
                    if stored is not None:
                        kids.append(Leaf(pa, "store", tuple(sorted(stored))))
                        continue
                if normalize_goal(pa) in path:
                    kids.append(Leaf(pa, "cycle",
                                     tuple(sorted(table.answers_for(pa)))))
                else:
                    kids.append(build(pa, depth + 1))
            children.append(AndNode(rule.name, children=kids))
        path.discard(key)
        return OrNode(goal, children, tuple(sorted(table.answers_for(goal))))

    return build(goal, 0)


def render_tree(node: Union[OrNode, AndNode, Leaf], dictionary,
                indent: int = 0) -> str:
    pad = "  " * indent
    fmt = lambda p: format_pattern(p, dictionary)
    if isinstance(node, OrNode):
        lines = [f"{pad}OR {fmt(node.goal)}  [{len(node.answers)} answers]"]
        lines.extend(render_tree(c, dictionary, indent + 1)
                     for c in node.children)
        return "\n".join(lines)
    if isinstance(node, AndNode):
        if node.pruned:
            return (f"{pad}PRUNED {node.rule}: "
                    f"{fmt(node.prune_reason)} has no matches")
        lines = [f"{pad}AND {node.rule}"]
        lines.extend(render_tree(c, dictionary, indent + 1)
                     for c in node.children)
        return "\n".join(lines)
    return f"{pad}LEAF[{node.source}] {fmt(node.pattern)}  ({len(node.matches)} matches)"


# -- mode dispatch ----------------------------------------------------------

def canonical_pattern(pattern: Pattern, kb: KnowledgeBase) -> Pattern:
    out = []
    for a in pattern:
        out.append(kb.eq.find(a) if isinstance(a, int) else a)
    return tuple(out)  # type: ignore[return-value]


def hybrid_query(goal: Pattern, kb: KnowledgeBase,
                 rules: Optional[list[Rule]] = None, *,
                 mode: str = "hybrid",
                 store: Optional[TerminologicalStore] = None,
                 table: Optional[Tabler] = None,
                 config: Optional[RunConfig] = None,
                 stats: Optional[QueryStats] = None) -> list[Triple]:
    """Answer a goal in one of three modes with identical result sets:
    ``materialized`` (lookup only), ``backward`` (no precomputation, no
    pruning) or ``hybrid`` (precomputed store plus pruning).

    Answers are expanded through the sameAs equivalence map and filtered
    against the original goal, so callers see original identifiers.
    """
    config = config or RunConfig()
    active = active_ruleset(rules, sameas_enabled=config.canonicalize_sameas)
    canon_goal = canonical_pattern(goal, kb)
    if mode == "materialized":
        if not kb.materialized:
            raise ModeStateError(
                "materialized mode requires a completed materialization")
        raw: Iterable[Triple] = [
            t for t in kb.matches(pattern_mask(canon_goal))
            if match_triple(canon_goal, t) is not None]
    elif mode == "backward":
        raw = ti_reason(canon_goal, kb, active, None, _valid_table(table, kb),
                        prune=False, config=config, stats=stats)
    elif mode == "hybrid":
        if store is None or store.kb_version != kb.version:
            store = precompute_terminological(kb, active, config)
        raw = ti_reason(canon_goal, kb, active, store, _valid_table(table, kb),
                        prune=True, config=config, stats=stats)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    expanded = expand_answers(kb.eq, raw)
    return sorted(t for t in expanded if match_triple(goal, t) is not None)


def _valid_table(table: Optional[Tabler], kb: KnowledgeBase) -> Tabler:
    # Whole-table invalidation on any store mutation.
    if table is None or table.kb_version != kb.version:
        return Tabler(kb.version)
    return table
