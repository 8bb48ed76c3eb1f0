"""Forward-chaining closure over map/shuffle/reduce jobs.

One round runs per-rule jobs seeded on the previous round's new triples,
followed by a duplicate-elimination job against the existing base; surviving
inferences become the next round's delta, and rounds repeat until no new
triples appear.

The terminological schema is loaded into memory as a pre-expanded transitive
closure, so subclass/subproperty chains resolve in a single round; the
fixpoint loop remains for inferences that change the schema itself (new
subclass edges, newly symmetric properties and the like), which trigger a
full re-stream of the base on the following round.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .config import RunConfig
from .kb import KnowledgeBase, Triple
from .mapreduce import (JobSpec, decode_id, decode_triple, encode_id,
                        encode_triple, run_job)
from .rules import (Pattern, Rule, Var, apply_rule, join_antecedents,
                    match_triple, active_ruleset)
from .terms import RDF_TYPE, SAMEAS, SUBCLASS, SUBPROPERTY, SYMMETRIC

_EMPTY: frozenset[int] = frozenset()


class MaterializeError(RuntimeError):
    pass


class UnsupportedRuleError(ValueError):
    """The rule needs a join strategy this engine does not provide."""


@dataclass
class TBoxClosure:
    """In-memory schema: transitive superclass/superproperty maps plus the
    symmetric-property set.

    Reachability uses one or more edges, so a class is its own superclass
    only when the data asserts a cycle through it.
    """
    superclasses: dict[int, frozenset[int]] = field(default_factory=dict)
    superproperties: dict[int, frozenset[int]] = field(default_factory=dict)
    symmetric: frozenset[int] = _EMPTY

    def superclasses_of(self, c: int) -> frozenset[int]:
        return self.superclasses.get(c, _EMPTY)

    def superproperties_of(self, p: int) -> frozenset[int]:
        return self.superproperties.get(p, _EMPTY)


def _reachable(edges: dict[int, set[int]]) -> dict[int, frozenset[int]]:
    out: dict[int, frozenset[int]] = {}
    for start in edges:
        seen: set[int] = set()
        stack = list(edges[start])
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(edges.get(node, ()))
        out[start] = frozenset(seen)
    return out


def build_tbox_closure(tbox: Iterable[Triple]) -> TBoxClosure:
    sub_edges: dict[int, set[int]] = {}
    prop_edges: dict[int, set[int]] = {}
    symmetric: set[int] = set()
    for s, p, o in tbox:
        if p == SUBCLASS:
            sub_edges.setdefault(s, set()).add(o)
        elif p == SUBPROPERTY:
            prop_edges.setdefault(s, set()).add(o)
        elif p == RDF_TYPE and o == SYMMETRIC:
            symmetric.add(s)
    return TBoxClosure(_reachable(sub_edges), _reachable(prop_edges),
                       frozenset(symmetric))


@dataclass
class JobRunner:
    workers: int = 1
    memory_budget: int = 64 * 1024 * 1024
    tmp_dir: Optional[str] = None
    partitions: int = 1

    @classmethod
    def from_config(cls, config: RunConfig) -> "JobRunner":
        return cls(workers=config.workers,
                   memory_budget=config.shuffle_budget_bytes,
                   tmp_dir=config.tmp_dir,
                   partitions=config.workers)

    def __call__(self, spec: JobSpec, pairs):
        return run_job(spec, pairs, workers=self.workers,
                       memory_budget=self.memory_budget, tmp_dir=self.tmp_dir)


def _dedup_reducer(key: bytes, values) -> list:
    for _ in values:
        return [(key, b"")]
    return []


def subclass_type_job(triples: Iterable[Triple], closure: TBoxClosure,
                      runner: JobRunner,
                      flags: tuple[int, ...] = (0, 1)) -> set[Triple]:
    """Subclass reasoning as a single map/reduce job.

    Map keys rdf:type triples by (flag 0, subject) and rdfs:subClassOf
    triples by (flag 1, subject), with the object as value.  Reduce gathers
    each subject's distinct classes, pulls every superclass from the
    in-memory schema, and emits one inferred triple per superclass not
    already in the class set; only inferred triples are emitted.

    ``flags`` restricts the job to one of its two branches when the active
    ruleset carries only one of the corresponding rules.
    """
    want_type = 0 in flags
    want_sub = 1 in flags
    pairs = [(encode_triple(t), b"") for t in triples
             if (want_type and t[1] == RDF_TYPE) or
                (want_sub and t[1] == SUBCLASS)]

    def mapper(k: bytes, _v: bytes):
        s, p, o = decode_triple(k)
        flag = b"\x00" if p == RDF_TYPE else b"\x01"
        return [(flag + encode_id(s), encode_id(o))]

    def reducer(key: bytes, values):
        classes = {decode_id(v) for v in values}
        supers: set[int] = set()
        for c in classes:
            supers |= closure.superclasses_of(c)
        supers -= classes
        if not supers:
            return []
        s = decode_id(key[1:])
        pred = RDF_TYPE if key[0] == 0 else SUBCLASS
        return [(encode_triple((s, pred, sup)), b"") for sup in supers]

    spec = JobSpec(mapper, _dedup_reducer, partitions=runner.partitions,
                   name="subclass")
    return {decode_triple(k) for k, _ in runner(spec, pairs)}


def is_schema_pattern(pattern: Pattern) -> bool:
    """Antecedents answerable from the in-memory schema closure."""
    p, o = pattern[1], pattern[2]
    if p == SUBCLASS or p == SUBPROPERTY:
        return True
    return p == RDF_TYPE and o == SYMMETRIC


def make_schema_lookup(closure: TBoxClosure,
                       tbox: Iterable[Triple]) -> Callable[[Pattern], list[Triple]]:
    """Answer terminological patterns from the pre-expanded closure.

    Patterns outside the closure's shapes fall back to a scan of the raw
    schema triples, so custom rules still join correctly.
    """
    tbox_list = list(tbox)

    def lookup(pattern: Pattern) -> list[Triple]:
        s, p, o = pattern
        if p == SUBCLASS or p == SUBPROPERTY:
            table = (closure.superclasses if p == SUBCLASS
                     else closure.superproperties)
            if isinstance(s, int):
                sups = table.get(s, _EMPTY)
                if isinstance(o, int):
                    return [(s, p, o)] if o in sups else []
                return [(s, p, sup) for sup in sups]
            out = []
            for sub, sups in table.items():
                if isinstance(o, int):
                    if o in sups:
                        out.append((sub, p, o))
                else:
                    out.extend((sub, p, sup) for sup in sups)
            return out
        if p == RDF_TYPE and o == SYMMETRIC:
            if isinstance(s, int):
                return [(s, RDF_TYPE, SYMMETRIC)] if s in closure.symmetric else []
            return [(m, RDF_TYPE, SYMMETRIC) for m in closure.symmetric]
        out = []
        for t in tbox_list:
            if match_triple(pattern, t) is not None:
                out.append(t)
        return out

    return lookup


def generic_rule_job(rule: Rule, triples: Iterable[Triple],
                     closure: TBoxClosure, tbox: Iterable[Triple],
                     runner: JobRunner) -> set[Triple]:
    """Map-side join for rules with at most one instance antecedent.

    Instance triples stream through the mapper and join the remaining
    terminological antecedents against the in-memory schema, so no schema
    data is shuffled.  Rules with two or more instance antecedents are not
    supported by this strategy (none exist in the built-in table; sameAs
    transitivity is realized by the equivalence map instead).
    """
    instance_idx = [i for i, a in enumerate(rule.antecedents)
                    if not is_schema_pattern(a)]
    if len(instance_idx) > 1:
        raise UnsupportedRuleError(
            f"rule {rule.name}: joins over multiple instance antecedents are "
            f"not supported by the forward strategy")
    schema_lookup = make_schema_lookup(closure, tbox)

    if not instance_idx:
        bindings = join_antecedents(schema_lookup, rule.antecedents)
        return set(apply_rule(rule, bindings))

    idx = instance_idx[0]
    inst_pat = rule.antecedents[idx]
    rest = [a for i, a in enumerate(rule.antecedents) if i != idx]

    def mapper(k: bytes, _v: bytes):
        t = decode_triple(k)
        seed = match_triple(inst_pat, t)
        if seed is None:
            return ()
        bindings = join_antecedents(schema_lookup, rest, seed)
        if not bindings:
            return ()
        return [(encode_triple(ct), b"") for ct in apply_rule(rule, bindings)]

    pairs = [(encode_triple(t), b"") for t in triples]
    spec = JobSpec(mapper, _dedup_reducer, partitions=runner.partitions,
                   name=rule.name)
    return {decode_triple(k) for k, _ in runner(spec, pairs)}


def duplicate_elimination_job(candidates: Iterable[Triple],
                              base: Iterable[Triple],
                              runner: JobRunner) -> set[Triple]:
    """Drop candidate triples that already exist in the base.

    Each triple is shuffled as its own key, tagged inferred or original;
    the reducer emits a triple exactly when it carries the inferred tag and
    not the original tag, so output is duplicate-free and disjoint from the
    base.
    """
    pairs = [(encode_triple(t), b"i") for t in candidates]
    pairs.extend((encode_triple(t), b"o") for t in base)

    def mapper(k: bytes, v: bytes):
        return ((k, v),)

    def reducer(key: bytes, values):
        inferred = False
        for v in values:
            if v == b"o":
                return []
            inferred = True
        return [(key, b"")] if inferred else []

    spec = JobSpec(mapper, reducer, partitions=runner.partitions, name="dedup")
    return {decode_triple(k) for k, _ in runner(spec, pairs)}


# Structural signatures of rules the subclass job already covers, and of the
# sameAs rules realized by the equivalence map.
def _shape(rule: Rule):
    names: dict[str, str] = {}

    def norm(pat: Pattern):
        out = []
        for a in pat:
            if isinstance(a, Var):
                out.append(names.setdefault(a.name, f"_{len(names)}"))
            else:
                out.append(a)
        return tuple(out)

    return tuple(norm(p) for p in rule.antecedents), norm(rule.consequent)


def _builtin_shapes():
    from .rules import builtin_ruleset
    shapes = {}
    for r in builtin_ruleset():
        shapes[r.name] = _shape(r)
    return shapes


_SHAPES = _builtin_shapes()
_SUBCLASS_JOB_SHAPES = {_SHAPES["R-type-sub"], _SHAPES["R-sub-trans"]}
_EQUIVALENCE_SHAPES = {_SHAPES["R-sameAs-trans"], _SHAPES["R-sameAs-symm"]}


@dataclass
class _Plan:
    subclass_flags: tuple[int, ...]
    streaming: list[Rule]
    equivalence_routed: list[Rule]


def _plan(rules: list[Rule]) -> _Plan:
    flags = []
    streaming: list[Rule] = []
    eq_routed: list[Rule] = []
    for rule in rules:
        shape = _shape(rule)
        if shape == _SHAPES["R-type-sub"]:
            flags.append(0)
        elif shape == _SHAPES["R-sub-trans"]:
            flags.append(1)
        elif shape in _EQUIVALENCE_SHAPES:
            eq_routed.append(rule)
        else:
            streaming.append(rule)
    return _Plan(tuple(sorted(set(flags))), streaming, eq_routed)


def materialize(kb: KnowledgeBase, rules: Optional[list[Rule]] = None,
                config: Optional[RunConfig] = None,
                stats_sink: Optional[Callable[[dict], None]] = None) -> KnowledgeBase:
    """Extend the store with every triple the ruleset entails.

    Inputs are never removed or altered (sameAs canonicalization excepted,
    which happens up front).  Derived owl:sameAs facts fold into the
    equivalence map rather than the triple set.  Raises MaterializeError if
    the configured round limit is exceeded.
    """
    config = config or RunConfig()
    active = active_ruleset(rules, sameas_enabled=config.canonicalize_sameas)
    if config.canonicalize_sameas and not kb.canonicalized:
        kb.canonicalize()
    plan = _plan(active)
    runner = JobRunner.from_config(config)

    base: set[Triple] = set(kb.all_triples())
    delta: set[Triple] = set(base)
    prev_closure: Optional[TBoxClosure] = None
    history: list[dict] = []
    round_no = 0

    while True:
        round_no += 1
        if round_no > config.round_limit:
            raise MaterializeError(
                f"no fixpoint after {config.round_limit} rounds; "
                f"last rounds: {history[-3:]}")
        closure = build_tbox_closure(kb.tbox)
        inputs = base if (prev_closure is not None and closure != prev_closure) \
            else delta
        inputs_list = list(inputs)

        emitted = 0
        candidates: set[Triple] = set()
        if plan.subclass_flags:
            out = subclass_type_job(inputs_list, closure, runner,
                                    flags=plan.subclass_flags)
            emitted += len(out)
            candidates |= out
        for rule in plan.streaming:
            out = generic_rule_job(rule, inputs_list, closure, kb.tbox, runner)
            emitted += len(out)
            candidates |= out

        survivors = duplicate_elimination_job(candidates, base, runner) \
            if candidates else set()

        eq_changed = False
        if config.canonicalize_sameas:
            sameas_pairs = [(s, o) for s, p, o in survivors if p == SAMEAS]
            if sameas_pairs:
                survivors = {t for t in survivors if t[1] != SAMEAS}
                eq_changed = kb.fold_sameas(sameas_pairs)
                if eq_changed:
                    base = set(kb.all_triples())
                    survivors = {kb.eq.canonical_triple(t)
                                 for t in survivors} - base

        accepted = survivors - base
        row = {"round": round_no, "emitted": emitted,
               "duplicates": emitted - len(accepted), "accepted": len(accepted)}
        history.append(row)
        if stats_sink is not None:
            stats_sink(row)

        if not accepted and not eq_changed:
            break
        kb.bulk_add(accepted)
        base |= accepted
        delta = set(accepted) if not eq_changed else set(base)
        prev_closure = closure

    kb.materialized = True
    kb.rounds = round_no
    kb.rebuild_indexes()
    return kb
