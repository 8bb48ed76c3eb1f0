"""Horn rules over triple patterns: unification, substitution, application.

Rules are plain data.  The built-in table covers the RDFS/OWL fragment the
engine ships with; extra rules can be loaded from a rule file, so growing
the fragment is a data change rather than an engine change.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from . import ntriples
from .kb import Mask, Triple
from .terms import (RDF_TYPE, SAMEAS, SUBCLASS, SUBPROPERTY, SYMMETRIC,
                    Term, TermDictionary)


@dataclass(frozen=True, slots=True)
class Var:
    name: str

    def __repr__(self):
        return f"?{self.name}"


Atom = Union[int, Var]
Pattern = tuple[Atom, Atom, Atom]
Binding = dict[str, int]


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class Rule:
    name: str
    antecedents: tuple[Pattern, ...]
    consequent: Pattern
    # Closure companions round out the core table (e.g. sameAs symmetry);
    # they are flagged so rule listings can tell the two groups apart.
    companion: bool = False

    def __post_init__(self):
        if not self.antecedents:
            raise RuleError(f"rule {self.name}: no antecedents")
        body_vars = set()
        for pat in self.antecedents:
            body_vars.update(pattern_vars(pat))
        unsafe = pattern_vars(self.consequent) - body_vars
        if unsafe:
            raise RuleError(
                f"rule {self.name}: consequent variables {sorted(unsafe)} "
                f"not bound by any antecedent")


def pattern_vars(pattern: Pattern) -> set[str]:
    return {a.name for a in pattern if isinstance(a, Var)}


def is_ground(pattern: Pattern) -> bool:
    return not any(isinstance(a, Var) for a in pattern)


def pattern_mask(pattern: Pattern) -> Mask:
    return tuple(a if isinstance(a, int) else None for a in pattern)  # type: ignore[return-value]


def substitute(pattern: Pattern, binding: Binding) -> Pattern:
    """Replace bound variables by their ids; unbound variables stay."""
    out = []
    for a in pattern:
        if isinstance(a, Var):
            got = binding.get(a.name)
            out.append(a if got is None else got)
        else:
            out.append(a)
    return tuple(out)  # type: ignore[return-value]


def match_triple(pattern: Pattern, triple: Triple,
                 binding: Optional[Binding] = None) -> Optional[Binding]:
    """Unify a pattern against a ground triple, extending ``binding``.

    A variable already bound to a different id is a unification failure,
    not an overwrite.
    """
    out = dict(binding) if binding else {}
    for a, v in zip(pattern, triple):
        if isinstance(a, Var):
            seen = out.get(a.name)
            if seen is None:
                out[a.name] = v
            elif seen != v:
                return None
        elif a != v:
            return None
    return out


def unify_consequent(rule: Rule, query: Pattern) -> Optional[Binding]:
    """Bind the rule's consequent against a query pattern.

    Succeeds iff every bound query position matches the consequent position
    (consequent variable binds to the query constant; consequent constant
    must equal it).  Query variables impose no constraint.
    """
    binding: Binding = {}
    for c, q in zip(rule.consequent, query):
        if isinstance(q, Var):
            continue
        if isinstance(c, Var):
            seen = binding.get(c.name)
            if seen is None:
                binding[c.name] = q
            elif seen != q:
                return None
        elif c != q:
            return None
    return binding


def apply_rule(rule: Rule, bindings: Iterable[Binding]) -> list[Triple]:
    """One ground triple per binding via the consequent; deduplicated."""
    out: set[Triple] = set()
    for b in bindings:
        t = substitute(rule.consequent, b)
        if not is_ground(t):
            missing = pattern_vars(t)
            raise RuleError(
                f"rule {rule.name}: binding leaves consequent variables "
                f"{sorted(missing)} unbound")
        out.add(t)  # type: ignore[arg-type]
    return sorted(out)


LookupFn = Callable[[Pattern], Iterable[Triple]]


def join_antecedents(lookup: LookupFn, antecedents: Iterable[Pattern],
                     seed: Optional[Binding] = None) -> list[Binding]:
    """Left-to-right nested-loop join of the antecedents.

    For each antecedent: substitute the current binding, look up matches,
    extend the binding with the matched positions.  Returns every complete
    binding.
    """
    bindings: list[Binding] = [dict(seed) if seed else {}]
    for pat in antecedents:
        extended: list[Binding] = []
        for b in bindings:
            bound = substitute(pat, b)
            for t in lookup(bound):
                nb = match_triple(pat, t, b)
                if nb is not None:
                    extended.append(nb)
        bindings = extended
        if not bindings:
            break
    return bindings


def _v(name: str) -> Var:
    return Var(name)


def builtin_ruleset() -> list[Rule]:
    """The built-in rule table, in fixed order.

    Transitivity/symmetry companions (flagged) complete the closure the
    core rules are meant to reach: without sameAs symmetry, one-directional
    assertions could never build equivalence classes.
    """
    v, w, u = _v("v"), _v("w"), _v("u")
    s, x, y, z = _v("s"), _v("x"), _v("y"), _v("z")
    p, q, r, o = _v("p"), _v("q"), _v("r"), _v("o")
    return [
        Rule("R-sameAs-trans",
             ((v, SAMEAS, w), (w, SAMEAS, u)), (v, SAMEAS, u)),
        Rule("R-type-sub",
             ((s, RDF_TYPE, x), (x, SUBCLASS, y)), (s, RDF_TYPE, y)),
        Rule("R-sub-trans",
             ((x, SUBCLASS, y), (y, SUBCLASS, z)), (x, SUBCLASS, z)),
        Rule("R-subprop",
             ((s, p, o), (p, SUBPROPERTY, q)), (s, q, o)),
        Rule("R-subprop-trans",
             ((p, SUBPROPERTY, q), (q, SUBPROPERTY, r)), (p, SUBPROPERTY, r),
             companion=True),
        Rule("R-symm",
             ((p, RDF_TYPE, SYMMETRIC), (v, p, u)), (u, p, v)),
        Rule("R-sameAs-symm",
             ((v, SAMEAS, w),), (w, SAMEAS, v), companion=True),
    ]


def active_ruleset(rules: Optional[list[Rule]] = None, *,
                   sameas_enabled: bool = True) -> list[Rule]:
    """The rules actually evaluated.

    With sameAs canonicalization disabled, owl:sameAs is an inert predicate:
    its rules are dropped so forward and backward strategies agree.
    """
    rules = list(builtin_ruleset() if rules is None else rules)
    if not sameas_enabled:
        rules = [r for r in rules if not _is_sameas_rule(r)]
    return rules


def _is_sameas_rule(rule: Rule) -> bool:
    pats = rule.antecedents + (rule.consequent,)
    return all(pat[1] == SAMEAS for pat in pats)


# -- rule file / pattern syntax -------------------------------------------
#
# One rule per line:   name: <pat>, <pat> -> <pat>
# Patterns are three terms in N-Triples syntax, with ?var for variables.
# Blank lines and '#' comments are skipped.

def parse_pattern_atom(text: str, i: int, dictionary: TermDictionary, *,
                       extend: bool, line: int = 1) -> tuple[Atom, int]:
    n = len(text)
    if i < n and text[i] == "?":
        j = i + 1
        while j < n and (text[j].isalnum() or text[j] == "_"):
            j += 1
        if j == i + 1:
            raise ntriples.ParseError("empty variable name", line, i + 1)
        return Var(text[i + 1:j]), j
    term, j = ntriples.parse_term(text, i, line)
    if extend:
        return dictionary.extend(term), j
    got = dictionary.lookup(term)
    if got is None:
        raise UnknownPatternTermError(term)
    return got, j


class UnknownPatternTermError(KeyError):
    """A pattern constant that is not in the dictionary (cannot match)."""

    def __init__(self, term: Term):
        super().__init__(ntriples.format_term(term))
        self.term = term


def parse_pattern(text: str, dictionary: TermDictionary, *,
                  extend: bool = False, line: int = 1) -> Pattern:
    i = 0
    atoms = []
    for _ in range(3):
        while i < len(text) and text[i] in " \t":
            i += 1
        atom, i = parse_pattern_atom(text, i, dictionary, extend=extend, line=line)
        atoms.append(atom)
    while i < len(text) and text[i] in " \t.":
        i += 1
    if i != len(text):
        raise ntriples.ParseError("trailing characters in pattern", line, i + 1)
    return tuple(atoms)  # type: ignore[return-value]


def parse_rule_file(lines: Iterable[str], dictionary: TermDictionary) -> list[Rule]:
    """Parse a rule file, interning any new constants into the dictionary."""
    rules = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        name, sep, rest = text.partition(":")
        if not sep:
            raise ntriples.ParseError("missing ':' after rule name", lineno, 1)
        body, arrow, head = rest.partition("->")
        if not arrow:
            raise ntriples.ParseError("missing '->' in rule", lineno, 1)
        antecedents = tuple(
            parse_pattern(part.strip(), dictionary, extend=True, line=lineno)
            for part in body.split(",") if part.strip())
        consequent = parse_pattern(head.strip(), dictionary, extend=True,
                                   line=lineno)
        rules.append(Rule(name.strip(), antecedents, consequent))
    return rules


def format_pattern(pattern: Pattern, dictionary: TermDictionary) -> str:
    parts = []
    for a in pattern:
        if isinstance(a, Var):
            parts.append(f"?{a.name}")
        else:
            parts.append(ntriples.format_term(dictionary.resolve(a)))
    return " ".join(parts)
