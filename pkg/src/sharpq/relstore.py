"""Finite relational structures: text format, homomorphism search, structure algebra.

A Structure is both a database instance and the structural view of a
disjunction-free query, so everything here is shared by the query and
equivalence layers. All values are immutable after construction and all
operations are pure functions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ParseError, SharpqError

NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class Signature:
    """Relation symbols and their arities. Arities are >= 1 (no nullary relations)."""

    symbols: tuple  # tuple of (name, arity) pairs, fixed order

    def __post_init__(self):
        seen = set()
        for name, arity in self.symbols:
            if not NAME_RE.match(name):
                raise ParseError(f"bad relation name {name!r}")
            if name in seen:
                raise ParseError(f"duplicate relation name {name!r}")
            if not isinstance(arity, int) or arity < 1:
                raise ParseError(f"arity of {name} must be a positive integer, got {arity!r}")
            seen.add(name)

    def arity(self, name):
        for n, a in self.symbols:
            if n == name:
                return a
        raise KeyError(name)

    def names(self):
        return [n for n, _ in self.symbols]

    def __contains__(self, name):
        return any(n == name for n, _ in self.symbols)


@dataclass(frozen=True, eq=True)
class Assignment:
    """A finite partial map from variables/elements to elements, with explicit domain."""

    bindings: tuple  # sorted tuple of (var, value) pairs

    @staticmethod
    def of(mapping):
        return Assignment(tuple(sorted(mapping.items())))

    @property
    def domain(self):
        return frozenset(k for k, _ in self.bindings)

    def as_dict(self):
        return dict(self.bindings)

    def __getitem__(self, key):
        for k, v in self.bindings:
            if k == key:
                return v
        raise KeyError(key)


EMPTY_ASSIGNMENT = Assignment(())


@dataclass(frozen=True)
class Structure:
    """A finite relational structure over a Signature.

    universe is ordered (first-appearance order from parsing); relations maps
    each symbol name to a frozenset of element tuples.
    """

    sig: Signature
    universe: tuple
    relations: dict = field(compare=True)

    def __post_init__(self):
        if not self.universe:
            raise ParseError("universe must be non-empty")
        if len(set(self.universe)) != len(self.universe):
            raise ParseError("duplicate universe element")
        elems = set(self.universe)
        for name, arity in self.sig.symbols:
            for tup in self.relations.get(name, ()):
                if len(tup) != arity:
                    raise ParseError(f"arity mismatch in {name}{tup!r}: expected {arity}")
                for e in tup:
                    if e not in elems:
                        raise ParseError(f"tuple entry {e!r} not in the universe")
        for name in self.relations:
            if name not in self.sig:
                raise ParseError(f"fact uses undeclared relation {name!r}")

    def tuples(self, name):
        return self.relations.get(name, frozenset())

    def all_facts(self):
        """Iterate (symbol, tuple) pairs in deterministic order."""
        for name, _ in self.sig.symbols:
            for tup in sorted(self.tuples(name)):
                yield name, tup

    def __eq__(self, other):
        if not isinstance(other, Structure):
            return NotImplemented
        return (
            self.sig == other.sig
            and self.universe == other.universe
            and {n: frozenset(ts) for n, ts in self.relations.items() if ts}
            == {n: frozenset(ts) for n, ts in other.relations.items() if ts}
        )

    def __hash__(self):
        return hash((self.sig, self.universe, serialize_structure(self)))


def make_structure(sig, universe, relations):
    """Normalizing constructor: freezes tuple sets, drops empty entries."""
    rels = {}
    for name, tuples in relations.items():
        ts = frozenset(tuple(t) for t in tuples)
        if ts:
            rels[name] = ts
    return Structure(sig=sig, universe=tuple(universe), relations=rels)


# ---------------------------------------------------------------------------
# .rel parsing and serialization
# ---------------------------------------------------------------------------

# A '#' begins a comment only at line start or after whitespace; a '#' glued to
# a token (as produced by the disjoint-union rename scheme, e.g. "a#L") is part
# of the token.
_COMMENT_RE = re.compile(r"(?:^|(?<=\s))#.*$")
_FACT_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\((.*)\)$")


def _strip_comment(line):
    return _COMMENT_RE.sub("", line)


def parse_structure(text):
    """Parse a `.rel` document into a Structure.

    Universe element order is first-appearance order: the `universe` line if
    present, otherwise order of appearance in facts.
    """
    sig_symbols = None
    universe = None
    seen_elems = []
    seen_set = set()
    facts = {}

    def note_elem(e, lineno, col):
        if universe is not None:
            if e not in seen_set:
                raise ParseError(f"element {e!r} not declared in universe", lineno, col)
        elif e not in seen_set:
            seen_set.add(e)
            seen_elems.append(e)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("signature"):
            if sig_symbols is not None:
                raise ParseError("duplicate signature line", lineno, 1)
            sig_symbols = []
            for part in line[len("signature"):].split():
                if "/" not in part:
                    raise ParseError(f"expected name/arity, got {part!r}", lineno, raw.find(part) + 1)
                name, _, ar = part.partition("/")
                if not ar.isdigit():
                    raise ParseError(f"arity must be an integer in {part!r}", lineno, raw.find(part) + 1)
                sig_symbols.append((name, int(ar)))
            continue
        if line.startswith("universe"):
            if sig_symbols is None:
                raise ParseError("universe line before signature", lineno, 1)
            if universe is not None:
                raise ParseError("duplicate universe line", lineno, 1)
            universe = line[len("universe"):].split()
            if not universe:
                raise ParseError("empty universe", lineno, 1)
            if len(set(universe)) != len(universe):
                raise ParseError("duplicate universe element", lineno, 1)
            seen_set = set(universe)
            continue
        m = _FACT_RE.match(line)
        if not m:
            raise ParseError(f"cannot parse line {line!r}", lineno, 1)
        if sig_symbols is None:
            raise ParseError("fact before signature line", lineno, 1)
        name, args_text = m.group(1), m.group(2)
        sig = Signature(tuple(sig_symbols))
        if name not in sig:
            raise ParseError(f"undeclared relation {name!r}", lineno, 1)
        args = [a.strip() for a in args_text.split(",")] if args_text.strip() else []
        if len(args) != sig.arity(name):
            raise ParseError(
                f"arity mismatch: {name} expects {sig.arity(name)} arguments, got {len(args)}",
                lineno,
                1,
            )
        for a in args:
            if not a:
                raise ParseError("empty element name in fact", lineno, 1)
            note_elem(a, lineno, 1)
        facts.setdefault(name, set()).add(tuple(args))

    if sig_symbols is None:
        raise ParseError("missing signature line")
    elems = universe if universe is not None else seen_elems
    if not elems:
        raise ParseError("empty universe")
    return make_structure(Signature(tuple(sig_symbols)), elems, facts)


def serialize_structure(s):
    """Render a Structure as `.rel` text; parse_structure round-trips it."""
    lines = ["signature " + " ".join(f"{n}/{a}" for n, a in s.sig.symbols)]
    lines.append("universe " + " ".join(s.universe))
    fact_lines = []
    for name, _ in s.sig.symbols:
        for tup in s.tuples(name):
            fact_lines.append(f"{name}({','.join(tup)})")
    lines.extend(sorted(fact_lines))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Homomorphisms
# ---------------------------------------------------------------------------


def homomorphisms(src, dst, pin=None, enumerate_witnesses=False):
    """Count maps h: src universe -> dst universe preserving every tuple.

    pin (an Assignment or dict from src elements to dst elements) fixes part of
    the map. With enumerate_witnesses=True returns (count, tuple of dicts),
    otherwise just the count. Counts are exact arbitrary-precision ints.
    """
    if src.sig != dst.sig:
        raise SharpqError("homomorphisms: source and target signatures differ")
    if pin is None:
        pinned = {}
    elif isinstance(pin, Assignment):
        pinned = pin.as_dict()
    else:
        pinned = dict(pin)
    for k, v in pinned.items():
        if k not in set(src.universe):
            raise SharpqError(f"pin maps unknown source element {k!r}")
        if v not in set(dst.universe):
            raise SharpqError(f"pin targets unknown element {v!r}")

    # incidence: element -> list of (symbol, tuple) facts it appears in
    incidence = {e: [] for e in src.universe}
    for name, tup in src.all_facts():
        for e in set(tup):
            incidence[e].append((name, tup))

    # assign high-degree elements first; pinned ones before everything
    order = sorted(
        src.universe,
        key=lambda e: (e not in pinned, -len(incidence[e]), src.universe.index(e)),
    )
    dst_tuples = {name: dst.tuples(name) for name in dst.sig.names()}

    h = dict(pinned)
    witnesses = []
    count = 0

    def consistent(e):
        # check each fact incident to e in which every element is now assigned
        for name, tup in incidence[e]:
            image = []
            complete = True
            for x in tup:
                v = h.get(x)
                if v is None:
                    complete = False
                    break
                image.append(v)
            if complete and tuple(image) not in dst_tuples[name]:
                return False
        return True

    # verify pinned part immediately
    for e in pinned:
        if not consistent(e):
            return (0, ()) if enumerate_witnesses else 0

    free_order = [e for e in order if e not in pinned]

    def search(i):
        nonlocal count
        if i == len(free_order):
            count += 1
            if enumerate_witnesses:
                witnesses.append(dict(h))
            return
        e = free_order[i]
        for b in dst.universe:
            h[e] = b
            if consistent(e):
                search(i + 1)
            del h[e]

    search(0)
    if enumerate_witnesses:
        return count, tuple(witnesses)
    return count


# ---------------------------------------------------------------------------
# Structure algebra
# ---------------------------------------------------------------------------


def product(a, b):
    """Direct product: universe of pairs, a tuple holds iff both projections hold."""
    if a.sig != b.sig:
        raise SharpqError("product: signatures differ")
    universe = [f"{x}*{y}" for x in a.universe for y in b.universe]
    pair_of = {f"{x}*{y}": (x, y) for x in a.universe for y in b.universe}
    rels = {}
    for name, arity in a.sig.symbols:
        tuples = set()
        for ta in a.tuples(name):
            for tb in b.tuples(name):
                tuples.add(tuple(f"{x}*{y}" for x, y in zip(ta, tb)))
        if tuples:
            rels[name] = tuples
    s = make_structure(a.sig, universe, rels)
    # sanity: every product element decodes
    assert all(e in pair_of for e in s.universe)
    return s


def disjoint_union(a, b):
    """Disjoint union; colliding element ids get `#L` / `#R` suffixes."""
    if a.sig != b.sig:
        raise SharpqError("disjoint_union: signatures differ")
    collide = set(a.universe) & set(b.universe)
    ren_a = {e: (e + "#L" if e in collide else e) for e in a.universe}
    ren_b = {e: (e + "#R" if e in collide else e) for e in b.universe}
    universe = [ren_a[e] for e in a.universe] + [ren_b[e] for e in b.universe]
    if len(set(universe)) != len(universe):
        # e.g. a already contains "x#L" while b contains "x"; re-suffix until unique
        raise SharpqError("disjoint_union: rename scheme collided; element names too adversarial")
    rels = {}
    for name, _ in a.sig.symbols:
        tuples = {tuple(ren_a[x] for x in t) for t in a.tuples(name)}
        tuples |= {tuple(ren_b[x] for x in t) for t in b.tuples(name)}
        if tuples:
            rels[name] = tuples
    return make_structure(a.sig, universe, rels)


def identity_structure(sig):
    """The one-element structure where every relation holds on the diagonal tuple."""
    rels = {name: {("1",) * arity} for name, arity in sig.symbols}
    return make_structure(sig, ("1",), rels)


def poly_action(p, b):
    """Apply a polynomial with non-negative integer coefficients to a structure.

    p is a sequence of coefficients, low degree first ([1, 0, 1] is 1 + X^2).
    Evaluated in Horner form over structure product/disjoint union, with the
    one-element all-tuples structure as the multiplicative unit.
    """
    coeffs = list(p)
    while coeffs and coeffs[-1] == 0:
        coeffs.pop()
    if not coeffs:
        raise ValueError("poly_action: the zero polynomial has no structure value")
    if any(c < 0 or not isinstance(c, int) for c in coeffs):
        raise ValueError("poly_action: coefficients must be non-negative integers")

    one = identity_structure(b.sig)

    def scalar(k):
        acc = one
        for _ in range(k - 1):
            acc = disjoint_union(acc, one)
        return acc

    acc = None
    for c in reversed(coeffs):
        if acc is not None:
            acc = product(acc, b)
        if c > 0:
            term = scalar(c)
            acc = term if acc is None else disjoint_union(acc, term)
    return acc
