"""Counting formulas over ep-casts: AST, well-formedness, width, evaluation.

A counting formula is built from casts C[ep; L] (the 0/1 indicator of an
ep-formula, padded to the liberal set L), projections P V (summation over V),
expansions E V (adding vacuous variables), products, sums, and integer
constants. Evaluation produces a table of integers indexed by assignments of
the formula's free variables; its cost is governed by the formula's width.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

from .errors import CapExceeded, ParseError, SharpqError
from .epquery import (
    And,
    Atom,
    Exists,
    Or,
    Top,
    _infer_signature,
    free_variables,
    parse_ep_expression,
    render_ep,
)

# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cast:
    """0/1 indicator of an ep-formula over assignments of the liberal set."""

    ep: object
    liberal: tuple

    def __post_init__(self):
        object.__setattr__(self, "liberal", tuple(sorted(set(self.liberal))))


@dataclass(frozen=True)
class Project:
    vars: frozenset
    child: object

    def __post_init__(self):
        object.__setattr__(self, "vars", frozenset(self.vars))


@dataclass(frozen=True)
class Expand:
    vars: frozenset
    child: object

    def __post_init__(self):
        object.__setattr__(self, "vars", frozenset(self.vars))


@dataclass(frozen=True)
class Times:
    left: object
    right: object


@dataclass(frozen=True)
class Plus:
    left: object
    right: object


@dataclass(frozen=True)
class Const:
    n: int


# ---------------------------------------------------------------------------
# free/closed bookkeeping and validation
# ---------------------------------------------------------------------------


def free_closed(f):
    """(free, closed) variable sets of a counting formula, bottom-up.

    The derived sets are computed unconditionally; side conditions are the
    business of validate().
    """
    if isinstance(f, Cast):
        return frozenset(f.liberal), frozenset()
    if isinstance(f, Project):
        fr, cl = free_closed(f.child)
        return fr - f.vars, cl | f.vars
    if isinstance(f, Expand):
        fr, cl = free_closed(f.child)
        return fr | f.vars, cl
    if isinstance(f, (Times, Plus)):
        fl, cl_l = free_closed(f.left)
        fr, cl_r = free_closed(f.right)
        return fl | fr, cl_l | cl_r
    if isinstance(f, Const):
        return frozenset(), frozenset()
    raise TypeError(f"not a counting-formula node: {f!r}")


@dataclass(frozen=True)
class Violation:
    path: str
    message: str


@dataclass(frozen=True)
class Validation:
    free: frozenset
    closed: frozenset
    violations: tuple

    @property
    def ok(self):
        return not self.violations


def validate(f):
    """Check every side condition bottom-up; violations carry the node path.

    Returns a Validation whose free/closed sets follow the derived-set rules
    regardless of validity; `violations` lists each failed condition in
    bottom-up, left-to-right order.
    """
    violations = []

    def walk(node, path):
        if isinstance(node, Cast):
            fr = free_variables(node.ep)
            lib = frozenset(node.liberal)
            if not fr <= lib:
                extra = ", ".join(sorted(fr - lib))
                violations.append(
                    Violation(path, f"cast liberal set must contain the ep formula's free variables (missing {extra})")
                )
            return lib, frozenset()
        if isinstance(node, Project):
            fr, cl = walk(node.child, path + ".child")
            if node.vars & cl:
                bad = ", ".join(sorted(node.vars & cl))
                violations.append(
                    Violation(path, f"projection variables may not be closed in the child ({bad})")
                )
            return fr - node.vars, cl | node.vars
        if isinstance(node, Expand):
            fr, cl = walk(node.child, path + ".child")
            if node.vars & (fr | cl):
                bad = ", ".join(sorted(node.vars & (fr | cl)))
                violations.append(
                    Violation(path, f"expansion variables must be fresh (already used: {bad})")
                )
            return fr | node.vars, cl
        if isinstance(node, Times):
            fl, cl_l = walk(node.left, path + ".left")
            fr, cl_r = walk(node.right, path + ".right")
            if fl != fr:
                diff = ", ".join(sorted(fl ^ fr))
                violations.append(
                    Violation(path, f"product operands must have equal free sets (differ on {diff})")
                )
            if cl_l & cl_r:
                bad = ", ".join(sorted(cl_l & cl_r))
                violations.append(
                    Violation(path, f"product operands must have disjoint closed sets (share {bad})")
                )
            return fl | fr, cl_l | cl_r
        if isinstance(node, Plus):
            fl, cl_l = walk(node.left, path + ".left")
            fr, cl_r = walk(node.right, path + ".right")
            if fl != fr:
                diff = ", ".join(sorted(fl ^ fr))
                violations.append(
                    Violation(path, f"sum operands must have equal free sets (differ on {diff})")
                )
            return fl | fr, cl_l | cl_r
        if isinstance(node, Const):
            return frozenset(), frozenset()
        raise TypeError(f"not a counting-formula node: {node!r}")

    fr, cl = walk(f, "root")
    return Validation(free=fr, closed=cl, violations=tuple(violations))


def _require_valid(f):
    report = validate(f)
    if not report.ok:
        v = report.violations[0]
        raise SharpqError(f"invalid counting formula at {v.path}: {v.message}")
    return report


def _ep_width(f):
    w = len(free_variables(f))
    if isinstance(f, (And, Or)):
        return max(w, _ep_width(f.left), _ep_width(f.right))
    if isinstance(f, Exists):
        return max(w, _ep_width(f.body))
    return w


def width(f):
    """max |free| over all subformulas, counting ep subformulas inside casts."""
    fr, _ = free_closed(f)
    w = len(fr)
    if isinstance(f, Cast):
        return max(w, _ep_width(f.ep))
    if isinstance(f, (Project, Expand)):
        return max(w, width(f.child))
    if isinstance(f, (Times, Plus)):
        return max(w, width(f.left), width(f.right))
    return w


def sharp_width(f):
    """max |free| over counting subformulas only (casts count as leaves)."""
    fr, _ = free_closed(f)
    w = len(fr)
    if isinstance(f, (Project, Expand)):
        return max(w, sharp_width(f.child))
    if isinstance(f, (Times, Plus)):
        return max(w, sharp_width(f.left), sharp_width(f.right))
    return w


# ---------------------------------------------------------------------------
# .shq text format
# ---------------------------------------------------------------------------

_INT_RE = re.compile(r"-?\d+")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*")


class _SharpParser:
    def __init__(self, text):
        self.src = "\n".join(
            re.sub(r"(?:^|(?<=\s))#.*$", "", ln) for ln in text.splitlines()
        )
        self.pos = 0

    def error(self, msg):
        line = self.src.count("\n", 0, self.pos) + 1
        col = self.pos - (self.src.rfind("\n", 0, self.pos) + 1) + 1
        raise ParseError(msg, line, col)

    def skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def expect(self, ch):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def parse(self):
        node = self.parse_formula()
        self.skip_ws()
        if self.pos < len(self.src):
            self.error(f"trailing input: {self.src[self.pos]!r}")
        return node

    def parse_varset(self):
        self.expect("{")
        vars_ = []
        if self.peek() == "}":
            self.pos += 1
            return vars_
        while True:
            self.skip_ws()
            m = _NAME_RE.match(self.src, self.pos)
            if not m:
                self.error("expected a variable name")
            vars_.append(m.group())
            self.pos = m.end()
            ch = self.peek()
            if ch == ",":
                self.pos += 1
            elif ch == "}":
                self.pos += 1
                return vars_
            else:
                self.error("expected ',' or '}' in variable set")

    def parse_formula(self):
        ch = self.peek()
        if ch == "C" and self._next_nonspace(self.pos + 1) == "[":
            self.pos += 1
            self.skip_ws()
            self.pos += 1  # '['
            end = self.src.find(";", self.pos)
            if end < 0:
                self.error("cast needs ';' between formula and variable set")
            ep_text = self.src[self.pos : end]
            try:
                ep = parse_ep_expression(ep_text)
            except ParseError as exc:
                self.error(f"inside cast: {exc}")
            self.pos = end + 1
            liberal = self.parse_varset()
            self.expect("]")
            return Cast(ep=ep, liberal=tuple(liberal))
        if ch in ("P", "E") and self._next_nonspace(self.pos + 1) == "{":
            self.pos += 1
            vars_ = self.parse_varset()
            child = self.parse_formula()
            cls = Project if ch == "P" else Expand
            return cls(frozenset(vars_), child)
        if ch == "(":
            self.pos += 1
            left = self.parse_formula()
            op = self.peek()
            if op not in ("*", "+"):
                self.error("expected '*' or '+'")
            self.pos += 1
            right = self.parse_formula()
            self.expect(")")
            return Times(left, right) if op == "*" else Plus(left, right)
        m = _INT_RE.match(self.src, self.pos)
        if m:
            self.pos = m.end()
            return Const(int(m.group()))
        self.error("expected 'C[', 'P{', 'E{', '(' or an integer")

    def _next_nonspace(self, i):
        while i < len(self.src) and self.src[i].isspace():
            i += 1
        return self.src[i] if i < len(self.src) else ""


def parse_sharp(text):
    """Parse `.shq` text; raises ParseError on syntax or side-condition errors."""
    f = _SharpParser(text).parse()
    report = validate(f)
    if not report.ok:
        v = report.violations[0]
        raise ParseError(f"ill-formed counting formula at {v.path}: {v.message}")
    return f


def serialize_sharp(f):
    """Fully parenthesized `.shq` text; parse_sharp round-trips it."""
    if isinstance(f, Cast):
        return f"C[{render_ep(f.ep)}; {{{','.join(f.liberal)}}}]"
    if isinstance(f, Project):
        return f"P{{{','.join(sorted(f.vars))}}} {serialize_sharp(f.child)}"
    if isinstance(f, Expand):
        return f"E{{{','.join(sorted(f.vars))}}} {serialize_sharp(f.child)}"
    if isinstance(f, Times):
        return f"({serialize_sharp(f.left)} * {serialize_sharp(f.right)})"
    if isinstance(f, Plus):
        return f"({serialize_sharp(f.left)} + {serialize_sharp(f.right)})"
    if isinstance(f, Const):
        return str(f.n)
    raise TypeError(f"not a counting-formula node: {f!r}")


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CountTable:
    """Integer table over the free variables of a formula.

    Variables are split into explicit ones (indexing `data`) and wildcard ones
    the value provably does not depend on; wildcard variables are never
    materialized unless an operation needs aligned variable sets. Rows absent
    from `data` have value 0.
    """

    explicit: tuple
    wildcard: tuple
    universe: tuple
    data: dict = field(compare=False)

    @property
    def variables(self):
        return self.explicit + self.wildcard

    @property
    def n_rows(self):
        return len(self.data)

    def value(self, assignment):
        """Value at a full assignment (a dict covering all variables)."""
        key = tuple(assignment[v] for v in self.explicit)
        return self.data.get(key, 0)

    def sorted_rows(self):
        """(assignment dict, value) pairs, materialized, in lexicographic
        order by the canonical variable order; zero rows omitted."""
        vs = tuple(sorted(self.variables))
        rows = []
        wild = tuple(sorted(self.wildcard))
        for key, val in self.data.items():
            base = dict(zip(self.explicit, key))
            for extra in itertools.product(self.universe, repeat=len(wild)):
                h = dict(base)
                h.update(zip(wild, extra))
                rows.append((h, val))
        rows.sort(key=lambda hv: tuple(hv[0][v] for v in vs))
        return rows

    def __eq__(self, other):
        if not isinstance(other, CountTable):
            return NotImplemented
        if set(self.variables) != set(other.variables):
            return False
        if self.universe != other.universe:
            return False
        shared = tuple(sorted(set(self.explicit) | set(other.explicit)))
        return _materialize_data(self, shared) == _materialize_data(other, shared)


def _materialize_data(t, explicit):
    """Rows of t re-indexed by the given explicit variable tuple (a superset
    of t.explicit up to wildcards)."""
    extra = tuple(v for v in explicit if v not in t.explicit)
    out = {}
    for key, val in t.data.items():
        base = dict(zip(t.explicit, key))
        for vals in itertools.product(t.universe, repeat=len(extra)):
            h = dict(base)
            h.update(zip(extra, vals))
            out[tuple(h[v] for v in explicit)] = val
    return out


# ---------------------------------------------------------------------------
# fo evaluation: satisfying-assignment sets
# ---------------------------------------------------------------------------


@dataclass
class _SatSet:
    explicit: tuple
    wildcard: frozenset
    rows: set


class _Evaluator:
    def __init__(self, b, max_rows, stats):
        self.b = b
        self.max_rows = max_rows
        self.stats = stats if stats is not None else {}
        self.stats.setdefault("peak_rows", 0)

    def _note(self, n):
        if n > self.max_rows:
            raise CapExceeded(f"table would hold {n} > {self.max_rows} rows")
        if n > self.stats["peak_rows"]:
            self.stats["peak_rows"] = n

    # -- ep formulas --

    def sat(self, f):
        if isinstance(f, Atom):
            args = f.args
            explicit = tuple(dict.fromkeys(args))
            rows = set()
            for fact in self.b.tuples(f.symbol):
                h = {}
                ok = True
                for var, val in zip(args, fact):
                    if h.setdefault(var, val) != val:
                        ok = False
                        break
                if ok:
                    rows.add(tuple(h[v] for v in explicit))
            self._note(len(rows))
            return _SatSet(explicit, frozenset(), rows)
        if isinstance(f, Top):
            return _SatSet((), frozenset(), {()})
        if isinstance(f, And):
            return self._sat_join(self.sat(f.left), self.sat(f.right))
        if isinstance(f, Or):
            s1, s2 = self.sat(f.left), self.sat(f.right)
            explicit = tuple(dict.fromkeys(s1.explicit + s2.explicit))
            rows = self._sat_expand(s1, explicit) | self._sat_expand(s2, explicit)
            self._note(len(rows))
            wild = (s1.wildcard | s2.wildcard) - set(explicit)
            return _SatSet(explicit, wild, rows)
        if isinstance(f, Exists):
            s = self.sat(f.body)
            if f.var in s.explicit:
                keep = [i for i, v in enumerate(s.explicit) if v != f.var]
                rows = {tuple(r[i] for i in keep) for r in s.rows}
                return _SatSet(tuple(s.explicit[i] for i in keep), s.wildcard, rows)
            # the universe is non-empty, so an absent variable quantifies away
            return _SatSet(s.explicit, s.wildcard - {f.var}, s.rows)
        raise TypeError(f"not an ep-formula node: {f!r}")

    def _sat_expand(self, s, explicit):
        """Rows of s re-indexed by `explicit` ⊇ s.explicit (new coords free)."""
        extra = tuple(v for v in explicit if v not in s.explicit)
        if not extra:
            idx = [s.explicit.index(v) for v in explicit]
            return {tuple(r[i] for i in idx) for r in s.rows}
        n = len(s.rows) * len(self.b.universe) ** len(extra)
        self._note(n)
        out = set()
        pos = {v: i for i, v in enumerate(s.explicit)}
        for r in s.rows:
            for vals in itertools.product(self.b.universe, repeat=len(extra)):
                h = dict(zip(extra, vals))
                out.add(tuple(r[pos[v]] if v in pos else h[v] for v in explicit))
        return out

    def _sat_join(self, s1, s2):
        shared = [v for v in s1.explicit if v in s2.explicit]
        explicit = tuple(dict.fromkeys(s1.explicit + s2.explicit))
        pos1 = {v: i for i, v in enumerate(s1.explicit)}
        pos2 = {v: i for i, v in enumerate(s2.explicit)}
        index = {}
        for r in s2.rows:
            index.setdefault(tuple(r[pos2[v]] for v in shared), []).append(r)
        rows = set()
        for r1 in s1.rows:
            key = tuple(r1[pos1[v]] for v in shared)
            for r2 in index.get(key, ()):
                rows.add(
                    tuple(
                        r1[pos1[v]] if v in pos1 else r2[pos2[v]] for v in explicit
                    )
                )
                if len(rows) > self.max_rows:
                    raise CapExceeded(
                        f"table would hold more than {self.max_rows} rows"
                    )
        self._note(len(rows))
        wild = (s1.wildcard | s2.wildcard) - set(explicit)
        return _SatSet(explicit, wild, rows)

    # -- counting formulas --

    def eval(self, f):
        b = self.b
        if isinstance(f, Cast):
            s = self.sat(f.ep)
            wild = tuple(
                sorted((set(f.liberal) - set(s.explicit)) | set(s.wildcard))
            )
            return CountTable(
                explicit=s.explicit,
                wildcard=wild,
                universe=b.universe,
                data={r: 1 for r in s.rows},
            )
        if isinstance(f, Const):
            data = {(): f.n} if f.n != 0 else {}
            return CountTable((), (), b.universe, data)
        if isinstance(f, Expand):
            t = self.eval(f.child)
            return CountTable(
                t.explicit,
                tuple(sorted(set(t.wildcard) | f.vars)),
                b.universe,
                t.data,
            )
        if isinstance(f, Project):
            t = self.eval(f.child)
            child_free = set(t.variables)
            factor = len(b.universe) ** (
                len(f.vars - child_free) + len(f.vars & set(t.wildcard))
            )
            keep = [i for i, v in enumerate(t.explicit) if v not in f.vars]
            data = {}
            for key, val in t.data.items():
                k = tuple(key[i] for i in keep)
                data[k] = data.get(k, 0) + val
            data = {k: v * factor for k, v in data.items() if v * factor != 0}
            self._note(len(data))
            return CountTable(
                tuple(t.explicit[i] for i in keep),
                tuple(v for v in t.wildcard if v not in f.vars),
                b.universe,
                data,
            )
        if isinstance(f, Times):
            return self._times(self.eval(f.left), self.eval(f.right))
        if isinstance(f, Plus):
            return self._plus(self.eval(f.left), self.eval(f.right))
        raise TypeError(f"not a counting-formula node: {f!r}")

    def _times(self, t1, t2):
        shared = [v for v in t1.explicit if v in t2.explicit]
        explicit = tuple(dict.fromkeys(t1.explicit + t2.explicit))
        pos1 = {v: i for i, v in enumerate(t1.explicit)}
        pos2 = {v: i for i, v in enumerate(t2.explicit)}
        index = {}
        for r, val in t2.data.items():
            index.setdefault(tuple(r[pos2[v]] for v in shared), []).append((r, val))
        data = {}
        for r1, v1 in t1.data.items():
            key = tuple(r1[pos1[v]] for v in shared)
            for r2, v2 in index.get(key, ()):
                row = tuple(
                    r1[pos1[v]] if v in pos1 else r2[pos2[v]] for v in explicit
                )
                data[row] = v1 * v2
                if len(data) > self.max_rows:
                    raise CapExceeded(
                        f"table would hold more than {self.max_rows} rows"
                    )
        self._note(len(data))
        wild = tuple(sorted((set(t1.variables) | set(t2.variables)) - set(explicit)))
        return CountTable(explicit, wild, self.b.universe, data)

    def _plus(self, t1, t2):
        explicit = tuple(dict.fromkeys(t1.explicit + t2.explicit))
        n1 = len(t1.data) * len(self.b.universe) ** len(
            set(explicit) - set(t1.explicit)
        )
        n2 = len(t2.data) * len(self.b.universe) ** len(
            set(explicit) - set(t2.explicit)
        )
        self._note(n1 + n2)
        d1 = _materialize_data(t1, explicit)
        d2 = _materialize_data(t2, explicit)
        data = dict(d1)
        for k, v in d2.items():
            s = data.get(k, 0) + v
            if s == 0:
                data.pop(k, None)
            else:
                data[k] = s
        self._note(len(data))
        wild = tuple(sorted((set(t1.variables) | set(t2.variables)) - set(explicit)))
        return CountTable(explicit, wild, self.b.universe, data)


def _check_cast_signatures(f, b):
    symbols = {}
    def collect(node):
        if isinstance(node, Cast):
            _infer_signature(node.ep, symbols)
        elif isinstance(node, (Project, Expand)):
            collect(node.child)
        elif isinstance(node, (Times, Plus)):
            collect(node.left)
            collect(node.right)
    collect(f)
    for name, arity in symbols.items():
        if name not in b.sig:
            raise SharpqError(f"structure lacks relation {name!r} used by the formula")
        if b.sig.arity(name) != arity:
            raise SharpqError(
                f"arity mismatch for {name}: formula uses {arity}, structure has {b.sig.arity(name)}"
            )


def evaluate(f, b, max_rows=10**7, stats=None):
    """Table of the formula's values over assignments of its free variables."""
    _require_valid(f)
    _check_cast_signatures(f, b)
    return _Evaluator(b, max_rows, stats).eval(f)


def eval_sentence(f, b, max_rows=10**7, stats=None):
    """Value of a closed formula (free set empty) as a plain integer."""
    report = _require_valid(f)
    if report.free:
        raise SharpqError(
            f"eval_sentence needs a sentence; free variables: {', '.join(sorted(report.free))}"
        )
    _check_cast_signatures(f, b)
    t = _Evaluator(b, max_rows, stats).eval(f)
    return t.data.get((), 0)


# ---------------------------------------------------------------------------
# Representations of queries
# ---------------------------------------------------------------------------


def naive_representation(q):
    """P L C[formula; L]: counts q's answers on every structure, width |L|."""
    lib = frozenset(q.liberal)
    return Project(lib, Cast(ep=q.formula, liberal=tuple(q.liberal)))


def check_represents(f, q, samples):
    """Compare eval_sentence(f, ·) with oracle_count(q, ·) on each sample.

    Returns (True, None) or (False, first counterexample structure). A testing
    utility: passing on samples is evidence, not proof.
    """
    from .epquery import oracle_count

    for b in samples:
        if eval_sentence(f, b) != oracle_count(q, b):
            return False, b
    return True, None
