"""Pattern graphs: validation, paths, counting, perturbation and equivalence.

A pattern graph has response patterns as nodes and stores, for every node,
its parent set.  Children are derived on demand.  Two validity modes are
supported:

``regular``
    ``1_d`` is the unique source and every edge ``s -> r`` has ``s`` strictly
    dominating ``r``.
``acyclic``
    ``1_d`` is the unique source and the graph has no directed cycle.

Graphs are immutable; path and generation queries are memoized per instance.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from pathlib import Path as FilePath
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

from .patterns import Pattern, PatternError, all_patterns, as_pattern, canonical_key

Path = tuple  # tuple[Pattern, ...] running from the start node to the end node

DEFAULT_PATH_CAP = 10 ** 6
REGULAR = "regular"
ACYCLIC = "acyclic"


class GraphError(ValueError):
    """Structurally malformed graph or an operation on an invalid graph."""


class GraphParseError(GraphError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class PathExplosionError(RuntimeError):
    """Raised when a path enumeration exceeds the configured cap."""


class EquivalenceMoveError(GraphError):
    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition} condition violated: {message}")
        self.condition = condition


@dataclass(frozen=True)
class Violation:
    condition: str  # "G1", "G2" or "DAG"
    detail: str

    def __str__(self):
        return f"({self.condition}) {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    mode: str
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def conditions(self) -> set[str]:
        return {v.condition for v in self.violations}

    def __bool__(self):
        return self.valid

    def __str__(self):
        if self.valid:
            return f"valid ({self.mode})"
        lines = [f"invalid ({self.mode}):"]
        lines += [f"  {v}" for v in self.violations]
        return "\n".join(lines)


class PatternGraph:
    """Immutable pattern graph over ``d`` variables.

    Parameters
    ----------
    nodes : iterable of Pattern or str
        The pattern set.  Must contain ``1_d``.
    parents : mapping
        ``{r: iterable of parents}``.  Nodes absent from the mapping have no
        parents.
    path_cap : int
        Maximum number of paths any single enumeration may produce.
    """

    def __init__(self, nodes: Iterable, parents: Mapping | None = None,
                 path_cap: int = DEFAULT_PATH_CAP):
        node_list = [as_pattern(p) for p in nodes]
        if not node_list:
            raise GraphError("graph has no nodes")
        d = node_list[0].d
        if any(p.d != d for p in node_list):
            raise GraphError("patterns of different lengths in one graph")
        node_set = frozenset(node_list)
        full = Pattern.full(d)
        if full not in node_set:
            raise GraphError(f"node set must contain the complete pattern {full}")
        pa: dict[Pattern, frozenset[Pattern]] = {p: frozenset() for p in node_set}
        for r, ps in (parents or {}).items():
            r = as_pattern(r)
            if r not in node_set:
                raise GraphError(f"parent map refers to unknown node {r}")
            ps = frozenset(as_pattern(s) for s in ps)
            for s in ps:
                if s not in node_set:
                    raise GraphError(f"edge {s} -> {r} uses unknown node {s}")
                if s == r:
                    raise GraphError(f"self-loop at {r}")
            pa[r] = ps
        self._d = d
        self._nodes = tuple(sorted(node_set, key=canonical_key))
        self._rank = {p: i for i, p in enumerate(self._nodes)}
        self._parents = MappingProxyType(pa)
        self._children = None
        self._path_cap = path_cap
        self._path_memo: dict = {}
        self._between_memo: dict = {}
        self._generation = None

    @classmethod
    def from_edges(cls, nodes: Iterable, edges: Iterable, **kw) -> "PatternGraph":
        pa: dict[Pattern, set] = {}
        for s, r in edges:
            pa.setdefault(as_pattern(r), set()).add(as_pattern(s))
        return cls(nodes, pa, **kw)

    # -- basic structure -------------------------------------------------

    @property
    def d(self) -> int:
        return self._d

    @property
    def nodes(self) -> tuple[Pattern, ...]:
        """Nodes in canonical order (``1_d`` first)."""
        return self._nodes

    @property
    def source(self) -> Pattern:
        return Pattern.full(self._d)

    @property
    def path_cap(self) -> int:
        return self._path_cap

    def index(self, p: Pattern) -> int:
        return self._rank[p]

    def parents(self, r) -> frozenset[Pattern]:
        r = as_pattern(r)
        self._require(r)
        return self._parents[r]

    def sorted_parents(self, r) -> list[Pattern]:
        return sorted(self.parents(r), key=canonical_key)

    def children(self, s) -> frozenset[Pattern]:
        s = as_pattern(s)
        self._require(s)
        if self._children is None:
            ch = {p: set() for p in self._nodes}
            for r, ps in self._parents.items():
                for q in ps:
                    ch[q].add(r)
            self._children = {p: frozenset(c) for p, c in ch.items()}
        return self._children[s]

    def edges(self) -> list[tuple[Pattern, Pattern]]:
        out = [(s, r) for r in self._nodes for s in self._parents[r]]
        return sorted(out, key=lambda e: (self._rank[e[1]], self._rank[e[0]]))

    def has_edge(self, s, r) -> bool:
        return as_pattern(s) in self.parents(r)

    def __contains__(self, p) -> bool:
        try:
            return as_pattern(p) in self._rank
        except PatternError:
            return False

    def __eq__(self, other):
        if not isinstance(other, PatternGraph):
            return NotImplemented
        return set(self._nodes) == set(other._nodes) and dict(self._parents) == dict(other._parents)

    def __hash__(self):
        return hash((frozenset(self._nodes), frozenset(self.edges())))

    def __deepcopy__(self, memo):
        return self  # immutable

    def __copy__(self):
        return self

    def __reduce__(self):
        return (PatternGraph, (self._nodes, dict(self._parents), self._path_cap))

    def __repr__(self):
        es = ", ".join(f"{s}->{r}" for s, r in self.edges())
        return f"PatternGraph(d={self._d}, edges=[{es}])"

    def _require(self, p: Pattern):
        if p not in self._rank:
            raise GraphError(f"pattern {p} is not a node of the graph")

    def with_parents(self, r, new_parents: Iterable) -> "PatternGraph":
        pa = dict(self._parents)
        pa[as_pattern(r)] = frozenset(as_pattern(s) for s in new_parents)
        return PatternGraph(self._nodes, pa, path_cap=self._path_cap)

    def add_edge(self, s, r) -> "PatternGraph":
        return self.with_parents(r, set(self.parents(r)) | {as_pattern(s)})

    def remove_edge(self, s, r) -> "PatternGraph":
        return self.with_parents(r, set(self.parents(r)) - {as_pattern(s)})

    def is_tree(self) -> bool:
        return all(len(self._parents[r]) == 1 for r in self._nodes if r != self.source)

    def is_regular(self) -> bool:
        return validate(self, REGULAR).valid

    # -- ordering --------------------------------------------------------

    def topological_order(self) -> list[Pattern]:
        """Parents before children; ties broken canonically.  Raises
        :class:`GraphError` on a cycle."""
        indeg = {p: len(self._parents[p]) for p in self._nodes}
        ready = sorted([p for p, k in indeg.items() if k == 0], key=canonical_key)
        out = []
        while ready:
            p = ready.pop(0)
            out.append(p)
            changed = False
            for c in self.children(p):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    changed = True
            if changed:
                ready.sort(key=canonical_key)
        if len(out) != len(self._nodes):
            raise GraphError("graph contains a directed cycle")
        return out

    def sweep_order(self) -> list[Pattern]:
        """Order in which per-node recursions visit non-source nodes:
        decreasing ``|r|`` for regular graphs, increasing generation number
        otherwise."""
        rest = [p for p in self._nodes if p != self.source]
        if validate(self, REGULAR).valid:
            return sorted(rest, key=lambda p: (-p.size, canonical_key(p)))
        gen = generation_numbers(self)
        return sorted(rest, key=lambda p: (gen[p], canonical_key(p)))


# ---------------------------------------------------------------------------
# validation


def _has_cycle(g: PatternGraph) -> bool:
    try:
        g.topological_order()
    except GraphError:
        return True
    return False


def validate(g: PatternGraph, mode: str = REGULAR) -> ValidationReport:
    """List every violated condition for ``mode`` (``regular`` or ``acyclic``)."""
    if mode not in (REGULAR, ACYCLIC):
        raise ValueError(f"unknown validation mode {mode!r}")
    out = []
    src = g.source
    if g.parents(src):
        out.append(Violation("G1", f"{src} has parents {sorted(map(str, g.parents(src)))}"))
    for r in g.nodes:
        if r != src and not g.parents(r):
            out.append(Violation("G1", f"{r} is a source besides {src}"))
    if mode == REGULAR:
        for s, r in g.edges():
            if not s.dominates(r):
                out.append(Violation("G2", f"edge {s} -> {r}: {s} does not dominate {r}"))
    if _has_cycle(g):
        out.append(Violation("DAG", "graph contains a directed cycle"))
    return ValidationReport(mode, tuple(out))


def require_valid(g: PatternGraph, mode: str = REGULAR) -> None:
    rep = validate(g, mode)
    if not rep.valid:
        raise GraphError(str(rep))


# ---------------------------------------------------------------------------
# paths


def enumerate_paths(g: PatternGraph, r) -> list[Path]:
    """All paths from ``1_d`` to ``r``.

    ``r == 1_d`` gives the single degenerate path ``(1_d,)``.  Order is
    deterministic: lexicographic on the canonical node ranks.
    """
    r = as_pattern(r)
    g._require(r)
    n = count_paths(g)[r]
    if n > g.path_cap:
        raise PathExplosionError(
            f"{n} paths end at {r}, more than path_cap={g.path_cap}; use the recursive route")
    return list(_paths_to(g, r))


def count_paths(g: PatternGraph) -> dict[Pattern, int]:
    """Exact number of paths from ``1_d`` to every node, without listing them."""
    memo = g.__dict__.get("_count_memo")
    if memo is None:
        memo = {}
        for r in g.topological_order():
            ps = g.parents(r)
            memo[r] = 1 if r == g.source else sum(memo[q] for q in ps)
        g.__dict__["_count_memo"] = memo
    return memo


def _paths_to(g: PatternGraph, r: Pattern) -> tuple[Path, ...]:
    memo = g._path_memo
    if r in memo:
        return memo[r]
    if r == g.source:
        res = ((r,),)
    else:
        acc = []
        for q in g.parents(r):
            for p in _paths_to(g, q):
                acc.append(p + (r,))
                if len(acc) > g.path_cap:
                    raise PathExplosionError(
                        f"more than {g.path_cap} paths end at {r}; raise path_cap or use the recursive route")
        res = tuple(sorted(acc, key=lambda p: tuple(g.index(x) for x in p)))
    memo[r] = res
    return res


def all_paths(g: PatternGraph) -> list[Path]:
    """The union of ``enumerate_paths`` over every node."""
    total = sum(count_paths(g).values())
    if total > g.path_cap:
        raise PathExplosionError(f"{total} paths in graph, more than path_cap={g.path_cap}")
    out = []
    for r in g.nodes:
        out.extend(_paths_to(g, r))
        if len(out) > g.path_cap:
            raise PathExplosionError(f"more than {g.path_cap} paths in graph")
    return out


def paths_between(g: PatternGraph, s, r) -> list[Path]:
    """All paths from ``s`` to ``r``; empty when ``s`` is not an ancestor."""
    s, r = as_pattern(s), as_pattern(r)
    g._require(s)
    g._require(r)
    return list(_between(g, s, r, set()))


def _between(g: PatternGraph, s: Pattern, r: Pattern, stack: set) -> tuple[Path, ...]:
    key = (s, r)
    memo = g._between_memo
    if key in memo:
        return memo[key]
    if s == r:
        res = ((s,),)
    else:
        if r in stack:
            raise GraphError("graph contains a directed cycle")
        stack.add(r)
        acc = []
        for q in g.parents(r):
            for p in _between(g, s, q, stack):
                acc.append(p + (r,))
                if len(acc) > g.path_cap:
                    raise PathExplosionError(f"more than {g.path_cap} paths from {s} to {r}")
        stack.discard(r)
        res = tuple(sorted(acc, key=lambda p: tuple(g.index(x) for x in p)))
    memo[key] = res
    return res


def ancestors(g: PatternGraph, r, include_self: bool = True) -> list[Pattern]:
    r = as_pattern(r)
    seen = set()
    stack = [r]
    while stack:
        q = stack.pop()
        for p in g.parents(q):
            if p not in seen:
                seen.add(p)
                stack.append(p)
    if include_self:
        seen.add(r)
    return sorted(seen, key=canonical_key)


def descendants(g: PatternGraph, s, include_self: bool = True) -> list[Pattern]:
    s = as_pattern(s)
    seen = set()
    stack = [s]
    while stack:
        q = stack.pop()
        for c in g.children(q):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    if include_self:
        seen.add(s)
    return sorted(seen, key=canonical_key)


def generation_numbers(g: PatternGraph) -> dict[Pattern, int]:
    """Longest-path distance from ``1_d`` for every node."""
    if g._generation is None:
        rep = validate(g, ACYCLIC)
        if not rep.valid:
            raise GraphError(f"generation numbers need a valid acyclic graph: {rep}")
        gen = {}
        for p in g.topological_order():
            ps = g.parents(p)
            gen[p] = 0 if not ps else 1 + max(gen[q] for q in ps)
        g._generation = gen
    return g._generation


def generation_number(g: PatternGraph, r) -> int:
    r = as_pattern(r)
    g._require(r)
    return generation_numbers(g)[r]


# ---------------------------------------------------------------------------
# counting


def count_regular_graphs(d: int) -> int:
    """Number of regular pattern graphs on the full pattern set ``{0,1}^d``.

    Each pattern with ``k`` observed coordinates picks any non-empty subset
    of the ``2^(d-k) - 1`` patterns strictly dominating it, independently.
    """
    if not isinstance(d, int) or not 1 <= d <= 8:
        raise ValueError(f"d must be an integer in [1, 8], got {d!r}")
    total = 1
    for k in range(d):
        total *= (2 ** (2 ** (d - k) - 1) - 1) ** math.comb(d, k)
    return total


def enumerate_regular_graphs(nodes: Iterable) -> Iterator[PatternGraph]:
    """Brute-force every regular graph on a (possibly restricted) node set.

    Intended for ``d <= 3``; the count grows doubly exponentially.
    """
    nodes = sorted({as_pattern(p) for p in nodes}, key=canonical_key)
    if not nodes:
        return
    if nodes[0].d > 3:
        raise ValueError("brute-force enumeration is limited to d <= 3")
    full = Pattern.full(nodes[0].d)
    rest = [r for r in nodes if r != full]
    choices = []
    for r in rest:
        cand = [s for s in nodes if s.dominates(r)]
        subsets = [c for k in range(1, len(cand) + 1) for c in itertools.combinations(cand, k)]
        if not subsets:
            return
        choices.append(subsets)
    for combo in itertools.product(*choices):
        yield PatternGraph(nodes, dict(zip(rest, combo)))


# ---------------------------------------------------------------------------
# perturbation


@dataclass(frozen=True)
class PerturbationSet:
    base: PatternGraph
    additions: tuple[tuple[Pattern, Pattern], ...] = ()
    deletions: tuple[tuple[Pattern, Pattern], ...] = ()

    def graphs(self) -> list[tuple[str, PatternGraph]]:
        """``(label, graph)`` for every one-edge perturbation; labels are
        ``+s->r`` for additions and ``-s->r`` for deletions."""
        out = [(f"+{s}->{r}", self.base.add_edge(s, r)) for s, r in self.additions]
        out += [(f"-{s}->{r}", self.base.remove_edge(s, r)) for s, r in self.deletions]
        return out


def perturbation_neighborhood(g: PatternGraph) -> PerturbationSet:
    """Regular graphs at one edge of distance from a regular graph ``g``."""
    require_valid(g, REGULAR)
    adds, dels = [], []
    for r in g.nodes:
        if r == g.source:
            continue
        pa = g.parents(r)
        for s in g.nodes:
            if s.dominates(r) and s not in pa:
                adds.append((s, r))
        if len(pa) > 1:
            dels.extend((s, r) for s in g.sorted_parents(r))
    return PerturbationSet(g, tuple(adds), tuple(dels))


def equivalence_move(g: PatternGraph, s, r) -> PatternGraph:
    """Replace every arrow into ``r`` by the single arrow ``s -> r``.

    Both sufficient conditions are checked: every path from ``1_d`` to ``r``
    passes through ``s`` (blocking), and every node strictly between ``s``
    and ``r`` on a path from ``s`` to ``r`` is dominated by ``r``
    (uninformative).  The result induces the same full-data law as ``g``.
    """
    s, r = as_pattern(s), as_pattern(r)
    require_valid(g, ACYCLIC)
    g._require(s)
    g._require(r)
    if s == r:
        raise GraphError("s and r must differ")
    if s in g.parents(r):
        raise GraphError(f"{s} is already a parent of {r}")
    for p in enumerate_paths(g, r):
        if s not in p:
            raise EquivalenceMoveError(
                "blocking", f"path {'->'.join(map(str, p))} avoids {s}")
    for p in paths_between(g, s, r):
        for q in p[1:-1]:
            if not r.dominates(q):
                raise EquivalenceMoveError(
                    "uninformative", f"{q} on path {'->'.join(map(str, p))} is not dominated by {r}")
    out = g.with_parents(r, {s})
    require_valid(out, ACYCLIC)
    return out


# ---------------------------------------------------------------------------
# built-in graphs

BUILTIN_KINDS = ("ccmv", "acmv", "ncmv", "tree_chain", "example_fig2_right", "example_condmar")


def _is_monotone(nodes: list[Pattern]) -> bool:
    return all(a == b or a.dominates(b) or b.dominates(a) for a in nodes for b in nodes)


def builtin_graph(kind: str, nodes: Iterable | None = None, d: int | None = None) -> PatternGraph:
    """Construct one of the standard graphs.

    ``ccmv``, ``acmv``, ``ncmv`` and ``tree_chain`` need a node set (or ``d``
    for the full pattern set); the two example graphs ignore it.
    """
    if kind == "example_fig2_right":
        return PatternGraph.from_edges(
            ["11", "10", "01", "00"],
            [("11", "10"), ("11", "01"), ("11", "00"), ("10", "00")])
    if kind == "example_condmar":
        # L = (Z, Y1, Y2, Y3): monotone dropout in Y, Z missing or not.
        return PatternGraph(
            ["1111", "1110", "1100", "0111", "0110", "0100"],
            {"1110": ["1111"], "1100": ["1111", "1110"],
             "0111": ["1111"], "0110": ["0111"], "0100": ["0111", "0110"]})
    if kind not in BUILTIN_KINDS:
        raise ValueError(f"unknown graph kind {kind!r}; choose from {BUILTIN_KINDS}")
    if nodes is None:
        if d is None:
            raise ValueError(f"{kind} needs a node set or d")
        node_list = all_patterns(d)
    else:
        node_list = sorted({as_pattern(p) for p in nodes}, key=canonical_key)
    full = Pattern.full(node_list[0].d)
    if full not in node_list:
        raise GraphError(f"node set must contain {full}")
    rest = [r for r in node_list if r != full]
    if kind == "ccmv":
        return PatternGraph(node_list, {r: [full] for r in rest})
    if kind == "tree_chain":
        pa = {}
        for r in rest:
            dom = [s for s in node_list if s.dominates(r)]
            best = min(dom, key=lambda s: (s.size, canonical_key(s)))
            pa[r] = [best]
        return PatternGraph(node_list, pa)
    if not _is_monotone(node_list):
        raise GraphError(f"{kind} needs a monotone pattern family")
    if kind == "acmv":
        return PatternGraph(node_list, {r: [s for s in node_list if s.size > r.size] for r in rest})
    pa = {}
    for r in rest:
        ps = [s for s in node_list if s.size == r.size + 1]
        if not ps:
            raise GraphError(f"ncmv: no pattern with {r.size + 1} observed entries to parent {r}")
        pa[r] = ps
    return PatternGraph(node_list, pa)


# ---------------------------------------------------------------------------
# text format

_EDGE_RE = re.compile(r"^([01]+)\s*->\s*([01]+)$")


def parse_graph(text: str, path_cap: int = DEFAULT_PATH_CAP) -> PatternGraph:
    """Parse the plain-text graph format::

        d: 2
        patterns: 11 10 01 00
        11 -> 10      # one edge per line
    """
    d = None
    patterns = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if d is None:
            m = re.match(r"^d\s*:\s*(\S+)$", line)
            if not m:
                raise GraphParseError(lineno, "expected 'd: <int>'")
            try:
                d = int(m.group(1))
            except ValueError:
                raise GraphParseError(lineno, f"d must be an integer, got {m.group(1)!r}") from None
            if d < 1:
                raise GraphParseError(lineno, "d must be positive")
            continue
        if patterns is None:
            m = re.match(r"^patterns\s*:\s*(.*)$", line)
            if not m:
                raise GraphParseError(lineno, "expected 'patterns: <bit strings>'")
            patterns = []
            for tok in m.group(1).split():
                try:
                    p = Pattern.parse(tok)
                except PatternError as e:
                    raise GraphParseError(lineno, str(e)) from None
                if p.d != d:
                    raise GraphParseError(lineno, f"pattern {tok} has length {p.d}, expected {d}")
                patterns.append(p)
            if not patterns:
                raise GraphParseError(lineno, "empty pattern list")
            continue
        m = _EDGE_RE.match(line)
        if not m:
            raise GraphParseError(lineno, f"expected '<s> -> <r>', got {line!r}")
        s, r = Pattern.parse(m.group(1)), Pattern.parse(m.group(2))
        for p in (s, r):
            if p.d != d:
                raise GraphParseError(lineno, f"pattern {p} has length {p.d}, expected {d}")
            if p not in patterns:
                raise GraphParseError(lineno, f"pattern {p} not declared in 'patterns:'")
        edges.append((s, r))
    if d is None or patterns is None:
        raise GraphParseError(max(1, len(text.splitlines())), "missing 'd:' or 'patterns:' header")
    try:
        return PatternGraph.from_edges(patterns, edges, path_cap=path_cap)
    except GraphError as e:
        raise GraphParseError(0, str(e)) from None


def format_graph(g: PatternGraph) -> str:
    lines = [f"d: {g.d}", "patterns: " + " ".join(str(p) for p in g.nodes)]
    lines += [f"{s} -> {r}" for s, r in g.edges()]
    return "\n".join(lines) + "\n"


def load_graph(path, path_cap: int = DEFAULT_PATH_CAP) -> PatternGraph:
    return parse_graph(FilePath(path).read_text(encoding="utf-8"), path_cap=path_cap)


def save_graph(g: PatternGraph, path) -> None:
    FilePath(path).write_text(format_graph(g), encoding="utf-8")


def example_graph(name: str) -> PatternGraph:
    """Load one of the graph files shipped in ``patterngraph/data``."""
    from importlib.resources import files

    res = files("patterngraph") / "data" / f"{name}.graph"
    return parse_graph(res.read_text(encoding="utf-8"))
