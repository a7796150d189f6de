"""Graph types and the d-separation oracle.

Three kinds of graph live here:

* :class:`TrueDag` -- the causal DAG over latent and observed variables that
  generates the data (ground truth for oracle mode and simulation).
* :class:`UndirectedGraph` -- the auxiliary graph built over observed
  variables before clique search.
* :class:`MeasurementPattern` -- the labeled mixed graph returned by the
  search, with latent -> observed edges and observed <-> observed edges.

Node identity is the node name; the insertion index fixes every enumeration
order so that results are reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import InputError

LATENT = "latent"
OBSERVED = "observed"
CONFIRMED = "confirmed"
UNCONFIRMED = "unconfirmed"
LABELS = (CONFIRMED, UNCONFIRMED)


def weaker(label_a: str, label_b: str) -> str:
    """Combine two labels for the same edge; unconfirmed wins."""
    return UNCONFIRMED if UNCONFIRMED in (label_a, label_b) else CONFIRMED


def stronger(label_a: str, label_b: str) -> str:
    return CONFIRMED if CONFIRMED in (label_a, label_b) else UNCONFIRMED


class TrueDag:
    """Directed acyclic causal graph over latent and observed nodes.

    Observed nodes may not be parents of anything: no observed node causes a
    latent, and no observed node causes another observed node.

    Parameters
    ----------
    nodes : iterable of (name, kind)
        ``kind`` is ``"latent"`` or ``"observed"``. Order sets node indices.
    edges : iterable of (parent, child)
    """

    def __init__(self, nodes: Iterable[tuple[str, str]], edges: Iterable[tuple[str, str]]):
        names: list[str] = []
        kind: dict[str, str] = {}
        for name, k in nodes:
            if k not in (LATENT, OBSERVED):
                raise InputError(f"node {name!r}: kind must be latent or observed, got {k!r}")
            if name in kind:
                raise InputError(f"duplicate node {name!r}")
            names.append(name)
            kind[name] = k
        self._names = tuple(names)
        self._kind = kind
        self._index = {n: i for i, n in enumerate(names)}

        parents: dict[str, list[str]] = {n: [] for n in names}
        children: dict[str, list[str]] = {n: [] for n in names}
        seen = set()
        for u, v in edges:
            self._check(u)
            self._check(v)
            if u == v:
                raise InputError(f"self-loop on {u!r}")
            if (u, v) in seen:
                continue
            if kind[u] == OBSERVED:
                raise InputError(f"observed node {u!r} cannot be a parent (edge {u} -> {v})")
            seen.add((u, v))
            parents[v].append(u)
            children[u].append(v)
        key = self._index.__getitem__
        self._parents = {n: tuple(sorted(p, key=key)) for n, p in parents.items()}
        self._children = {n: tuple(sorted(c, key=key)) for n, c in children.items()}
        self._edges = tuple(sorted(seen, key=lambda e: (key(e[0]), key(e[1]))))
        self._order = self._toposort()
        self._anc_cache: dict[str, frozenset[str]] = {}

    def _check(self, name: str) -> None:
        if name not in self._kind:
            raise InputError(f"unknown node {name!r}")

    def _toposort(self) -> tuple[str, ...]:
        indeg = {n: len(self._parents[n]) for n in self._names}
        ready = [n for n in self._names if indeg[n] == 0]
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort(key=self._index.__getitem__)
        if len(order) != len(self._names):
            raise InputError("graph contains a directed cycle")
        return tuple(order)

    # -- accessors ---------------------------------------------------------

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        return self._edges

    @property
    def latents(self) -> tuple[str, ...]:
        return tuple(n for n in self._names if self._kind[n] == LATENT)

    @property
    def observed(self) -> tuple[str, ...]:
        return tuple(n for n in self._names if self._kind[n] == OBSERVED)

    def kind(self, name: str) -> str:
        self._check(name)
        return self._kind[name]

    def is_latent(self, name: str) -> bool:
        return self.kind(name) == LATENT

    def index(self, name: str) -> int:
        self._check(name)
        return self._index[name]

    def parents(self, name: str) -> tuple[str, ...]:
        self._check(name)
        return self._parents[name]

    def children(self, name: str) -> tuple[str, ...]:
        self._check(name)
        return self._children[name]

    def topological_order(self) -> tuple[str, ...]:
        return self._order

    def ancestors(self, name: str) -> frozenset[str]:
        """Strict ancestors of ``name``."""
        self._check(name)
        if name not in self._anc_cache:
            out: set[str] = set()
            stack = list(self._parents[name])
            while stack:
                n = stack.pop()
                if n not in out:
                    out.add(n)
                    stack.extend(self._parents[n])
            self._anc_cache[name] = frozenset(out)
        return self._anc_cache[name]

    def descendants(self, name: str) -> frozenset[str]:
        self._check(name)
        out: set[str] = set()
        stack = list(self._children[name])
        while stack:
            n = stack.pop()
            if n not in out:
                out.add(n)
                stack.extend(self._children[n])
        return frozenset(out)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrueDag):
            return NotImplemented
        return (
            self._names == other._names
            and self._kind == other._kind
            and set(self._edges) == set(other._edges)
        )

    def __repr__(self) -> str:
        return f"TrueDag({len(self.latents)} latent, {len(self.observed)} observed, {len(self._edges)} edges)"


def d_separated(g: TrueDag, a: str, b: str, given: Iterable[str] = ()) -> bool:
    """Return True iff ``given`` d-separates ``a`` from ``b`` in ``g``.

    Reachability ("Bayes-ball") search over (node, direction) states, linear
    in the size of the graph.
    """
    z = set(given)
    for n in (a, b, *z):
        g._check(n)
    if a == b:
        raise InputError("d_separated needs two distinct nodes")
    if a in z or b in z:
        raise InputError("query nodes must not be in the conditioning set")

    # nodes with a descendant in z (including z itself) open colliders
    opens = set(z)
    for n in z:
        opens |= g.ancestors(n)

    visited: set[tuple[str, bool]] = set()
    stack: list[tuple[str, bool]] = [(a, True)]  # True: arrived from a child
    while stack:
        node, up = stack.pop()
        if (node, up) in visited:
            continue
        visited.add((node, up))
        if node == b:
            return False
        if up and node not in z:
            stack.extend((p, True) for p in g.parents(node))
            stack.extend((c, False) for c in g.children(node))
        elif not up:
            if node not in z:
                stack.extend((c, False) for c in g.children(node))
            if node in opens:
                stack.extend((p, True) for p in g.parents(node))
    return True


def node_separates_all_pairs(g: TrueDag, x: str, ys: Iterable[str]) -> bool:
    """True iff the single node ``x`` d-separates every pair drawn from ``ys``."""
    ys = list(ys)
    if not g.is_latent(x):
        raise InputError(f"{x!r} is not latent")
    if len(set(ys)) != 4 or any(g.is_latent(y) for y in ys):
        raise InputError("need exactly four distinct observed nodes")
    return all(d_separated(g, u, v, {x}) for u, v in itertools.combinations(ys, 2))


def one_factor_submodels(g: TrueDag) -> list[tuple[str, tuple[str, ...]]]:
    """All (latent, four observed) with the latent separating every pair."""
    obs = g.observed
    out = []
    for x in g.latents:
        for quad in itertools.combinations(obs, 4):
            if node_separates_all_pairs(g, x, quad):
                out.append((x, quad))
    return out


class UndirectedGraph:
    """Simple undirected graph over observed variable names."""

    def __init__(self, nodes: Iterable[str] = (), edges: Iterable[tuple[str, str]] = ()):
        self._nodes: list[str] = []
        self._adj: dict[str, set[str]] = {}
        for n in nodes:
            self.add_node(n)
        for u, v in edges:
            self.add_edge(u, v)

    @classmethod
    def complete(cls, nodes: Iterable[str]) -> "UndirectedGraph":
        nodes = list(nodes)
        return cls(nodes, itertools.combinations(nodes, 2))

    def add_node(self, n: str) -> None:
        if n not in self._adj:
            self._nodes.append(n)
            self._adj[n] = set()

    def add_edge(self, u: str, v: str) -> None:
        if u == v:
            raise InputError(f"self-loop on {u!r}")
        self.add_node(u)
        self.add_node(v)
        self._adj[u].add(v)
        self._adj[v].add(u)

    def remove_edge(self, u: str, v: str) -> None:
        self._adj[u].discard(v)
        self._adj[v].discard(u)

    def remove_node(self, n: str) -> None:
        for m in self._adj.pop(n):
            self._adj[m].discard(n)
        self._nodes.remove(n)

    @property
    def nodes(self) -> tuple[str, ...]:
        return tuple(self._nodes)

    def neighbors(self, n: str) -> frozenset[str]:
        return frozenset(self._adj[n])

    def has_edge(self, u: str, v: str) -> bool:
        return v in self._adj.get(u, ())

    @property
    def edges(self) -> list[tuple[str, str]]:
        pos = {n: i for i, n in enumerate(self._nodes)}
        return [(u, v) for u in self._nodes for v in sorted(self._adj[u], key=pos.__getitem__) if pos[u] < pos[v]]

    def copy(self) -> "UndirectedGraph":
        return UndirectedGraph(self._nodes, self.edges)

    def __eq__(self, other) -> bool:
        if not isinstance(other, UndirectedGraph):
            return NotImplemented
        return set(self._nodes) == set(other._nodes) and {frozenset(e) for e in self.edges} == {
            frozenset(e) for e in other.edges
        }

    def __repr__(self) -> str:
        return f"UndirectedGraph({len(self._nodes)} nodes, {len(self.edges)} edges)"


@dataclass
class SingleLatentGraph:
    """One tentative latent with its clique of children.

    ``foundation`` is a quadruple whose vanishing tetrads licensed the latent;
    ``bidirected`` maps ordered observed pairs to their labels.
    """

    latent: str
    children: tuple[str, ...]
    bidirected: dict[tuple[str, str], str] = field(default_factory=dict)
    foundation: tuple[str, ...] = ()


@dataclass
class MeasurementPattern:
    """Labeled mixed graph: latent -> observed and observed <-> observed edges.

    All latents are implicitly joined pairwise by bi-directed edges when
    ``latents_connected`` is set; those edges are never materialized.
    Bi-directed pairs are stored with endpoints in ``observed`` order.
    """

    latents: list[str] = field(default_factory=list)
    observed: list[str] = field(default_factory=list)
    directed: dict[tuple[str, str], str] = field(default_factory=dict)
    bidirected: dict[tuple[str, str], str] = field(default_factory=dict)
    latents_connected: bool = True
    foundations: dict[str, list[tuple[str, ...]]] = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MeasurementPattern):
            return NotImplemented
        return (
            self.latents == other.latents
            and self.observed == other.observed
            and self.directed == other.directed
            and self.bidirected == other.bidirected
            and self.latents_connected == other.latents_connected
        )

    def pair(self, a: str, b: str) -> tuple[str, str]:
        pos = {n: i for i, n in enumerate(self.observed)}
        return (a, b) if pos[a] < pos[b] else (b, a)

    def children(self, latent: str) -> list[str]:
        return [y for y in self.observed if (latent, y) in self.directed]

    def parents(self, y: str) -> list[str]:
        return [lat for lat in self.latents if (lat, y) in self.directed]

    def bidirected_neighbors(self, y: str) -> list[str]:
        return [b if a == y else a for (a, b) in self.bidirected if y in (a, b)]

    def validate(self) -> None:
        """Raise InputError unless the pattern invariants hold."""
        lats, obs = set(self.latents), set(self.observed)
        if len(lats) != len(self.latents) or len(obs) != len(self.observed):
            raise InputError("duplicate node names in pattern")
        if lats & obs:
            raise InputError("a node cannot be both latent and observed")
        for (lat, y), label in self.directed.items():
            if lat not in lats or y not in obs:
                raise InputError(f"directed edges must run latent -> observed, got {lat} -> {y}")
            if label not in LABELS:
                raise InputError(f"edge {lat} -> {y} has bad label {label!r}")
        for (a, b), label in self.bidirected.items():
            if a not in obs or b not in obs or a == b:
                raise InputError(f"bad bi-directed edge {a} <-> {b}")
            if (a, b) != self.pair(a, b):
                raise InputError(f"bi-directed pair {a} <-> {b} not in canonical order")
            if label not in LABELS:
                raise InputError(f"edge {a} <-> {b} has bad label {label!r}")
        for y in self.observed:
            if not self.parents(y):
                raise InputError(f"observed {y!r} has no latent parent")

    def copy(self) -> "MeasurementPattern":
        return MeasurementPattern(
            list(self.latents),
            list(self.observed),
            dict(self.directed),
            dict(self.bidirected),
            self.latents_connected,
            {k: list(v) for k, v in self.foundations.items()},
        )

    def restricted(self, edges: Iterable[tuple[str, str]]) -> "MeasurementPattern":
        """Sub-pattern keeping only the given directed edges and their endpoints."""
        edges = set(edges)
        lats = [lat for lat in self.latents if any(e[0] == lat for e in edges)]
        obs = [y for y in self.observed if any(e[1] == y for e in edges)]
        keep = set(obs)
        return MeasurementPattern(
            lats,
            obs,
            {e: lab for e, lab in self.directed.items() if e in edges},
            {p: lab for p, lab in self.bidirected.items() if p[0] in keep and p[1] in keep},
            self.latents_connected,
        )


def pure_submodels(p: MeasurementPattern, min_indicators: int = 3) -> list[MeasurementPattern]:
    """Maximal pure sub-patterns of ``p``.

    In a pure sub-pattern every retained observed variable has exactly one
    latent parent and no bi-directed edge to another retained variable, and
    every retained latent keeps at least ``min_indicators`` children.
    """
    if min_indicators < 3:
        raise InputError("min_indicators must be at least 3")
    obs = [y for y in p.observed if p.parents(y)]
    idx = {y: i for i, y in enumerate(obs)}
    conflict = {y: set() for y in obs}
    for a, b in p.bidirected:
        if a in idx and b in idx:
            conflict[a].add(b)
            conflict[b].add(a)

    # maximal sets of observed variables with no bi-directed edge among them
    compat = UndirectedGraph(obs, [(a, b) for a, b in itertools.combinations(obs, 2) if b not in conflict[a]])
    for y in obs:
        compat.add_node(y)
    independent_sets = [c for c in maximal_cliques(compat, min_size=1)]
    if not obs:
        return []

    found: set[frozenset[tuple[str, str]]] = set()
    for members in independent_sets:
        choices = [[(lat, y) for lat in p.parents(y)] for y in members]
        for assign in itertools.product(*choices):
            edges = _prune_small_latents(set(assign), min_indicators)
            if edges:
                found.add(frozenset(edges))
    maximal = [e for e in found if not any(e < f for f in found)]
    lat_pos = {lat: i for i, lat in enumerate(p.latents)}
    maximal.sort(key=lambda e: sorted((lat_pos[lat], idx[y]) for lat, y in e))
    return [p.restricted(e) for e in maximal]


def _prune_small_latents(edges: set[tuple[str, str]], k: int) -> set[tuple[str, str]]:
    counts: dict[str, int] = {}
    for lat, _ in edges:
        counts[lat] = counts.get(lat, 0) + 1
    return {e for e in edges if counts[e[0]] >= k}


def maximal_cliques(h: UndirectedGraph, min_size: int = 3) -> list[tuple[str, ...]]:
    """All maximal cliques of ``h`` with at least ``min_size`` nodes.

    Bron-Kerbosch with Tomita pivoting. Cliques are returned with members in
    node order, the list sorted by the members' node indices.
    """
    pos = {n: i for i, n in enumerate(h.nodes)}
    adj = {n: h.neighbors(n) for n in h.nodes}
    out: list[tuple[str, ...]] = []

    def expand(r: list[str], p: set[str], x: set[str]) -> None:
        if not p and not x:
            if len(r) >= min_size:
                out.append(tuple(sorted(r, key=pos.__getitem__)))
            return
        pivot = max(p | x, key=lambda u: (len(adj[u] & p), -pos[u]))
        for v in sorted(p - adj[pivot], key=pos.__getitem__):
            expand(r + [v], p & adj[v], x & adj[v])
            p = p - {v}
            x = x | {v}

    expand([], set(h.nodes), set())
    out.sort(key=lambda c: [pos[n] for n in c])
    return out


# -- line-oriented text format ------------------------------------------------


def _lines(text: str) -> Iterator[tuple[int, list[str]]]:
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_graph_text(text: str) -> tuple[list[tuple[str, str, list[str]]], list[tuple[str, str, str, list[str]]]]:
    """Parse node and edge declarations.

    Returns ``(nodes, edges)`` where nodes are ``(name, kind, extra)`` and
    edges are ``(a, arrow, b, extra)`` with ``arrow`` in ``{"->", "<->"}``.
    Trailing tokens are passed through for the caller to interpret.
    """
    nodes, edges = [], []
    for lineno, tok in _lines(text):
        if tok[0] == "node":
            if len(tok) < 3 or tok[2] not in (LATENT, OBSERVED):
                raise InputError(f"line {lineno}: expected 'node <name> latent|observed'")
            nodes.append((tok[1], tok[2], tok[3:]))
        elif len(tok) >= 3 and tok[1] in ("->", "<->"):
            edges.append((tok[0], tok[1], tok[2], tok[3:]))
        else:
            raise InputError(f"line {lineno}: cannot parse {' '.join(tok)!r}")
    return nodes, edges


def dag_to_text(g: TrueDag) -> str:
    lines = [f"node {n} {g.kind(n)}" for n in g.names]
    lines += [f"{u} -> {v}" for u, v in g.edges]
    return "\n".join(lines) + "\n"


def dag_from_text(text: str) -> TrueDag:
    nodes, edges = parse_graph_text(text)
    if any(arrow != "->" for _, arrow, _, _ in edges):
        raise InputError("a causal DAG cannot contain bi-directed edges")
    return TrueDag([(n, k) for n, k, _ in nodes], [(a, b) for a, _, b, _ in edges])


def pattern_to_text(p: MeasurementPattern) -> str:
    lines = [f"node {n} latent" for n in p.latents]
    lines += [f"node {n} observed" for n in p.observed]
    for lat in p.latents:
        for y in p.children(lat):
            lines.append(f"{lat} -> {y} {p.directed[(lat, y)]}")
    for (a, b), label in p.bidirected.items():
        lines.append(f"{a} <-> {b} {label}")
    return "\n".join(lines) + "\n"


def pattern_from_text(text: str) -> MeasurementPattern:
    nodes, edges = parse_graph_text(text)
    p = MeasurementPattern(
        [n for n, k, _ in nodes if k == LATENT],
        [n for n, k, _ in nodes if k == OBSERVED],
    )
    for a, arrow, b, extra in edges:
        label = extra[0] if extra else CONFIRMED
        if label not in LABELS:
            raise InputError(f"edge {a} {arrow} {b}: label must be confirmed|unconfirmed")
        if a not in p.latents + p.observed or b not in p.latents + p.observed:
            raise InputError(f"edge {a} {arrow} {b} mentions an undeclared node")
        if arrow == "->":
            p.directed[(a, b)] = label
        else:
            p.bidirected[p.pair(a, b)] = label
    p.validate()
    return p
