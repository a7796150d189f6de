import itertools

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impure_mm.errors import InputError
from impure_mm.graphs import (
    CONFIRMED,
    UNCONFIRMED,
    MeasurementPattern,
    TrueDag,
    UndirectedGraph,
    d_separated,
    dag_from_text,
    dag_to_text,
    maximal_cliques,
    node_separates_all_pairs,
    one_factor_submodels,
    pattern_from_text,
    pattern_to_text,
    pure_submodels,
    stronger,
    weaker,
)


def fig2_dag():
    nodes = [("X4", "latent"), ("X1", "latent"), ("X2", "latent"), ("X3", "latent")]
    nodes += [(f"Y{i}", "observed") for i in range(1, 7)]
    edges = [("X4", "X1"), ("X4", "X2"), ("X3", "Y3"), ("X3", "Y4")]
    edges += [("X1", f"Y{i}") for i in (1, 2, 3)] + [("X2", f"Y{i}") for i in (4, 5, 6)]
    return TrueDag(nodes, edges)


# -- independent d-separation oracle: enumerate simple paths ------------------


def _path_active(g: TrueDag, path, given):
    desc_or_self = {n: g.descendants(n) | {n} for n in path}
    for i in range(1, len(path) - 1):
        prev, mid, nxt = path[i - 1], path[i], path[i + 1]
        collider = (prev, mid) in set(g.edges) and (nxt, mid) in set(g.edges)
        if collider:
            if not desc_or_self[mid] & set(given):
                return False
        elif mid in given:
            return False
    return True


def oracle_dsep(g: TrueDag, a, b, given):
    skel = nx.Graph()
    skel.add_nodes_from(g.names)
    skel.add_edges_from(g.edges)
    return not any(_path_active(g, p, given) for p in nx.all_simple_paths(skel, a, b))


@st.composite
def random_dags(draw, max_latent=3, max_obs=4):
    nl = draw(st.integers(1, max_latent))
    no = draw(st.integers(2, max_obs))
    lat = [f"X{i}" for i in range(nl)]
    obs = [f"Y{i}" for i in range(no)]
    edges = []
    for i, j in itertools.combinations(range(nl), 2):
        if draw(st.booleans()):
            edges.append((lat[i], lat[j]))
    for y in obs:
        for x in lat:
            if draw(st.booleans()):
                edges.append((x, y))
    return TrueDag([(x, "latent") for x in lat] + [(y, "observed") for y in obs], edges)


@settings(max_examples=60, deadline=None)
@given(random_dags(), st.data())
def test_dsep_matches_path_enumeration(g, data):
    a, b = data.draw(st.lists(st.sampled_from(g.names), min_size=2, max_size=2, unique=True))
    rest = [n for n in g.names if n not in (a, b)]
    z = data.draw(st.lists(st.sampled_from(rest), unique=True, max_size=3)) if rest else []
    assert d_separated(g, a, b, z) == oracle_dsep(g, a, b, z)


@settings(max_examples=40, deadline=None)
@given(random_dags())
def test_local_markov(g):
    for v in g.names:
        pa = set(g.parents(v))
        for w in g.names:
            if w == v or w in pa or w in g.descendants(v):
                continue
            assert d_separated(g, v, w, pa)


def test_dsep_symmetric_and_errors():
    g = fig2_dag()
    assert d_separated(g, "Y1", "Y4", ["X1"]) == d_separated(g, "Y4", "Y1", ["X1"])
    with pytest.raises(InputError):
        d_separated(g, "Y1", "Y1")
    with pytest.raises(InputError):
        d_separated(g, "Y1", "Y2", ["Y1"])
    with pytest.raises(InputError):
        d_separated(g, "Y1", "nope")


def test_fig2_separation_facts():
    g = fig2_dag()
    assert node_separates_all_pairs(g, "X1", ["Y1", "Y2", "Y3", "Y5"])
    assert not node_separates_all_pairs(g, "X1", ["Y1", "Y2", "Y3", "Y4"])
    assert not d_separated(g, "Y3", "Y4", ["X1", "X2"])


def test_one_factor_submodels_matches_loop():
    g = fig2_dag()
    expect = [
        (x, q)
        for x in g.latents
        for q in itertools.combinations(g.observed, 4)
        if all(oracle_dsep(g, a, b, [x]) for a, b in itertools.combinations(q, 2))
    ]
    assert one_factor_submodels(g) == expect


def test_truedag_validation():
    with pytest.raises(InputError):
        TrueDag([("A", "latent"), ("B", "latent")], [("A", "B"), ("B", "A")])
    with pytest.raises(InputError):
        TrueDag([("Y", "observed"), ("Z", "observed")], [("Y", "Z")])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.data())
def test_maximal_cliques_match_networkx(n, data):
    nodes = [f"v{i}" for i in range(n)]
    pairs = list(itertools.combinations(nodes, 2))
    edges = [e for e in pairs if data.draw(st.booleans())]
    h = UndirectedGraph(nodes, edges)
    ours = {frozenset(c) for c in maximal_cliques(h, min_size=1)}
    ref = nx.Graph()
    ref.add_nodes_from(nodes)
    ref.add_edges_from(edges)
    assert ours == {frozenset(c) for c in nx.find_cliques(ref)}
    assert {frozenset(c) for c in maximal_cliques(h, 3)} == {c for c in ours if len(c) >= 3}


def test_empty_graph_has_no_cliques():
    assert maximal_cliques(UndirectedGraph(), 1) == []
    assert maximal_cliques(UndirectedGraph(["a", "b"]), 3) == []


def test_labels():
    assert weaker(CONFIRMED, UNCONFIRMED) == UNCONFIRMED
    assert stronger(CONFIRMED, UNCONFIRMED) == CONFIRMED


def fig4_pattern():
    obs = [f"Y{i}" for i in range(1, 6)]
    return MeasurementPattern(["L1"], obs, {("L1", y): CONFIRMED for y in obs}, {("Y1", "Y2"): CONFIRMED})


def _is_pure(p, k):
    if p.bidirected:
        return False
    return all(len(p.parents(y)) == 1 for y in p.observed) and all(len(p.children(lat)) >= k for lat in p.latents)


def _brute_pure(p, k):
    edges = list(p.directed)
    found = []
    for r in range(len(edges), 0, -1):
        for sub in itertools.combinations(edges, r):
            q = p.restricted(sub)
            if _is_pure(q, k) and not any(set(sub) < set(f) for f in found):
                found.append(sub)
    return {frozenset(f) for f in found}


def test_pure_submodels_fig4():
    subs = pure_submodels(fig4_pattern())
    assert [sorted(s.observed) for s in subs] == [["Y1", "Y3", "Y4", "Y5"], ["Y2", "Y3", "Y4", "Y5"]]


def test_pure_submodels_brute_force():
    obs = [f"Y{i}" for i in range(1, 8)]
    directed = {("L1", y): CONFIRMED for y in obs[:4]}
    directed.update({("L2", y): CONFIRMED for y in obs[3:]})
    p = MeasurementPattern(["L1", "L2"], obs, directed, {("Y1", "Y2"): UNCONFIRMED, ("Y5", "Y6"): CONFIRMED})
    ours = {frozenset(s.directed) for s in pure_submodels(p)}
    assert ours == _brute_pure(p, 3)
    for s in pure_submodels(p):
        assert _is_pure(s, 3)


def test_pure_submodels_rejects_small_k():
    with pytest.raises(InputError):
        pure_submodels(fig4_pattern(), 2)


def test_text_round_trips():
    g = fig2_dag()
    assert dag_from_text(dag_to_text(g)) == g
    p = fig4_pattern()
    assert pattern_from_text(pattern_to_text(p)) == p


def test_parse_errors_carry_line_numbers():
    with pytest.raises(InputError, match="line 2"):
        pattern_from_text("node L1 latent\nnode Y1 sideways\n")
    with pytest.raises(InputError):
        pattern_from_text("node L1 latent\nnode Y1 observed\nL1 -> Y1 maybe\n")


def test_pattern_validate():
    p = fig4_pattern()
    p.validate()
    bad = p.copy()
    bad.directed[("Y1", "Y2")] = CONFIRMED
    with pytest.raises(InputError):
        bad.validate()
