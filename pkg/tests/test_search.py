import itertools
import warnings

import numpy as np
import pytest

from impure_mm.catalog import fixture_names, fixture_text, load_fixture
from impure_mm.errors import ConfigError, InputError
from impure_mm.graphs import CONFIRMED, UNCONFIRMED, TrueDag, UndirectedGraph, d_separated, pure_submodels
from impure_mm.search import (
    DiscoveryConfig,
    SearchLog,
    discover,
    enumerate_cliques,
    find_measurement_pattern,
    initial_pass,
    latent_map,
    make_source,
    recovery_metrics,
    screen,
    single_latents,
)
from impure_mm.sem import CovMatrix, LinearSem, implied_covariance, random_sem, sample, sample_covariance
from impure_mm.tetrad import PopulationSource, SampleSource

POP = DiscoveryConfig(mode="population")


def run(name):
    return discover(load_fixture(name), DiscoveryConfig(mode="population"))


def clusters(p):
    return {lat: {y: p.directed[(lat, y)] for y in p.children(lat)} for lat in p.latents}


def obs(*ks):
    return {f"Y{k}" for k in ks}


# -- fixtures end to end ------------------------------------------------------


def test_fig2_rebuilt():
    p, rep = run("fig2")
    cl = clusters(p)
    assert [set(c) for c in cl.values()] == [obs(1, 2, 3), obs(4, 5, 6)]
    assert all(v == CONFIRMED for c in cl.values() for v in c.values())
    assert p.bidirected == {("Y3", "Y4"): CONFIRMED}
    assert rep.mode == "population" and rep.log.lemma3


def test_fig4_impurity_inside_one_cluster():
    p, _ = run("fig4")
    assert [set(p.children(lat)) for lat in p.latents] == [obs(1, 2, 3, 4, 5)]
    assert p.bidirected == {("Y1", "Y2"): CONFIRMED}
    subs = pure_submodels(p)
    assert sorted(sorted(s.observed) for s in subs) == [["Y1", "Y3", "Y4", "Y5"], ["Y2", "Y3", "Y4", "Y5"]]


def test_fig5_two_parents_confirmed():
    p, rep = run("fig5")
    assert [set(p.children(lat)) for lat in p.latents] == [obs(1, 2, 3, 4), obs(4, 5, 6, 7)]
    assert sorted(p.parents("Y4")) == ["L1", "L2"]
    assert all(v == CONFIRMED for v in p.directed.values())
    assert rep.log.lemma4 and not p.bidirected


def test_fig5_without_y7_falls_back_to_impurities():
    p, rep = run("fig5_no_y7")
    assert len(p.latents) == 1
    assert set(p.children("L1")) == obs(1, 2, 3, 4, 5, 6)
    assert set(p.bidirected) == {("Y4", "Y5"), ("Y4", "Y6"), ("Y5", "Y6")}
    assert set(p.bidirected.values()) == {CONFIRMED}
    assert not rep.log.lemma4


def test_fig6_shared_children():
    p, _ = run("fig6")
    assert [set(p.children(lat)) for lat in p.latents] == [obs(1, 2, 3, 4, 5), obs(4, 5, 6, 7, 8)]
    assert p.bidirected == {("Y4", "Y5"): CONFIRMED}


def test_fig3_soundness_is_five_of_six():
    m = load_fixture("fig3")
    p, _ = discover(m, POP)
    met = recovery_metrics(p, m.graph)
    assert met["latent_count"] == 2
    assert met["confirmed_edges"] == 6 and met["sound_confirmed_edges"] == 5
    assert met["edge_soundness"] == pytest.approx(5 / 6)
    # Y6 is grouped with the X2 indicators although X2 does not cause it
    assert [set(p.children(lat)) for lat in p.latents] == [obs(1, 2, 3), obs(4, 5, 6)]
    assert met["latent_map"] == {"L1": "X1", "L2": "X2"}
    assert "X2" not in m.graph.ancestors("Y6")


def test_fig7_structure_recovered():
    m = load_fixture("fig7")
    p, _ = discover(m, POP)
    met = recovery_metrics(p, m.graph)
    assert [set(p.children(lat)) for lat in p.latents] == [obs(1, 2, 3, 4), obs(5, 6, 7), obs(8, 9, 10)]
    assert met["edge_soundness"] == 1.0 and met["cluster_agreement"] == 1.0


def test_merge_of_overlapping_cliques():
    src = PopulationSource(implied_covariance(load_fixture("fig7")))
    log = SearchLog()
    graphs = single_latents(src, [("Y4", "Y5", "Y6", "Y7"), ("Y5", "Y6", "Y7", "Y8")], slog=log)
    assert len(graphs) == 2
    p = find_measurement_pattern(src, graphs, slog=log)
    assert log.merges == [("L1", "L2")]
    assert clusters(p) == {
        "L1": {"Y4": UNCONFIRMED, "Y5": CONFIRMED, "Y6": CONFIRMED, "Y7": CONFIRMED, "Y8": UNCONFIRMED}
    }


@pytest.mark.parametrize("name", [n for n in fixture_names() if n not in ("fig3", "bollen")])
def test_confirmed_edges_are_sound(name):
    m = load_fixture(name)
    p, _ = discover(m, POP)
    p.validate()
    assert recovery_metrics(p, m.graph)["edge_soundness"] == 1.0
    mapping = latent_map(p, m.graph)
    for (a, b), lab in p.bidirected.items():
        # fig6's Y4 <-> Y5 stands in for the second shared parent
        if lab != CONFIRMED or name == "fig6":
            continue
        # a confirmed impurity is never explained by the latents mapped onto a and b
        parents = {mapping[lat] for lat in p.parents(a) + p.parents(b)}
        assert not d_separated(m.graph, a, b, sorted(parents)), (a, b)


# -- stages -------------------------------------------------------------------


def test_initial_pass_removes_cross_cluster_pairs():
    m = load_fixture("fig2")
    log = SearchLog()
    h = initial_pass(PopulationSource(implied_covariance(m)), slog=log)
    assert sorted(map(sorted, enumerate_cliques(h))) == [["Y1", "Y2", "Y3"], ["Y4", "Y5", "Y6"]] or h.has_edge("Y3", "Y4")
    for ev in log.removed_edges:
        a, d = ev["pair"]
        assert not set(m.graph.parents(a)) & set(m.graph.parents(d))


def test_initial_pass_is_order_independent():
    m = load_fixture("fig6")
    src = PopulationSource(implied_covariance(m))
    a = initial_pass(src)
    b = initial_pass(src, list(reversed(src.names)))
    assert {frozenset(e) for e in a.edges} == {frozenset(e) for e in b.edges}


def test_initial_pass_drops_unrelated_variable():
    m = load_fixture("fig4")
    cov = implied_covariance(m)
    names = cov.names + ["Z"]
    v = np.zeros((len(names), len(names)))
    v[:-1, :-1] = cov.values
    v[-1, -1] = 1.0
    log = SearchLog()
    h = initial_pass(PopulationSource(CovMatrix(names, v)), slog=log)
    assert "Z" not in h.nodes and log.removed_variables == ["Z"]


def test_initial_pass_too_few_variables():
    cov = CovMatrix(["a", "b", "c"], np.eye(3) + 0.5)
    with pytest.warns(RuntimeWarning):
        h = initial_pass(PopulationSource(cov))
    assert not h.nodes


def test_enumerate_cliques_min_size():
    h = UndirectedGraph(list("abcde"), [("a", "b"), ("b", "c"), ("a", "c"), ("d", "e")])
    assert enumerate_cliques(h) == [("a", "b", "c")]
    assert len(enumerate_cliques(h, 2)) == 2


def test_single_latents_skip_and_impurity():
    src = PopulationSource(implied_covariance(load_fixture("fig4")))
    log = SearchLog()
    gs = single_latents(src, [("Y1", "Y2", "Y3", "Y4", "Y5")], slog=log)
    assert gs[0].bidirected == {("Y1", "Y2"): CONFIRMED}
    assert src.holds(*gs[0].foundation)
    diag = PopulationSource(CovMatrix(list("abcd"), np.eye(4)))
    assert single_latents(diag, [("a", "b", "c")], slog=log) == []
    assert log.skipped_cliques == [("a", "b", "c")]


def test_lemma3_and_lemma4_logged():
    _, rep2 = run("fig2")
    assert any({"Y3", "Y4"} <= set(r) for r in rep2.log.lemma3)
    _, rep5 = run("fig5")
    assert rep5.log.lemma4


# -- configuration and sources ------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        {"alpha": 0.0},
        {"alpha": 1.0},
        {"screening_alpha": 2.0},
        {"population_tol": 0.0},
        {"min_clique_size": 2},
        {"threads": 0},
        {"mode": "oracle"},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        DiscoveryConfig(**kw).validate()


def test_make_source_modes():
    m = load_fixture("fig2")
    cov = implied_covariance(m)
    with pytest.raises(ConfigError):
        make_source(cov, DiscoveryConfig())
    src, mode = make_source(cov, POP)
    assert mode == "population" and isinstance(src, PopulationSource)
    with pytest.raises(ConfigError):
        make_source(m, DiscoveryConfig(mode="sample"))
    data = sample(m, 100, 1)
    src, mode = make_source(data, DiscoveryConfig())
    assert mode == "sample" and isinstance(src, SampleSource) and src.cov.n == 100
    with pytest.raises(InputError):
        make_source("nonsense", DiscoveryConfig())


def test_screen_drops_noise_column():
    m = load_fixture("fig2")
    d = sample(m, 500, 3)
    rng = np.random.default_rng(7)
    from impure_mm.sem import DataMatrix

    d = DataMatrix(d.names + ["N"], np.column_stack([d.values, rng.normal(size=500)]))
    cfg = DiscoveryConfig(screening_alpha=0.01)
    src, mode = make_source(d, cfg)
    keep, dropped = screen(src, mode, cfg)
    assert dropped == ["N"] and len(keep) == 6


def test_many_variables_warn():
    nodes = [("X", "latent")] + [(f"Y{i}", "observed") for i in range(31)]
    g = TrueDag(nodes, [("X", f"Y{i}") for i in range(31)])
    cov = sample_covariance(sample(random_sem(g, 0), 200, 1))
    from impure_mm import search

    with pytest.warns(RuntimeWarning, match="31 variables"):
        # stop right after the warning; the full search is not the point here
        with pytest.raises(_Stop):
            orig = search.screen
            try:
                search.screen = lambda *a: (orig(*a)[0], [])
                search.initial_pass = _raise_stop
                discover(cov)
            finally:
                search.screen = orig
                search.initial_pass = initial_pass


class _Stop(Exception):
    pass


def _raise_stop(*a, **k):
    raise _Stop


# -- reports and determinism --------------------------------------------------


def test_report_contents():
    p, rep = run("fig2")
    d = rep.to_dict()
    assert d["mode"] == "population" and d["config"]["mode"] == "population"
    assert d["tetrad_queries"] >= d["tetrad_evaluations"] > 0
    text = rep.to_text()
    assert "merges" in text and "rng:" in text


def test_sample_mode_deterministic_and_thread_independent():
    m = load_fixture("fig2")
    cov = sample_covariance(sample(m, 200, 4))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, _ = discover(cov, DiscoveryConfig())
        b, _ = discover(cov, DiscoveryConfig())
        c, _ = discover(cov, DiscoveryConfig(threads=4))
    assert a == b == c


def test_fixture_catalog():
    assert "fig7" in fixture_names() and "bollen" in fixture_names()
    with pytest.raises(InputError, match="available"):
        fixture_text("fig99")
    for name in fixture_names():
        assert isinstance(load_fixture(name), LinearSem)


def test_corrupted_fixture_rejected(monkeypatch):
    from impure_mm import catalog

    text = fixture_text("fig4").replace("X2 -> Y3 1.1", "X1 -> Y3 1.1")
    monkeypatch.setattr(catalog, "fixture_text", lambda name: text)
    with pytest.raises(InputError, match="structural"):
        catalog.load_fixture("fig4")


def test_all_pairs_covered_by_metrics():
    m = load_fixture("fig6")
    p, _ = discover(m, POP)
    met = recovery_metrics(p, m.graph)
    assert met["cluster_agreement"] <= 1.0
    assert set(met) >= {"latent_map", "edge_soundness", "cluster_agreement", "bidirected_count"}
    n = len(p.observed)
    assert len(list(itertools.combinations(p.observed, 2))) == n * (n - 1) // 2
