"""Discovery of measurement patterns from tetrad constraints.

The pipeline has three stages:

* ``initial_pass`` removes edges between variables proven to have no common
  parent and drops variables that enter no vanishing tetrad;
* ``single_latents`` turns every maximal clique of what remains into a
  one-latent graph with bi-directed edges for unexplained dependencies;
* ``find_measurement_pattern`` merges those graphs, locates impure pairs and
  variables with two latent parents, and labels every edge.

``discover`` chains them and produces a report alongside the pattern.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, InputError
from .graphs import (
    CONFIRMED,
    UNCONFIRMED,
    MeasurementPattern,
    SingleLatentGraph,
    TrueDag,
    UndirectedGraph,
    d_separated,
    maximal_cliques,
    weaker,
)
from .sem import RNG_ALGORITHM, CovMatrix, DataMatrix, LinearSem, implied_covariance, sample_covariance
from .tetrad import CovSource, PopulationSource, SampleSource, lemma3_check, lemma4_check

log = logging.getLogger(__name__)

MODES = ("auto", "population", "sample")


@dataclass
class DiscoveryConfig:
    alpha: float = 0.05
    population_tol: float = 1e-9
    min_clique_size: int = 3
    use_bic_augmentation: bool = True
    screening_alpha: float = 0.10
    bonferroni: bool = False
    threads: int = 1
    seed: int = 0
    mode: str = "auto"

    def validate(self) -> None:
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.screening_alpha < 1:
            raise ConfigError("screening_alpha must lie in (0, 1)")
        if not self.population_tol > 0:
            raise ConfigError("population_tol must be positive")
        if self.min_clique_size < 3:
            raise ConfigError("min_clique_size must be at least 3")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")


@dataclass
class SearchLog:
    """Events recorded while searching; becomes part of the report."""

    removed_edges: list[dict] = field(default_factory=list)
    removed_variables: list[str] = field(default_factory=list)
    cliques: list[tuple[str, ...]] = field(default_factory=list)
    skipped_cliques: list[tuple[str, ...]] = field(default_factory=list)
    merges: list[tuple[str, str]] = field(default_factory=list)
    lemma3: list[tuple[str, ...]] = field(default_factory=list)
    lemma4: list[tuple[str, ...]] = field(default_factory=list)
    greedy_added: list[tuple[str, str]] = field(default_factory=list)
    greedy_skipped: list[str] = field(default_factory=list)


# -- stage 1 -------------------------------------------------------------------


def _fact2_witness(src: CovSource, a: str, d: str, rest: tuple[str, ...]):
    """Roles (a, b, c, d, e, f) proving a and d share no parent, or None."""
    for pair in itertools.combinations(rest, 2):
        other = tuple(v for v in rest if v not in pair)
        if not (src.holds(a, d, *pair) and src.holds(a, d, *other)):
            continue
        for p, q in ((pair, other), (other, pair)):
            for x, y in ((a, d), (d, a)):
                for b in p:
                    for e in q:
                        if not src.products_equal(x, b, y, e):
                            c = next(v for v in p if v != b)
                            f = next(v for v in q if v != e)
                            return (x, b, c, y, e, f)
    return None


def initial_pass(src: CovSource, variables: list[str] | None = None, slog: SearchLog | None = None) -> UndirectedGraph:
    """Complete graph over ``variables`` minus provably parent-disjoint pairs.

    Every 6-subset is examined against the starting complete graph, so the
    result does not depend on the order in which subsets are visited.
    Variables that appear in no non-degenerate vanishing tetrad are removed.
    """
    vs = list(src.names if variables is None else variables)
    slog = slog if slog is not None else SearchLog()
    h = UndirectedGraph.complete(vs)
    if len(vs) < 4:
        warnings.warn("fewer than four variables: nothing can be discovered", RuntimeWarning, stacklevel=2)
        for v in vs:
            h.remove_node(v)
            slog.removed_variables.append(v)
        return h
    for six in itertools.combinations(vs, 6):
        for a, d in itertools.combinations(six, 2):
            if not h.has_edge(a, d):
                continue
            rest = tuple(v for v in six if v not in (a, d))
            roles = _fact2_witness(src, a, d, rest)
            if roles is not None:
                h.remove_edge(a, d)
                slog.removed_edges.append({"pair": (a, d), "roles": roles})
    for a in vs:
        others = [v for v in vs if v != a]
        if not any(src.supports(a, *t) for t in itertools.combinations(others, 3)):
            h.remove_node(a)
            slog.removed_variables.append(a)
    return h


def enumerate_cliques(h: UndirectedGraph, min_size: int = 3) -> list[tuple[str, ...]]:
    return maximal_cliques(h, min_size=min_size)


# -- stage 2 -------------------------------------------------------------------


def _foundation(src: CovSource, clique, variables):
    for t in itertools.combinations(clique, 3):
        for d in variables:
            if d not in t and src.supports(*t, d):
                return (*t, d)
    return None


def _impurity_confirmed(src: CovSource, a: str, b: str, clique) -> bool:
    """A triple from the clique separates a and b individually but the
    tetrad built from two of its members together with a and b fails."""
    others = [v for v in clique if v not in (a, b)]
    for t in itertools.combinations(others, 3):
        if not (src.supports(*t, a) and src.supports(*t, b)):
            continue
        if any(not src.holds(x, y, a, b) for x, y in itertools.combinations(t, 2)):
            return True
    return False


def single_latents(
    src: CovSource,
    cliques: list[tuple[str, ...]],
    variables: list[str] | None = None,
    cfg: DiscoveryConfig | None = None,
    slog: SearchLog | None = None,
) -> list[SingleLatentGraph]:
    """One single-latent graph per clique that has a foundation tetrad."""
    cfg = cfg or DiscoveryConfig()
    slog = slog if slog is not None else SearchLog()
    vs = list(src.names if variables is None else variables)
    out: list[SingleLatentGraph] = []
    for clique in cliques:
        found = _foundation(src, clique, vs)
        if found is None:
            slog.skipped_cliques.append(tuple(clique))
            continue
        bidir = {}
        for a, b in itertools.combinations(clique, 2):
            explained = any(
                src.holds(a, b, c, d)
                for c in clique
                if c not in (a, b)
                for d in vs
                if d not in (a, b, c)
            )
            if not explained:
                bidir[(a, b)] = CONFIRMED if _impurity_confirmed(src, a, b, clique) else UNCONFIRMED
        g = SingleLatentGraph(f"L{len(out) + 1}", tuple(clique), bidir, found)
        if cfg.use_bic_augmentation and isinstance(src, SampleSource):
            g = _augment(g, src.cov, cfg, slog)
        out.append(g)
    return out


def _augment(g, cov: CovMatrix, cfg: DiscoveryConfig, slog: SearchLog):
    from .fit import greedy_bidirected

    out, res = greedy_bidirected(g, cov, threads=cfg.threads, seed=cfg.seed)
    slog.greedy_added.extend(res.added)
    slog.greedy_skipped.extend(f"{p}: {msg}" for p, msg in res.skipped)
    return out


# -- stage 3 -------------------------------------------------------------------


class _State:
    """Mutable working copy of the pattern during stage 3."""

    def __init__(self, order: list[str]):
        self.order = order
        self.pos = {v: i for i, v in enumerate(order)}
        self.latents: list[str] = []
        self.members: dict[str, set[str]] = {}
        self.edges: dict[tuple[str, str], str] = {}
        # pair -> (label, origin latents or {None} for pattern-level edges)
        self.bidir: dict[tuple[str, str], tuple[str, set]] = {}
        self.foundations: dict[str, list[tuple[str, ...]]] = {}

    def pair(self, a, b):
        return (a, b) if self.pos[a] < self.pos[b] else (b, a)

    def kids(self, lat) -> list[str]:
        return sorted(self.members[lat], key=self.pos.__getitem__)

    def add_bidir(self, a, b, label, origin):
        key = self.pair(a, b)
        if key in self.bidir:
            old_label, old_origin = self.bidir[key]
            self.bidir[key] = (label if label == CONFIRMED or old_label == CONFIRMED else UNCONFIRMED, old_origin | {origin})
        else:
            self.bidir[key] = (label, {origin})


def _try_lemma3(src: CovSource, c, d, si, sj):
    """Roles with a, b from ``si`` and e, f from ``sj`` that prove c <-> d."""
    left = [v for v in si if v not in (c, d)]
    right = [v for v in sj if v not in (c, d)]
    for a, b in itertools.combinations(left, 2):
        for e, f in itertools.combinations(right, 2):
            if len({a, b, e, f}) < 4:
                continue
            hit = lemma3_check(src, a, b, c, d, e, f)
            if hit is not None:
                return hit
    return None


def _try_lemma4(src: CovSource, d, si, sj):
    left = [v for v in si if v != d]
    right = [v for v in sj if v != d]
    for a, b, c in itertools.combinations(left, 3):
        for e, f, g in itertools.combinations(right, 3):
            if len({a, b, c, e, f, g}) < 6:
                continue
            hit = lemma4_check(src, a, b, c, d, e, f, g)
            if hit is not None:
                return hit
    return None


def find_measurement_pattern(
    src: CovSource,
    graphs: list[SingleLatentGraph],
    variables: list[str] | None = None,
    cfg: DiscoveryConfig | None = None,
    slog: SearchLog | None = None,
) -> MeasurementPattern:
    cfg = cfg or DiscoveryConfig()
    slog = slog if slog is not None else SearchLog()
    order = list(src.names if variables is None else variables)
    st = _State(order)

    # union of the single-latent graphs
    for g in graphs:
        lat = g.latent
        while lat in st.members:
            lat = lat + "'"
        st.latents.append(lat)
        st.members[lat] = set(g.children)
        st.foundations[lat] = [tuple(g.foundation)]
        for y in g.children:
            st.edges[(lat, y)] = CONFIRMED
        for (a, b), label in g.bidirected.items():
            st.add_bidir(a, b, label, lat)

    # merge latents sharing a foundation triple
    changed = True
    while changed:
        changed = False
        for li, lj in itertools.combinations(list(st.latents), 2):
            inter = st.members[li] & st.members[lj]
            if len(inter) < 3:
                continue
            union = sorted(st.members[li] | st.members[lj], key=st.pos.__getitem__)
            trip = next(
                (
                    t
                    for t in itertools.combinations(sorted(inter, key=st.pos.__getitem__), 3)
                    if any(src.supports(*t, d) for d in order if d not in t)
                ),
                None,
            )
            if trip is None:
                continue
            for y in union:
                old = [st.edges.pop((lat, y)) for lat in (li, lj) if (lat, y) in st.edges]
                label = CONFIRMED if y in inter else UNCONFIRMED
                for lab in old:
                    label = weaker(label, lab) if y in inter else UNCONFIRMED
                st.edges[(li, y)] = label
            st.members[li] = set(union)
            del st.members[lj]
            st.latents.remove(lj)
            st.foundations[li] += st.foundations.pop(lj)
            for key, (label, origin) in list(st.bidir.items()):
                if lj in origin:
                    st.bidir[key] = (label, (origin - {lj}) | {li})
            slog.merges.append((li, lj))
            changed = True
            break

    # impure pairs shared by two latents, or split across them
    confirmed_by_lemma3: set[tuple[str, str]] = set()
    for li, lj in itertools.combinations(list(st.latents), 2):
        si, sj = st.kids(li), st.kids(lj)
        inter = [v for v in si if v in st.members[lj]]
        for c, d in itertools.combinations(inter, 2):
            key = st.pair(c, d)
            if key not in st.bidir:
                st.add_bidir(c, d, UNCONFIRMED, None)
            for x, y, lx, ly in ((c, d, li, lj), (d, c, li, lj)):
                hit = _try_lemma3(src, x, y, si, sj)
                if hit is not None:
                    st.edges.pop((ly, x), None)
                    st.edges.pop((lx, y), None)
                    st.members[ly].discard(x)
                    st.members[lx].discard(y)
                    st.bidir[key] = (CONFIRMED, st.bidir[key][1] | {None})
                    confirmed_by_lemma3.add(key)
                    slog.lemma3.append(hit.roles)
                    break
            else:
                continue
            si, sj = st.kids(li), st.kids(lj)
        only_i = [v for v in si if v not in st.members[lj]]
        only_j = [v for v in sj if v not in st.members[li]]
        for c in only_i:
            for d in only_j:
                key = st.pair(c, d)
                if key in confirmed_by_lemma3:
                    continue
                hit = _try_lemma3(src, c, d, si, sj)
                if hit is not None:
                    st.bidir[key] = (CONFIRMED, st.bidir.get(key, (CONFIRMED, set()))[1] | {None})
                    confirmed_by_lemma3.add(key)
                    slog.lemma3.append(hit.roles)

    # drop single-latent impurities whose endpoints left their latent
    for key, (label, origin) in list(st.bidir.items()):
        if None in origin:
            continue
        keep = {lat for lat in origin if lat in st.members and set(key) <= st.members[lat]}
        if keep:
            st.bidir[key] = (label, keep)
        else:
            del st.bidir[key]

    # variables with several latent parents
    for y in order:
        parents = [lat for lat in st.latents if (lat, y) in st.edges]
        if len(parents) < 2:
            continue
        supported = set()
        for li, lj in itertools.combinations(parents, 2):
            hit = _try_lemma4(src, y, st.kids(li), st.kids(lj))
            if hit is not None:
                supported |= {li, lj}
                slog.lemma4.append(hit.roles)
        for lat in parents:
            if lat not in supported:
                st.edges[(lat, y)] = UNCONFIRMED

    # assemble with latents renamed L1..Lk in creation order
    alive = [lat for lat in st.latents if st.members[lat]]
    rename = {lat: f"L{i + 1}" for i, lat in enumerate(alive)}
    observed = [y for y in order if any((lat, y) in st.edges for lat in alive)]
    directed = {}
    for lat in alive:
        for y in st.kids(lat):
            if (lat, y) in st.edges:
                directed[(rename[lat], y)] = st.edges[(lat, y)]
    obs_set = set(observed)
    bidirected = {
        key: st.bidir[key][0]
        for key in sorted(st.bidir, key=lambda k: (st.pos[k[0]], st.pos[k[1]]))
        if set(key) <= obs_set
    }
    pattern = MeasurementPattern(
        [rename[lat] for lat in alive],
        observed,
        directed,
        bidirected,
        True,
        {rename[lat]: st.foundations[lat] for lat in alive},
    )
    if cfg.use_bic_augmentation and isinstance(src, SampleSource) and pattern.directed:
        pattern = _augment(pattern, src.cov, cfg, slog)
        pattern.foundations = {rename[lat]: st.foundations[lat] for lat in alive}
    return pattern


# -- driver --------------------------------------------------------------------


def make_source(data, cfg: DiscoveryConfig) -> tuple[CovSource, str]:
    """Pick the tetrad oracle for an input and the configured mode."""
    if isinstance(data, LinearSem):
        cov = implied_covariance(data)
        if cfg.mode == "sample":
            raise ConfigError("a model has no sample size; use population mode")
        return PopulationSource(cov, cfg.population_tol), "population"
    if isinstance(data, DataMatrix):
        data = sample_covariance(data)
    if not isinstance(data, CovMatrix):
        raise InputError(f"cannot discover from {type(data).__name__}")
    if cfg.mode == "population":
        return PopulationSource(data, cfg.population_tol), "population"
    if data.n is None:
        raise ConfigError("sample mode needs the sample size n (or choose population mode)")
    return SampleSource(data, cfg.alpha, cfg.bonferroni), "sample"


def screen(src: CovSource, mode: str, cfg: DiscoveryConfig) -> tuple[list[str], list[str]]:
    """Drop variables uncorrelated with every other variable."""
    cov = src.cov
    names = list(cov.names)
    r = cov.correlation()
    keep, dropped = [], []
    for i, v in enumerate(names):
        others = [abs(r[i, j]) for j in range(len(names)) if j != i]
        if mode == "population":
            linked = any(x >= cfg.population_tol for x in others)
        else:
            se = 1.0 / math.sqrt(max(cov.n - 3, 1))
            linked = any(2 * norm.sf(abs(np.arctanh(min(x, 1 - 1e-15))) / se) < cfg.screening_alpha for x in others)
        (keep if linked else dropped).append(v)
    return keep, dropped


@dataclass
class DiscoveryReport:
    mode: str
    variables: list[str]
    screened_out: list[str]
    log: SearchLog
    tetrad_queries: int
    tetrad_evaluations: int
    timings: dict[str, float]
    config: DiscoveryConfig
    rng_algorithm: str = RNG_ALGORITHM

    def to_dict(self) -> dict:
        d = asdict(self)
        d["log"]["cliques"] = [list(c) for c in self.log.cliques]
        return d

    def to_text(self) -> str:
        lg = self.log
        lines = [
            f"mode: {self.mode}",
            f"variables: {len(self.variables)}",
            f"screened out: {', '.join(self.screened_out) or '-'}",
            f"edges removed in the initial pass: {len(lg.removed_edges)}",
            f"variables removed in the initial pass: {', '.join(lg.removed_variables) or '-'}",
            f"maximal cliques: {len(lg.cliques)}",
            f"cliques without a foundation tetrad: {len(lg.skipped_cliques)}",
            f"merges: {len(lg.merges)}",
            f"impure pairs found across latents: {len(lg.lemma3)}",
            f"children with two confirmed parents: {len(lg.lemma4)}",
            f"bi-directed edges added by BIC: {len(lg.greedy_added)}",
            f"tetrad queries: {self.tetrad_queries} ({self.tetrad_evaluations} evaluated)",
        ]
        lines += [f"time {k}: {v:.3f}s" for k, v in self.timings.items()]
        lines.append("config: " + ", ".join(f"{k}={v}" for k, v in asdict(self.config).items()))
        lines.append(f"rng: {self.rng_algorithm}")
        return "\n".join(lines) + "\n"


def discover(data, cfg: DiscoveryConfig | None = None) -> tuple[MeasurementPattern, DiscoveryReport]:
    """Full pipeline on a model (population mode), a data matrix or a
    covariance matrix (sample mode when ``n`` is known)."""
    cfg = cfg or DiscoveryConfig()
    cfg.validate()
    src, mode = make_source(data, cfg)
    timings = {}
    t0 = time.perf_counter()
    keep, dropped = screen(src, mode, cfg)
    if mode == "sample" and len(keep) > 30:
        warnings.warn(f"{len(keep)} variables: the search enumerates all 6-subsets and may be slow", RuntimeWarning, stacklevel=2)
    slog = SearchLog()
    h = initial_pass(src, keep, slog)
    timings["initial_pass"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    cliques = enumerate_cliques(h, cfg.min_clique_size)
    slog.cliques = list(cliques)
    graphs = single_latents(src, cliques, keep, cfg, slog)
    timings["single_latents"] = time.perf_counter() - t1
    t2 = time.perf_counter()
    pattern = find_measurement_pattern(src, graphs, keep, cfg, slog)
    timings["find_measurement_pattern"] = time.perf_counter() - t2
    log.info("discovered %d latents over %d observed", len(pattern.latents), len(pattern.observed))
    report = DiscoveryReport(mode, list(src.names), dropped, slog, src.queries, src.evaluations, timings, cfg)
    return pattern, report


# -- evaluation ----------------------------------------------------------------


def _separates(g: TrueDag, x: str, a: str, b: str) -> bool:
    return d_separated(g, a, b, (x,))


def latent_map(found: MeasurementPattern, truth: TrueDag) -> dict[str, str | None]:
    """Each discovered latent -> true latent d-separating most of its child pairs."""
    out = {}
    for lat in found.latents:
        kids = [y for y in found.children(lat) if y in truth.observed]
        best, best_key = None, None
        for x in truth.latents:
            score = sum(_separates(truth, x, a, b) for a, b in itertools.combinations(kids, 2))
            key = (score, len(truth.children(x)))
            if best_key is None or key > best_key:
                best, best_key = x, key
        out[lat] = best
    return out


def _true_clusters(truth: TrueDag, ys: list[str]) -> dict[str, set[str]]:
    out = {}
    for y in ys:
        counts = {x: sum(_separates(truth, x, y, z) for z in ys if z != y) for x in truth.latents}
        top = max(counts.values(), default=0)
        out[y] = {x for x, c in counts.items() if c == top and c > 0}
    return out


def recovery_metrics(found: MeasurementPattern, truth: TrueDag) -> dict:
    """Compare a discovered pattern with the generating graph.

    ``edge_soundness`` is the share of confirmed latent -> observed edges whose
    mapped true latent is an ancestor of the child. ``cluster_agreement`` is
    the share of observed pairs placed together (or apart) in both.
    """
    mapping = latent_map(found, truth)
    confirmed = [(lat, y) for (lat, y), lab in found.directed.items() if lab == CONFIRMED]
    sound = [e for e in confirmed if mapping[e[0]] is not None and mapping[e[0]] in truth.ancestors(e[1])]
    ys = [y for y in found.observed if y in truth.observed]
    truth_cl = _true_clusters(truth, ys)
    agree = total = 0
    for a, b in itertools.combinations(ys, 2):
        same_found = bool(set(found.parents(a)) & set(found.parents(b)))
        same_true = bool(truth_cl[a] & truth_cl[b])
        agree += same_found == same_true
        total += 1
    return {
        "latent_map": mapping,
        "confirmed_edges": len(confirmed),
        "sound_confirmed_edges": len(sound),
        "edge_soundness": len(sound) / len(confirmed) if confirmed else 1.0,
        "unconfirmed_edges": sum(1 for lab in found.directed.values() if lab == UNCONFIRMED),
        "cluster_agreement": agree / total if total else 1.0,
        "latent_count": len(found.latents),
        "bidirected_count": len(found.bidirected),
    }
