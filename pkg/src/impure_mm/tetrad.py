"""Vanishing-tetrad predicates and the identification rules built on them.

A *covariance source* answers tetrad queries either exactly from a population
covariance (:class:`PopulationSource`) or statistically from a sample
covariance with Wishart's test (:class:`SampleSource`). Everything above this
module talks to sources only, so the search runs unchanged in both modes.

Notation: ``holds(a, b, c, d)`` is true when the three products
``s_ab*s_cd``, ``s_ac*s_bd`` and ``s_ad*s_bc`` are all equal.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, InputError
from .sem import CovMatrix


@dataclass(frozen=True)
class TetradVerdict:
    quad: tuple[str, str, str, str]
    holds: bool
    differences: tuple[float, float, float]
    p_values: tuple[float, float, float] | None = None
    degenerate: bool = False


@dataclass(frozen=True)
class Lemma3Conclusion:
    """Roles a..f; ``impure_pair`` = (c, d) share a hidden common cause
    beyond the two latents separating {a, b, c} and {d, e, f}."""

    roles: tuple[str, str, str, str, str, str]

    @property
    def impure_pair(self) -> tuple[str, str]:
        return self.roles[2], self.roles[3]


@dataclass(frozen=True)
class Lemma4Conclusion:
    """Roles a..g; ``shared_child`` = d is a child of both latents."""

    roles: tuple[str, str, str, str, str, str, str]

    @property
    def shared_child(self) -> str:
        return self.roles[3]


def tetrad_differences(cov: CovMatrix, a: str, b: str, c: str, d: str) -> tuple[float, float, float]:
    """(s_ab s_cd - s_ac s_bd, s_ab s_cd - s_ad s_bc, s_ac s_bd - s_ad s_bc)."""
    if len({a, b, c, d}) != 4:
        raise InputError(f"tetrad needs four distinct variables, got {(a, b, c, d)}")
    for v in (a, b, c, d):
        cov.index(v)
    p1 = cov.cov(a, b) * cov.cov(c, d)
    p2 = cov.cov(a, c) * cov.cov(b, d)
    p3 = cov.cov(a, d) * cov.cov(b, c)
    return p1 - p2, p1 - p3, p2 - p3


def _wishart_z(cov: CovMatrix, i: str, j: str, k: str, l: str) -> tuple[float, bool]:
    """z statistic for s_ij s_kl - s_ik s_jl; second value flags a
    non-positive variance estimate."""
    n = cov.n
    t = cov.cov(i, j) * cov.cov(k, l) - cov.cov(i, k) * cov.cov(j, l)
    if t == 0.0:
        return 0.0, False
    idx = [cov.index(v) for v in (i, j, k, l)]
    sub = cov.values[np.ix_(idx, idx)]
    # the two pairs that do not enter the difference
    d_il = cov.cov(i, i) * cov.cov(l, l) - cov.cov(i, l) ** 2
    d_jk = cov.cov(j, j) * cov.cov(k, k) - cov.cov(j, k) ** 2
    var = d_il * d_jk * (n + 1) / ((n - 1) * (n - 2)) - np.linalg.det(sub) / (n - 2)
    if not var > 0:
        return 0.0, True
    return t / math.sqrt(var), False


# each difference rewritten as s_ij s_kl - s_ik s_jl
_ORDERINGS = {
    1: lambda a, b, c, d: (a, b, c, d),
    2: lambda a, b, c, d: (a, b, d, c),
    3: lambda a, b, c, d: (a, c, d, b),
}


def wishart_p_value(cov: CovMatrix, a: str, b: str, c: str, d: str, which: int) -> float:
    """Two-sided p-value of Wishart's test for one of the three differences.

    ``which`` selects the difference as in :func:`tetrad_differences`.
    Returns 1.0 when the difference is exactly zero or the variance estimate
    is not positive.
    """
    if cov.n is None:
        raise ConfigError("Wishart's test needs the sample size n")
    if cov.n <= 4:
        raise InputError("Wishart's test needs n > 4")
    if len({a, b, c, d}) != 4:
        raise InputError("tetrad needs four distinct variables")
    try:
        quad = _ORDERINGS[which](a, b, c, d)
    except KeyError:
        raise InputError("which must be 1, 2 or 3") from None
    z, _ = _wishart_z(cov, *quad)
    return float(2 * norm.sf(abs(z)))


class CovSource:
    """Base class for tetrad oracles. Verdicts are memoized per quadruple."""

    def __init__(self, cov: CovMatrix):
        self.cov = cov
        self._cache: dict[tuple[str, ...], TetradVerdict] = {}
        self._lock = threading.Lock()
        self.queries = 0
        self.evaluations = 0

    @property
    def names(self) -> list[str]:
        return list(self.cov.names)

    def _key(self, quad) -> tuple[str, ...]:
        return tuple(sorted(quad, key=self.cov.index))

    def tetrad(self, a: str, b: str, c: str, d: str) -> TetradVerdict:
        key = self._key((a, b, c, d))
        self.queries += 1
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        verdict = self._evaluate(*key)
        with self._lock:
            self.evaluations += 1
            self._cache.setdefault(key, verdict)
        return verdict

    def holds(self, a: str, b: str, c: str, d: str) -> bool:
        return self.tetrad(a, b, c, d).holds

    def supports(self, a: str, b: str, c: str, d: str) -> bool:
        """Holds without being the vacuous all-zero case."""
        v = self.tetrad(a, b, c, d)
        return v.holds and not v.degenerate

    def products_equal(self, a: str, b: str, d: str, e: str) -> bool:
        """Whether s_ab * s_de == s_ae * s_bd."""
        raise NotImplementedError

    def _evaluate(self, a, b, c, d) -> TetradVerdict:
        raise NotImplementedError


class PopulationSource(CovSource):
    """Exact answers from a population covariance, up to a relative tolerance."""

    def __init__(self, cov: CovMatrix, tol: float = 1e-9):
        if not tol > 0:
            raise ConfigError("population tolerance must be positive")
        super().__init__(cov)
        self.tol = tol

    def _close(self, x: float, y: float) -> bool:
        return abs(x - y) < self.tol * max(1.0, abs(x), abs(y))

    def _evaluate(self, a, b, c, d) -> TetradVerdict:
        s = self.cov.cov
        p1, p2, p3 = s(a, b) * s(c, d), s(a, c) * s(b, d), s(a, d) * s(b, c)
        scale = max(1.0, abs(p1), abs(p2), abs(p3))
        diffs = (p1 - p2, p1 - p3, p2 - p3)
        holds = all(abs(x) < self.tol * scale for x in diffs)
        var_scale = math.sqrt(abs(s(a, a) * s(b, b) * s(c, c) * s(d, d)))
        degenerate = max(abs(p1), abs(p2), abs(p3)) < self.tol * max(var_scale, 1e-300)
        return TetradVerdict((a, b, c, d), holds, diffs, None, degenerate)

    def products_equal(self, a, b, d, e) -> bool:
        s = self.cov.cov
        return self._close(s(a, b) * s(d, e), s(a, e) * s(b, d))


class SampleSource(CovSource):
    """Wishart tests on a sample covariance.

    A tetrad holds when every one of its three differences has p >= alpha
    (alpha / 3 with ``bonferroni``).
    """

    def __init__(self, cov: CovMatrix, alpha: float = 0.05, bonferroni: bool = False):
        if cov.n is None:
            raise ConfigError("sample mode needs the sample size n")
        if not 0 < alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        super().__init__(cov)
        self.alpha = alpha
        self.bonferroni = bonferroni

    @property
    def level(self) -> float:
        return self.alpha / 3 if self.bonferroni else self.alpha

    def _evaluate(self, a, b, c, d) -> TetradVerdict:
        diffs = tetrad_differences(self.cov, a, b, c, d)
        zs = [_wishart_z(self.cov, *_ORDERINGS[w](a, b, c, d)) for w in (1, 2, 3)]
        pvals = tuple(float(2 * norm.sf(abs(z))) for z, _ in zs)
        degenerate = any(flag for _, flag in zs)
        holds = all(p >= self.level for p in pvals)
        return TetradVerdict((a, b, c, d), holds, diffs, pvals, degenerate)

    def products_equal(self, a, b, d, e) -> bool:
        # s_ab s_de - s_ae s_bd in the s_ij s_kl - s_ik s_jl form
        z, _ = _wishart_z(self.cov, a, b, e, d)
        return 2 * norm.sf(abs(z)) >= self.alpha


def tetrad_holds(src: CovSource, a: str, b: str, c: str, d: str) -> TetradVerdict:
    return src.tetrad(a, b, c, d)


def fact2_separates(src: CovSource, a: str, b: str, c: str, d: str, e: str, f: str) -> bool:
    """True when T(abcd) and T(adef) hold but s_ab s_de != s_ae s_bd.

    A true answer licenses the claim that ``a`` and ``d`` have no common
    parent in the generating graph.
    """
    _distinct(a, b, c, d, e, f)
    return src.holds(a, b, c, d) and src.holds(a, d, e, f) and not src.products_equal(a, b, d, e)


def lemma3_check(src: CovSource, a, b, c, d, e, f) -> Lemma3Conclusion | None:
    """Detect an extra hidden common cause of ``c`` and ``d``.

    Requires T(abce), T(abcf), T(adef), T(bdef) true and T(abef), T(abcd),
    T(cdef) false.
    """
    _distinct(a, b, c, d, e, f)
    h = src.holds
    if not (h(a, b, c, e) and h(a, b, c, f) and h(a, d, e, f) and h(b, d, e, f)):
        return None
    if h(a, b, e, f) or h(a, b, c, d) or h(c, d, e, f):
        return None
    return Lemma3Conclusion((a, b, c, d, e, f))


def lemma4_check(src: CovSource, a, b, c, d, e, f, g) -> Lemma4Conclusion | None:
    """Detect that ``d`` is a child of two distinct latents, one separating
    {a, b, c, d} and one separating {d, e, f, g}."""
    _distinct(a, b, c, d, e, f, g)
    h = src.holds
    if not all(h(a, b, c, k) for k in (d, e, f, g)):
        return None
    if not all(h(k, e, f, g) for k in (a, b, c, d)):
        return None
    for k1, k2 in itertools.combinations((a, b, c), 2):
        for k3, k4 in itertools.combinations((e, f, g), 2):
            if h(k1, k2, k3, k4):
                return None
    if h(a, d, e, f) or h(a, b, d, e):
        return None
    return Lemma4Conclusion((a, b, c, d, e, f, g))


def _distinct(*vs: str) -> None:
    if len(set(vs)) != len(vs):
        raise InputError(f"roles must be distinct variables, got {vs}")
