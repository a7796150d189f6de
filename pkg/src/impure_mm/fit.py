"""Gaussian maximum-likelihood fitting of measurement patterns.

The model implied by a pattern is ``Sigma = L Phi L' + Theta`` where ``L``
holds the latent -> observed loadings (the first child of every latent is
fixed at 1), ``Phi`` is a free latent covariance and ``Theta`` is diagonal
except at bi-directed pairs. Fitting minimizes the ML discrepancy

    F = log|Sigma| + tr(S Sigma^-1) - log|S| - p

by Fisher scoring with step halving that keeps ``Sigma``, ``Phi`` and
``Theta`` positive definite.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .errors import IdentificationError, InputError
from .graphs import UNCONFIRMED, MeasurementPattern, SingleLatentGraph
from .sem import CovMatrix


@dataclass
class FitModel:
    latents: list[str]
    observed: list[str]
    loadings: dict[tuple[str, str], float]
    latent_cov: np.ndarray
    error_cov: np.ndarray

    def loading_matrix(self) -> np.ndarray:
        lam = np.zeros((len(self.observed), len(self.latents)))
        for (lat, y), v in self.loadings.items():
            lam[self.observed.index(y), self.latents.index(lat)] = v
        return lam

    def implied(self) -> np.ndarray:
        lam = self.loading_matrix()
        s = lam @ self.latent_cov @ lam.T + self.error_cov
        return (s + s.T) / 2


@dataclass
class FittedModel:
    model: FitModel
    log_likelihood: float
    n: int
    free_param_count: int
    converged: bool
    iterations: int
    discrepancy: float = 0.0
    df: int = 0
    pattern: MeasurementPattern | None = field(default=None, repr=False)
    theta: np.ndarray | None = field(default=None, repr=False)


def free_param_count(p: MeasurementPattern) -> int:
    lats = [lat for lat in p.latents if p.children(lat)]
    obs = [y for y in p.observed if p.parents(y)]
    k = len(lats)
    return (len(p.directed) - k) + k * (k + 1) // 2 + len(obs) + len(p.bidirected)


def degrees_of_freedom(p: MeasurementPattern) -> int:
    """Distinct covariance entries minus free parameters (may be negative)."""
    if not p.directed:
        raise InputError("pattern is empty")
    n_obs = len([y for y in p.observed if p.parents(y)])
    return n_obs * (n_obs + 1) // 2 - free_param_count(p)


class Parameterization:
    """Maps a free-parameter vector onto (loadings, Phi, Theta) for a pattern."""

    def __init__(self, p: MeasurementPattern):
        self.pattern = p
        self.latents = [lat for lat in p.latents if p.children(lat)]
        self.observed = [y for y in p.observed if p.parents(y)]
        for lat in self.latents:
            if len(p.children(lat)) < 2:
                raise IdentificationError(f"latent {lat} has fewer than two indicators")
        oi = {y: i for i, y in enumerate(self.observed)}
        li = {lat: k for k, lat in enumerate(self.latents)}
        self.reference = {lat: p.children(lat)[0] for lat in self.latents}
        self.free_loadings = [
            (oi[y], li[lat])
            for lat in self.latents
            for y in p.children(lat)
            if y != self.reference[lat]
        ]
        self.fixed_loadings = [(oi[self.reference[lat]], li[lat]) for lat in self.latents]
        k = len(self.latents)
        self.phi_idx = [(a, b) for a in range(k) for b in range(a + 1)]
        self.theta_diag = list(range(len(self.observed)))
        self.theta_off = [(oi[a], oi[b]) for a, b in p.bidirected if a in oi and b in oi]
        self.size = len(self.free_loadings) + len(self.phi_idx) + len(self.theta_diag) + len(self.theta_off)
        self.p = len(self.observed)
        self.k = k

    def unpack(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lam = np.zeros((self.p, self.k))
        for j, kk in self.fixed_loadings:
            lam[j, kk] = 1.0
        pos = 0
        for j, kk in self.free_loadings:
            lam[j, kk] = theta[pos]
            pos += 1
        phi = np.zeros((self.k, self.k))
        for a, b in self.phi_idx:
            phi[a, b] = phi[b, a] = theta[pos]
            pos += 1
        th = np.zeros((self.p, self.p))
        for j in self.theta_diag:
            th[j, j] = theta[pos]
            pos += 1
        for a, b in self.theta_off:
            th[a, b] = th[b, a] = theta[pos]
            pos += 1
        return lam, phi, th

    def pack(self, lam: np.ndarray, phi: np.ndarray, th: np.ndarray) -> np.ndarray:
        out = [lam[j, k] for j, k in self.free_loadings]
        out += [phi[a, b] for a, b in self.phi_idx]
        out += [th[j, j] for j in self.theta_diag]
        out += [th[a, b] for a, b in self.theta_off]
        return np.array(out, dtype=float)

    def sigma(self, theta: np.ndarray) -> np.ndarray:
        lam, phi, th = self.unpack(theta)
        s = lam @ phi @ lam.T + th
        return (s + s.T) / 2

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        """d Sigma / d theta as an array of shape (size, p, p)."""
        lam, phi, _ = self.unpack(theta)
        lp = lam @ phi
        out = np.zeros((self.size, self.p, self.p))
        pos = 0
        for j, k in self.free_loadings:
            out[pos, j, :] += lp[:, k]
            out[pos, :, j] += lp[:, k]
            pos += 1
        for a, b in self.phi_idx:
            m = np.outer(lam[:, a], lam[:, b])
            out[pos] = m if a == b else m + m.T
            pos += 1
        for j in self.theta_diag:
            out[pos, j, j] = 1.0
            pos += 1
        for a, b in self.theta_off:
            out[pos, a, b] = out[pos, b, a] = 1.0
            pos += 1
        return out

    def admissible(self, theta: np.ndarray) -> bool:
        _, phi, th = self.unpack(theta)
        return all(_is_pd(m) for m in (phi, th, self.sigma(theta)))

    def discrepancy(self, theta: np.ndarray, s: np.ndarray) -> float:
        sig = self.sigma(theta)
        _, logdet = np.linalg.slogdet(sig)
        _, logdet_s = np.linalg.slogdet(s)
        return float(logdet + np.trace(np.linalg.solve(sig, s)) - logdet_s - self.p)

    def discrepancy_gradient(self, theta: np.ndarray, s: np.ndarray) -> np.ndarray:
        sig_inv = np.linalg.inv(self.sigma(theta))
        g = sig_inv - sig_inv @ s @ sig_inv
        return np.einsum("ab,qab->q", g, self.jacobian(theta))

    def log_likelihood(self, theta: np.ndarray, s: np.ndarray, n: int) -> float:
        sig = self.sigma(theta)
        _, logdet = np.linalg.slogdet(sig)
        quad = np.trace(np.linalg.solve(sig, s))
        return float(-0.5 * n * (self.p * math.log(2 * math.pi) + logdet + quad))

    def log_likelihood_gradient(self, theta: np.ndarray, s: np.ndarray, n: int) -> np.ndarray:
        return -0.5 * n * self.discrepancy_gradient(theta, s)

    def initial(self, s: np.ndarray) -> np.ndarray:
        lam = np.zeros((self.p, self.k))
        for j, k in self.fixed_loadings:
            lam[j, k] = 1.0
        for j, k in self.free_loadings:
            ref = next(r for r, kk in self.fixed_loadings if kk == k)
            # unit magnitude, sign taken from the covariance with the reference child
            lam[j, k] = -1.0 if s[j, ref] < 0 else 1.0
        phi = np.eye(self.k) * float(np.median(np.diag(s)))
        th = np.diag(np.diag(s) / 2)
        return self.pack(lam, phi, th)

    def moment_start(self, s: np.ndarray) -> np.ndarray:
        """Start from covariance ratios: with reference r and an instrument w
        outside the pair, s_jw / s_rw estimates the loading of j."""
        lam = np.zeros((self.p, self.k))
        for j, k in self.fixed_loadings:
            lam[j, k] = 1.0
        refs = {k: r for r, k in self.fixed_loadings}
        for j, k in self.free_loadings:
            r = refs[k]
            others = [w for w in range(self.p) if w not in (j, r)]
            w = max(others, key=lambda w: abs(s[r, w] * s[j, w])) if others else None
            if w is None or abs(s[r, w]) < 1e-12:
                lam[j, k] = -1.0 if s[j, r] < 0 else 1.0
            else:
                lam[j, k] = float(np.clip(s[j, w] / s[r, w], -10, 10))
        phi = np.empty((self.k, self.k))
        for a in range(self.k):
            for b in range(self.k):
                phi[a, b] = s[refs[a], refs[b]]
        for a in range(self.k):
            # common part of the reference variance, via its covariance with a sibling
            kids = [j for j, k in self.free_loadings if k == a]
            if kids:
                est = np.median([s[refs[a], j] / lam[j, a] for j in kids if lam[j, a] != 0] or [phi[a, a] / 2])
                phi[a, a] = float(np.clip(est, 0.05 * s[refs[a], refs[a]], 0.95 * s[refs[a], refs[a]]))
            else:
                phi[a, a] *= 0.5
        w, v = np.linalg.eigh((phi + phi.T) / 2)
        phi = v @ np.diag(np.maximum(w, 1e-3 * max(1.0, w.max()))) @ v.T
        common = np.diag(lam @ phi @ lam.T)
        th = np.diag(np.maximum(np.diag(s) - common, 0.1 * np.diag(s)))
        return self.pack(lam, phi, th)


def _is_pd(m: np.ndarray) -> bool:
    if m.size == 0:
        return True
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return True


def _fisher_scoring(par: Parameterization, s: np.ndarray, theta: np.ndarray, max_iter: int = 500):
    f = par.discrepancy(theta, s)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        sig_inv = np.linalg.inv(par.sigma(theta))
        jac = par.jacobian(theta)
        g_mat = sig_inv - sig_inv @ s @ sig_inv
        grad = np.einsum("ab,qab->q", g_mat, jac)
        if np.max(np.abs(grad) * np.maximum(1.0, np.abs(theta))) < 1e-6:
            converged = True
            break
        a = np.einsum("ab,qbc->qac", sig_inv, jac)
        info = np.einsum("iab,jba->ij", a, a)
        info += 1e-10 * np.trace(info) / len(info) * np.eye(len(info))
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-12:
            cand = theta - t * step
            if par.admissible(cand):
                fc = par.discrepancy(cand, s)
                if fc <= f + 1e-4 * t * float(grad @ -step):
                    break
            t /= 2
        else:
            break
        moved = np.max(np.abs(cand - theta))
        theta, f = cand, fc
        if moved < 1e-8:
            converged = True
            break
    return theta, f, converged, it


def fit_ml(
    p: MeasurementPattern,
    cov: CovMatrix,
    starts: int = 3,
    seed: int = 0,
    init: np.ndarray | None = None,
    max_iter: int = 500,
) -> FittedModel:
    """Maximum-likelihood fit of ``p`` to the sample covariance ``cov``.

    Starts from ``init`` when given, otherwise from the default start plus
    ``starts - 1`` starts with loadings perturbed by up to 20%. Returns the
    best local optimum found.
    """
    if cov.n is None:
        raise InputError("fitting needs the sample size n")
    par = Parameterization(p)
    if not par.observed:
        raise InputError("pattern is empty")
    if cov.n <= par.p:
        raise InputError(f"need n > p ({cov.n} <= {par.p})")
    df = degrees_of_freedom(p)
    if df < 0:
        raise IdentificationError(f"pattern has {df} degrees of freedom")
    s = cov.subset(par.observed).values

    if init is not None:
        inits = [np.asarray(init, dtype=float)]
    else:
        base = par.initial(s)
        rng = np.random.default_rng(seed)
        inits = [base, par.moment_start(s)]
        n_load = len(par.free_loadings)
        for _ in range(max(0, starts - 1)):
            t = base.copy()
            t[:n_load] *= rng.uniform(0.8, 1.2, size=n_load)
            inits.append(t)

    best = None
    for t0 in inits:
        if not par.admissible(t0):
            continue
        theta, f, conv, it = _fisher_scoring(par, s, t0, max_iter)
        if best is None or f < best[1] - 1e-12:
            best = (theta, f, conv, it)
    if best is None:
        raise InputError("no admissible starting point")
    theta, f, conv, it = best
    lam, phi, th = par.unpack(theta)
    loadings = {}
    for lat in par.latents:
        k = par.latents.index(lat)
        for y in p.children(lat):
            loadings[(lat, y)] = float(lam[par.observed.index(y), k])
    model = FitModel(list(par.latents), list(par.observed), loadings, phi, th)
    return FittedModel(
        model=model,
        log_likelihood=par.log_likelihood(theta, s, cov.n),
        n=cov.n,
        free_param_count=par.size,
        converged=conv,
        iterations=it,
        discrepancy=f,
        df=df,
        pattern=p,
        theta=theta,
    )


def bic(f: FittedModel) -> float:
    return -2.0 * f.log_likelihood + f.free_param_count * math.log(f.n)


def chi_square(f: FittedModel, cov: CovMatrix | None = None) -> tuple[float, int, float]:
    """Likelihood-ratio statistic (n - 1) * F_ML with its upper-tail p-value."""
    if f.df <= 0:
        raise IdentificationError(f"chi-square test needs df > 0, pattern has df = {f.df}")
    n = f.n if cov is None or cov.n is None else cov.n
    disc = f.discrepancy
    if cov is not None:
        par = Parameterization(f.pattern)
        disc = par.discrepancy(f.theta, cov.subset(par.observed).values)
    stat = max(0.0, (n - 1) * disc)
    return stat, f.df, float(chi2.sf(stat, f.df))


def single_latent_pattern(g: SingleLatentGraph) -> MeasurementPattern:
    return MeasurementPattern(
        [g.latent],
        list(g.children),
        {(g.latent, y): "confirmed" for y in g.children},
        dict(g.bidirected),
    )


@dataclass
class GreedyResult:
    added: list[tuple[str, str]]
    skipped: list[tuple[tuple[str, str], str]]
    final_bic: float | None


def greedy_bidirected(g, cov: CovMatrix, threads: int = 1, seed: int = 0):
    """Best-first greedy addition of bi-directed edges scored by BIC.

    Each round fits every single-edge addition over observed pairs that are
    not already joined by a bi-directed edge and keeps the BIC-minimizing
    candidate if it strictly improves on the incumbent. Works on a
    :class:`SingleLatentGraph` or a :class:`MeasurementPattern` and returns
    ``(augmented copy, GreedyResult)``. New edges are labeled unconfirmed.
    """
    if cov.n is None:
        raise InputError("greedy search needs the sample size n")
    single = isinstance(g, SingleLatentGraph)
    pattern = single_latent_pattern(g) if single else g.copy()
    result = GreedyResult([], [], None)
    try:
        incumbent = fit_ml(pattern, cov, seed=seed)
    except (IdentificationError, InputError) as exc:
        result.skipped.append((("*", "*"), str(exc)))
        return (g if not single else _copy_single(g)), result
    score = bic(incumbent)
    obs = [y for y in pattern.observed if pattern.parents(y)]

    while True:
        cands = [pattern.pair(a, b) for a, b in itertools.combinations(obs, 2) if pattern.pair(a, b) not in pattern.bidirected]
        if not cands:
            break

        def try_pair(pair):
            trial = pattern.copy()
            trial.bidirected[pair] = UNCONFIRMED
            trial.bidirected = {q: trial.bidirected[q] for q in sorted(trial.bidirected, key=lambda q: (obs.index(q[0]), obs.index(q[1])))}
            try:
                par = Parameterization(trial)
                warm = _warm_start(par, incumbent)
                fitted = fit_ml(trial, cov, init=warm) if warm is not None else fit_ml(trial, cov, seed=seed)
            except (IdentificationError, InputError, np.linalg.LinAlgError) as exc:
                return pair, None, str(exc)
            return pair, fitted, None

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(try_pair, cands))
        else:
            outcomes = [try_pair(c) for c in cands]
        best = None
        for pair, fitted, err in outcomes:
            if fitted is None:
                result.skipped.append((pair, err))
                continue
            b = bic(fitted)
            if best is None or b < best[1]:
                best = (pair, b, fitted)
        if best is None or not best[1] < score:
            break
        pair, score, incumbent = best
        pattern = incumbent.pattern
        result.added.append(pair)

    result.final_bic = score
    if single:
        out = _copy_single(g)
        out.bidirected = dict(pattern.bidirected)
        return out, result
    return pattern, result


def _copy_single(g: SingleLatentGraph) -> SingleLatentGraph:
    return SingleLatentGraph(g.latent, tuple(g.children), dict(g.bidirected), tuple(g.foundation))


def _warm_start(par: Parameterization, prev: FittedModel) -> np.ndarray | None:
    """Incumbent estimates with zero covariance on the new pair."""
    old = Parameterization(prev.pattern)
    if old.observed != par.observed or old.latents != par.latents:
        return None
    lam, phi, th = old.unpack(prev.theta)
    t = par.pack(lam, phi, th)
    return t if par.admissible(t) else None


def fit_report(f: FittedModel, cov: CovMatrix | None = None) -> str:
    """Plain-text report of a fitted model."""
    lines = ["# maximum-likelihood fit"]
    lines.append(f"n = {f.n}")
    lines.append(f"free parameters = {f.free_param_count}")
    lines.append(f"df = {f.df}")
    lines.append(f"log-likelihood = {f.log_likelihood:.6f}")
    lines.append(f"BIC = {bic(f):.6f}")
    if f.df > 0:
        stat, df, pval = chi_square(f, cov)
        lines.append(f"chi-square = {stat:.4f} (df = {df}, p = {pval:.4g})")
    else:
        lines.append("chi-square = not testable (df <= 0)")
    lines.append(f"converged = {f.converged} after {f.iterations} iterations")
    lines.append("")
    lines.append("# loadings")
    for (lat, y), v in f.model.loadings.items():
        lines.append(f"{lat} -> {y}: {v:.6f}")
    lines.append("# latent covariance")
    for row in f.model.latent_cov:
        lines.append(" ".join(f"{v:.6f}" for v in row))
    lines.append("# error variances / covariances")
    obs = f.model.observed
    for j, y in enumerate(obs):
        lines.append(f"{y}: {f.model.error_cov[j, j]:.6f}")
    for a, b in itertools.combinations(range(len(obs)), 2):
        if f.model.error_cov[a, b] != 0.0:
            lines.append(f"{obs[a]} <-> {obs[b]}: {f.model.error_cov[a, b]:.6f}")
    return "\n".join(lines) + "\n"
