"""Linear Gaussian structural equation models over a :class:`TrueDag`.

Every node is a linear combination of its parents plus independent zero-mean
Gaussian noise. Exogenous latents get their variance from ``error_vars`` too.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .graphs import TrueDag, parse_graph_text

RNG_ALGORITHM = "numpy.random.Generator(PCG64)"


@dataclass(frozen=True)
class LinearSem:
    graph: TrueDag
    coeffs: dict[tuple[str, str], float]
    error_vars: dict[str, float]

    def __post_init__(self):
        if set(self.coeffs) != set(self.graph.edges):
            raise InputError("every edge needs exactly one coefficient")
        if set(self.error_vars) != set(self.graph.names):
            raise InputError("every node needs an error variance")
        bad = [n for n, v in self.error_vars.items() if not v > 0]
        if bad:
            raise InputError(f"error variances must be positive: {bad}")

    def coefficient_matrix(self) -> np.ndarray:
        """B with B[child, parent] = coefficient, in graph node order."""
        g = self.graph
        b = np.zeros((len(g.names), len(g.names)))
        for (u, v), c in self.coeffs.items():
            b[g.index(v), g.index(u)] = c
        return b


@dataclass
class CovMatrix:
    """Symmetric positive-definite covariance over named variables."""

    names: list[str]
    values: np.ndarray
    n: int | None = None
    rank_deficient: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        p = len(self.names)
        if self.values.shape != (p, p):
            raise InputError(f"covariance shape {self.values.shape} does not match {p} names")
        if len(set(self.names)) != p:
            raise InputError("duplicate variable names")
        scale = max(1.0, float(np.max(np.abs(self.values)))) if p else 1.0
        if not np.allclose(self.values, self.values.T, rtol=0, atol=1e-12 * scale):
            raise InputError("covariance matrix is not symmetric")
        self._pos = {n: i for i, n in enumerate(self.names)}

    def index(self, name: str) -> int:
        try:
            return self._pos[name]
        except KeyError:
            raise InputError(f"unknown variable {name!r}") from None

    def cov(self, a: str, b: str) -> float:
        return float(self.values[self._pos[a], self._pos[b]])

    def subset(self, names) -> "CovMatrix":
        idx = [self.index(n) for n in names]
        return CovMatrix(list(names), self.values[np.ix_(idx, idx)], self.n)

    def is_positive_definite(self) -> bool:
        try:
            np.linalg.cholesky(self.values)
        except np.linalg.LinAlgError:
            return False
        return True

    def correlation(self) -> np.ndarray:
        d = np.sqrt(np.diag(self.values))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.values / np.outer(d, d)
        return np.nan_to_num(r)


@dataclass
class DataMatrix:
    names: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise InputError("column count must match the number of names")


def random_sem(
    g: TrueDag,
    seed: int,
    coef_low: float = 0.5,
    coef_high: float = 1.5,
    var_high: float = 0.5,
) -> LinearSem:
    """Random parameters: |coefficient| uniform on [coef_low, coef_high] with a
    random sign, error variance uniform on (0, var_high]."""
    if not (0 < coef_low < coef_high) or not var_high > 0:
        raise InputError("need 0 < coef_low < coef_high and var_high > 0")
    rng = np.random.default_rng(seed)
    coeffs = {}
    for e in g.edges:
        mag = rng.uniform(coef_low, coef_high)
        coeffs[e] = float(mag if rng.random() < 0.5 else -mag)
    # 1 - U lies in (0, 1], so zero variance is excluded
    error_vars = {n: float(var_high * (1.0 - rng.random())) for n in g.names}
    return LinearSem(g, coeffs, error_vars)


def full_covariance(m: LinearSem) -> np.ndarray:
    """Covariance over all nodes (latent and observed), in graph node order."""
    b = m.coefficient_matrix()
    p = b.shape[0]
    omega = np.diag([m.error_vars[n] for n in m.graph.names])
    a = np.eye(p) - b
    # I - B is unit triangular in topological order, so it is never singular
    inv = np.linalg.solve(a, np.eye(p))
    sigma = inv @ omega @ inv.T
    return (sigma + sigma.T) / 2


def implied_covariance(m: LinearSem) -> CovMatrix:
    g = m.graph
    full = full_covariance(m)
    idx = [g.index(y) for y in g.observed]
    return CovMatrix(list(g.observed), full[np.ix_(idx, idx)])


def sample(m: LinearSem, n: int, seed: int) -> DataMatrix:
    """Draw ``n`` i.i.d. observations of the observed variables."""
    if n < 1:
        raise InputError("sample size must be at least 1")
    g = m.graph
    rng = np.random.default_rng(seed)
    values: dict[str, np.ndarray] = {}
    for node in g.topological_order():
        x = rng.standard_normal(n) * np.sqrt(m.error_vars[node])
        for par in g.parents(node):
            x = x + m.coeffs[(par, node)] * values[par]
        values[node] = x
    obs = list(g.observed)
    return DataMatrix(obs, np.column_stack([values[y] for y in obs]) if obs else np.empty((n, 0)))


def sample_covariance(d: DataMatrix) -> CovMatrix:
    """Unbiased covariance; flags (but returns) rank-deficient samples."""
    n, p = d.values.shape
    if n < p + 1:
        raise InputError(f"need at least p + 1 = {p + 1} rows, got {n}")
    s = np.cov(d.values, rowvar=False, ddof=1).reshape(p, p)
    s = (s + s.T) / 2
    out = CovMatrix(list(d.names), s, n)
    if np.linalg.matrix_rank(s) < p:
        out.rank_deficient = True
        warnings.warn("sample covariance is rank deficient", RuntimeWarning, stacklevel=2)
    return out


# -- file formats --------------------------------------------------------------


def cov_to_text(c: CovMatrix) -> str:
    lines = [f"n={c.n if c.n is not None else 'none'}", ",".join(c.names)]
    lines += [",".join(repr(float(v)) for v in row) for row in c.values]
    return "\n".join(lines) + "\n"


def cov_from_text(text: str) -> CovMatrix:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise ConfigError("covariance file must start with 'n=<int|none>'")
    raw_n = lines[0][2:].strip()
    try:
        n = None if raw_n.lower() == "none" else int(raw_n)
    except ValueError:
        raise InputError(f"line 1: bad sample size {raw_n!r}") from None
    if len(lines) < 2:
        raise InputError("line 2: missing variable names")
    names = [s.strip() for s in lines[1].split(",")]
    rows = []
    for lineno, ln in enumerate(lines[2:], 3):
        try:
            row = [float(v) for v in ln.split(",")]
        except ValueError:
            raise InputError(f"line {lineno}: non-numeric entry") from None
        if len(row) != len(names):
            raise InputError(f"line {lineno}: expected {len(names)} values, got {len(row)}")
        rows.append(row)
    if len(rows) != len(names):
        raise InputError(f"expected {len(names)} matrix rows, got {len(rows)}")
    return CovMatrix(names, np.array(rows), n)


def data_to_csv(d: DataMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(d.names)
    for row in d.values:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def data_from_csv(text: str) -> DataMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError("empty CSV")
    names = [c.strip() for c in rows[0]]
    out = []
    for lineno, r in enumerate(rows[1:], 2):
        if len(r) != len(names):
            raise InputError(f"line {lineno}: expected {len(names)} fields, got {len(r)}")
        try:
            out.append([float(c) for c in r])
        except ValueError:
            raise InputError(f"line {lineno}: non-numeric field") from None
    return DataMatrix(names, np.array(out).reshape(len(out), len(names)))


def sem_to_text(m: LinearSem) -> str:
    g = m.graph
    lines = [f"node {n} {g.kind(n)} {m.error_vars[n]!r}" for n in g.names]
    lines += [f"{u} -> {v} {m.coeffs[(u, v)]!r}" for u, v in g.edges]
    return "\n".join(lines) + "\n"


def sem_from_text(text: str) -> LinearSem:
    nodes, edges = parse_graph_text(text)
    error_vars, coeffs = {}, {}
    for name, _, extra in nodes:
        if not extra:
            raise InputError(f"node {name}: SEM files need an error variance")
        error_vars[name] = float(extra[0])
    for a, arrow, b, extra in edges:
        if arrow != "->" or not extra:
            raise InputError(f"edge {a} {arrow} {b}: SEM edges are '<a> -> <b> <coef>'")
        coeffs[(a, b)] = float(extra[0])
    g = TrueDag([(n, k) for n, k, _ in nodes], list(coeffs))
    return LinearSem(g, coeffs, error_vars)

