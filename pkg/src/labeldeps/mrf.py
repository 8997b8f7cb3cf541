"""Binary Markov random field over weak supervision sources and a latent label.

The model has ``m`` observed sources emitting spins in ``{-1, +1}`` and one
unobserved label ``y``, also a spin.  The joint density is proportional to::

    exp( sum_i theta_node[i] * s_i
         + sum_{(i,j) in edges} theta_edge[i,j] * s_i * s_j
         + theta_y * y
         + sum_i theta_y_node[i] * y * s_i )

The label is adjacent to every source through ``theta_y_node``; the stored
edge set covers source-source dependencies only.  This module provides exact
inference by enumeration (usable as a brute-force oracle for small ``m``) and
a Gibbs sampler for synthetic data generation.

Assignment indexing convention: state ``k`` encodes variable ``v`` in bit
``v`` of ``k`` (sources are variables ``0..m-1``, the label is variable
``m``), with bit ``b`` mapping to spin ``2*b - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    EnumerationBudgetError,
    NotPositiveDefiniteError,
    SingularMatrixError,
    SaturationError,
    ValidationError,
)

#: Largest m for which exact enumeration (2**(m+1) states) is allowed.
ENUMERATION_BUDGET = 20

_MAX_EXPONENT = math.log(np.finfo(np.float64).max)  # ~709.78


def _normalized_edges(m: int, edges: Iterable) -> frozenset:
    out = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j:
            raise ValidationError(f"self-loop ({i},{j}) is not a valid edge")
        if not (0 <= i < m and 0 <= j < m):
            raise ValidationError(f"edge ({i},{j}) out of range for m={m}")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


@dataclass(frozen=True)
class SourceGraph:
    """Dependency graph over ``m`` sources.

    The latent label is implicitly adjacent to every source and never appears
    in ``edges``.  Edges are unordered source pairs stored as ``(i, j)`` with
    ``i < j``.
    """

    m: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"m must be >= 1, got {self.m}")
        object.__setattr__(self, "edges", _normalized_edges(self.m, self.edges))

    @property
    def d_max(self) -> int:
        """Maximum source degree, counting source-source edges only."""
        deg = [0] * self.m
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return max(deg) if deg else 0

    @property
    def clusters(self) -> list[list[int]]:
        """Connected components of the source-only graph, sorted by node."""
        parent = list(range(self.m))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.edges:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
        groups: dict[int, list[int]] = {}
        for v in range(self.m):
            groups.setdefault(find(v), []).append(v)
        return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])

    @property
    def s(self) -> int:
        """Number of connected components of the source-only graph."""
        return len(self.clusters)

    def neighbors(self, i: int) -> list[int]:
        return sorted(b if a == i else a for a, b in self.edges if i in (a, b))


@dataclass(frozen=True)
class IsingParams:
    """Canonical parameters of the model density.

    ``theta_edge`` is keyed by normalized source pairs ``(i, j)``, ``i < j``;
    its key set must equal the edge set of the graph it is used with.
    """

    theta_node: np.ndarray
    theta_edge: Mapping
    theta_y: float = 0.0
    theta_y_node: np.ndarray = None

    def __post_init__(self):
        tn = np.asarray(self.theta_node, dtype=np.float64)
        tyn = (
            np.zeros_like(tn)
            if self.theta_y_node is None
            else np.asarray(self.theta_y_node, dtype=np.float64)
        )
        if tn.ndim != 1 or tyn.shape != tn.shape:
            raise ValidationError("theta_node and theta_y_node must be 1-d and equal length")
        te = {}
        for key, val in dict(self.theta_edge).items():
            i, j = int(key[0]), int(key[1])
            if i == j:
                raise ValidationError(f"edge parameter on self-loop ({i},{j})")
            te[(min(i, j), max(i, j))] = float(val)
        vals = [self.theta_y, *tn, *tyn, *te.values()]
        if not np.all(np.isfinite(vals)):
            raise ValidationError("all parameters must be finite")
        object.__setattr__(self, "theta_node", tn)
        object.__setattr__(self, "theta_y_node", tyn)
        object.__setattr__(self, "theta_edge", te)
        object.__setattr__(self, "theta_y", float(self.theta_y))

    @property
    def m(self) -> int:
        return self.theta_node.shape[0]

    @classmethod
    def zeros(cls, graph: SourceGraph) -> "IsingParams":
        return cls(
            theta_node=np.zeros(graph.m),
            theta_edge={e: 0.0 for e in graph.edges},
            theta_y=0.0,
            theta_y_node=np.zeros(graph.m),
        )

    def validate_for(self, graph: SourceGraph) -> None:
        if self.m != graph.m:
            raise ValidationError(f"params are for m={self.m}, graph has m={graph.m}")
        if set(self.theta_edge) != set(graph.edges):
            raise ValidationError("theta_edge keys must equal the graph's edge set")


@dataclass(frozen=True)
class LabelMatrix:
    """m x n matrix of source votes; entry (i, j) is source i's spin on point j."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValidationError("label matrix must be 2-d (sources x points)")
        if not np.isin(v, (-1, 1)).all():
            raise ValidationError("label entries must be exactly -1 or +1")
        object.__setattr__(self, "values", v.astype(np.int8))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class JointDistribution:
    """Exact joint distribution over the m sources and the label.

    ``probabilities[k]`` is the mass of the assignment encoded by index ``k``
    (see the module docstring for the bit convention).
    """

    m: int
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.shape != (1 << (self.m + 1),):
            raise ValidationError(f"expected {1 << (self.m + 1)} probabilities, got {p.shape}")
        if (p < 0).any():
            raise ValidationError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", p)

    @staticmethod
    def index_of(assignment) -> int:
        a = np.asarray(assignment)
        bits = (a > 0).astype(np.int64)
        return int((bits << np.arange(a.shape[0])).sum())

    def assignment_of(self, index: int) -> np.ndarray:
        nv = self.m + 1
        return ((index >> np.arange(nv)) & 1).astype(np.int8) * 2 - 1

    def prob(self, assignment) -> float:
        return float(self.probabilities[self.index_of(assignment)])

    def observed_marginal(self) -> np.ndarray:
        """Marginal over the label: table of 2**m probabilities of the sources."""
        half = 1 << self.m
        return self.probabilities[:half] + self.probabilities[half:]

    def _moment_accumulate(self) -> tuple[np.ndarray, np.ndarray]:
        nv = self.m + 1
        size = 1 << nv
        mean = np.zeros(nv)
        second = np.zeros((nv, nv))
        chunk = min(size, 1 << 16)
        ks = np.arange(nv, dtype=np.int64)
        for start in range(0, size, chunk):
            idx = np.arange(start, min(start + chunk, size), dtype=np.int64)
            spins = (((idx[None, :] >> ks[:, None]) & 1) * 2 - 1).astype(np.float64)
            w = self.probabilities[start : start + idx.shape[0]]
            mean += spins @ w
            second += (spins * w) @ spins.T
        return mean, second

    def mean(self) -> np.ndarray:
        return self._moment_accumulate()[0]

    def pairwise_moment(self, i: int, j: int) -> float:
        """E[s_i s_j] under the joint (variable m is the label)."""
        _, second = self._moment_accumulate()
        return float(second[i, j])

    def covariance(self) -> np.ndarray:
        mean, second = self._moment_accumulate()
        cov = second - np.outer(mean, mean)
        return (cov + cov.T) / 2.0


def _check_assignment(m: int, assignment) -> np.ndarray:
    a = np.asarray(assignment, dtype=np.float64)
    if a.shape != (m + 1,):
        raise ValidationError(f"assignment must have length {m + 1}, got {a.shape}")
    if not np.isin(a, (-1.0, 1.0)).all():
        raise ValidationError("assignment entries must be exactly -1 or +1")
    return a


def unnormalized_density(graph: SourceGraph, params: IsingParams, assignment) -> float:
    """Unnormalized model weight of one full assignment (sources then label)."""
    params.validate_for(graph)
    a = _check_assignment(graph.m, assignment)
    s, y = a[: graph.m], a[graph.m]
    exponent = float(params.theta_node @ s) + params.theta_y * y + y * float(params.theta_y_node @ s)
    for (i, j), th in params.theta_edge.items():
        exponent += th * s[i] * s[j]
    if exponent > _MAX_EXPONENT:
        raise SaturationError(f"exponent {exponent:.6g} overflows double precision")
    return math.exp(exponent)


def _check_budget(m: int) -> None:
    if m > ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"exact enumeration supports m <= {ENUMERATION_BUDGET}, got m={m}"
        )


def exact_joint(graph: SourceGraph, params: IsingParams) -> JointDistribution:
    """Enumerate all 2**(m+1) assignments and normalize the model weights."""
    params.validate_for(graph)
    _check_budget(graph.m)
    m = graph.m
    size = 1 << (m + 1)
    idx = np.arange(size, dtype=np.int64)

    def spin(k):
        return (((idx >> k) & 1) * 2 - 1).astype(np.float64)

    log_w = np.zeros(size)
    y = spin(m)
    if params.theta_y != 0.0:
        log_w += params.theta_y * y
    for i in range(m):
        if params.theta_node[i] == 0.0 and params.theta_y_node[i] == 0.0:
            continue
        si = spin(i)
        if params.theta_node[i] != 0.0:
            log_w += params.theta_node[i] * si
        if params.theta_y_node[i] != 0.0:
            log_w += params.theta_y_node[i] * (y * si)
    for (i, j), th in params.theta_edge.items():
        if th != 0.0:
            log_w += th * (spin(i) * spin(j))
    log_w -= log_w.max()
    p = np.exp(log_w)
    p /= p.sum()
    return JointDistribution(m=m, probabilities=p)


def exact_covariance(graph: SourceGraph, params: IsingParams) -> np.ndarray:
    """Full (m+1) x (m+1) covariance of (sources, label), label last."""
    return exact_joint(graph, params).covariance()


def ground_truth_decomposition(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Split the inverse of a full covariance into its observed-block parts.

    Given the full covariance ``sigma`` of (sources, label), returns
    ``(K_O, z, c)`` where ``K_O`` is the observed block of ``sigma^{-1}``,
    ``c`` is the inverse Schur complement of the observed block, and
    ``z = sqrt(c) * Sigma_O^{-1} Sigma_OS`` carries the rank-one effect of
    marginalizing the label, so that ``Sigma_O^{-1} = K_O - z z^T``.
    """
    sig = np.asarray(sigma, dtype=np.float64)
    if sig.ndim != 2 or sig.shape[0] != sig.shape[1] or sig.shape[0] < 2:
        raise ValidationError("expected a square covariance of at least 2 variables")
    if np.abs(sig - sig.T).max() > 1e-10:
        raise ValidationError("covariance must be symmetric")
    w = np.linalg.eigvalsh(sig)
    if w.min() <= 1e-10:
        raise SingularMatrixError(
            f"covariance is singular to working precision (smallest eigenvalue {w.min():.3e})"
        )
    m = sig.shape[0] - 1
    sigma_o = sig[:m, :m]
    sigma_os = sig[:m, m]
    sigma_s = sig[m, m]
    solved = np.linalg.solve(sigma_o, sigma_os)
    c_inv = sigma_s - sigma_os @ solved
    if c_inv <= 0:
        raise NotPositiveDefiniteError(
            f"Schur complement of the observed block is non-positive ({c_inv:.3e})"
        )
    c = 1.0 / c_inv
    z = math.sqrt(c) * solved
    k_full = np.linalg.inv(sig)
    k_full = (k_full + k_full.T) / 2.0
    return k_full[:m, :m], z, c


def gibbs_sample(
    graph: SourceGraph,
    params: IsingParams,
    n: int,
    burn_in: int = 100,
    thin: int = 1,
    seed: int = 0,
) -> LabelMatrix:
    """Draw n joint samples by single-site Gibbs sweeps; the label is discarded.

    One sweep updates (s_0, ..., s_{m-1}, y) in that fixed order, each from its
    exact conditional.  ``burn_in`` counts discarded initial sweeps; after that
    one sample is recorded every ``thin`` sweeps.  Deterministic given ``seed``.
    """
    params.validate_for(graph)
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if thin < 1:
        raise ValidationError(f"thin must be >= 1, got {thin}")
    if burn_in < 0:
        raise ValidationError(f"burn_in must be >= 0, got {burn_in}")
    m = graph.m
    rng = np.random.default_rng(seed)

    th_node = params.theta_node.tolist()
    th_y_node = params.theta_y_node.tolist()
    th_y = params.theta_y
    nbrs: list[list[tuple[int, float]]] = [[] for _ in range(m)]
    for (i, j), wgt in params.theta_edge.items():
        nbrs[i].append((j, wgt))
        nbrs[j].append((i, wgt))

    state = [1.0 if b else -1.0 for b in rng.integers(0, 2, size=m)]
    y = 1.0 if rng.integers(0, 2) else -1.0

    out = np.empty((m, n), dtype=np.int8)
    exp = math.exp
    total_sweeps = burn_in + n * thin
    sweep_no = 0
    col = 0
    block = 4096
    while sweep_no < total_sweeps:
        bs = min(block, total_sweeps - sweep_no)
        uniforms = rng.random((bs, m + 1)).tolist()
        for row in uniforms:
            for i in range(m):
                a = th_node[i] + th_y_node[i] * y
                for j, wgt in nbrs[i]:
                    a += wgt * state[j]
                # P(s_i = +1 | rest) = 1 / (1 + exp(-2a)), clamped for big |a|
                if a > 30.0:
                    state[i] = 1.0
                elif a < -30.0:
                    state[i] = -1.0
                else:
                    state[i] = 1.0 if row[i] < 1.0 / (1.0 + exp(-2.0 * a)) else -1.0
            a = th_y
            for i in range(m):
                a += th_y_node[i] * state[i]
            if a > 30.0:
                y = 1.0
            elif a < -30.0:
                y = -1.0
            else:
                y = 1.0 if row[m] < 1.0 / (1.0 + exp(-2.0 * a)) else -1.0
            sweep_no += 1
            if sweep_no > burn_in and (sweep_no - burn_in) % thin == 0:
                for i in range(m):
                    out[i, col] = 1 if state[i] > 0 else -1
                col += 1
    return LabelMatrix(values=out)
