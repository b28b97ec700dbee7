"""Scaling constants kappa and the bias correction built on them.

kappa_p(H)      leading constant of the piecewise-model energy,
                E[Q_{j,p}] = kappa_p(H) eta^2 2^(-2jH-1).
kappa_{p,a}(H)  coefficient of eta^(2a) 2^(-2aHj) in the expansion of the
                general-model energy; a = 1 is the leading term, a >= 2
                the bias removed by B^(S).

kappa_{p,a} for a >= 2 has no closed form. Each term is an expectation of
a product of block averages of powers of fBm increments; the expectation
is expanded with Isserlis' theorem into pairwise covariances and every
product of covariances is integrated per connected group of node
variables. The covariances have kinks where two variables coincide or
differ by a whole block; the integration coordinates put every kink on a
face of the domain and a graded Gauss-Legendre rule absorbs the face
singularities.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from functools import lru_cache
from itertools import permutations
from typing import TYPE_CHECKING, Iterator, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import DomainError, KappaCoverageError, QuadratureError
from .fbm import _PHI_WEIGHTS, increment_covariance, phi_corr, validate_hurst

if TYPE_CHECKING:
    from .kappa_table import KappaTable

logger = logging.getLogger(__name__)

PairPartition = tuple[tuple[int, int], ...]

# Largest Gaussian product isserlis() accepts, (2n - 1)!! pairings.
MAX_ISSERLIS_DIM = 12
DEFAULT_QUAD_NODES = 16
# largest relative change allowed when the nodes are doubled
DEFAULT_TOL = 1e-6


# ============== Closed forms ==============

def kappa_p(H: float, p: int) -> float:
    """kappa_p(H) = 2^-p sum_{|l| < 2^p} (1 - |l| 2^-p) phi_H(l 2^-p)."""
    H = validate_hurst(H)
    if p < 0:
        raise DomainError(f"pre-average depth must be >= 0, got {p}")
    M = 2**p
    lags = np.arange(-(M - 1), M)
    weights = 1.0 - np.abs(lags) / M
    return float(np.dot(weights, phi_corr(lags / M, H)) / M)


def _second_antiderivative(x: np.ndarray, H: float) -> np.ndarray:
    """G with G'' = |x|^2H."""
    return np.abs(x) ** (2 * H + 2) / ((2 * H + 1) * (2 * H + 2))


def _triangle_integral(y: np.ndarray, H: float) -> np.ndarray:
    """Integral over w in [-1, 1] of (1 - |w|) |y + w|^2H."""
    G = _second_antiderivative
    return G(y + 1.0, H) - 2.0 * G(y, H) + G(y - 1.0, H)


def kappa_limit(H: float) -> float:
    """kappa_infinity(H), the limit of kappa_p(H) as p grows.

    Equals the integral over [-1, 1] of (1 - |w|) phi_H(w); exactly 1 at H = 1/2.
    """
    H = validate_hurst(H)
    shifts = np.arange(5) - 2.0
    return float(0.5 * np.dot(_PHI_WEIGHTS, _triangle_integral(shifts, H)))


def kappa_first_order(H: float, p: int) -> float:
    """Closed form of kappa_{p,1}(H).

    The lag-l expectation is the integral of (1 - |w|) D_H((l + w) 2^-p)
    over [-1, 1], which reduces to second antiderivatives of |x|^2H.
    """
    H = validate_hurst(H)
    if p < 0:
        raise DomainError(f"pre-average depth must be >= 0, got {p}")
    M = 2**p
    lags = np.arange(-(M - 1), M, dtype=float)
    shifted = [_triangle_integral(lags + shift, H) for shift in (M, 0, -M)]
    lag_terms = 0.5 * (shifted[0] - 2.0 * shifted[1] + shifted[2]) * (2.0**-p) ** (2 * H)
    return float(np.dot(M - np.abs(lags), lag_terms) / 4**p)


# ============== Isserlis ==============

def all_pairings(items) -> Iterator[list[tuple[int, int]]]:
    """Yield every partition of items into pairs."""
    items = list(items)
    if not items:
        yield []
        return
    first = items.pop(0)
    for i, item in enumerate(items):
        for rest in all_pairings(items[:i] + items[i + 1 :]):
            yield [(first, item)] + rest


@lru_cache(maxsize=None)
def pairings(n_items: int) -> tuple[PairPartition, ...]:
    """All PairPartitions of {0, .., n_items - 1}."""
    if n_items % 2:
        raise DomainError(f"cannot pair an odd number of items ({n_items})")
    return tuple(tuple(pairing) for pairing in all_pairings(range(n_items)))


def isserlis(cov: np.ndarray) -> float:
    """E[X_1 ... X_2n] for a centred Gaussian vector with covariance cov."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DomainError(f"covariance must be square, got shape {cov.shape}")
    dim = cov.shape[0]
    if dim % 2:
        raise DomainError(f"odd Gaussian products have zero mean; dimension {dim} rejected")
    if dim > MAX_ISSERLIS_DIM:
        raise DomainError(f"dimension {dim} exceeds {MAX_ISSERLIS_DIM}")
    if not np.allclose(cov, cov.T):
        raise DomainError("covariance must be symmetric")
    if dim == 0:
        return 1.0
    return float(sum(math.prod(cov[i, j] for i, j in pairing) for pairing in pairings(dim)))


# ============== kappa_{p,a} by quadrature ==============

# (factor, kind, block) of one node variable; kind "V" is a unit-length
# increment averaged over a sub-interval, "Y" an increment from the start
# of a sub-interval.
Node = tuple[int, str, int]
Edges = tuple[tuple[tuple[int, int], int], ...]

# flat grid points evaluated at once by the ordered-simplex rule
_CHUNK = 2**14


def _compositions(total: int) -> Iterator[tuple[int, ...]]:
    if total == 0:
        yield ()
        return
    for first in range(1, total + 1):
        for rest in _compositions(total - first):
            yield (first,) + rest


@lru_cache(maxsize=None)
def _graded_rule(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on [0, 1] pulled through u = t - sin(2 pi t) / (2 pi).

    u behaves like t^3 at both ends, so an endpoint singularity u^alpha
    becomes t^(3 alpha + 2) and the rule converges fast for any alpha > -1.
    """
    t, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * (t + 1.0)
    u = t - np.sin(2.0 * np.pi * t) / (2.0 * np.pi)
    return u, 0.5 * w * (1.0 - np.cos(2.0 * np.pi * t))


@lru_cache(maxsize=None)
def _pairing_groups(r1: tuple[int, ...], r2: tuple[int, ...]) -> tuple[tuple[Edges, int], ...]:
    """Pairings of the slots of (r1, r2), grouped by the node-level edge multiset.

    Node i of the first factor carries r1[i] slots, node len(r1) + k of the
    second factor carries r2[k] slots.
    """
    owner = [node for node, r in enumerate(r1 + r2) for _ in range(r)]
    groups: Counter = Counter()
    for pairing in pairings(len(owner)):
        edges = Counter(tuple(sorted((owner[i], owner[j]))) for i, j in pairing)
        groups[tuple(sorted(edges.items()))] += 1
    return tuple(groups.items())


@lru_cache(maxsize=None)
def _components(n_nodes: int, edges: Edges) -> tuple[tuple[tuple[int, ...], Edges], ...]:
    """Connected components of a node graph, with edges renumbered locally."""
    rows = [u for (u, _), _ in edges]
    cols = [v for (_, v), _ in edges]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_nodes, n_nodes))
    count, labels = connected_components(graph, directed=False)
    out = []
    for label in range(count):
        members = tuple(int(i) for i in np.flatnonzero(labels == label))
        local = {node: k for k, node in enumerate(members)}
        sub = tuple(((local[u], local[v]), n) for (u, v), n in edges if u in local)
        out.append((members, sub))
    return tuple(out)


def _factor_terms(b: int, M: int) -> tuple[tuple[float, str, int], ...]:
    # (sign, kind, block): b = 1 is the single increment average, b >= 2 the
    # difference of two block averages of powered increments
    if b == 1:
        return ((1.0, "V", 0),)
    return ((1.0, "Y", M), (-1.0, "Y", 0))


class _ComponentIntegrator:
    """Integrals over [0, 1]^c of products of node covariances, one value per lag.

    Every node owns an integration variable x. A V node carries
    W((l + x)h + 1) - W((l + x)h), a Y node W((B + l + x)h) - W((B + l)h),
    where l is the lag of the second factor and is zero for the first.
    An edge of multiplicity m contributes Cov^m, a self-loop the variance.

    The covariances are smooth except where two node variables coincide or
    differ by 1, or where one of them sits at 0 or 1. Trees are integrated
    in coordinates relative to their parent, split at the parent, so every
    kink lies on a face of the domain; graphs with a cycle are split into
    the c! orderings of their variables instead. Both use _graded_rule in
    every coordinate.
    """

    def __init__(self, H: float, p: int, lags: np.ndarray, nodes: int):
        self.H = H
        self.h = 2.0**-p
        self.lags = np.asarray(lags, dtype=float)
        self.x, self.w = _graded_rule(nodes)
        self._cache: dict[tuple, np.ndarray] = {}

    def __call__(self, nodes: tuple[Node, ...], edges: Edges) -> np.ndarray:
        key = (nodes, edges)
        if key not in self._cache:
            loops = {u: n for (u, v), n in edges if u == v}
            links = [((u, v), n) for (u, v), n in edges if u != v]
            if len(links) == len(nodes) - 1:
                value = self._tree(nodes, loops, links)
            else:
                value = self._ordered(nodes, loops, links)
            self._cache[key] = np.broadcast_to(value, self.lags.shape)
        return self._cache[key]

    def _interval(self, node: Node, x: np.ndarray, shifted: bool) -> tuple[np.ndarray, np.ndarray]:
        factor, kind, block = node
        offset = self.lags if shifted and factor == 1 else 0.0
        if kind == "V":
            start = (offset + x) * self.h
            return start, start + 1.0
        start = (block + offset) * self.h
        return start + 0.0 * x, (block + offset + x) * self.h

    def _cov(self, u: Node, v: Node, xu: np.ndarray, xv: np.ndarray) -> np.ndarray:
        # only pairs across the two factors see the lag
        shifted = u[0] != v[0]
        a, b = self._interval(u, xu, shifted)
        c, d = self._interval(v, xv, shifted)
        return increment_covariance(a, b, c, d, self.H)

    def _tree(self, nodes, loops, links) -> np.ndarray:
        neighbours: dict[int, list] = {i: [] for i in range(len(nodes))}
        for (u, v), n in links:
            neighbours[u].append((v, n))
            neighbours[v].append((u, n))
        root = 0
        if links:
            rows, cols = zip(*(pair for pair, _ in links))
            graph = coo_matrix((np.ones(len(links)), (rows, cols)), shape=(len(nodes),) * 2)
            root = int(np.argmin(shortest_path(graph.tocsr(), directed=False, unweighted=True).max(axis=1)))
        s = self.x[:, None]
        ws = self.w[:, None]

        def subtree(i: int, parent: int, x: np.ndarray) -> np.ndarray:
            # x has shape (..., 1); the result (..., lags) or (..., 1)
            out = self._cov(nodes[i], nodes[i], x, x) ** loops.get(i, 0)
            for child, n in neighbours[i]:
                if child == parent:
                    continue
                xp = x[..., None, :]
                below = xp * (1.0 - s)
                above = xp + (1.0 - xp) * s
                branch = 0.0
                for xc, jacobian in ((below, xp), (above, 1.0 - xp)):
                    g = jacobian * self._cov(nodes[i], nodes[child], xp, xc) ** n
                    branch = branch + np.sum(ws * g * subtree(child, i, xc), axis=-2)
                out = out * branch
            return out

        return sum(w0 * subtree(root, -1, np.array([x0])) for x0, w0 in zip(self.x, self.w))

    def _ordered(self, nodes, loops, links) -> np.ndarray:
        c = len(nodes)
        n = len(self.x)
        powers = np.arange(c)[:, None]
        total = 0.0
        for start in range(0, n**c, _CHUNK):
            digits = np.array(np.unravel_index(np.arange(start, min(start + _CHUNK, n**c)), (n,) * c))
            u = self.x[digits]
            # y_k = u_k ... u_{c-1} runs through 0 <= y_0 <= .. <= y_{c-1} <= 1
            weight = (self.w[digits] * u**powers).prod(axis=0)[:, None]
            y = np.cumprod(u[::-1], axis=0)[::-1, :, None]
            for order in permutations(range(c)):
                x = {node: y[rank] for rank, node in enumerate(order)}
                g = weight
                for i, m in loops.items():
                    g = g * self._cov(nodes[i], nodes[i], x[i], x[i]) ** m
                for (i, k), m in links:
                    g = g * self._cov(nodes[i], nodes[k], x[i], x[k]) ** m
                total = total + g.sum(axis=0)
        return total


def _lag_expectations(integrator: _ComponentIntegrator, p: int, r1: tuple[int, ...],
                      r2: tuple[int, ...]) -> np.ndarray:
    M = 2**p
    total = np.zeros(len(integrator.lags))
    for sign1, kind1, block1 in _factor_terms(sum(r1), M):
        for sign2, kind2, block2 in _factor_terms(sum(r2), M):
            nodes = ((0, kind1, block1),) * len(r1) + ((1, kind2, block2),) * len(r2)
            for edges, multiplicity in _pairing_groups(r1, r2):
                value = np.ones(len(total))
                for members, local in _components(len(nodes), edges):
                    value = value * integrator(tuple(nodes[i] for i in members), local)
                total += sign1 * sign2 * multiplicity * value
    return total


def _kappa_pa_quadrature(H: float, p: int, a: int, quad_nodes: int) -> float:
    M = 2**p
    # E at lag -l equals E at lag l with the two factors swapped; the sum
    # over compositions is symmetric under that swap
    lags = np.arange(M)
    lag_weights = np.where(lags == 0, M, 2.0 * (M - lags))
    integrator = _ComponentIntegrator(H, p, lags, quad_nodes)

    total = 0.0
    for b1 in range(1, 2 * a):
        b2 = 2 * a - b1
        for r1 in _compositions(b1):
            for r2 in _compositions(b2):
                s1, s2 = len(r1), len(r2)
                coef = (-1.0) ** (s1 + s2) / (s1 * s2)
                coef /= math.prod(math.factorial(r) for r in r1 + r2)
                expectations = _lag_expectations(integrator, p, r1, r2)
                total += coef * float(np.dot(lag_weights, expectations))
    return total / 4**p


def kappa_pa(H: float, p: int, a: int, S: int, quad_nodes: int = DEFAULT_QUAD_NODES,
             tol: Optional[float] = DEFAULT_TOL) -> float:
    """kappa_{p,a}(H) by Isserlis expansion and graded Gauss-Legendre quadrature.

    Cost grows like quad_nodes^(c+1) 2^p for the widest connected node graph
    c, which has at most a + 1 nodes.

    Args:
        H: Hurst parameter.
        p: Pre-average depth.
        a: Order, 1 <= a <= S.
        S: Truncation order of the bias expansion.
        quad_nodes: Nodes per integration dimension.
        tol: The value is recomputed with twice the nodes and a relative
            change above tol raises QuadratureError. None skips the check.

    Returns:
        The value obtained with the finer rule unless tol is None.
    """
    H = validate_hurst(H)
    if not 1 <= a <= S:
        raise DomainError(f"order a={a} outside 1..S={S}")
    if p < 0:
        raise DomainError(f"pre-average depth must be >= 0, got {p}")
    if quad_nodes < 1:
        raise DomainError(f"quad_nodes must be positive, got {quad_nodes}")
    if 2 * a > MAX_ISSERLIS_DIM:
        raise DomainError(f"order a={a} needs {2 * a}-fold Gaussian products, above {MAX_ISSERLIS_DIM}")
    if tol is not None and tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")

    value = _kappa_pa_quadrature(H, p, a, quad_nodes)
    if tol is None:
        return value
    refined = _kappa_pa_quadrature(H, p, a, 2 * quad_nodes)
    change = abs(refined - value) / max(abs(refined), 1e-300)
    logger.debug("kappa_pa(H=%s, p=%d, a=%d): %d->%d nodes, relative change %.3e",
                 H, p, a, quad_nodes, 2 * quad_nodes, change)
    if change > tol:
        raise QuadratureError(
            f"kappa_pa(H={H}, p={p}, a={a}) changed by {change:.3e} > {tol} when doubling "
            f"{quad_nodes} nodes"
        )
    return refined


# ============== Bias correction ==============

def bias_term(j: int, p: int, S: int, I: float, nu: float, table: "KappaTable") -> float:
    """B^(S)_{j,p}(I, nu) = sum_{a=2}^{S} nu^(2a) 2^(-2aIj) kappa_{p,a}(I)."""
    if S <= 1 or nu == 0.0:
        return 0.0
    if S > table.S:
        raise KappaCoverageError(f"table built for S={table.S}, bias needs S={S}")
    return sum(nu ** (2 * a) * 2.0 ** (-2 * a * I * j) * table.kappa(I, p, a)
               for a in range(2, S + 1))


# slack below which a bound counts as hitting an integer
_BOUNDARY_SLACK = 1e-9


def choose_S(H_minus: float, H_plus: float) -> int:
    """Smallest S with S >= 1/(4H_-) + 1/2 and S > H_+/(2H_-) - 1/2.

    A bound landing on an integer is treated as strict.
    """
    if not 0.0 < H_minus < H_plus:
        raise DomainError(f"need 0 < H_- < H_+, got ({H_minus}, {H_plus})")
    first = 1.0 / (4.0 * H_minus) + 0.5
    second = H_plus / (2.0 * H_minus) - 0.5
    return max(1, *(math.floor(bound + _BOUNDARY_SLACK) + 1 for bound in (first, second)))
