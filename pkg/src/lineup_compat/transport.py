"""Exact optimal transport between discrete empirical distributions.

The solver is a primal transportation simplex (a network simplex specialised
to the complete bipartite graph).  Masses are moved onto an integer grid
before solving so that every basic solution is exactly feasible; the
resulting plan is rescaled on the way out.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

__all__ = [
    "DistanceMatrix",
    "EmpiricalDistribution",
    "TransportError",
    "TransportPlan",
    "ground_cost",
    "pairwise_distance_matrix",
    "solve_emd",
    "wasserstein_distance",
]


class TransportError(RuntimeError):
    """Raised when a transport problem is malformed or the solver stalls."""


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Discrete distribution with ``m`` support points in ``R^d``.

    ``mass`` defaults to the uniform weights ``1/m``.
    """

    points: np.ndarray
    mass: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise TransportError("distribution needs at least one support point")
        if self.mass is None:
            mass = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            mass = np.asarray(self.mass, dtype=float)
        if mass.shape != (pts.shape[0],):
            raise TransportError(f"mass shape {mass.shape} does not match {pts.shape[0]} points")
        if np.any(mass < 0) or abs(mass.sum() - 1.0) > 1e-12:
            raise TransportError("mass must be non-negative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "mass", mass)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.mass == self.mass[0]))


@dataclass(frozen=True)
class TransportPlan:
    """Optimal plan ``P`` and objective ``sum(D * P)``.

    ``row_potential`` and ``col_potential`` are the dual variables of the
    final basis; ``D - u[:, None] - v[None, :] >= 0`` certifies optimality.
    """

    plan: np.ndarray
    cost: float
    row_potential: np.ndarray = field(repr=False)
    col_potential: np.ndarray = field(repr=False)
    iterations: int = 0


@dataclass(frozen=True)
class DistanceMatrix:
    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        n = len(self.labels)
        if values.shape != (n, n):
            raise ValueError(f"distance matrix shape {values.shape} does not match {n} labels")
        if not np.all(np.isfinite(values)):
            raise ValueError("distance matrix contains non-finite entries")
        if np.any(values < 0):
            raise ValueError("distance matrix has negative entries")
        if not np.array_equal(values, values.T):
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(values) != 0):
            raise ValueError("distance matrix diagonal must be zero")
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.labels)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", *self.labels])
            for label, row in zip(self.labels, self.values):
                writer.writerow([label, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path) -> "DistanceMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty distance matrix file")
        labels = rows[0][1:]
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
        return cls(tuple(labels), values.reshape(len(labels), len(labels)))


def ground_cost(a, b, p: float = 1.0) -> np.ndarray:
    """Matrix of ``||a_i - b_j||_2 ** p``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("ground_cost received non-finite coordinates")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    diff = a[:, None, :] - b[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return dist if p == 1 else dist**p


@numba.njit(cache=True, nogil=True)
def _transport_simplex(supply, demand, cost, max_iter):  # pragma: no cover - jitted
    m, n = cost.shape
    n_nodes = m + n
    n_basic = n_nodes - 1

    flow = np.zeros((m, n), np.int64)
    is_basic = np.zeros((m, n), np.bool_)
    brow = np.empty(n_basic, np.int64)
    bcol = np.empty(n_basic, np.int64)

    # northwest corner start; degenerate zero cells keep the basis a spanning tree
    ra = supply.copy()
    rb = demand.copy()
    i = 0
    j = 0
    for k in range(n_basic):
        q = min(ra[i], rb[j])
        flow[i, j] = q
        is_basic[i, j] = True
        brow[k] = i
        bcol[k] = j
        ra[i] -= q
        rb[j] -= q
        if ra[i] == 0 and i < m - 1:
            i += 1
        else:
            j += 1

    scale = 1.0
    for a in range(m):
        for b in range(n):
            if abs(cost[a, b]) > scale:
                scale = abs(cost[a, b])
    tol = 1e-11 * scale

    deg = np.zeros(n_nodes, np.int64)
    start = np.zeros(n_nodes + 1, np.int64)
    adj_node = np.empty(2 * n_basic, np.int64)
    adj_edge = np.empty(2 * n_basic, np.int64)
    fill = np.zeros(n_nodes, np.int64)
    parent = np.empty(n_nodes, np.int64)
    parent_edge = np.empty(n_nodes, np.int64)
    depth = np.empty(n_nodes, np.int64)
    pot = np.empty(n_nodes, np.float64)
    queue = np.empty(n_nodes, np.int64)
    path_a = np.empty(n_nodes, np.int64)
    path_b = np.empty(n_nodes, np.int64)
    cycle = np.empty(n_nodes + 1, np.int64)

    degenerate_streak = 0
    bland = False
    status = 1
    it = 0
    while it < max_iter:
        # rebuild tree adjacency and potentials u_i + v_j = c_ij on basic cells
        deg[:] = 0
        for k in range(n_basic):
            deg[brow[k]] += 1
            deg[m + bcol[k]] += 1
        start[0] = 0
        for v in range(n_nodes):
            start[v + 1] = start[v] + deg[v]
        fill[:] = 0
        for k in range(n_basic):
            r = brow[k]
            c = m + bcol[k]
            adj_node[start[r] + fill[r]] = c
            adj_edge[start[r] + fill[r]] = k
            fill[r] += 1
            adj_node[start[c] + fill[c]] = r
            adj_edge[start[c] + fill[c]] = k
            fill[c] += 1
        parent[:] = -1
        parent[0] = 0
        parent_edge[0] = -1
        depth[0] = 0
        pot[0] = 0.0
        head = 0
        tail = 1
        queue[0] = 0
        while head < tail:
            v = queue[head]
            head += 1
            for s in range(start[v], start[v + 1]):
                w = adj_node[s]
                if parent[w] == -1:
                    k = adj_edge[s]
                    parent[w] = v
                    parent_edge[w] = k
                    depth[w] = depth[v] + 1
                    pot[w] = cost[brow[k], bcol[k]] - pot[v]
                    queue[tail] = w
                    tail += 1

        # pricing
        ei = -1
        ej = -1
        best = -tol
        for a in range(m):
            for b in range(n):
                if is_basic[a, b]:
                    continue
                rc = cost[a, b] - pot[a] - pot[m + b]
                if rc < best:
                    best = rc
                    ei = a
                    ej = b
                    if bland:
                        break
            if bland and ei >= 0:
                break
        if ei < 0:
            status = 0
            break

        # tree path from column node back to row node closes the cycle
        na = ei
        nb = m + ej
        la = 0
        lb = 0
        while depth[nb] > depth[na]:
            path_b[lb] = parent_edge[nb]
            lb += 1
            nb = parent[nb]
        while depth[na] > depth[nb]:
            path_a[la] = parent_edge[na]
            la += 1
            na = parent[na]
        while na != nb:
            path_b[lb] = parent_edge[nb]
            lb += 1
            nb = parent[nb]
            path_a[la] = parent_edge[na]
            la += 1
            na = parent[na]
        clen = 0
        for s in range(lb):
            cycle[clen] = path_b[s]
            clen += 1
        for s in range(la - 1, -1, -1):
            cycle[clen] = path_a[s]
            clen += 1

        # ratio test over the decreasing (even-position) edges, lowest cell index on ties
        theta = -1
        leave = -1
        leave_key = -1
        for s in range(0, clen, 2):
            k = cycle[s]
            f = flow[brow[k], bcol[k]]
            key = brow[k] * n + bcol[k]
            if theta < 0 or f < theta or (f == theta and key < leave_key):
                theta = f
                leave = k
                leave_key = key
        for s in range(clen):
            k = cycle[s]
            if s % 2 == 0:
                flow[brow[k], bcol[k]] -= theta
            else:
                flow[brow[k], bcol[k]] += theta
        flow[ei, ej] += theta
        is_basic[brow[leave], bcol[leave]] = False
        is_basic[ei, ej] = True
        brow[leave] = ei
        bcol[leave] = ej

        if theta == 0:
            degenerate_streak += 1
            if degenerate_streak > n_nodes:
                bland = True
        else:
            degenerate_streak = 0
            bland = False
        it += 1

    u = pot[:m].copy()
    v = pot[m:].copy()
    return flow, u, v, status, it


def _integer_masses(mu: EmpiricalDistribution, nu: EmpiricalDistribution):
    if mu.is_uniform and nu.is_uniform:
        total = math.lcm(mu.size, nu.size)
        supply = np.full(mu.size, total // mu.size, dtype=np.int64)
        demand = np.full(nu.size, total // nu.size, dtype=np.int64)
        return supply, demand, total
    total = 1 << 40
    out = []
    for w in (mu.mass, nu.mass):
        q = np.rint(w * total).astype(np.int64)
        q[np.argmax(q)] += total - q.sum()
        out.append(q)
    return out[0], out[1], total


def _order_key(d: EmpiricalDistribution):
    return d.size, d.points.shape[1], d.points.tobytes(), d.mass.tobytes()


def solve_emd(mu: EmpiricalDistribution, nu: EmpiricalDistribution, p: float = 1.0,
              max_iter: int | None = None) -> TransportPlan:
    """Solve ``min sum(D * P)`` over plans with marginals ``mu`` and ``nu``.

    ``D`` is :func:`ground_cost` with exponent ``p``.  The returned ``cost``
    is the objective before taking the ``1/p`` root.

    Raises
    ------
    TransportError
        If either support is empty or the simplex does not reach
        optimality within ``max_iter`` pivots.
    """
    if mu.size == 0 or nu.size == 0:
        raise TransportError("empty support")
    if _order_key(nu) < _order_key(mu):
        # solve in a canonical orientation so that W(mu, nu) == W(nu, mu) bit for bit
        res = solve_emd(nu, mu, p, max_iter)
        return TransportPlan(plan=res.plan.T.copy(), cost=res.cost, row_potential=res.col_potential,
                             col_potential=res.row_potential, iterations=res.iterations)
    cost = np.ascontiguousarray(ground_cost(mu.points, nu.points, p))
    supply, demand, total = _integer_masses(mu, nu)
    if max_iter is None:
        max_iter = 50 * (mu.size + nu.size) * max(mu.size, nu.size) + 1000
    flow, u, v, status, iters = _transport_simplex(supply, demand, cost, max_iter)
    if status != 0:
        raise TransportError(
            f"transport simplex did not converge after {iters} pivots "
            f"(m={mu.size}, n={nu.size}, p={p})"
        )
    plan = flow / total
    # integer flows keep the objective exact up to one rounding per cell
    value = float(np.sum(cost * flow) / total)
    return TransportPlan(plan=plan, cost=value, row_potential=u,
                         col_potential=v, iterations=int(iters))


def wasserstein_distance(mu: EmpiricalDistribution, nu: EmpiricalDistribution,
                         p: float = 1.0) -> float:
    """``W_p(mu, nu)``; with ``p = 1`` this is the Earth Mover's Distance."""
    cost = solve_emd(mu, nu, p).cost
    cost = max(cost, 0.0)
    return cost if p == 1 else cost ** (1.0 / p)


def pairwise_distance_matrix(players: Sequence[tuple[str, EmpiricalDistribution]],
                             p: float = 1.0, min_support: int = 1,
                             threads: int = 1) -> DistanceMatrix:
    """All-pairs ``W_p`` matrix, one solve per unordered pair."""
    labels = [str(pid) for pid, _ in players]
    dists = [d for _, d in players]
    for pid, d in zip(labels, dists):
        if d.size < min_support:
            raise ValueError(f"player {pid} has {d.size} supports, need >= {min_support}")
    n = len(dists)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def work(pair):
        i, j = pair
        try:
            return wasserstein_distance(dists[i], dists[j], p)
        except TransportError as exc:
            raise TransportError(f"pair ({labels[i]}, {labels[j]}): {exc}") from exc

    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(pair) for pair in pairs]

    values = np.zeros((n, n))
    for (i, j), w in zip(pairs, results):
        values[i, j] = values[j, i] = w
    return DistanceMatrix(tuple(labels), values)


def save_plan(plan: TransportPlan, path: Path):
    np.savetxt(path, plan.plan, delimiter=",", fmt="%.17g")
