"""Ward agglomeration on precomputed distances, silhouettes, k-means and
fuzzy c-means."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .core.io import fmt
from .transport import DistanceMatrix

# players at or above this membership are reported as belonging to a role
MEMBERSHIP_REPORT_THRESHOLD = 0.9


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merge list with scipy-style ids: leaves ``0..n-1``, merge ``s`` creates ``n + s``."""

    merges: tuple[Merge, ...]
    leaf_labels: tuple[str, ...]

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_labels)

    def to_json(self) -> str:
        return json.dumps({
            "leaf_labels": list(self.leaf_labels),
            "merges": [[m.left, m.right, m.height, m.size] for m in self.merges],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Dendrogram":
        d = json.loads(text)
        return cls(tuple(Merge(int(a), int(b), float(h), int(s)) for a, b, h, s in d["merges"]),
                   tuple(d["leaf_labels"]))


@dataclass(frozen=True)
class HardAssignment:
    labels: np.ndarray
    k: int

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


@dataclass(frozen=True)
class MembershipMatrix:
    u: np.ndarray
    centroids: np.ndarray
    objective_history: tuple[float, ...] = field(default=(), repr=False)
    n_iter: int = 0
    converged: bool = True

    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.u, axis=1)

    def max_membership(self) -> np.ndarray:
        return self.u.max(axis=1)


def ward_linkage(dm: DistanceMatrix) -> Dendrogram:
    """Ward agglomeration via the Lance-Williams update on squared distances.

    Heights are reported on the distance scale.  Ties between equal merge
    costs go to the lexicographically smallest pair of cluster ids.
    """
    D = np.asarray(dm.values, dtype=float)
    if np.isnan(D).any():
        raise ValueError("distance matrix contains NaN")
    n = D.shape[0]
    if n < 2:
        raise ValueError("need at least two points to cluster")
    D2 = D**2
    ids = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    work = D2.copy()
    np.fill_diagonal(work, np.inf)
    merges = []
    for step in range(n - 1):
        best = work.min()
        rows, cols = np.nonzero(work == best)
        cand = [(min(ids[a], ids[b]), max(ids[a], ids[b]), a, b) for a, b in zip(rows, cols) if a < b]
        _, _, i, j = min(cand)
        ni, nj = size[i], size[j]
        others = np.flatnonzero(active)
        others = others[(others != i) & (others != j)]
        nk = size[others]
        upd = ((ni + nk) * D2[others, i] + (nj + nk) * D2[others, j] - nk * D2[i, j]) / (ni + nj + nk)
        merges.append(Merge(int(min(ids[i], ids[j])), int(max(ids[i], ids[j])),
                            float(np.sqrt(max(best, 0.0))), int(ni + nj)))
        # merged cluster lives in slot i; slot j retires
        D2[others, i] = D2[i, others] = upd
        work[others, i] = work[i, others] = upd
        work[j, :] = work[:, j] = np.inf
        active[j] = False
        size[i] = ni + nj
        ids[i] = n + step
    return Dendrogram(tuple(merges), tuple(dm.labels))


def cut_dendrogram(d: Dendrogram, k: int) -> HardAssignment:
    """Flat clustering with exactly ``k`` groups.

    Cluster ids are ordered by size (largest first), then by smallest
    member index.
    """
    n = d.n_leaves
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    members = {i: [i] for i in range(n)}
    for step, m in enumerate(d.merges[: n - k]):
        members[n + step] = members.pop(m.left) + members.pop(m.right)
    groups = sorted((sorted(g) for g in members.values()), key=lambda g: (-len(g), g[0]))
    labels = np.empty(n, dtype=np.int64)
    for c, g in enumerate(groups):
        labels[g] = c
    return HardAssignment(labels, k)


def silhouette_samples(dm: DistanceMatrix | np.ndarray, labels) -> np.ndarray:
    """Per-point silhouette from precomputed distances; singletons score 0."""
    D = np.asarray(dm.values if isinstance(dm, DistanceMatrix) else dm, dtype=float)
    labels = np.asarray(labels)
    uniq, inv = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise ValueError("silhouette needs at least two clusters")
    onehot = np.zeros((labels.size, uniq.size))
    onehot[np.arange(labels.size), inv] = 1.0
    counts = onehot.sum(axis=0)
    sums = D @ onehot
    own = counts[inv]
    a = np.where(own > 1, sums[np.arange(labels.size), inv] / np.maximum(own - 1, 1), 0.0)
    means = sums / counts
    means[np.arange(labels.size), inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return np.clip(s, -1.0, 1.0)


def silhouette_mean(dm: DistanceMatrix | np.ndarray, assignment: HardAssignment | np.ndarray) -> float:
    labels = assignment.labels if isinstance(assignment, HardAssignment) else assignment
    return float(np.mean(silhouette_samples(dm, labels)))


def silhouette_sweep(dm: DistanceMatrix, d: Dendrogram, k_min: int = 2, k_max: int = 20):
    """Mean silhouette of the dendrogram cut at every ``k`` in the range."""
    if k_min < 2 or k_max < k_min:
        raise ValueError("k range must satisfy 2 <= k_min <= k_max")
    k_max = min(k_max, d.n_leaves)
    return [(k, silhouette_mean(dm, cut_dendrogram(d, k))) for k in range(k_min, k_max + 1)]


def _sq_dists(X, C):
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _sq_dists(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[c:c + 1])[:, 0])
    return centers


@dataclass(frozen=True)
class KMeansResult:
    assignment: HardAssignment
    centroids: np.ndarray
    inertia_history: tuple[float, ...]
    n_iter: int


def kmeans(X, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding.

    An emptied cluster is re-seeded at the point farthest from its current
    centroid.  ``inertia_history`` holds the objective after every
    assignment step and never increases.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in [1, n={n}]")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(X, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(X, C)
        new = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new == c):
                # move the worst-fit point out of a cluster that can spare it;
                # its cost drops to zero so the objective still cannot rise
                cost = d2[np.arange(n), new]
                spare = np.bincount(new, minlength=k)[new] > 1
                far = int(np.argmax(np.where(spare, cost, -1.0)))
                C[c] = X[far]
                new[far] = c
                d2 = _sq_dists(X, C)
        history.append(float(d2[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            C[c] = X[labels == c].mean(axis=0)
    return KMeansResult(HardAssignment(labels, k), C, tuple(history), it)


def fcm_memberships(X, centroids, q: float) -> np.ndarray:
    """Optimal memberships for fixed centroids.

    ``u_ik = 1 / sum_j (d_ik / d_ij) ** (2 / (q - 1))``, evaluated as a
    softmax of ``-(2 / (q - 1)) * log d`` so that ``q`` close to 1 does not
    overflow.  A point sitting on a centroid gets crisp membership.
    """
    d = np.sqrt(_sq_dists(np.asarray(X, float), np.asarray(centroids, float)))
    expo = 2.0 / (q - 1.0)
    on_centroid = d < 1e-12
    with np.errstate(divide="ignore"):
        logits = -expo * np.log(np.where(on_centroid, 1.0, d))
    logits -= logits.max(axis=1, keepdims=True)
    u = np.exp(logits)
    u /= u.sum(axis=1, keepdims=True)
    crisp = on_centroid.any(axis=1)
    if crisp.any():
        rows = np.flatnonzero(crisp)
        u[rows] = 0.0
        u[rows, np.argmin(d[rows], axis=1)] = 1.0
    return u


def fcm_centroids(X, u, q: float, previous=None) -> np.ndarray:
    w = np.asarray(u) ** q
    mass = w.sum(axis=0)
    C = (w.T @ np.asarray(X, float)) / np.where(mass > 0, mass, 1.0)[:, None]
    if previous is not None and np.any(mass <= 0):
        C[mass <= 0] = previous[mass <= 0]
    return C


def fcm_objective(X, u, centroids, q: float) -> float:
    return float(np.sum((np.asarray(u) ** q) * _sq_dists(np.asarray(X, float), centroids)))


def fuzzy_cmeans(X, c: int, q: float = 1.2, seed: int = 0, tol: float = 1e-8,
                 max_iter: int = 500, u_tol: float = 1e-10) -> MembershipMatrix:
    """Fuzzy c-means by alternating membership and centroid updates.

    Centroids start from k-means++ seeding with ``seed``.  Iteration stops
    once the objective drops by less than ``tol`` relative to its previous
    value and no membership moved by more than ``u_tol`` in the last sweep.
    The objective plateaus in floating point well before the memberships
    settle, hence the second condition.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if c < 2:
        raise ValueError("fuzzy c-means needs c >= 2")
    if n < c:
        raise ValueError(f"need at least c={c} points, got {n}")
    if q <= 1:
        raise ValueError("fuzzifier q must be > 1")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(X, c, rng)
    u = fcm_memberships(X, C, q)
    history = [fcm_objective(X, u, C, q)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        C = fcm_centroids(X, u, q, previous=C)
        u_new = fcm_memberships(X, C, q)
        step = float(np.max(np.abs(u_new - u)))
        u = u_new
        J = fcm_objective(X, u, C, q)
        prev = history[-1]
        history.append(J)
        if prev - J <= tol * max(prev, 1e-300) and step <= u_tol:
            converged = True
            break
    return MembershipMatrix(u, C, tuple(history), it, converged)


def zscore(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def write_assignments(path, labels_in, assignment: HardAssignment):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", "cluster"])
        for pid, lab in zip(labels_in, assignment.labels):
            w.writerow([pid, int(lab)])


def read_assignments(path) -> dict[str, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["player_id"]: int(r["cluster"]) for r in csv.DictReader(fh)}


def write_memberships(path, player_ids, mm: MembershipMatrix):
    c = mm.u.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", *(f"u_{k}" for k in range(c)), "argmax"])
        for pid, row, arg in zip(player_ids, mm.u, mm.hard_labels()):
            w.writerow([pid, *(fmt(v) for v in row), int(arg)])


def read_memberships(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = [i for i, h in enumerate(header) if h.startswith("u_")]
        return {r[0]: np.array([float(r[i]) for i in cols]) for r in reader}


def membership_histogram(mm: MembershipMatrix, n_bins: int = 10):
    """Counts of the per-player maximum membership over equal bins of [0, 1]."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    counts, _ = np.histogram(mm.max_membership(), bins=edges)
    return edges, counts
