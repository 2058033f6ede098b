"""Independent reference implementations used only by the test suite.

Nothing here imports from ``lineup_compat``; each routine takes the slow,
obvious route so that it can check the fast one.
"""

from __future__ import annotations

import itertools

import numpy as np


def dense_lp_simplex(c, A_eq, b_eq, tol=1e-12, max_iter=10_000):
    """Two-phase tableau simplex with Bland's rule for ``min c@x, A x = b, x >= 0``.

    Returns ``(x, objective)``.  Redundant equality rows are dropped after
    phase one.
    """
    A = np.array(A_eq, dtype=float)
    b = np.array(b_eq, dtype=float)
    c = np.array(c, dtype=float)
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    m, n = A.shape

    # phase one: artificials n..n+m-1
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    basis = list(range(n, n + m))
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()

    def pivot(T, r, col):
        T[r] /= T[r, col]
        for k in range(T.shape[0]):
            if k != r and T[k, col] != 0.0:
                T[k] -= T[k, col] * T[r]
        basis[r] = col

    def run(T, allowed):
        for _ in range(max_iter):
            obj = T[-1, :-1]
            entering = next((j for j in allowed if obj[j] < -tol), None)
            if entering is None:
                return
            col = T[:-1, entering]
            ratios = [(T[i, -1] / col[i], basis[i], i) for i in range(len(col)) if col[i] > tol]
            if not ratios:
                raise RuntimeError("unbounded LP")
            best = min(r[0] for r in ratios)
            # Bland: among minimum ratios pick the smallest basic index
            r = min((rb, i) for ratio, rb, i in ratios if ratio <= best + tol)[1]
            pivot(T, r, entering)
        raise RuntimeError("oracle simplex iteration cap reached")

    run(T, list(range(n + m)))
    if T[m, -1] < -1e-9:
        raise RuntimeError("infeasible LP")

    # drive artificials out of the basis, drop redundant rows
    keep = []
    for r in range(m):
        if basis[r] >= n:
            cols = [j for j in range(n) if abs(T[r, j]) > 1e-10]
            if cols:
                pivot(T, r, cols[0])
                keep.append(r)
        else:
            keep.append(r)
    rows = [T[r, :n].tolist() + [T[r, -1]] for r in keep]
    basis2 = [basis[r] for r in keep]
    T2 = np.zeros((len(rows) + 1, n + 1))
    T2[:-1] = np.array(rows)
    T2[-1, :n] = c
    for r, j in enumerate(basis2):
        T2[-1] -= T2[-1, j] * T2[r]
    basis[:] = basis2
    run(T2, list(range(n)))
    x = np.zeros(n)
    for r, j in enumerate(basis):
        x[j] = T2[r, -1]
    return x, float(c @ x)


def transport_lp_oracle(a_points, b_points, a_mass, b_mass, p=1.0):
    """Optimal transport cost via the dense simplex above."""
    a_points = np.atleast_2d(a_points)
    b_points = np.atleast_2d(b_points)
    m, n = len(a_points), len(b_points)
    D = np.array([[np.linalg.norm(x - y) ** p for y in b_points] for x in a_points])
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    bvec = np.concatenate([a_mass, b_mass])
    x, obj = dense_lp_simplex(D.ravel(), A, bvec)
    return obj, x.reshape(m, n)


def brute_force_1d_plans(a, b, steps=200):
    """Grid search over 2x2 plans with uniform marginals (for tiny hand cases)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    best = np.inf
    for t in np.linspace(0.0, 0.5, steps + 1):
        P = np.array([[t, 0.5 - t], [0.5 - t, t]])
        best = min(best, float(np.sum(np.abs(a[:, None] - b[None, :]) * P)))
    return best


def naive_ward(points):
    """Recompute Ward merge costs from raw points at every step.

    Returns a list of ``(id_a, id_b, height, size)`` with ``id_a < id_b`` and
    scipy-style numbering of new clusters.  ``height`` is on the distance
    scale: ``sqrt(2 * delta_SSE)``.
    """
    X = np.asarray(points, float)
    n = len(X)
    clusters = {i: [i] for i in range(n)}
    merges = []
    next_id = n
    for _ in range(n - 1):
        best = None
        for ia, ib in itertools.combinations(sorted(clusters), 2):
            A, B = X[clusters[ia]], X[clusters[ib]]
            na, nb = len(A), len(B)
            delta = na * nb / (na + nb) * np.sum((A.mean(0) - B.mean(0)) ** 2)
            if best is None or delta < best[0]:
                best = (delta, ia, ib)
        delta, ia, ib = best
        members = clusters.pop(ia) + clusters.pop(ib)
        clusters[next_id] = members
        merges.append((ia, ib, float(np.sqrt(2 * delta)), len(members)))
        next_id += 1
    return merges


def silhouette_by_hand(D, labels):
    """Direct evaluation of the per-point cohesion/separation formula."""
    D = np.asarray(D, float)
    labels = np.asarray(labels)
    s = []
    for i in range(len(labels)):
        same = [j for j in range(len(labels)) if labels[j] == labels[i]]
        if len(same) == 1:
            s.append(0.0)
            continue
        a = sum(D[i, j] for j in same) / (len(same) - 1)
        b = min(
            np.mean([D[i, j] for j in range(len(labels)) if labels[j] == k])
            for k in set(labels.tolist()) if k != labels[i]
        )
        denom = max(a, b)
        s.append(0.0 if denom == 0 else (b - a) / denom)
    return float(np.mean(s))


def crisp_pair_counts(labels, c):
    """Count unordered cluster pairs over all player pairs by enumeration."""
    out = {}
    for k in range(c):
        for k2 in range(k, c):
            out[(k, k2)] = 0
    for a, b in itertools.combinations(labels, 2):
        key = (min(a, b), max(a, b))
        out[key] += 1
    return [out[key] for key in sorted(out)]


def gaussian_linear_posterior(A, y, prior_mean, prior_cov, noise_sd):
    """Closed-form posterior for ``y ~ N(A w, noise_sd^2 I), w ~ N(m0, S0)``."""
    P0 = np.linalg.inv(prior_cov)
    prec = P0 + A.T @ A / noise_sd**2
    cov = np.linalg.inv(prec)
    mean = cov @ (P0 @ prior_mean + A.T @ y / noise_sd**2)
    return mean, cov


def finite_difference_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def hierarchical_log_density(theta, X, y, team, T, F, mu_alpha, alpha_sd=10.0, mu_beta_sd=10.0,
                             sb_scale=10.0, eps_scale=10.0):
    """Vectorised log density of the team-effects model with scalar log sigma_beta
    and log epsilon as the last two entries (no gradient; compare with finite differences)."""
    log2pi = np.log(2 * np.pi)
    alpha = theta[:T]
    beta = theta[T:T + T * F].reshape(T, F)
    mu = theta[T + T * F:T + T * F + F]
    lsb, leps = theta[-2], theta[-1]
    sb, eps = np.exp(lsb), np.exp(leps)
    resid = y - alpha[team] - np.sum(X * beta[team], axis=1)
    lp = np.sum(-0.5 * log2pi - leps - 0.5 * (resid / eps) ** 2)
    lp += np.sum(-0.5 * log2pi - np.log(alpha_sd) - 0.5 * ((alpha - mu_alpha) / alpha_sd) ** 2)
    lp += np.sum(-0.5 * log2pi - lsb - 0.5 * ((beta - mu) / sb) ** 2)
    lp += np.sum(-0.5 * log2pi - np.log(mu_beta_sd) - 0.5 * (mu / mu_beta_sd) ** 2)
    # half-normal densities plus log-Jacobians of the log transform
    for s, scale, ls in ((sb, sb_scale, lsb), (eps, eps_scale, leps)):
        lp += 0.5 * np.log(2 / np.pi) - np.log(scale) - 0.5 * (s / scale) ** 2 + ls
    return lp
