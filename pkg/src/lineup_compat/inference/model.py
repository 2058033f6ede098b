"""Hierarchical linear model for team-specific pair effects.

    y_i        ~ Normal(alpha_t + x_i . beta_t, eps^2)
    alpha_t    ~ Normal(mu_alpha, alpha_sd^2)
    beta_t     ~ Normal(mu_beta, sigma_beta^2)
    mu_beta    ~ Normal(0, mu_beta_sd^2)
    sigma_beta ~ HalfNormal(sigma_beta_scale)
    eps        ~ HalfNormal(epsilon_scale)

The sampler works on an unconstrained vector: ``sigma_beta`` and ``eps``
enter on the log scale and their log-Jacobians are part of the density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

LOG_2PI = float(np.log(2.0 * np.pi))
HALFNORMAL_CONST = float(0.5 * np.log(2.0 / np.pi))


@dataclass(frozen=True)
class HierarchicalModelSpec:
    n_teams: int
    n_features: int
    mu_alpha: float = 105.0
    alpha_sd: float = 10.0
    mu_beta_sd: float = 10.0
    sigma_beta_scale: float = 10.0
    epsilon_scale: float = 10.0
    sigma_beta_per_feature: bool = False
    # pinning a scale removes it from the sampled vector
    fixed_sigma_beta: float | None = None
    fixed_epsilon: float | None = None

    def __post_init__(self):
        for name in ("alpha_sd", "mu_beta_sd", "sigma_beta_scale", "epsilon_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.n_teams < 1 or self.n_features < 0:
            raise ValueError("model needs at least one team")

    @property
    def n_sigma_beta(self) -> int:
        if self.fixed_sigma_beta is not None:
            return 0
        return self.n_features if self.sigma_beta_per_feature else 1

    @property
    def dim(self) -> int:
        T, F = self.n_teams, self.n_features
        return T + T * F + F + self.n_sigma_beta + (self.fixed_epsilon is None)

    def param_names(self) -> list[str]:
        T, F = self.n_teams, self.n_features
        names = [f"alpha[{t}]" for t in range(T)]
        names += [f"beta[{t},{f}]" for t in range(T) for f in range(F)]
        names += [f"mu_beta[{f}]" for f in range(F)]
        if self.n_sigma_beta == 1:
            names.append("log_sigma_beta")
        elif self.n_sigma_beta:
            names += [f"log_sigma_beta[{f}]" for f in range(F)]
        if self.fixed_epsilon is None:
            names.append("log_epsilon")
        return names


@dataclass(frozen=True)
class Params:
    alpha: np.ndarray
    beta: np.ndarray
    mu_beta: np.ndarray
    log_sigma_beta: np.ndarray
    log_epsilon: float


def unpack(spec: HierarchicalModelSpec, theta) -> Params:
    theta = np.asarray(theta, dtype=float)
    T, F = spec.n_teams, spec.n_features
    i = 0
    alpha = theta[i:i + T]
    i += T
    beta = theta[i:i + T * F].reshape(T, F)
    i += T * F
    mu_beta = theta[i:i + F]
    i += F
    if spec.n_sigma_beta:
        log_sb = theta[i:i + spec.n_sigma_beta]
        i += spec.n_sigma_beta
    else:
        log_sb = np.array([np.log(spec.fixed_sigma_beta)])
    log_eps = theta[i] if spec.fixed_epsilon is None else np.log(spec.fixed_epsilon)
    return Params(alpha, beta, mu_beta, log_sb, float(log_eps))


def pack(spec: HierarchicalModelSpec, alpha, beta, mu_beta, log_sigma_beta=None, log_epsilon=None):
    parts = [np.ravel(alpha), np.ravel(beta), np.ravel(mu_beta)]
    if spec.n_sigma_beta:
        parts.append(np.broadcast_to(np.ravel(log_sigma_beta), (spec.n_sigma_beta,)))
    if spec.fixed_epsilon is None:
        parts.append(np.ravel(log_epsilon))
    return np.concatenate(parts).astype(float)


@njit(cache=True, nogil=True)
def _density_kernel(phi, X, y, team, T, F, n_sb, fit_eps, log_sb_fixed, log_eps_fixed, mu_alpha,
                    alpha_sd, mu_beta_sd, sb_scale, eps_scale, noncentered):  # pragma: no cover - jitted
    dim = phi.size
    grad = np.zeros(dim)
    ob = T
    om = T + T * F
    os_ = om + F
    oe = os_ + n_sb
    for j in range(dim):
        if not np.isfinite(phi[j]):
            return -np.inf, grad

    log_sb = np.empty(F)
    for f in range(F):
        if n_sb == 0:
            log_sb[f] = log_sb_fixed
        elif n_sb == 1:
            log_sb[f] = phi[os_]
        else:
            log_sb[f] = phi[os_ + f]
    sb = np.exp(log_sb)
    log_eps = phi[oe] if fit_eps else log_eps_fixed
    eps = np.exp(log_eps)
    if not (eps > 0 and np.isfinite(eps)):
        return -np.inf, grad
    for f in range(F):
        if not (sb[f] > 0 and np.isfinite(sb[f])):
            return -np.inf, grad

    beta = np.empty((T, F))
    for t in range(T):
        for f in range(F):
            raw = phi[ob + t * F + f]
            beta[t, f] = phi[om + f] + sb[f] * raw if noncentered else raw

    # likelihood
    inv_e2 = 1.0 / (eps * eps)
    n = y.size
    ss = 0.0
    g_beta = np.zeros((T, F))
    for i in range(n):
        t = team[i]
        mean = phi[t]
        for f in range(F):
            mean += X[i, f] * beta[t, f]
        r = y[i] - mean
        ss += r * r
        w = r * inv_e2
        grad[t] += w
        for f in range(F):
            g_beta[t, f] += w * X[i, f]
    lp = -n * (0.5 * LOG_2PI + log_eps) - 0.5 * inv_e2 * ss

    # alpha_t ~ N(mu_alpha, alpha_sd^2)
    a2 = alpha_sd * alpha_sd
    for t in range(T):
        d = phi[t] - mu_alpha
        lp += -0.5 * LOG_2PI - np.log(alpha_sd) - 0.5 * d * d / a2
        grad[t] -= d / a2

    # beta_t ~ N(mu_beta, sigma_beta^2), on the centred scale
    g_mu = np.zeros(F)
    g_lsb = np.zeros(F)
    for t in range(T):
        for f in range(F):
            dev = beta[t, f] - phi[om + f]
            z = dev / sb[f]
            lp += -0.5 * LOG_2PI - log_sb[f] - 0.5 * z * z
            g_beta[t, f] -= z / sb[f]
            g_mu[f] += z / sb[f]
            g_lsb[f] += z * z - 1.0

    m2 = mu_beta_sd * mu_beta_sd
    for f in range(F):
        mu = phi[om + f]
        lp += -0.5 * LOG_2PI - np.log(mu_beta_sd) - 0.5 * mu * mu / m2
        g_mu[f] -= mu / m2

    if noncentered:
        # beta = mu + sigma * raw, plus log|d beta / d raw| = T * sum(log sigma)
        for t in range(T):
            for f in range(F):
                raw = phi[ob + t * F + f]
                grad[ob + t * F + f] = g_beta[t, f] * sb[f]
                g_mu[f] += g_beta[t, f]
                g_lsb[f] += g_beta[t, f] * sb[f] * raw
        for f in range(F):
            lp += T * log_sb[f]
            g_lsb[f] += T
    else:
        for t in range(T):
            for f in range(F):
                grad[ob + t * F + f] = g_beta[t, f]
    for f in range(F):
        grad[om + f] = g_mu[f]

    # half-normal scales sampled as logs, with log-Jacobian
    if n_sb == 1:
        s0 = sb[0] if F else np.exp(phi[os_])
        lp += HALFNORMAL_CONST - np.log(sb_scale) - 0.5 * (s0 / sb_scale) ** 2 + phi[os_]
        total = 0.0
        for f in range(F):
            total += g_lsb[f]
        grad[os_] = total - (s0 / sb_scale) ** 2 + 1.0
    elif n_sb > 1:
        for f in range(F):
            lp += HALFNORMAL_CONST - np.log(sb_scale) - 0.5 * (sb[f] / sb_scale) ** 2 + log_sb[f]
            grad[os_ + f] = g_lsb[f] - (sb[f] / sb_scale) ** 2 + 1.0
    if fit_eps:
        lp += HALFNORMAL_CONST - np.log(eps_scale) - 0.5 * (eps / eps_scale) ** 2 + log_eps
        grad[oe] = -n + ss * inv_e2 - (eps / eps_scale) ** 2 + 1.0

    if not np.isfinite(lp):
        return -np.inf, np.zeros(dim)
    for j in range(dim):
        if not np.isfinite(grad[j]):
            return -np.inf, np.zeros(dim)
    return lp, grad


class HierarchicalModel:
    """Log posterior and gradient for fixed data; picklable for worker pools.

    All normalising constants are included.  Non-finite densities come back
    as ``(-inf, zeros)``, which the sampler treats as a divergence.
    """

    noncentered = False

    def __init__(self, spec: HierarchicalModelSpec, X, y, team_index):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        team_index = np.asarray(team_index, dtype=np.int64)
        if X.ndim != 2 or X.shape != (y.size, spec.n_features) or team_index.shape != y.shape:
            raise ValueError(f"inconsistent shapes X{X.shape} y{y.shape} team{team_index.shape}")
        if y.size and (team_index.min() < 0 or team_index.max() >= spec.n_teams):
            raise ValueError("team_index out of range")
        self.spec = spec
        self.X = np.ascontiguousarray(X)
        self.y = y
        self.team_index = team_index
        s = spec
        self._consts = (
            s.n_teams, s.n_features, s.n_sigma_beta, s.fixed_epsilon is None,
            float(np.log(s.fixed_sigma_beta)) if s.fixed_sigma_beta is not None else 0.0,
            float(np.log(s.fixed_epsilon)) if s.fixed_epsilon is not None else 0.0,
            float(s.mu_alpha), float(s.alpha_sd), float(s.mu_beta_sd), float(s.sigma_beta_scale),
            float(s.epsilon_scale),
        )

    @property
    def dim(self) -> int:
        return self.spec.dim

    def __call__(self, theta):
        return self.log_density_and_grad(theta)

    def log_density_and_grad(self, theta) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.spec.dim,):
            raise ValueError(f"parameter vector has shape {theta.shape}, expected ({self.spec.dim},)")
        lp, grad = _density_kernel(theta, self.X, self.y, self.team_index, *self._consts, self.noncentered)
        return float(lp), grad

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Dispersed start near the prior centre for alpha and near zero for effects."""
        s = self.spec
        T, F = s.n_teams, s.n_features
        base = np.mean(self.y) if self.y.size else s.mu_alpha
        alpha = base + rng.uniform(-2, 2, T)
        beta = rng.uniform(-0.5, 0.5, (T, F))
        mu = rng.uniform(-0.5, 0.5, F)
        log_sb = rng.uniform(-2, 0, s.n_sigma_beta) if s.n_sigma_beta else None
        resid_sd = np.std(self.y) if self.y.size > 1 else 1.0
        log_eps = np.log(max(resid_sd, 1e-3)) + rng.uniform(-1, 1) if s.fixed_epsilon is None else None
        return pack(s, alpha, beta, mu, log_sb, log_eps)


def log_posterior(spec: HierarchicalModelSpec, X, y, team_index, params) -> tuple[float, np.ndarray]:
    """Log density of the unconstrained parameters, normalising constants included, and its gradient."""
    return HierarchicalModel(spec, X, y, team_index).log_density_and_grad(params)


class NonCenteredModel(HierarchicalModel):
    """The same posterior in coordinates ``z = (beta_t - mu_beta) / sigma_beta``.

    Small ``sigma_beta`` makes the centred density a funnel that NUTS
    cannot traverse with one step size; in ``z`` coordinates the prior
    geometry is isotropic.  The log-Jacobian ``T * sum(log sigma_beta)``
    makes the two densities agree after the change of variables.
    """

    noncentered = True

    def __init__(self, model: HierarchicalModel):
        super().__init__(model.spec, model.X, model.y, model.team_index)

    def _sigma(self, theta):
        p = unpack(self.spec, theta)
        return np.broadcast_to(np.exp(p.log_sigma_beta), (self.spec.n_features,))

    def to_centered(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        T, F = self.spec.n_teams, self.spec.n_features
        theta = phi.copy()
        p = unpack(self.spec, phi)
        theta[T:T + T * F] = (p.mu_beta[None, :] + self._sigma(phi)[None, :] * p.beta).ravel()
        return theta

    def from_centered(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        T, F = self.spec.n_teams, self.spec.n_features
        phi = theta.copy()
        p = unpack(self.spec, theta)
        phi[T:T + T * F] = ((p.beta - p.mu_beta[None, :]) / self._sigma(theta)[None, :]).ravel()
        return phi

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        return self.from_centered(super().initial_point(rng))
