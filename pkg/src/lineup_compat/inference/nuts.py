"""No-U-turn sampler with multinomial trajectory sampling.

Warmup tunes the step size by dual averaging and a diagonal inverse metric
from windowed variance estimates (fast/slow/fast schedule).  Each chain is
a pure function of its seed, so chains can run in any order or in parallel.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0
LOG_SWITCH = np.log(0.8)


class SamplerError(RuntimeError):
    """Raised when a fit has to be rejected; ``report`` carries diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


@dataclass
class _State:
    q: np.ndarray
    p: np.ndarray
    lp: float
    grad: np.ndarray


@dataclass
class _Subtree:
    proposal: _State
    edge: _State        # outermost state, where the next extension starts
    p_beg: np.ndarray   # momentum next to the existing trajectory
    p_end: np.ndarray
    ps_beg: np.ndarray  # same, multiplied by the inverse metric
    ps_end: np.ndarray
    rho: np.ndarray
    log_w: float


def _uturn_free(ps_minus, ps_plus, rho) -> bool:
    return float(ps_plus @ rho) > 0 and float(ps_minus @ rho) > 0


class DualAveraging:
    """Step-size adaptation towards a target mean acceptance statistic."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.counter) / self.gamma
        w = self.counter ** -self.kappa
        self.x_bar = (1 - w) * self.x_bar + w * x
        return float(np.exp(x))

    @property
    def final_step_size(self) -> float:
        return float(np.exp(self.x_bar))


class WindowedVariance:
    """Slow-phase windows for the diagonal metric.

    Windows start after ``init_buffer`` draws, double in length, and stop
    ``term_buffer`` draws before the end of warmup.
    """

    def __init__(self, dim, n_warmup, init_buffer=75, term_buffer=50, base_window=25):
        if n_warmup < 20:
            self.active = False
            return
        self.active = True
        if init_buffer + base_window + term_buffer > n_warmup:
            init_buffer = int(0.15 * n_warmup)
            term_buffer = int(0.1 * n_warmup)
            base_window = n_warmup - (init_buffer + term_buffer)
        self.n_warmup = n_warmup
        self.init_buffer, self.term_buffer = init_buffer, term_buffer
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self.counter = 0
        self.dim = dim
        self._reset()

    def _reset(self):
        self.n = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    def _in_window(self):
        return (self.counter >= self.init_buffer and self.counter < self.n_warmup - self.term_buffer
                and self.counter != self.n_warmup)

    def _window_end(self):
        return self.counter == self.next_window and self.counter != self.n_warmup

    def _advance(self):
        last = self.n_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last and self.next_window + 2 * self.window_size >= self.n_warmup - self.term_buffer:
            self.next_window = last

    def learn(self, q) -> np.ndarray | None:
        """Feed one warmup draw; return a new inverse metric at a window end."""
        if not self.active:
            return None
        if self._in_window():
            # Welford update
            self.n += 1
            delta = q - self.mean
            self.mean += delta / self.n
            self.m2 += delta * (q - self.mean)
        if self._window_end():
            self._advance()
            n = self.n
            var = self.m2 / (n - 1) if n > 1 else np.ones(self.dim)
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset()
            self.counter += 1
            return var
        self.counter += 1
        return None


@dataclass
class ChainResult:
    draws: np.ndarray
    lp: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    accept_stat: np.ndarray
    warmup_divergences: int = 0


@dataclass
class NutsKernel:
    logp_grad: Callable[[np.ndarray], tuple[float, np.ndarray]]
    rng: np.random.Generator
    step_size: float = 1.0
    inv_metric: np.ndarray | None = None
    max_tree_depth: int = 10
    # per-transition counters
    n_leapfrog: int = field(default=0, init=False)
    sum_accept: float = field(default=0.0, init=False)
    divergent: bool = field(default=False, init=False)

    def _hamiltonian(self, z: _State) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            h = -z.lp + 0.5 * float(z.p @ (self.inv_metric * z.p))
        return h if np.isfinite(h) else np.inf

    def _momentum(self):
        return self.rng.standard_normal(self.inv_metric.size) / np.sqrt(self.inv_metric)

    def _leapfrog(self, z: _State, eps: float) -> _State:
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self.inv_metric * p
        lp, grad = self.logp_grad(q)
        p = p + 0.5 * eps * grad
        return _State(q, p, lp, grad)

    def init_step_size(self, z: _State):
        """Double or halve the step until one leapfrog step crosses 0.8 acceptance."""
        eps = self.step_size
        if eps == 0 or eps > 1e7:
            return
        direction = 0
        while True:
            z0 = _State(z.q, self._momentum(), z.lp, z.grad)
            h0 = self._hamiltonian(z0)
            z1 = self._leapfrog(z0, eps)
            delta = h0 - self._hamiltonian(z1)
            if direction == 0:
                direction = 1 if delta > LOG_SWITCH else -1
                continue
            if (direction == 1 and not delta > LOG_SWITCH) or (direction == -1 and not delta < LOG_SWITCH):
                break
            eps = 2.0 * eps if direction == 1 else 0.5 * eps
            if eps > 1e7:
                raise SamplerError("step size diverged upwards: posterior appears improper")
            if eps == 0:
                raise SamplerError("step size collapsed to zero: no acceptable leapfrog step")
        self.step_size = eps

    def _build(self, z: _State, depth: int, direction: int, h0: float) -> _Subtree | None:
        if depth == 0:
            z = self._leapfrog(z, direction * self.step_size)
            self.n_leapfrog += 1
            h = self._hamiltonian(z)
            if h - h0 > MAX_DELTA_H:
                self.divergent = True
            self.sum_accept += 1.0 if h0 - h > 0 else float(np.exp(h0 - h))
            if self.divergent:
                return None
            ps = self.inv_metric * z.p
            return _Subtree(z, z, z.p, z.p, ps, ps, z.p.copy(), h0 - h)

        inner = self._build(z, depth - 1, direction, h0)
        if inner is None:
            return None
        outer = self._build(inner.edge, depth - 1, direction, h0)
        if outer is None:
            return None
        log_w = np.logaddexp(inner.log_w, outer.log_w)
        # uniform progressive sampling inside a subtree
        proposal = inner.proposal
        if outer.log_w > log_w or self.rng.random() < np.exp(outer.log_w - log_w):
            proposal = outer.proposal
        rho = inner.rho + outer.rho
        ok = (_uturn_free(inner.ps_beg, outer.ps_end, rho)
              and _uturn_free(inner.ps_beg, outer.ps_beg, inner.rho + outer.p_beg)
              and _uturn_free(inner.ps_end, outer.ps_end, outer.rho + inner.p_end))
        if not ok:
            return None
        return _Subtree(proposal, outer.edge, inner.p_beg, outer.p_end, inner.ps_beg, outer.ps_end, rho, log_w)

    def transition(self, q, lp, grad):
        """One NUTS transition from ``q``; returns (state, accept_stat, depth)."""
        self.n_leapfrog = 0
        self.sum_accept = 0.0
        self.divergent = False
        z0 = _State(q, self._momentum(), lp, grad)
        h0 = self._hamiltonian(z0)
        ps0 = self.inv_metric * z0.p
        # [0] is the backward end, [1] the forward end
        edge = [z0, z0]
        p_edge = [z0.p, z0.p]
        ps_edge = [ps0, ps0]
        rho = z0.p.copy()
        log_w = 0.0
        sample = z0
        depth = 0
        while depth < self.max_tree_depth:
            side = 1 if self.rng.random() > 0.5 else 0
            direction = 1 if side else -1
            sub = self._build(edge[side], depth, direction, h0)
            if sub is None:
                break
            depth += 1
            # biased progressive sampling favours the new subtree
            if sub.log_w > log_w or self.rng.random() < np.exp(sub.log_w - log_w):
                sample = sub.proposal
            log_w = np.logaddexp(log_w, sub.log_w)
            other = 1 - side
            ok = (_uturn_free(ps_edge[other], sub.ps_end, rho + sub.rho)
                  and _uturn_free(ps_edge[other], sub.ps_beg, rho + sub.p_beg)
                  and _uturn_free(ps_edge[side], sub.ps_end, sub.rho + p_edge[side]))
            rho = rho + sub.rho
            edge[side] = sub.edge
            p_edge[side] = sub.p_end
            ps_edge[side] = sub.ps_end
            if not ok:
                break
        accept = self.sum_accept / max(self.n_leapfrog, 1)
        return sample, accept, depth


def _initial_state(logp_grad, init, rng, dim, tries=100):
    for _ in range(tries):
        q = np.asarray(init(rng) if callable(init) else init, dtype=float)
        lp, grad = logp_grad(q)
        if np.isfinite(lp) and np.all(np.isfinite(grad)):
            return q, lp, grad
        if not callable(init):
            break
    raise SamplerError(f"no finite starting point found in {tries} attempts")


def run_chain(logp_grad, init, n_warmup: int, n_draws: int, seed, target_accept: float = 0.8,
              max_tree_depth: int = 10, dim: int | None = None) -> ChainResult:
    """Run one adaptive NUTS chain.

    ``init`` is a starting vector or a callable ``rng -> vector``.  Only
    post-warmup draws are returned.
    """
    rng = np.random.default_rng(seed)
    q, lp, grad = _initial_state(logp_grad, init, rng, dim)
    dim = q.size
    kernel = NutsKernel(logp_grad, rng, 1.0, np.ones(dim), max_tree_depth)
    kernel.init_step_size(_State(q, np.zeros(dim), lp, grad))
    da = DualAveraging(kernel.step_size, target_accept)
    window = WindowedVariance(dim, n_warmup)
    warm_div = 0
    for _ in range(n_warmup):
        z, acc, _ = kernel.transition(q, lp, grad)
        q, lp, grad = z.q, z.lp, z.grad
        warm_div += kernel.divergent
        kernel.step_size = da.update(acc)
        var = window.learn(q)
        if var is not None:
            kernel.inv_metric = var
            kernel.init_step_size(_State(q, np.zeros(dim), lp, grad))
            da.restart(kernel.step_size)
    if n_warmup > 0:
        kernel.step_size = da.final_step_size

    draws = np.empty((n_draws, dim))
    lps = np.empty(n_draws)
    div = np.zeros(n_draws, dtype=bool)
    depth = np.zeros(n_draws, dtype=np.int64)
    nleap = np.zeros(n_draws, dtype=np.int64)
    accs = np.empty(n_draws)
    for i in range(n_draws):
        z, acc, d = kernel.transition(q, lp, grad)
        q, lp, grad = z.q, z.lp, z.grad
        draws[i], lps[i], div[i], depth[i], nleap[i], accs[i] = q, lp, kernel.divergent, d, kernel.n_leapfrog, acc
    return ChainResult(draws, lps, kernel.step_size, kernel.inv_metric.copy(), div, depth, nleap, accs, warm_div)


def _run_chain_args(args):
    return run_chain(*args)


def sample_chains(logp_grad, init, n_chains: int, n_warmup: int, n_draws: int, seed,
                  target_accept: float = 0.8, max_tree_depth: int = 10, workers: int = 1) -> list[ChainResult]:
    """Run independent chains with seeds spawned from ``seed``.

    With ``workers > 1`` chains go to a process pool; ``logp_grad`` and
    ``init`` must then be picklable.  Results do not depend on ``workers``.
    """
    seeds = np.random.SeedSequence(seed).spawn(n_chains)
    jobs = [(logp_grad, init, n_warmup, n_draws, s, target_accept, max_tree_depth) for s in seeds]
    if workers > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_chains)) as pool:
            return list(pool.map(_run_chain_args, jobs))
    out = []
    for c, job in enumerate(jobs):
        out.append(run_chain(*job))
        log.info("chain %d: step size %.3g, %d divergences, mean tree depth %.2f",
                 c, out[-1].step_size, int(out[-1].divergent.sum()), out[-1].tree_depth.mean())
    return out
