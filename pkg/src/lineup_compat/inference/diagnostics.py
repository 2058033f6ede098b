"""Convergence diagnostics and pairwise effect summaries."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core.io import fmt
from .posterior import PosteriorSamples


class ConvergenceWarning(UserWarning):
    pass


def split_rhat(samples) -> np.ndarray:
    """Split potential scale reduction factor per parameter.

    Each chain is cut into two halves (the middle draw is dropped for odd
    lengths) and the classic between/within variance ratio is computed on
    the halves.  A parameter whose within-half variance is zero gets
    ``+inf``.

    Parameters
    ----------
    samples : PosteriorSamples or array of shape (chains, draws[, params])
    """
    x = samples.draws if isinstance(samples, PosteriorSamples) else np.asarray(samples, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, :, None]
    C, N, _ = x.shape
    if C < 2 or N < 4:
        raise ValueError(f"need at least 2 chains of 4 draws, got {C} x {N}")
    half = N // 2
    halves = np.concatenate([x[:, :half], x[:, N - half:]], axis=0)
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    B = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * W + B / half
    out = np.full(W.shape, np.inf)
    ok = W > 0
    out[ok] = np.sqrt(var_plus[ok] / W[ok])
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} parameter(s) have zero within-chain variance; R-hat set to inf",
                      ConvergenceWarning, stacklevel=2)
    return out[0] if squeeze else out


@dataclass(frozen=True)
class EffectTable:
    """Per-team posterior means of each feature effect and their team median.

    ``lower``/``upper`` bound the central credible interval of the
    across-team median, computed draw by draw.
    """

    labels: tuple[str, ...]
    team_means: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    teams: tuple[str, ...]
    converged: bool
    level: float = 0.9

    def __len__(self):
        return len(self.labels)

    def order(self) -> np.ndarray:
        """Row order by descending median (stable)."""
        return np.argsort(-self.median, kind="stable")

    def sorted(self) -> "EffectTable":
        o = self.order()
        return EffectTable(tuple(self.labels[i] for i in o), self.team_means[:, o], self.median[o],
                           self.lower[o], self.upper[o], self.teams, self.converged, self.level)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["pair", *(f"mean_{t}" for t in self.teams), "median",
                        f"median_q{50 - 50 * self.level:g}", f"median_q{50 + 50 * self.level:g}", "converged"])
            for f, label in enumerate(self.labels):
                w.writerow([label, *(fmt(v) for v in self.team_means[:, f]), fmt(self.median[f]),
                            fmt(self.lower[f]), fmt(self.upper[f]), int(self.converged)])

    @classmethod
    def read_csv(cls, path) -> "EffectTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        teams = tuple(h[len("mean_"):] for h in header if h.startswith("mean_"))
        T = len(teams)
        means = np.array([[float(v) for v in r[1:1 + T]] for r in body]).reshape(len(body), T).T
        level = (float(header[T + 3][len("median_q"):]) - 50) / 50
        return cls(tuple(r[0] for r in body), means, np.array([float(r[T + 1]) for r in body]),
                   np.array([float(r[T + 2]) for r in body]), np.array([float(r[T + 3]) for r in body]),
                   teams, all(r[-1] == "1" for r in body), level)


def effect_table(samples: PosteriorSamples, pair_labels: Sequence[str], teams: Sequence[str] | None = None,
                 converged: bool = True, level: float = 0.9) -> EffectTable:
    """Summarise beta draws into the team-median effect table.

    Non-converged fits still produce a table, with ``converged=False`` and
    a warning.
    """
    beta = samples.beta()
    C, N, T, F = beta.shape
    if len(pair_labels) != F:
        raise ValueError(f"{len(pair_labels)} labels for {F} features")
    if not converged:
        warnings.warn("effect table built from a fit that did not converge", ConvergenceWarning, stacklevel=2)
    team_means = beta.mean(axis=(0, 1))
    per_draw = np.median(beta.reshape(C * N, T, F), axis=1)
    tail = 50 * (1 - level)
    lo, hi = np.percentile(per_draw, [tail, 100 - tail], axis=0)
    teams = tuple(teams) if teams is not None else tuple(str(t) for t in range(T))
    return EffectTable(tuple(pair_labels), team_means, np.median(team_means, axis=0), lo, hi, teams,
                       bool(converged), level)


def beta_interval_coverage(samples: PosteriorSamples, true_beta, level: float = 0.9) -> float:
    """Fraction of true per-team effects inside their central posterior intervals."""
    beta = samples.beta()
    flat = beta.reshape(-1, *beta.shape[2:])
    tail = 50 * (1 - level)
    lo, hi = np.percentile(flat, [tail, 100 - tail], axis=0)
    true_beta = np.asarray(true_beta, dtype=float)
    return float(np.mean((true_beta >= lo) & (true_beta <= hi)))


def effective_sample_size(x) -> np.ndarray:
    """Multi-chain effective sample size per parameter.

    Autocorrelations are averaged over chains and summed in pairs until a
    pair turns negative (initial positive sequence).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, :, None]
    C, N, P = x.shape
    out = np.empty(P)
    for j in range(P):
        chains = x[:, :, j] - x[:, :, j].mean(axis=1, keepdims=True)
        var_c = chains.var(axis=1)
        if np.any(var_c == 0):
            out[j] = np.nan
            continue
        m = 2 ** int(np.ceil(np.log2(2 * N)))
        spec = np.fft.rfft(chains, n=m, axis=1)
        acov = np.fft.irfft(spec * np.conj(spec), n=m, axis=1)[:, :N] / N
        W = np.mean(acov[:, 0] * N / (N - 1))
        means = x[:, :, j].mean(axis=1)
        var_plus = W * (N - 1) / N + (means.var(ddof=1) if C > 1 else 0.0)
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        tau = -1.0
        for k in range(0, N - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair < 0:
                break
            tau += 2 * pair
        out[j] = C * N / max(tau, 1.0 / np.log10(C * N))
    return out[0] if squeeze else out
