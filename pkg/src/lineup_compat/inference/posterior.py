"""Posterior draws container and the model-level sampling entry point."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from ..core.io import fmt
from ..core.schema import McmcConfig
from .model import HierarchicalModel, HierarchicalModelSpec, NonCenteredModel
from .nuts import SamplerError, sample_chains

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PosteriorSamples:
    """Post-warmup draws indexed by (chain, iteration, parameter)."""

    draws: np.ndarray
    names: tuple[str, ...]
    step_sizes: tuple[float, ...] = ()
    divergent: np.ndarray | None = None
    tree_depth: np.ndarray | None = None
    spec: HierarchicalModelSpec | None = None

    def __post_init__(self):
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise ValueError(f"draws shape {self.draws.shape} does not match {len(self.names)} names")
        if np.isnan(self.draws).any():
            raise ValueError("posterior draws contain NaN")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.names.index(name)]

    def beta(self) -> np.ndarray:
        """Draws of beta as (chain, iteration, team, feature)."""
        s = self.spec
        if s is None:
            raise ValueError("samples carry no model spec")
        i0 = s.n_teams
        b = self.draws[:, :, i0:i0 + s.n_teams * s.n_features]
        return b.reshape(self.n_chains, self.n_draws, s.n_teams, s.n_features)

    def alpha(self) -> np.ndarray:
        return self.draws[:, :, :self.spec.n_teams]

    def divergence_count(self) -> int:
        return 0 if self.divergent is None else int(self.divergent.sum())

    def to_csv(self, path):
        """Long format: one ``chain, iter, param, value`` row per scalar draw."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iter", "param", "value"])
            for c in range(self.n_chains):
                for i in range(self.n_draws):
                    for j, name in enumerate(self.names):
                        w.writerow([c, i, name, fmt(self.draws[c, i, j])])

    @classmethod
    def from_csv(cls, path, spec: HierarchicalModelSpec | None = None) -> "PosteriorSamples":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        names = tuple(dict.fromkeys(r["param"] for r in rows))
        C = 1 + max(int(r["chain"]) for r in rows)
        N = 1 + max(int(r["iter"]) for r in rows)
        draws = np.full((C, N, len(names)), np.nan)
        col = {n: j for j, n in enumerate(names)}
        for r in rows:
            draws[int(r["chain"]), int(r["iter"]), col[r["param"]]] = float(r["value"])
        return cls(draws, names, spec=spec)


def nuts_sample(spec: HierarchicalModelSpec, X, y, team_index, mcmc: McmcConfig,
                seed: int | None = None, workers: int = 1, noncentered: bool = True) -> PosteriorSamples:
    """Fit the hierarchical model; warmup draws are discarded.

    With ``noncentered`` (default) the sampler moves in standardised team
    deviations and draws are mapped back, so the returned ``beta`` block
    is always on the original scale.

    Raises
    ------
    SamplerError
        If more than ``mcmc.max_divergent_fraction`` of post-warmup
        transitions diverge.  The exception's ``report`` has the counts.
    """
    if mcmc.chains < 2:
        raise ValueError("need at least 2 chains")
    seed = mcmc.seed if seed is None else seed
    if seed is None:
        raise ValueError("a sampler seed is required")
    model = HierarchicalModel(spec, X, y, team_index)
    target = NonCenteredModel(model) if noncentered else model
    chains = sample_chains(target, target.initial_point, mcmc.chains, mcmc.warmup, mcmc.draws, seed,
                           mcmc.target_accept, mcmc.max_tree_depth, workers)
    draws = np.stack([c.draws for c in chains])
    if noncentered:
        draws = np.apply_along_axis(target.to_centered, 2, draws)
    divergent = np.stack([c.divergent for c in chains])
    samples = PosteriorSamples(
        draws, tuple(spec.param_names()), tuple(c.step_size for c in chains), divergent,
        np.stack([c.tree_depth for c in chains]), spec,
    )
    frac = divergent.mean()
    if frac > mcmc.max_divergent_fraction:
        raise SamplerError(
            f"{divergent.sum()} of {divergent.size} post-warmup transitions diverged "
            f"({frac:.1%} > {mcmc.max_divergent_fraction:.0%})",
            {"divergences": int(divergent.sum()), "transitions": int(divergent.size),
             "step_sizes": list(samples.step_sizes)},
        )
    return samples
