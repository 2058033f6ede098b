"""Parametric synthetic data with known ground truth.

Players belong to latent archetypes.  An archetype fixes where a player
shoots from, how fast they arrive, how long they hold the ball, and which
playtypes dominate their possessions.  Lineup offensive ratings are drawn
from the hierarchical linear model using crisp archetype pair counts, so
the downstream fit has a well-defined recovery target.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import write_lineups, write_playtypes, write_segments
from .schema import (
    FRAME_RATE_HZ,
    PLAYTYPES,
    WINDOW_SECONDS,
    ConfigError,
    LineupRecord,
    PlaytypeProfile,
    ShotSegment,
    SynthSpec,
    lineup_sort_key,
)


@dataclass
class SyntheticDataset:
    segments: list[ShotSegment]
    profiles: list[PlaytypeProfile]
    lineups: list[LineupRecord]
    truth: dict = field(default_factory=dict)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "segments.csv", out / "playtypes.csv", out / "lineups.csv", out / "truth.json"]
        write_segments(paths[0], self.segments)
        write_playtypes(paths[1], self.profiles)
        write_lineups(paths[2], self.lineups)
        paths[3].write_text(json.dumps(self.truth, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def pair_index(c: int) -> list[tuple[int, int]]:
    """Unordered cluster pairs ``(k, k2)`` with ``k <= k2`` in lexicographic order."""
    return [(k, k2) for k in range(c) for k2 in range(k, c)]


def _crisp_pair_counts(labels, c):
    index = {pair: n for n, pair in enumerate(pair_index(c))}
    x = np.zeros(len(index))
    for a, b in itertools.combinations(labels, 2):
        x[index[(min(a, b), max(a, b))]] += 1.0
    return x


def _archetype_templates(K: int):
    frac = np.arange(K) / (K - 1)
    radius = 1.0 + 7.0 * frac
    angle = np.where(np.arange(K) % 2 == 0, 1.0, -1.0) * (0.15 + 1.1 * frac)
    speed = 0.5 + 2.5 * frac[::-1]
    hold = 0.5 + 1.8 * ((np.arange(K) * 2) % K) / (K - 1)
    weights = np.ones((K, len(PLAYTYPES)))
    for k in range(K):
        for bump, idx in zip((14.0, 8.0, 4.0), ((2 * k) % 11, (2 * k + 1) % 11, (5 * k + 3) % 11)):
            weights[k, idx] += bump
    ast = 5.0 + 30.0 * frac
    usg = 12.0 + 18.0 * frac[::-1]
    return radius, angle, speed, hold, weights, ast, usg


def synthesize_dataset(spec: SynthSpec, seed: int, rim_xy=(1.575, 7.62),
                       horizon: float = 300.0, min_minutes: float = 50.0) -> SyntheticDataset:
    """Generate segments, playtype profiles, lineups and ground truth.

    Output is a pure function of ``(spec, seed)`` plus the rim position and
    the lineup filtering constants recorded in the truth design.
    """
    K = int(spec.n_archetypes)
    if K < 2:
        raise ConfigError(f"need at least 2 archetypes, got {K}")
    if spec.n_players < spec.n_teams * 5:
        raise ConfigError("too few players to fill five-man rosters for every team")
    if spec.planted_pair is not None and not (0 <= min(spec.planted_pair) and max(spec.planted_pair) < K):
        raise ConfigError(f"planted_pair {spec.planted_pair} out of range for {K} archetypes")
    rng = np.random.default_rng(seed)
    rim = np.asarray(rim_xy, dtype=float)
    radius, angle, speed, hold, weights, ast, usg = _archetype_templates(K)

    season = spec.season
    players = [f"P{i:03d}_{season}" for i in range(spec.n_players)]
    labels = np.arange(spec.n_players) % K

    # shots
    dt = 1.0 / FRAME_RATE_HZ
    n_frames = int(round(WINDOW_SECONDS * FRAME_RATE_HZ)) + 1
    segments = []
    for pid, k in zip(players, labels):
        p_radius = radius[k] + rng.normal(0, spec.player_spread)
        p_angle = angle[k] + rng.normal(0, 0.15)
        p_speed = speed[k] * np.exp(rng.normal(0, 0.1))
        p_hold = hold[k] * np.exp(rng.normal(0, 0.1))
        for s in range(spec.shots_per_player):
            r = max(abs(p_radius + rng.normal(0, spec.shot_spread)), 0.3)
            a = float(np.clip(p_angle + rng.normal(0, 0.25), -np.pi / 2, np.pi / 2))
            loc = rim + r * np.array([np.cos(a), np.sin(a)])
            phi = rng.uniform(0, 2 * np.pi)
            direction = np.array([np.cos(phi), np.sin(phi)])
            v = p_speed * np.exp(rng.normal(0, 0.15))
            h = float(np.clip(np.round(p_hold * np.exp(rng.normal(0, 0.2)) / dt) * dt, dt, WINDOW_SECONDS))
            t0 = 10.0 * s
            t = np.round(t0 + dt * np.arange(n_frames), 10)
            shot_t = float(t[-1])
            xy = loc[None, :] - direction[None, :] * v * (shot_t - t)[:, None]
            xy = xy + rng.normal(0, spec.position_jitter, size=xy.shape)
            segments.append(ShotSegment(
                segment_id=f"{pid}-S{s:03d}", player_id=pid, timestamps=t, shooter_xy=xy,
                ball_received_time=float(np.round(shot_t - h, 10)), shot_time=shot_t,
                rim_xy=tuple(rim.tolist()), made_shot=bool(rng.random() < 0.45),
                is_three=bool(np.linalg.norm(xy[-1] - rim) > 6.75),
            ))

    # playtypes
    profiles = []
    for pid, k in zip(players, labels):
        pct = 100.0 * rng.dirichlet(80.0 * weights[k] / weights[k].sum())
        missing = np.flatnonzero(rng.random(len(PLAYTYPES)) < spec.missing_playtype_rate)[:3]
        values = {name: (None if j in missing else float(pct[j])) for j, name in enumerate(PLAYTYPES)}
        profiles.append(PlaytypeProfile(
            player_id=pid, season=season, playtype_pct=values,
            ast_pct=float(np.clip(ast[k] + rng.normal(0, 2.0), 0, 100)),
            usg_pct=float(np.clip(usg[k] + rng.normal(0, 2.0), 0, 100)),
            games_played=int(rng.integers(25, 83)),
            minutes_per_game=float(np.round(rng.uniform(12, 36), 1)),
        ))

    # lineups from the hierarchical model
    pairs = pair_index(K)
    F = len(pairs)
    mu_beta = np.clip(rng.normal(0, spec.base_effect_sd, F), -abs(spec.planted_effect) / 2,
                      abs(spec.planted_effect) / 2)
    planted_index = None
    if spec.planted_pair is not None:
        planted_index = pairs.index(tuple(sorted(spec.planted_pair)))
        mu_beta[planted_index] = spec.planted_effect
    teams = [f"T{t:02d}" for t in range(spec.n_teams)]
    alpha = spec.mu_alpha + spec.alpha_sd * rng.normal(size=spec.n_teams)
    beta = mu_beta[None, :] + spec.sigma_beta * rng.normal(size=(spec.n_teams, F))
    team_offrtg = alpha + 10.0 * mu_beta.mean()
    order = rng.permutation(spec.n_players)
    rosters = [sorted(order[t::spec.n_teams].tolist()) for t in range(spec.n_teams)]
    lineups = []
    lo, hi = spec.minutes_range
    for t, roster in enumerate(rosters):
        seen = set()
        attempts = 0
        while len(seen) < spec.lineups_per_team and attempts < 50 * spec.lineups_per_team:
            attempts += 1
            five = tuple(sorted(rng.choice(roster, size=5, replace=False).tolist()))
            if five in seen:
                continue
            seen.add(five)
            x = _crisp_pair_counts(labels[list(five)], K)
            y_adj = alpha[t] + x @ beta[t] + spec.noise_sd * rng.normal()
            minutes = float(np.round(rng.uniform(lo, hi), 1))
            w = min(minutes / horizon, 1.0)
            raw = (y_adj - team_offrtg[t] * (1.0 - w)) / w
            lineups.append(LineupRecord(
                team=teams[t], season=season, player_ids=tuple(players[i] for i in five),
                minutes=minutes, offrtg=float(raw), team_offrtg=float(team_offrtg[t]),
            ))

    label_of = dict(zip(players, labels.tolist()))
    kept = sorted((lu for lu in lineups if lu.minutes > min_minutes), key=lineup_sort_key)
    design_x, design_y, design_t = [], [], []
    for lu in kept:
        t = teams.index(lu.team)
        x = _crisp_pair_counts([label_of[p] for p in lu.player_ids], K)
        w = min(lu.minutes / horizon, 1.0)
        design_x.append(x.tolist())
        design_y.append(float(lu.offrtg * w + lu.team_offrtg * (1.0 - w)))
        design_t.append(t)

    truth = {
        "seed": int(seed),
        "n_archetypes": K,
        "labels": label_of,
        "pairs": [list(p) for p in pairs],
        "mu_beta": mu_beta.tolist(),
        "beta": beta.tolist(),
        "alpha": alpha.tolist(),
        "teams": teams,
        "planted_pair": None if spec.planted_pair is None else sorted(spec.planted_pair),
        "planted_index": planted_index,
        "noise_sd": spec.noise_sd,
        "design": {
            "keys": [lu.key for lu in kept],
            "team_index": design_t,
            "X": design_x,
            "y": design_y,
        },
    }
    return SyntheticDataset(segments, profiles, lineups, truth)
