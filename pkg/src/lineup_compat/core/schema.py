"""Record types, pipeline configuration, and dataset validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

FRAME_RATE_HZ = 10.0
WINDOW_SECONDS = 3.0

# raw playtype columns as published; off_screen and hand_off are merged downstream
PLAYTYPES = (
    "pnr_ball_handler",
    "pnr_roll_man",
    "transition",
    "off_screen",
    "spot_up",
    "isolation",
    "hand_off",
    "cut",
    "putback",
    "post_up",
    "misc",
)
MERGED_PLAYTYPES = (
    "pnr_ball_handler",
    "pnr_roll_man",
    "transition",
    "off_screen_hand_off",
    "spot_up",
    "isolation",
    "cut",
    "putback",
    "post_up",
    "misc",
)


class ConfigError(ValueError):
    """Invalid or unreadable pipeline configuration."""


class ParseError(ValueError):
    """Input file could not be parsed; message carries a file:line locator."""


@dataclass(frozen=True)
class ShotSegment:
    """Shooter trajectory for the window leading up to one shot.

    ``timestamps`` are seconds; ``shot_time`` is the release frame and must
    be one of the timestamps.  ``rim_xy`` is fixed for a dataset because
    attacking directions are unified upstream.
    """

    segment_id: str
    player_id: str
    timestamps: np.ndarray
    shooter_xy: np.ndarray
    ball_received_time: float
    shot_time: float
    rim_xy: tuple[float, float]
    made_shot: bool
    is_three: bool

    def __post_init__(self):
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=float))
        object.__setattr__(self, "shooter_xy", np.asarray(self.shooter_xy, dtype=float))


@dataclass(frozen=True)
class PlaytypeProfile:
    """One player-season of playtype frequencies.

    ``playtype_pct`` is keyed by :data:`PLAYTYPES`; ``None`` marks a missing
    value to be imputed.
    """

    player_id: str
    season: str
    playtype_pct: dict[str, float | None]
    ast_pct: float
    usg_pct: float
    games_played: int
    minutes_per_game: float


@dataclass(frozen=True)
class LineupRecord:
    team: str
    season: str
    player_ids: tuple[str, ...]
    minutes: float
    offrtg: float
    team_offrtg: float

    @property
    def key(self) -> str:
        return "|".join(self.player_ids)


def lineup_sort_key(rec: LineupRecord):
    return (rec.team, rec.season, rec.key)


@dataclass
class McmcConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    seed: int | None = None
    target_accept: float = 0.8
    max_tree_depth: int = 10
    max_divergent_fraction: float = 0.1


@dataclass
class ModelConfig:
    alpha_sd: float = 10.0
    mu_beta_sd: float = 10.0
    sigma_beta_scale: float = 10.0
    epsilon_scale: float = 10.0
    sigma_beta_per_feature: bool = False


@dataclass
class SynthSpec:
    """Parameters of the synthetic generator.

    Each archetype carries a shot template (location, approach speed, ball
    hold time) and a playtype template.  Lineup responses come from the
    hierarchical linear model with crisp archetype pair counts as features.
    """

    n_archetypes: int = 3
    n_players: int = 60
    shots_per_player: int = 30
    n_teams: int = 6
    lineups_per_team: int = 40
    season: str = "2015-16"
    mu_alpha: float = 105.0
    alpha_sd: float = 3.0
    base_effect_sd: float = 0.3
    planted_pair: tuple[int, int] | None = (0, 1)
    planted_effect: float = 2.0
    sigma_beta: float = 0.1
    noise_sd: float = 2.0
    minutes_range: tuple[float, float] = (30.0, 500.0)
    missing_playtype_rate: float = 0.1
    position_jitter: float = 0.02
    player_spread: float = 0.35
    shot_spread: float = 0.45


@dataclass
class PipelineConfig:
    seed: int = 0
    pca_variance_target: float = 0.99
    min_shots_per_player: int = 30
    wasserstein_p: float = 1.0
    n_shot_clusters: int = 13
    n_role_clusters: int = 10
    fuzzifier_q: float = 1.2
    fcm_tol: float = 1e-8
    fcm_max_iter: int = 500
    role_zscore: bool = False
    min_games: int = 20
    max_missing_fraction: float = 0.5
    silhouette_k_min: int = 2
    silhouette_k_max: int = 20
    min_lineup_minutes: float = 50.0
    adjust_horizon_minutes: float = 300.0
    mu_alpha: float = 105.0
    rhat_threshold: float = 1.1
    rim_xy: tuple[float, float] = (1.575, 7.62)
    fit_clusters: str = "roles"
    design_mode: str = "combos2"
    merge_map: dict[str, str] | None = None
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def validate(self):
        if not 0 < self.pca_variance_target <= 1:
            raise ConfigError("pca_variance_target must be in (0, 1]")
        if self.wasserstein_p < 1:
            raise ConfigError("wasserstein_p must be >= 1")
        if self.fuzzifier_q <= 1:
            raise ConfigError("fuzzifier_q must be > 1")
        if self.n_shot_clusters < 1 or self.n_role_clusters < 2:
            raise ConfigError("cluster counts out of range")
        if not 2 <= self.silhouette_k_min <= self.silhouette_k_max:
            raise ConfigError("silhouette k range must satisfy 2 <= k_min <= k_max")
        if self.fit_clusters not in ("shots", "roles"):
            raise ConfigError("fit_clusters must be 'shots' or 'roles'")
        if self.design_mode not in ("combos2", "counts5"):
            raise ConfigError("design_mode must be 'combos2' or 'counts5'")
        if self.mcmc.chains < 2:
            raise ConfigError("mcmc.chains must be >= 2")
        for name in ("alpha_sd", "mu_beta_sd", "sigma_beta_scale", "epsilon_scale"):
            if getattr(self.model, name) <= 0:
                raise ConfigError(f"model.{name} must be > 0")
        if self.synth.n_archetypes < 2:
            raise ConfigError("synth.n_archetypes must be >= 2")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


_NESTED = {"mcmc": McmcConfig, "model": ModelConfig, "synth": SynthSpec}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if cls is PipelineConfig and key in _NESTED:
            value = _build(_NESTED[key], value, f"{where}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "config").validate()


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return config_from_dict(data)


@dataclass(frozen=True)
class Violation:
    record: str
    index: int
    rule: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def add(self, record, index, rule, message):
        self.violations.append(Violation(record, index, rule, message))


def _check_segment(report: ValidationReport, i: int, seg: ShotSegment):
    t = seg.timestamps
    xy = seg.shooter_xy
    if t.ndim != 1 or xy.shape != (t.size, 2):
        report.add("segment", i, "segment.shape", f"expected (T, 2) coordinates, got {xy.shape}")
        return
    if t.size < 2 or np.any(np.diff(t) <= 0):
        report.add("segment", i, "segment.monotonic", "timestamps must be strictly increasing")
        return
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(xy)) and np.all(np.isfinite(seg.rim_xy))):
        report.add("segment", i, "segment.finite", "non-finite coordinate or timestamp")
        return
    frame = 1.0 / FRAME_RATE_HZ
    if np.max(np.diff(t)) > 2 * frame + 1e-9:
        report.add("segment", i, "segment.sample_rate", "gap longer than one dropped 10 Hz frame")
    if not np.any(np.isclose(t, seg.shot_time, atol=1e-9)):
        report.add("segment", i, "segment.shot_frame", "shot_time is not a sampled frame")
    span = seg.shot_time - t[0]
    if span < WINDOW_SECONDS - 1e-9:
        report.add("segment", i, "segment.min_span", f"span {span:.3f}s before the shot is below 3.0s")
    if not (t[0] - 1e-9 <= seg.ball_received_time <= seg.shot_time + 1e-9):
        report.add("segment", i, "segment.reception", "ball reception outside the segment")


def _check_profile(report: ValidationReport, i: int, prof: PlaytypeProfile, tol: float):
    keys = set(prof.playtype_pct)
    if keys != set(PLAYTYPES):
        report.add("profile", i, "profile.playtypes", f"playtype keys differ: {sorted(keys ^ set(PLAYTYPES))}")
        return
    known = [v for v in prof.playtype_pct.values() if v is not None]
    if any(not math.isfinite(v) or v < 0 or v > 100 for v in known):
        report.add("profile", i, "profile.pct_range", "playtype percentage outside [0, 100]")
    total = sum(known)
    if len(known) == len(PLAYTYPES):
        if abs(total - 100.0) > tol:
            report.add("profile", i, "profile.pct_sum", f"playtype percentages sum to {total}")
    elif total > 100.0 + tol:
        report.add("profile", i, "profile.pct_sum", f"known playtype percentages exceed 100 ({total})")
    for name in ("ast_pct", "usg_pct"):
        v = getattr(prof, name)
        if not (math.isfinite(v) and 0 <= v <= 100):
            report.add("profile", i, "profile.pct_range", f"{name}={v} outside [0, 100]")
    if prof.games_played < 0 or prof.minutes_per_game < 0:
        report.add("profile", i, "profile.counts", "negative games or minutes")


def _check_lineup(report: ValidationReport, i: int, lu: LineupRecord):
    if len(lu.player_ids) != 5:
        report.add("lineup", i, "lineup.player_count", f"{len(lu.player_ids)} players, need 5")
    elif len(set(lu.player_ids)) != 5:
        report.add("lineup", i, "lineup.distinct", "repeated player in lineup")
    if not (math.isfinite(lu.minutes) and lu.minutes > 0):
        report.add("lineup", i, "lineup.minutes", f"minutes={lu.minutes} must be > 0")
    if not math.isfinite(lu.offrtg):
        report.add("lineup", i, "lineup.offrtg", "offensive rating is not finite")
    if not math.isfinite(lu.team_offrtg):
        report.add("lineup", i, "lineup.team_offrtg", "team offensive rating is not finite")


def validate_dataset(segments: Sequence[ShotSegment] = (), profiles: Sequence[PlaytypeProfile] = (),
                     lineups: Sequence[LineupRecord] = (), pct_tol: float = 1e-6) -> ValidationReport:
    """Check every record invariant and collect all violations.

    The dataset is acceptable iff ``report.ok``.
    """
    report = ValidationReport()
    for i, seg in enumerate(segments):
        _check_segment(report, i, seg)
    for i, prof in enumerate(profiles):
        _check_profile(report, i, prof, pct_tol)
    for i, lu in enumerate(lineups):
        _check_lineup(report, i, lu)
    return report
