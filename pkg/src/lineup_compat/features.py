"""Shot features, standardisation + PCA, and playtype role features."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core.io import fmt
from .core.schema import MERGED_PLAYTYPES, PLAYTYPES, PlaytypeProfile, ShotSegment

RIM_LAGS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
FEATURE_NAMES = (
    "x_shot", "y_shot", "x_1s_before", "y_1s_before", "x_reception", "y_reception",
    *(f"rim_dist_{lag:.1f}s" for lag in RIM_LAGS),
    "rim_dist_reception", "dist_with_ball", "speed_shot", "hold_time",
)
N_FEATURES = len(FEATURE_NAMES)
# only the raw court coordinates are z-scored; distances, speed and time keep their units
COORDINATE_COLUMNS = (0, 1, 2, 3, 4, 5)


class FeatureExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class ShotFeatureVector:
    shooter_xy_at_shot: tuple[float, float]
    shooter_xy_1s_before: tuple[float, float]
    xy_at_reception: tuple[float, float]
    rim_distance_at: tuple[float, ...]
    rim_distance_at_reception: float
    distance_traveled_with_ball: float
    speed_at_shot: float
    ball_hold_time: float

    def to_array(self) -> np.ndarray:
        return np.array([
            *self.shooter_xy_at_shot, *self.shooter_xy_1s_before, *self.xy_at_reception,
            *self.rim_distance_at, self.rim_distance_at_reception,
            self.distance_traveled_with_ball, self.speed_at_shot, self.ball_hold_time,
        ])


def _position(seg: ShotSegment, time: float, what: str) -> np.ndarray:
    t = seg.timestamps
    if time < t[0] - 1e-9 or time > t[-1] + 1e-9:
        raise FeatureExtractionError(
            f"segment {seg.segment_id}: no coverage for {what} (t={time:.3f}, data {t[0]:.3f}..{t[-1]:.3f})"
        )
    time = min(max(time, t[0]), t[-1])
    return np.array([np.interp(time, t, seg.shooter_xy[:, 0]), np.interp(time, t, seg.shooter_xy[:, 1])])


def _speed_at(seg: ShotSegment, idx: int) -> float:
    t, xy = seg.timestamps, seg.shooter_xy
    if 0 < idx < len(t) - 1:
        vel = (xy[idx + 1] - xy[idx - 1]) / (t[idx + 1] - t[idx - 1])
    elif idx >= 2:
        # segment ends at release: derivative of the quadratic through the last three frames
        t0, t1, t2 = t[idx - 2], t[idx - 1], t[idx]
        vel = (xy[idx - 2] * (t2 - t1) / ((t0 - t1) * (t0 - t2))
               + xy[idx - 1] * (t2 - t0) / ((t1 - t0) * (t1 - t2))
               + xy[idx] * (2 * t2 - t0 - t1) / ((t2 - t0) * (t2 - t1)))
    else:
        raise FeatureExtractionError(f"segment {seg.segment_id}: not enough frames around the shot for speed")
    return float(np.hypot(*vel))


def extract_shot_features(seg: ShotSegment) -> ShotFeatureVector:
    """The 17 hand-crafted features of one shot.

    Lagged positions are linearly interpolated between frames.  Speed at
    the shot is a centred difference when a frame follows the release and a
    second-order backward difference otherwise.
    """
    ts = seg.shot_time
    tr = seg.ball_received_time
    rim = np.asarray(seg.rim_xy, dtype=float)
    at_shot = _position(seg, ts, "shot")
    before = _position(seg, ts - 1.0, "lag 1.0s")
    at_rec = _position(seg, tr, "ball reception")
    rim_d = tuple(float(np.linalg.norm(_position(seg, ts - lag, f"lag {lag:.1f}s") - rim)) for lag in RIM_LAGS)

    t = seg.timestamps
    inner = seg.shooter_xy[(t > tr + 1e-9) & (t < ts - 1e-9)]
    path = np.vstack([at_rec, inner, at_shot])
    traveled = float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))

    idx = int(np.argmin(np.abs(t - ts)))
    return ShotFeatureVector(
        shooter_xy_at_shot=tuple(at_shot.tolist()),
        shooter_xy_1s_before=tuple(before.tolist()),
        xy_at_reception=tuple(at_rec.tolist()),
        rim_distance_at=rim_d,
        rim_distance_at_reception=float(np.linalg.norm(at_rec - rim)),
        distance_traveled_with_ball=traveled,
        speed_at_shot=_speed_at(seg, idx),
        ball_hold_time=float(ts - tr),
    )


def feature_matrix(segments: Sequence[ShotSegment]) -> tuple[list[str], list[str], np.ndarray]:
    """Stack features for many segments: ``(player_ids, segment_ids, X)``."""
    X = np.array([extract_shot_features(s).to_array() for s in segments]).reshape(-1, N_FEATURES)
    return [s.player_id for s in segments], [s.segment_id for s in segments], X


@dataclass(frozen=True)
class PcaModel:
    column_means: np.ndarray
    column_scales: np.ndarray
    loadings: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    total_variance: float

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "column_means": self.column_means.tolist(),
            "column_scales": self.column_scales.tolist(),
            "loadings": self.loadings.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "total_variance": self.total_variance,
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        d = json.loads(text)
        return cls(np.array(d["column_means"]), np.array(d["column_scales"]),
                   np.array(d["loadings"]).reshape(len(d["column_means"]), -1),
                   np.array(d["explained_variance"]), np.array(d["explained_variance_ratio"]),
                   float(d["total_variance"]))


def fit_standardize_pca(features, variance_target: float = 0.99,
                        standardize_columns: Iterable[int] = COORDINATE_COLUMNS) -> PcaModel:
    """Z-score the coordinate columns, centre everything, and keep the
    smallest number of principal axes reaching ``variance_target``.

    Axes come from the eigendecomposition of the sample covariance; each
    loading column is signed so that its largest-magnitude entry is
    positive.
    """
    X = np.asarray(features, dtype=float)
    n, p = X.shape
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} rows for PCA, got {n}")
    means = X.mean(axis=0)
    scales = np.ones(p)
    for j in standardize_columns:
        sd = X[:, j].std()
        if sd <= 1e-12 * max(1.0, abs(means[j])):
            raise ValueError(f"column {j} ({FEATURE_NAMES[j] if p == N_FEATURES else j}) has zero variance")
        scales[j] = sd
    Z = (X - means) / scales
    cov = Z.T @ Z / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = float(evals.sum())
    ratio = evals / total
    cum = np.cumsum(ratio)
    d = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
    d = min(d, p)
    loadings = evecs[:, :d].copy()
    for k in range(d):
        j = np.argmax(np.abs(loadings[:, k]))
        if loadings[j, k] < 0:
            loadings[:, k] *= -1
    return PcaModel(means, scales, loadings, evals[:d].copy(), ratio[:d].copy(), total)


def pca_transform(model: PcaModel, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[1] != model.column_means.size:
        raise ValueError(f"expected {model.column_means.size} columns, got {X.shape[1]}")
    return ((X - model.column_means) / model.column_scales) @ model.loadings


def pca_inverse(model: PcaModel, scores) -> np.ndarray:
    return np.atleast_2d(scores) @ model.loadings.T * model.column_scales + model.column_means


@dataclass(frozen=True)
class RoleFeatureVector:
    playtype_pct: np.ndarray
    ast_pct: float
    usg_pct: float

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.playtype_pct, [self.ast_pct, self.usg_pct]])


ROLE_FEATURE_NAMES = (*MERGED_PLAYTYPES, "ast_pct", "usg_pct")


def impute_playtypes(pct: dict[str, float | None]) -> dict[str, float]:
    """Split the unaccounted percentage equally over the missing playtypes."""
    known = {k: v for k, v in pct.items() if v is not None}
    missing = [k for k in PLAYTYPES if pct.get(k) is None]
    residual = 100.0 - sum(known.values())
    if residual < -1e-6:
        raise ValueError(f"known playtype percentages sum to {100 - residual:.6f} > 100")
    out = dict(known)
    if missing:
        share = max(residual, 0.0) / len(missing)
        for k in missing:
            out[k] = share
    return out


def merge_playtypes(pct: dict[str, float]) -> np.ndarray:
    merged = dict(pct)
    merged["off_screen_hand_off"] = merged.pop("off_screen") + merged.pop("hand_off")
    return np.array([merged[k] for k in MERGED_PLAYTYPES])


def build_role_features(profiles: Sequence[PlaytypeProfile], min_games: int = 20,
                        max_missing_fraction: float = 0.5) -> list[tuple[str, RoleFeatureVector]]:
    out = []
    for prof in profiles:
        n_missing = sum(prof.playtype_pct.get(k) is None for k in PLAYTYPES)
        if n_missing / len(PLAYTYPES) > max_missing_fraction or prof.games_played < min_games:
            continue
        try:
            filled = impute_playtypes(prof.playtype_pct)
        except ValueError as exc:
            raise ValueError(f"player {prof.player_id}: {exc}") from None
        out.append((prof.player_id, RoleFeatureVector(merge_playtypes(filled), prof.ast_pct, prof.usg_pct)))
    return out


def write_feature_csv(path, player_ids, segment_ids, X):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", "segment_id", *FEATURE_NAMES])
        for pid, sid, row in zip(player_ids, segment_ids, X):
            w.writerow([pid, sid, *(fmt(v) for v in row)])


def read_feature_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    X = np.array([[float(v) for v in r[2:]] for r in body]).reshape(-1, N_FEATURES)
    return [r[0] for r in body], [r[1] for r in body], X


def write_role_csv(path, rows: Sequence[tuple[str, RoleFeatureVector]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", *ROLE_FEATURE_NAMES])
        for pid, vec in rows:
            w.writerow([pid, *(fmt(v) for v in vec.to_array())])
