"""Lineup composition features, response adjustment and efficiency stats."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .clustering import HardAssignment, MembershipMatrix
from .core.io import fmt
from .core.schema import LineupRecord, lineup_sort_key
from .core.synth import pair_index


class UndefinedStatError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class MergeMap:
    """Surjective relabelling of source clusters onto named merged groups."""

    mapping: Mapping[str, str]
    targets: tuple[str, ...]

    def __post_init__(self):
        stray = sorted(set(self.mapping.values()) - set(self.targets))
        if stray:
            raise ValueError(f"merge targets {stray} not listed in target order")

    def index_of(self, label) -> int:
        try:
            return self.targets.index(self.mapping[str(label)])
        except KeyError:
            raise KeyError(f"cluster label {label!r} has no entry in the merge map") from None

    def to_json(self) -> str:
        return json.dumps({"mapping": dict(self.mapping), "targets": list(self.targets)}, indent=1,
                          sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "MergeMap":
        if "mapping" in d:
            return cls(dict(d["mapping"]), tuple(d["targets"]))
        targets = tuple(dict.fromkeys(d.values()))
        return cls(dict(d), targets)

    @classmethod
    def identity(cls, c: int) -> "MergeMap":
        return cls({str(k): str(k) for k in range(c)}, tuple(str(k) for k in range(c)))


SHOOTING_STYLE_GROUPS = ("Close-range", "Mid-range", "All-rounder", "Ball-handler", "3point-shooter")

# Stretch Four (S4) is not named in the published grouping; it joins the three-point shooters
DEFAULT_SHOOTING_MERGE = MergeMap(
    {
        "CB": "Close-range",
        "MB": "Mid-range", "MA": "Mid-range", "MS": "Mid-range",
        "SA": "All-rounder", "OA": "All-rounder",
        "PH": "Ball-handler", "DH": "Ball-handler", "OS": "Ball-handler",
        "PS": "3point-shooter", "CS": "3point-shooter", "DS": "3point-shooter",
        "S4": "3point-shooter",
    },
    SHOOTING_STYLE_GROUPS,
)


def merge_clusters(a, m: MergeMap):
    """Relabel hard labels, or sum membership columns, through ``m``.

    Hard input (a :class:`HardAssignment` or a 1-d label sequence) returns
    integer indices into ``m.targets``; membership input (a
    :class:`MembershipMatrix` or an ``n x c`` array whose columns are source
    clusters ``0..c-1``) returns the ``n x len(m.targets)`` summed matrix.
    """
    if isinstance(a, HardAssignment):
        labels = np.array([m.index_of(lab) for lab in a.labels], dtype=np.int64)
        return HardAssignment(labels, len(m.targets))
    if isinstance(a, MembershipMatrix):
        return MembershipMatrix(merge_clusters(a.u, m), a.centroids, a.objective_history, a.n_iter,
                                a.converged)
    arr = np.asarray(a)
    if arr.ndim == 2 and arr.dtype.kind == "f":
        out = np.zeros((arr.shape[0], len(m.targets)))
        for k in range(arr.shape[1]):
            out[:, m.index_of(k)] += arr[:, k]
        return out
    return np.array([m.index_of(lab) for lab in arr.ravel()], dtype=np.int64)


def n_combination_features(c: int) -> int:
    """Number of unordered cluster pairs with repetition, ``C(c + 1, 2)``."""
    return c * (c + 1) // 2


def count_features_5(labels, c: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size != 5:
        raise ValueError(f"lineup has {labels.size} labels, need 5")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    return np.bincount(labels, minlength=c).astype(float)


def combo_features_2(memberships, c: int | None = None) -> np.ndarray:
    """Soft count of cluster pairs over the ten player pairs of a lineup.

    For players ``a != a'`` the ordered-pair sums give
    ``Q = S S^T - sum_a u_a u_a^T`` with ``S = sum_a u_a``; off-diagonal
    pairs take ``Q[k, k']`` and same-cluster pairs take ``Q[k, k] / 2``.
    Entries follow :func:`pair_index` order and always total 10.
    """
    U = np.asarray(memberships, dtype=float)
    if U.ndim != 2 or U.shape[0] != 5:
        raise ValueError(f"expected 5 membership rows, got shape {U.shape}")
    if c is not None and U.shape[1] != c:
        raise ValueError(f"expected {c} membership columns, got {U.shape[1]}")
    if np.any(np.abs(U.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("membership rows must each sum to 1")
    S = U.sum(axis=0)
    Q = np.outer(S, S) - U.T @ U
    c = U.shape[1]
    iu = np.triu_indices(c)
    out = Q[iu]
    diag = iu[0] == iu[1]
    out[diag] *= 0.5
    return out


def adjust_offrtg(lineup_offrtg: float, minutes: float, team_offrtg: float,
                  horizon: float = 300.0) -> float:
    """Shrink a lineup rating toward the team rating below ``horizon`` minutes."""
    if minutes < 0:
        raise ValueError(f"minutes must be non-negative, got {minutes}")
    if minutes >= horizon:
        return float(lineup_offrtg)
    w = minutes / horizon
    return float(lineup_offrtg * w + team_offrtg * (1.0 - w))


def true_shooting_pct(pts: float, fga: float, fta: float) -> float:
    denom = 2.0 * (fga + 0.44 * fta)
    if denom <= 0:
        raise UndefinedStatError("TS% undefined with no shot attempts")
    return pts / denom * 100.0


def points_per_possession(pts: float, fga: float, fta: float, to: float) -> float:
    denom = fga + 0.44 * fta + to
    if denom <= 0:
        raise UndefinedStatError("PPP undefined with no scoring opportunities")
    return pts / denom


@dataclass(frozen=True)
class Design:
    X: np.ndarray
    y: np.ndarray
    team_index: np.ndarray
    teams: tuple[str, ...]
    keys: tuple[str, ...]
    feature_names: tuple[str, ...]
    pair_labels: tuple[str, ...]
    records: tuple[LineupRecord, ...] = ()

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lineup_key", "team", "team_index", *self.feature_names, "y"])
            for key, t, row, yv in zip(self.keys, self.team_index, self.X, self.y):
                w.writerow([key, self.teams[t], int(t), *(fmt(v) for v in row), fmt(yv)])

    @classmethod
    def read_csv(cls, path, pair_labels=None) -> "Design":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        feats = tuple(header[3:-1])
        teams: dict[int, str] = {}
        for r in rows:
            teams[int(r[2])] = r[1]
        X = np.array([[float(v) for v in r[3:-1]] for r in rows]).reshape(len(rows), len(feats))
        return cls(
            X=X, y=np.array([float(r[-1]) for r in rows]),
            team_index=np.array([int(r[2]) for r in rows], dtype=np.int64),
            teams=tuple(teams[i] for i in range(len(teams))), keys=tuple(r[0] for r in rows),
            feature_names=feats, pair_labels=tuple(pair_labels) if pair_labels else feats,
        )


def _as_rows(clusters: Mapping[str, object], c: int):
    rows = {}
    for pid, v in clusters.items():
        arr = np.asarray(v)
        if arr.ndim == 0:
            row = np.zeros(c)
            row[int(arr)] = 1.0
        else:
            row = arr.astype(float)
        rows[pid] = row
    return rows


def build_design(lineups: Sequence[LineupRecord], clusters: Mapping[str, object], c: int,
                 mode: str = "combos2", min_minutes: float = 50.0, horizon: float = 300.0,
                 group_names: Sequence[str] | None = None) -> Design:
    """Assemble ``(X, y, team_index)`` for the lineup regressions.

    ``clusters`` maps player id to either a hard label or a membership row.
    Only lineups with more than ``min_minutes`` together are kept; ``y`` is
    the adjusted offensive rating.  Rows are ordered by (team, season, key).
    """
    if mode not in ("combos2", "counts5"):
        raise ValueError(f"unknown design mode {mode!r}")
    kept = sorted((lu for lu in lineups if lu.minutes > min_minutes), key=lineup_sort_key)
    unknown = sorted({p for lu in kept for p in lu.player_ids if p not in clusters})
    if unknown:
        raise KeyError(f"lineup players without cluster output: {', '.join(unknown)}")
    rows = _as_rows(clusters, c)
    names = [str(g) for g in group_names] if group_names is not None else [str(k) for k in range(c)]
    if mode == "combos2":
        pairs = pair_index(c)
        feature_names = tuple(f"combo_{k}_{k2}" for k, k2 in pairs)
        pair_labels = tuple(f"{names[k]} & {names[k2]}" for k, k2 in pairs)
    else:
        feature_names = tuple(f"count_{k}" for k in range(c))
        pair_labels = tuple(names)
    teams = tuple(sorted({lu.team for lu in kept}))
    X, y, t = [], [], []
    for lu in kept:
        U = np.vstack([rows[p] for p in lu.player_ids])
        X.append(combo_features_2(U, c) if mode == "combos2" else U.sum(axis=0))
        y.append(adjust_offrtg(lu.offrtg, lu.minutes, lu.team_offrtg, horizon))
        t.append(teams.index(lu.team))
    X = np.array(X).reshape(len(kept), len(feature_names))
    return Design(X, np.array(y), np.array(t, dtype=np.int64), teams, tuple(lu.key for lu in kept),
                  feature_names, pair_labels, tuple(kept))
