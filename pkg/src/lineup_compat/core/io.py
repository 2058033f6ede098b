"""CSV readers and writers for the three input tables."""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .schema import PLAYTYPES, LineupRecord, ParseError, PlaytypeProfile, ShotSegment

SEGMENT_COLUMNS = ("segment_id", "player_id", "t", "x", "y", "ball_held", "shot_frame", "is_three", "made")
PLAYTYPE_COLUMNS = ("player_id", "season", *PLAYTYPES, "ast_pct", "usg_pct", "games_played", "minutes_per_game")
LINEUP_COLUMNS = ("team", "season", "p1", "p2", "p3", "p4", "p5", "minutes", "offrtg", "team_offrtg")


def fmt(v) -> str:
    """Shortest round-tripping text for a number."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _rows(path, expected: Sequence[str]):
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in expected if c not in header]
        if missing:
            raise ParseError(f"{path}:1: missing column(s) {', '.join(missing)}")
        for row in reader:
            yield reader.line_num, row


def _num(row, key, path, line, cast=float):
    try:
        value = cast(row[key])
    except (TypeError, ValueError):
        raise ParseError(f"{path}:{line}: column {key!r} is not a number ({row[key]!r})") from None
    return value


def _flag(row, key, path, line) -> bool:
    v = row[key].strip().lower()
    if v in ("1", "true"):
        return True
    if v in ("0", "false", ""):
        return False
    raise ParseError(f"{path}:{line}: column {key!r} is not a 0/1 flag ({row[key]!r})")


def read_segments(path, rim_xy) -> list[ShotSegment]:
    """Read long-format tracking rows into one :class:`ShotSegment` per segment.

    The shot frame is the row flagged ``shot_frame``; reception is the start
    of the contiguous ``ball_held`` run that ends at the shot frame.
    """
    groups: "OrderedDict[str, list]" = OrderedDict()
    for line, row in _rows(path, SEGMENT_COLUMNS):
        sid = row["segment_id"]
        groups.setdefault(sid, []).append((
            line, row["player_id"], _num(row, "t", path, line), _num(row, "x", path, line),
            _num(row, "y", path, line), _flag(row, "ball_held", path, line),
            _flag(row, "shot_frame", path, line), _flag(row, "is_three", path, line),
            _flag(row, "made", path, line),
        ))
    segments = []
    for sid, rows in groups.items():
        first_line = rows[0][0]
        players = {r[1] for r in rows}
        if len(players) != 1:
            raise ParseError(f"{path}:{first_line}: segment {sid} mixes players {sorted(players)}")
        rows.sort(key=lambda r: r[2])
        shot_idx = [k for k, r in enumerate(rows) if r[6]]
        if len(shot_idx) != 1:
            raise ParseError(f"{path}:{first_line}: segment {sid} needs exactly one shot_frame row")
        s = shot_idx[0]
        if not rows[s][5]:
            raise ParseError(f"{path}:{rows[s][0]}: segment {sid} shooter not holding the ball at the shot")
        r0 = s
        while r0 > 0 and rows[r0 - 1][5]:
            r0 -= 1
        t = np.array([r[2] for r in rows])
        xy = np.array([[r[3], r[4]] for r in rows])
        segments.append(ShotSegment(
            segment_id=sid, player_id=rows[0][1], timestamps=t, shooter_xy=xy,
            ball_received_time=float(t[r0]), shot_time=float(t[s]), rim_xy=tuple(rim_xy),
            made_shot=rows[s][8], is_three=rows[s][7],
        ))
    return segments


def write_segments(path, segments: Iterable[ShotSegment]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SEGMENT_COLUMNS)
        for seg in segments:
            for t, (x, y) in zip(seg.timestamps, seg.shooter_xy):
                held = seg.ball_received_time - 1e-9 <= t <= seg.shot_time + 1e-9
                shot = abs(t - seg.shot_time) < 1e-9
                w.writerow([seg.segment_id, seg.player_id, fmt(t), fmt(x), fmt(y), fmt(held),
                            fmt(shot), fmt(seg.is_three), fmt(seg.made_shot)])


def read_playtypes(path) -> list[PlaytypeProfile]:
    out = []
    for line, row in _rows(path, PLAYTYPE_COLUMNS):
        pct = {}
        for key in PLAYTYPES:
            cell = row[key].strip()
            pct[key] = None if cell == "" else _num(row, key, path, line)
        out.append(PlaytypeProfile(
            player_id=row["player_id"], season=row["season"], playtype_pct=pct,
            ast_pct=_num(row, "ast_pct", path, line), usg_pct=_num(row, "usg_pct", path, line),
            games_played=_num(row, "games_played", path, line, int),
            minutes_per_game=_num(row, "minutes_per_game", path, line),
        ))
    return out


def write_playtypes(path, profiles: Iterable[PlaytypeProfile]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PLAYTYPE_COLUMNS)
        for p in profiles:
            cells = ["" if p.playtype_pct[k] is None else fmt(p.playtype_pct[k]) for k in PLAYTYPES]
            w.writerow([p.player_id, p.season, *cells, fmt(p.ast_pct), fmt(p.usg_pct),
                        fmt(int(p.games_played)), fmt(p.minutes_per_game)])


def read_lineups(path) -> list[LineupRecord]:
    out = []
    for line, row in _rows(path, LINEUP_COLUMNS):
        players = tuple(row[f"p{k}"] for k in range(1, 6) if row[f"p{k}"].strip() != "")
        minutes = _num(row, "minutes", path, line)
        if not math.isfinite(minutes):
            raise ParseError(f"{path}:{line}: minutes is not finite")
        out.append(LineupRecord(
            team=row["team"], season=row["season"], player_ids=players, minutes=minutes,
            offrtg=_num(row, "offrtg", path, line), team_offrtg=_num(row, "team_offrtg", path, line),
        ))
    return out


def write_lineups(path, lineups: Iterable[LineupRecord]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LINEUP_COLUMNS)
        for lu in lineups:
            w.writerow([lu.team, lu.season, *lu.player_ids, fmt(lu.minutes), fmt(lu.offrtg),
                        fmt(lu.team_offrtg)])
