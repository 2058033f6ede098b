import dataclasses
import json
from math import comb

import numpy as np
import pytest

from lineup_compat.core import (
    PLAYTYPES,
    ConfigError,
    LineupRecord,
    ParseError,
    PipelineConfig,
    ShotSegment,
    SynthSpec,
    config_from_dict,
    load_config,
    read_lineups,
    read_playtypes,
    read_segments,
    synthesize_dataset,
    validate_dataset,
    write_lineups,
    write_playtypes,
    write_segments,
)
from lineup_compat.features import feature_matrix, fit_standardize_pca, pca_transform
from lineup_compat.transport import EmpiricalDistribution, pairwise_distance_matrix

RIM = (1.575, 7.62)


@pytest.fixture(scope="module")
def small():
    return synthesize_dataset(SynthSpec(n_players=30, shots_per_player=10, n_teams=3, lineups_per_team=15), 3)


def _segment(span=3.0, hz=10):
    t = np.round(np.arange(0, span + 1e-9, 1 / hz), 10)
    xy = np.column_stack([np.linspace(0, 1, t.size), np.zeros(t.size)])
    return ShotSegment("s", "p", t, xy, float(t[0]), float(t[-1]), RIM, True, False)


def test_defaults_match_published_constants():
    cfg = PipelineConfig()
    assert cfg.pca_variance_target == 0.99
    assert cfg.min_shots_per_player == 30
    assert cfg.wasserstein_p == 1
    assert cfg.n_shot_clusters == 13
    assert (cfg.n_role_clusters, cfg.fuzzifier_q) == (10, 1.2)
    assert cfg.min_lineup_minutes == 50
    assert cfg.adjust_horizon_minutes == 300
    assert cfg.rhat_threshold == 1.1
    m = cfg.mcmc
    assert (m.chains, m.warmup, m.draws, m.target_accept, m.max_tree_depth) == (4, 1000, 1000, 0.8, 10)
    assert (cfg.silhouette_k_min, cfg.silhouette_k_max) == (2, 20)


def test_config_round_trip_and_overrides(tmp_path):
    cfg = config_from_dict({"n_shot_clusters": 5, "mcmc": {"chains": 2, "seed": 4}, "mu_alpha": 110})
    assert cfg.n_shot_clusters == 5 and cfg.mcmc.chains == 2 and cfg.mcmc.seed == 4 and cfg.mu_alpha == 110
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    again = load_config(path)
    assert again.digest() == cfg.digest()


@pytest.mark.parametrize("bad", [
    {"no_such_key": 1},
    {"mcmc": {"bogus": 1}},
    {"fuzzifier_q": 1.0},
    {"wasserstein_p": 0.5},
    {"mcmc": {"chains": 1}},
    {"design_mode": "triples"},
    {"model": {"alpha_sd": 0}},
])
def test_config_rejections(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_load_config_errors_name_the_path(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="nope.json"):
        load_config(missing)
    broken = tmp_path / "broken.json"
    broken.write_text('{\n "seed": 1,\n oops\n}')
    with pytest.raises(ConfigError, match=r"broken.json:3"):
        load_config(broken)


def test_synthetic_dataset_contract():
    ds = synthesize_dataset(SynthSpec(n_archetypes=3, n_players=60, shots_per_player=30), 1)
    assert len(ds.segments) == 1800
    counts = np.bincount(list(ds.truth["labels"].values()))
    assert counts.max() - counts.min() <= 1
    assert len(ds.truth["mu_beta"]) == comb(3 + 1, 2)
    assert np.array(ds.truth["beta"]).shape == (6, 6)
    assert validate_dataset(ds.segments, ds.profiles, ds.lineups).ok


def test_synthesis_is_deterministic(tmp_path):
    spec = SynthSpec(n_players=20, shots_per_player=5, n_teams=2, lineups_per_team=10)
    a = synthesize_dataset(spec, 9).write(tmp_path / "a")
    b = synthesize_dataset(spec, 9).write(tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    c = synthesize_dataset(spec, 10).write(tmp_path / "c")
    assert c[0].read_bytes() != a[0].read_bytes()


def test_synthesis_rejects_single_archetype():
    with pytest.raises(ConfigError):
        synthesize_dataset(SynthSpec(n_archetypes=1), 0)


def test_truth_design_reproduces_generated_lineups(small):
    d = small.truth["design"]
    labels = small.truth["labels"]
    kept = {lu.key: lu for lu in small.lineups}
    beta = np.array(small.truth["beta"])
    alpha = np.array(small.truth["alpha"])
    resid = []
    for key, t, x, y in zip(d["keys"], d["team_index"], d["X"], d["y"]):
        assert sum(x) == 10
        assert kept[key].minutes > 50
        assert sorted(labels[p] for p in key.split("|")) is not None
        resid.append(y - alpha[t] - np.dot(x, beta[t]))
    assert abs(np.std(resid) - small.truth["noise_sd"]) < 0.6


def test_cross_archetype_emd_exceeds_within_median():
    ds = synthesize_dataset(SynthSpec(n_archetypes=2, n_players=16, shots_per_player=30, n_teams=2,
                                      lineups_per_team=5), 2)
    pids, _, X = feature_matrix(ds.segments)
    model = fit_standardize_pca(X, 0.99)
    Z = pca_transform(model, X)
    pids = np.array(pids)
    players = sorted(set(pids))
    dm = pairwise_distance_matrix([(p, EmpiricalDistribution(Z[pids == p])) for p in players])
    lab = np.array([ds.truth["labels"][p] for p in players])
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(len(players), dtype=bool)
    assert dm.values[~same].min() > np.median(dm.values[same & off])


def test_validation_rules():
    lu = LineupRecord("T", "s", ("a", "b", "c", "d"), 60, 100, 100)
    assert "lineup.player_count" in validate_dataset(lineups=[lu]).rules()
    lu = LineupRecord("T", "s", ("a", "b", "c", "d", "d"), 60, 100, 100)
    assert "lineup.distinct" in validate_dataset(lineups=[lu]).rules()
    lu = LineupRecord("T", "s", ("a", "b", "c", "d", "e"), 0, float("nan"), 100)
    assert {"lineup.minutes", "lineup.offrtg"} <= validate_dataset(lineups=[lu]).rules()
    rep = validate_dataset(segments=[_segment(span=2.0)])
    assert "segment.min_span" in rep.rules()
    assert rep.violations[0].index == 0
    assert validate_dataset(segments=[_segment()]).ok
    assert "segment.sample_rate" in validate_dataset(segments=[_segment(hz=3)]).rules()
    seg = _segment()
    bad = dataclasses.replace(seg, timestamps=seg.timestamps[::-1].copy())
    assert "segment.monotonic" in validate_dataset(segments=[bad]).rules()


def test_profile_rules(small):
    prof = small.profiles[0]
    pct = {k: 100 / len(PLAYTYPES) for k in PLAYTYPES}
    assert validate_dataset(profiles=[dataclasses.replace(prof, playtype_pct=pct)]).ok
    over = dict(pct, spot_up=60.0)
    assert "profile.pct_sum" in validate_dataset(profiles=[dataclasses.replace(prof, playtype_pct=over)]).rules()
    neg = dict(pct, spot_up=-1.0)
    assert "profile.pct_range" in validate_dataset(profiles=[dataclasses.replace(prof, playtype_pct=neg)]).rules()
    short = {k: v for k, v in pct.items() if k != "cut"}
    assert "profile.playtypes" in validate_dataset(
        profiles=[dataclasses.replace(prof, playtype_pct=short)]).rules()


def test_csv_round_trips(small, tmp_path):
    write_segments(tmp_path / "s.csv", small.segments)
    segs = read_segments(tmp_path / "s.csv", RIM)
    assert len(segs) == len(small.segments)
    for a, b in zip(segs, small.segments):
        assert a.segment_id == b.segment_id and a.player_id == b.player_id
        assert np.array_equal(a.timestamps, b.timestamps) and np.array_equal(a.shooter_xy, b.shooter_xy)
        assert a.ball_received_time == pytest.approx(b.ball_received_time, abs=1e-9)
        assert a.shot_time == b.shot_time and a.made_shot == b.made_shot and a.is_three == b.is_three
    write_playtypes(tmp_path / "p.csv", small.profiles)
    assert read_playtypes(tmp_path / "p.csv") == small.profiles
    write_lineups(tmp_path / "l.csv", small.lineups)
    assert read_lineups(tmp_path / "l.csv") == small.lineups


def test_parse_errors_carry_locator(tmp_path, small):
    path = tmp_path / "l.csv"
    write_lineups(path, small.lineups[:3])
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace(lines[2].split(",")[7], "abc", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match=r"l.csv:3"):
        read_lineups(path)
    (tmp_path / "empty.csv").write_text("team,season\n")
    with pytest.raises(ParseError, match="missing column"):
        read_lineups(tmp_path / "empty.csv")
    with pytest.raises(ParseError):
        read_segments(tmp_path / "absent.csv", RIM)
