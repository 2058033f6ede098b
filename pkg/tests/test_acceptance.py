"""End-to-end acceptance checks; each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear even without
``-s``) or directly with ``python3 tests/test_acceptance.py``.
"""

import csv
import itertools
import json
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from lineup_compat.cli import main, sha256_file
from lineup_compat.clustering import fcm_memberships, fuzzy_cmeans, kmeans, silhouette_mean, silhouette_samples
from lineup_compat.clustering import ward_linkage
from lineup_compat.core import McmcConfig
from lineup_compat.features import FEATURE_NAMES
from lineup_compat.inference import (
    HierarchicalModel,
    HierarchicalModelSpec,
    PosteriorSamples,
    beta_interval_coverage,
    effect_table,
    effective_sample_size,
    nuts_sample,
    sample_chains,
    split_rhat,
)
from lineup_compat.lineups import (
    adjust_offrtg,
    combo_features_2,
    n_combination_features,
    points_per_possession,
    true_shooting_pct,
)
from lineup_compat.transport import DistanceMatrix, EmpiricalDistribution, solve_emd, wasserstein_distance
from oracles import (
    crisp_pair_counts,
    finite_difference_grad,
    gaussian_linear_posterior,
    naive_ward,
    silhouette_by_hand,
    transport_lp_oracle,
)

pytestmark = pytest.mark.slow

STAGES = ("features", "cluster-shots", "cluster-roles", "fit", "report")


@pytest.fixture
def verdict(capsys):
    def report(number, title, checks, detail=""):
        ok = all(checks.values())
        failed = [name for name, good in checks.items() if not good]
        line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        if failed:
            line += f"  failed: {', '.join(failed)}"
        with capsys.disabled():
            print("\n" + line, flush=True)
        assert ok, line
    return report


def _euclid(X):
    X = np.asarray(X, float)
    return DistanceMatrix(tuple(f"p{i}" for i in range(len(X))), np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1)))


def test_01_emd_matches_lp_oracle(verdict):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        m, n, d = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 4)
        a, b = rng.normal(size=(m, d)), rng.normal(size=(n, d))
        am, bm = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n))
        got = solve_emd(EmpiricalDistribution(a, am), EmpiricalDistribution(b, bm)).cost
        want, _ = transport_lp_oracle(a, b, am, bm, 1.0)
        worst = max(worst, abs(got - want))
    elapsed = time.perf_counter() - t0
    verdict(1, "EMD equals dense LP oracle on 500 pairs",
            {"cost within 1e-8": worst <= 1e-8, "runtime < 60 s": elapsed < 60},
            f"max |diff| {worst:.2e}, {elapsed:.1f} s")


def test_02_wasserstein_metric_properties(verdict):
    rng = np.random.default_rng(102)

    def dist():
        k = rng.integers(1, 7)
        return EmpiricalDistribution(rng.normal(size=(k, 2)), rng.dirichlet(np.ones(k)))

    sym_exact, self_max, tri_viol = True, 0.0, 0.0
    for _ in range(200):
        a, b, c = dist(), dist(), dist()
        for p in (1.0, 2.0):
            ab, ba = wasserstein_distance(a, b, p), wasserstein_distance(b, a, p)
            sym_exact &= ab == ba
            self_max = max(self_max, wasserstein_distance(a, a, p))
            ac, bc = wasserstein_distance(a, c, p), wasserstein_distance(b, c, p)
            tri_viol = max(tri_viol, ac - (ab + bc))
    verdict(2, "W_p symmetry, identity and triangle inequality on 200 triples",
            {"symmetry exact": bool(sym_exact), "self-distance <= 1e-9": self_max <= 1e-9,
             "triangle within 1e-7": tri_viol <= 1e-7},
            f"max self {self_max:.1e}, max triangle excess {tri_viol:.1e}")


def test_03_ward_matches_naive_oracle(verdict):
    rng = np.random.default_rng(103)
    mismatches, worst = 0, 0.0
    for _ in range(50):
        n = int(rng.integers(2, 21))
        X = rng.normal(size=(n, int(rng.integers(1, 4))))
        got = ward_linkage(_euclid(X)).merges
        want = naive_ward(X)
        for m, (a, b, h, s) in zip(got, want):
            if (m.left, m.right, m.size) != (a, b, s):
                mismatches += 1
            worst = max(worst, abs(m.height - h) / max(h, 1e-12))
    verdict(3, "Ward merge sequences equal the naive oracle on 50 instances",
            {"identical merge order": mismatches == 0, "heights agree": worst < 1e-9},
            f"{mismatches} mismatched merges, max rel height error {worst:.1e}")


def test_04_silhouette(verdict):
    # points 0, 1, 2.5 | 7, 8, 11 on a line
    pts = _euclid([[0.0], [1.0], [2.5], [7.0], [8.0], [11.0]])
    labels = [0, 0, 0, 1, 1, 1]
    got = silhouette_mean(pts, labels)
    hand = silhouette_by_hand(pts.values, labels)
    rng = np.random.default_rng(104)
    in_range = True
    for _ in range(200):
        n = int(rng.integers(3, 15))
        lab = rng.integers(0, int(rng.integers(2, 5)), n)
        if len(set(lab.tolist())) < 2:
            continue
        s = silhouette_samples(_euclid(rng.normal(size=(n, 2))), lab)
        in_range &= bool(np.all((s >= -1) & (s <= 1)))
    blobs = np.vstack([rng.normal(0, 0.002, (5, 2)), rng.normal(0, 0.002, (5, 2)) + [100, 0]])
    two = silhouette_mean(_euclid(blobs), [0] * 5 + [1] * 5)
    verdict(4, "silhouette hand case, range and separated blobs",
            {"hand case to 1e-12": abs(got - hand) <= 1e-12, "within [-1, 1]": in_range, "two blobs >= 0.99": two >= 0.99},
            f"hand case {got:.12f}, two-blob {two:.5f}")


def test_05_fuzzy_cmeans(verdict):
    rng = np.random.default_rng(105)
    worst_row, monotone = 0.0, True
    for i in range(20):
        X = rng.normal(size=(int(rng.integers(10, 60)), int(rng.integers(1, 5))))
        mm = fuzzy_cmeans(X, int(rng.integers(2, 6)), q=float(rng.uniform(1.1, 3.0)), seed=i)
        worst_row = max(worst_row, float(np.abs(mm.u.sum(axis=1) - 1).max()))
        J = np.array(mm.objective_history)
        monotone &= bool(np.all(np.diff(J) <= 1e-12 * J[:-1]))
    centers = np.array([[0.0, 0.0], [30.0, 0.0], [0.0, 30.0], [30.0, 30.0]])
    agree = True
    for seed in range(5):
        X = np.vstack([rng.normal(c, 1.0, (15, 2)) for c in centers])
        hard = fuzzy_cmeans(X, 4, q=1.01, seed=seed).hard_labels()
        km = kmeans(X, 4, seed=seed).assignment.labels
        agree &= bool(np.array_equal(hard[:, None] == hard[None], km[:, None] == km[None]))
    verdict(5, "fuzzy c-means row sums, monotone objective, near-crisp limit",
            {"rows sum to 1 within 1e-9": worst_row <= 1e-9, "objective non-increasing": monotone,
             "q=1.01 matches k-means": agree},
            f"max row error {worst_row:.1e}")


def test_06_combination_features(verdict):
    rng = np.random.default_rng(106)
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(1, 11))
        worst = max(worst, abs(combo_features_2(rng.dirichlet(np.ones(c), size=5)).sum() - 10.0))
    crisp_ok = True
    for c in range(1, 5):
        for labels in itertools.combinations_with_replacement(range(c), 5):
            U = np.eye(c)[list(labels)]
            crisp_ok &= combo_features_2(U).tolist() == crisp_pair_counts(labels, c)
    verdict(6, "combination features conserve 10 pairs and match enumeration",
            {"sum = 10 within 1e-9": worst <= 1e-9, "crisp enumeration c <= 4": crisp_ok,
             "C(6,2) = 15": n_combination_features(5) == 15, "C(11,2) = 55": n_combination_features(10) == 55},
            f"max |sum - 10| {worst:.1e}")


def test_07_formula_spot_checks(verdict):
    adj = adjust_offrtg(110, 150, 100)
    ts = true_shooting_pct(30, 20, 10)
    ppp = points_per_possession(50, 40, 0, 10)
    verdict(7, "adjusted rating, TS% and PPP",
            {"adjust = 105": abs(adj - 105) < 1e-12, "TS% = 61.4754": abs(ts - 61.4754) <= 1e-4,
             "PPP = 1": abs(ppp - 1.0) < 1e-12},
            f"{adj:g}, {ts:.6f}, {ppp:g}")


def test_08_gradient_check(verdict):
    rng = np.random.default_rng(108)
    T, F, n = 3, 6, 50
    X = rng.dirichlet(np.ones(F), size=n) * 10
    team = rng.integers(0, T, n)
    y = 105 + X @ rng.normal(0, 0.5, F) + rng.normal(0, 3, n)
    model = HierarchicalModel(HierarchicalModelSpec(T, F), X, y, team)
    worst = 0.0
    for _ in range(20):
        theta = model.initial_point(rng) + rng.normal(0, 0.5, model.dim)
        _, g = model(theta)
        fd = finite_difference_grad(lambda t: model(t)[0], theta, h=1e-5)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))))
    verdict(8, "log posterior gradient vs central differences (3 teams, 6 features, 50 rows)",
            {"max relative error < 1e-5": worst < 1e-5}, f"max rel error {worst:.2e}")


class _StdNormal:
    def __call__(self, q):
        return -0.5 * float(q @ q), -q


def test_09_sampler_calibration(verdict):
    t0 = time.perf_counter()
    chains = sample_chains(_StdNormal(), np.zeros(5), 4, 1000, 1000, seed=109)
    sn = np.stack([c.draws for c in chains])
    flat = sn.reshape(-1, 5)
    mean_ok = float(np.abs(flat.mean(axis=0)).max())
    var = flat.var(axis=0)

    rng = np.random.default_rng(9)
    n, F, eps = 200, 3, 1.5
    X = rng.normal(size=(n, F))
    y = 104 + X @ np.array([2.0, -1.0, 0.5]) + rng.normal(0, eps, n)
    spec = HierarchicalModelSpec(1, F, fixed_sigma_beta=10.0, fixed_epsilon=eps)
    A = np.hstack([np.ones((n, 1)), X, np.zeros((n, F))])
    S0 = np.zeros((1 + 2 * F, 1 + 2 * F))
    S0[0, 0] = 100.0
    b, m = slice(1, 1 + F), slice(1 + F, 1 + 2 * F)
    S0[b, b] = (100.0 + 100.0) * np.eye(F)
    S0[m, m] = S0[b, m] = S0[m, b] = 100.0 * np.eye(F)
    mean, cov = gaussian_linear_posterior(A, y, np.concatenate([[spec.mu_alpha], np.zeros(2 * F)]), S0, eps)
    s = nuts_sample(spec, X, y, np.zeros(n, dtype=int), McmcConfig(chains=4, warmup=1000, draws=1000, seed=9))
    d = s.draws.reshape(-1, spec.dim)
    mcse = d.std(axis=0) / np.sqrt(effective_sample_size(s.draws))
    z = float(np.max(np.abs(d.mean(axis=0) - mean) / mcse))
    sd_err = float(np.max(np.abs(d.std(axis=0) / np.sqrt(np.diag(cov)) - 1)))
    rhat = float(max(split_rhat(sn).max(), split_rhat(s).max()))
    elapsed = time.perf_counter() - t0
    verdict(9, "NUTS on standard normal and conjugate regression",
            {"|mean| < 0.05": mean_ok < 0.05, "variance in [0.9, 1.1]": bool(var.min() >= 0.9 and var.max() <= 1.1),
             "conjugate mean within 3 MC standard errors": z < 3, "conjugate sd within 15%": sd_err < 0.15,
             "max split R-hat < 1.1": rhat < 1.1, "runtime < 5 min": elapsed < 300},
            f"|mean| {mean_ok:.3f}, var {var.min():.3f}..{var.max():.3f}, mean z {z:.2f}, "
            f"sd err {sd_err:.1%}, R-hat {rhat:.4f}, {elapsed:.0f} s")


# -- full pipeline runs (criteria 10-12) ---------------------------------------

BASE_CONFIG = {
    "seed": 2024,
    "n_shot_clusters": 3,
    "fit_clusters": "shots",
    "synth": {"n_archetypes": 3},
}


def _majority_map(out: Path, truth: dict) -> dict:
    """Name each shot cluster after the archetype most of its players share."""
    with open(out / "assignments.csv", newline="") as fh:
        votes = {}
        for r in csv.DictReader(fh):
            votes.setdefault(r["cluster"], Counter())[truth["labels"][r["player_id"]]] += 1
    mapping = {c: str(v.most_common(1)[0][0]) for c, v in votes.items()}
    return {"mapping": mapping, "targets": [str(k) for k in range(truth["n_archetypes"])]}


def _pipeline(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "config.json"
    cfg.write_text(json.dumps(BASE_CONFIG))
    data, out = root / "data", root / "out"
    t0 = time.perf_counter()
    codes = {"synth": main(["synth", "--config", str(cfg), "--out", str(data)])}
    truth = json.loads((data / "truth.json").read_text())
    for stage in STAGES:
        if stage == "fit":
            mapped = dict(BASE_CONFIG, merge_map=_majority_map(out, truth))
            cfg = root / "config.mapped.json"
            cfg.write_text(json.dumps(mapped))
        codes[stage] = main([stage, "--config", str(cfg), "--data", str(data), "--out", str(out)])
    return {"data": data, "out": out, "truth": truth, "codes": codes, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return _pipeline(tmp_path_factory.mktemp("acceptance") / "run_a")


def test_10_end_to_end_effect_recovery(pipeline, verdict):
    out, truth = pipeline["out"], pipeline["truth"]
    codes_ok = all(c == 0 for c in pipeline["codes"].values())
    checks = {"all stages exit 0": codes_ok}
    detail = ""
    if codes_ok:
        with open(out / "effects.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        planted = " & ".join(str(k) for k in truth["pairs"][truth["planted_index"]])
        top = rows[0]
        with open(out / "design.csv", newline="") as fh:
            header = next(csv.reader(fh))
        F = sum(h.startswith("combo_") for h in header)
        teams = sorted(truth["teams"])
        spec = HierarchicalModelSpec(len(teams), F)
        samples = PosteriorSamples.from_csv(out / "posterior.csv", spec)
        true_beta = np.array(truth["beta"])[[truth["teams"].index(t) for t in teams]]
        cover = beta_interval_coverage(samples, true_beta, 0.9)
        diag = json.loads((out / "diagnostics.json").read_text())
        checks.update({
            "planted pair ranks first": top["pair"] == planted,
            "its 90% interval excludes 0": float(top["median_q5"]) > 0 or float(top["median_q95"]) < 0,
            "90% intervals cover >= 80% of true beta": cover >= 0.8,
            "fit converged": bool(diag["converged"]),
        })
        detail = (f"top {top['pair']!r} median {float(top['median']):.3f} "
                  f"[{float(top['median_q5']):.3f}, {float(top['median_q95']):.3f}], coverage {cover:.2f}, "
                  f"R-hat {diag['max_rhat']:.4f}")
    checks["runtime < 10 min"] = pipeline["seconds"] < 600
    verdict(10, "planted pair effect recovered through the CLI pipeline", checks,
            f"{detail}, {pipeline['seconds']:.0f} s")


def test_11_pipeline_determinism(pipeline, tmp_path, verdict):
    again = _pipeline(tmp_path / "run_b")

    def hashes(root):
        return {f"{d.name}/{p.name}": sha256_file(p) for d in (root["data"], root["out"])
                for p in sorted(d.iterdir()) if p.is_file()}

    a, b = hashes(pipeline), hashes(again)
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    verdict(11, "two CLI runs with the same config and seed are byte-identical",
            {"same artifact set": a.keys() == b.keys(), "identical hashes": not differing,
             "both runs succeed": all(c == 0 for c in again["codes"].values())},
            f"{len(a)} artifacts compared" + (f", differing: {differing}" if differing else ""))


def test_12_silhouette_recovers_three_archetypes(pipeline, verdict):
    with open(pipeline["out"] / "silhouette_sweep.csv", newline="") as fh:
        sweep = [(int(r["k"]), float(r["silhouette"])) for r in csv.DictReader(fh)]
    best_k, best_s = max(sweep, key=lambda t: t[1])
    verdict(12, "silhouette sweep over k in [2, 20] peaks at the 3 generated archetypes",
            {"sweep covers 2..20": [k for k, _ in sweep] == list(range(2, 21)), "argmax is 3": best_k == 3},
            f"argmax k={best_k} (mean silhouette {best_s:.4f})")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
