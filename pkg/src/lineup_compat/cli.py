"""Batch pipeline driver.

Every stage reads a shared JSON config, writes CSV/JSON artifacts into
``--out`` and records a ``manifest.<stage>.json`` with content hashes.
Exit codes: 0 success, 2 input or config error, 3 convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import (
    cut_dendrogram,
    fuzzy_cmeans,
    membership_histogram,
    read_assignments,
    read_memberships,
    silhouette_sweep,
    ward_linkage,
    write_assignments,
    write_memberships,
    zscore,
)
from .core.io import fmt, read_lineups, read_playtypes, read_segments
from .core.schema import ConfigError, ParseError, PipelineConfig, load_config, validate_dataset
from .core.synth import synthesize_dataset
from .features import (
    FeatureExtractionError,
    build_role_features,
    extract_shot_features,
    fit_standardize_pca,
    pca_transform,
    write_feature_csv,
    write_role_csv,
)
from .inference import (
    EffectTable,
    HierarchicalModelSpec,
    SamplerError,
    effect_table,
    effective_sample_size,
    leave_one_team_out,
    nuts_sample,
    split_rhat,
)
from .lineups import MergeMap, build_design, merge_clusters
from .transport import EmpiricalDistribution, pairwise_distance_matrix

log = logging.getLogger("lineup_compat")

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE = 0, 2, 3


class StageError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Stage:
    """Tracks inputs and outputs of one subcommand for its manifest."""

    def __init__(self, name, cfg: PipelineConfig, out: Path, config_path):
        self.name = name
        self.cfg = cfg
        self.out = out
        self.config_path = config_path
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def input(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise StageError(f"missing input file {path}")
        self.inputs.append(path)
        return path

    def output(self, name) -> Path:
        path = self.out / name
        self.outputs.append(path)
        return path

    def write_manifest(self, extra=None) -> Path:
        def rel(p):
            try:
                return p.resolve().relative_to(self.out.resolve()).as_posix()
            except ValueError:
                return p.name

        manifest = {
            "stage": self.name,
            "tool_version": __version__,
            "seed": self.cfg.seed,
            "config_sha256": self.cfg.digest(),
            "config_file_sha256": sha256_file(self.config_path) if self.config_path else None,
            "inputs": {rel(p): sha256_file(p) for p in self.inputs},
            "outputs": {rel(p): sha256_file(p) for p in self.outputs},
        }
        if extra:
            manifest.update(extra)
        path = self.out / f"manifest.{self.name}.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _check_report(report, what):
    if not report.ok:
        lines = [f"{v.record}[{v.index}] {v.rule}: {v.message}" for v in report.violations[:20]]
        more = len(report.violations) - len(lines)
        raise StageError(f"{what} failed validation:\n  " + "\n  ".join(lines)
                         + (f"\n  ... {more} more" if more > 0 else ""))


# -- stage bodies --------------------------------------------------------------

def run_synth(stage: Stage, args):
    ds = synthesize_dataset(stage.cfg.synth, stage.cfg.seed, stage.cfg.rim_xy,
                            stage.cfg.adjust_horizon_minutes, stage.cfg.min_lineup_minutes)
    for p in ds.write(stage.out):
        stage.outputs.append(p)
    log.info("synth: %d segments, %d profiles, %d lineups", len(ds.segments), len(ds.profiles), len(ds.lineups))


def _shot_features(stage: Stage, data: Path):
    cfg = stage.cfg
    segments = read_segments(stage.input(data / "segments.csv"), cfg.rim_xy)
    if not segments:
        raise StageError(f"{data / 'segments.csv'}: no segments")
    _check_report(validate_dataset(segments=segments), "segments")
    rows = []
    for seg in segments:
        try:
            rows.append((seg.player_id, seg.segment_id, extract_shot_features(seg).to_array()))
        except FeatureExtractionError as exc:
            log.warning("skipping segment: %s", exc)
    if not rows:
        raise StageError("no segment yielded features")
    pids = [r[0] for r in rows]
    X = np.vstack([r[2] for r in rows])
    write_feature_csv(stage.output("features.csv"), pids, [r[1] for r in rows], X)
    try:
        pca = fit_standardize_pca(X, cfg.pca_variance_target)
    except ValueError as exc:
        raise StageError(f"PCA: {exc}") from None
    stage.output("pca_model.json").write_text(pca.to_json() + "\n", encoding="utf-8")
    log.info("features: %d shots, PCA keeps %d components (%.4f of variance)", len(rows),
             pca.n_components, pca.explained_variance_ratio.sum())
    return pids, X, pca


def _role_features(stage: Stage, data: Path):
    cfg = stage.cfg
    profiles = read_playtypes(stage.input(data / "playtypes.csv"))
    _check_report(validate_dataset(profiles=profiles), "playtypes")
    try:
        rows = build_role_features(profiles, cfg.min_games, cfg.max_missing_fraction)
    except ValueError as exc:
        raise StageError(str(exc)) from None
    log.info("role features: kept %d of %d players", len(rows), len(profiles))
    if not rows:
        raise StageError("all players were filtered out of the role analysis")
    write_role_csv(stage.output("role_features.csv"), rows)
    return rows


def run_features(stage: Stage, args):
    data = _data_dir(args)
    _shot_features(stage, data)
    _role_features(stage, data)


def run_cluster_shots(stage: Stage, args):
    cfg = stage.cfg
    pids, X, pca = _shot_features(stage, _data_dir(args))
    Z = pca_transform(pca, X)
    by_player = defaultdict(list)
    for pid, z in zip(pids, Z):
        by_player[pid].append(z)
    players = []
    for pid in sorted(by_player):
        n = len(by_player[pid])
        if n < cfg.min_shots_per_player:
            log.info("excluding player %s: %d shots < %d", pid, n, cfg.min_shots_per_player)
            continue
        players.append((pid, EmpiricalDistribution(np.vstack(by_player[pid]))))
    if len(players) < max(2, cfg.n_shot_clusters):
        raise StageError(f"{len(players)} players pass the shot filter; need at least "
                         f"{max(2, cfg.n_shot_clusters)} for {cfg.n_shot_clusters} clusters")
    dm = pairwise_distance_matrix(players, cfg.wasserstein_p, threads=args.threads)
    dm.to_csv(stage.output("distance_matrix.csv"))
    dendro = ward_linkage(dm)
    stage.output("dendrogram.json").write_text(dendro.to_json() + "\n", encoding="utf-8")
    sweep = silhouette_sweep(dm, dendro, cfg.silhouette_k_min, cfg.silhouette_k_max)
    with open(stage.output("silhouette_sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "silhouette"])
        for k, s in sweep:
            w.writerow([k, fmt(s)])
    best = max(sweep, key=lambda ks: ks[1])
    log.info("silhouette sweep peaks at k=%d (%.4f); cutting at k=%d", best[0], best[1], cfg.n_shot_clusters)
    assignment = cut_dendrogram(dendro, cfg.n_shot_clusters)
    write_assignments(stage.output("assignments.csv"), dm.labels, assignment)


def run_cluster_roles(stage: Stage, args):
    cfg = stage.cfg
    rows = _role_features(stage, _data_dir(args))
    if len(rows) < cfg.n_role_clusters:
        raise StageError(f"{len(rows)} players for {cfg.n_role_clusters} role clusters")
    X = np.vstack([v.to_array() for _, v in rows])
    if cfg.role_zscore:
        X = zscore(X)
    mm = fuzzy_cmeans(X, cfg.n_role_clusters, cfg.fuzzifier_q, cfg.seed, cfg.fcm_tol, cfg.fcm_max_iter)
    if not mm.converged:
        log.warning("fuzzy c-means stopped after %d iterations without meeting the tolerance", mm.n_iter)
    write_memberships(stage.output("memberships.csv"), [pid for pid, _ in rows], mm)
    edges, counts = membership_histogram(mm)
    with open(stage.output("membership_histogram.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([fmt(lo), fmt(hi), int(c)])
    log.info("fuzzy c-means: c=%d q=%g, %d iterations, objective %.6g", cfg.n_role_clusters,
             cfg.fuzzifier_q, mm.n_iter, mm.objective_history[-1])


def _load_clusters(stage: Stage):
    """Cluster output feeding the design, merged through the configured map."""
    cfg = stage.cfg
    if cfg.fit_clusters == "shots":
        raw = read_assignments(stage.input(stage.out / "assignments.csv"))
        c = max(raw.values()) + 1
        mm = MergeMap.from_dict(cfg.merge_map) if cfg.merge_map else MergeMap.identity(c)
        pids = list(raw)
        merged = merge_clusters(np.array([raw[p] for p in pids]), mm)
        clusters = {p: int(m) for p, m in zip(pids, merged)}
    else:
        raw = read_memberships(stage.input(stage.out / "memberships.csv"))
        c = len(next(iter(raw.values())))
        mm = MergeMap.from_dict(cfg.merge_map) if cfg.merge_map else MergeMap.identity(c)
        pids = list(raw)
        merged = merge_clusters(np.vstack([raw[p] for p in pids]), mm)
        clusters = dict(zip(pids, merged))
    return clusters, mm


def _design(stage: Stage, args):
    cfg = stage.cfg
    lineups = read_lineups(stage.input(_data_dir(args) / "lineups.csv"))
    _check_report(validate_dataset(lineups=lineups), "lineups")
    try:
        clusters, mm = _load_clusters(stage)
        design = build_design(lineups, clusters, len(mm.targets), cfg.design_mode, cfg.min_lineup_minutes,
                              cfg.adjust_horizon_minutes, mm.targets)
    except KeyError as exc:
        raise StageError(str(exc.args[0])) from None
    if design.y.size == 0:
        raise StageError(f"no lineup played more than {cfg.min_lineup_minutes} minutes")
    design.write_csv(stage.output("design.csv"))
    stage.output("merge_map.json").write_text(mm.to_json() + "\n", encoding="utf-8")
    log.info("design: %d lineups, %d teams, %d features (%s)", design.y.size, len(design.teams),
             design.X.shape[1], cfg.design_mode)
    return design


def run_build_design(stage: Stage, args):
    _design(stage, args)


def _write_baseline(stage: Stage, design):
    if len(design.teams) < 2:
        raise StageError("leave-one-team-out needs at least two teams")
    cv = leave_one_team_out(design.X, design.y, design.team_index)
    sd = {f.team: f.sd for f in cv.folds}
    with open(stage.output("baseline_predictions.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lineup_key", "team", "y", "prediction", "sd"])
        for key, t, yv, pv in zip(design.keys, design.team_index, design.y, cv.oof_predictions):
            w.writerow([key, design.teams[t], fmt(yv), fmt(pv), fmt(sd[int(t)])])
    metrics = cv.metrics()
    metrics["per_team"] = {design.teams[f.team]: {"rmse": f.rmse, "mae": f.mae, "nll": f.nll, "lambda": f.lam}
                           for f in cv.folds}
    _write_json(stage.output("metrics.json"), metrics)
    log.info("baseline LOTO: rmse %.4f mae %.4f nll %.4f", metrics["rmse"], metrics["mae"], metrics["nll"])


def run_fit(stage: Stage, args):
    cfg = stage.cfg
    design = _design(stage, args)
    _write_baseline(stage, design)
    if cfg.design_mode == "counts5":
        return None
    spec = HierarchicalModelSpec(
        n_teams=len(design.teams), n_features=design.X.shape[1], mu_alpha=cfg.mu_alpha,
        alpha_sd=cfg.model.alpha_sd, mu_beta_sd=cfg.model.mu_beta_sd,
        sigma_beta_scale=cfg.model.sigma_beta_scale, epsilon_scale=cfg.model.epsilon_scale,
        sigma_beta_per_feature=cfg.model.sigma_beta_per_feature,
    )
    seed = cfg.mcmc.seed if cfg.mcmc.seed is not None else cfg.seed
    try:
        samples = nuts_sample(spec, design.X, design.y, design.team_index, cfg.mcmc, seed=seed,
                              workers=args.threads)
    except SamplerError as exc:
        _write_json(stage.output("diagnostics.json"), {"converged": False, "error": str(exc), **exc.report})
        raise StageError(f"sampler rejected the fit: {exc}", EXIT_CONVERGENCE) from None
    samples.to_csv(stage.output("posterior.csv"))
    rhat = split_rhat(samples)
    ess = effective_sample_size(samples.draws)
    max_rhat = float(np.max(rhat))
    converged = bool(max_rhat < cfg.rhat_threshold)
    _write_json(stage.output("diagnostics.json"), {
        "converged": converged,
        "rhat_threshold": cfg.rhat_threshold,
        "max_rhat": max_rhat,
        "min_ess": float(np.nanmin(ess)),
        "rhat": {n: float(r) for n, r in zip(samples.names, rhat)},
        "ess": {n: float(e) for n, e in zip(samples.names, ess)},
        "divergences": samples.divergence_count(),
        "transitions": int(samples.divergent.size),
        "step_sizes": list(samples.step_sizes),
        "mean_tree_depth": float(samples.tree_depth.mean()),
        "chains": samples.n_chains,
        "draws_per_chain": samples.n_draws,
    })
    log.info("max split R-hat %.4f (threshold %.2f), %d divergences", max_rhat, cfg.rhat_threshold,
             samples.divergence_count())
    if not converged and not args.force:
        raise StageError(f"max R-hat {max_rhat:.4f} >= {cfg.rhat_threshold}; effects.csv withheld "
                         "(rerun with --force to write it anyway)", EXIT_CONVERGENCE)
    if not converged:
        log.warning("writing effects from a NON-CONVERGED fit (--force)")
    table = effect_table(samples, design.pair_labels, design.teams, converged=converged)
    table.sorted().write_csv(stage.output("effects.csv"))
    return {"converged": converged}


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _md_table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(v) for v in r) + " |" for r in rows]
    return "\n".join(lines)


def run_report(stage: Stage, args, n_lineups: int = 10):
    out = stage.out
    needed = ["silhouette_sweep.csv", "baseline_predictions.csv", "effects.csv"]
    missing = [n for n in needed if not (out / n).is_file()]
    if not any((out / n).is_file() for n in ("assignments.csv", "memberships.csv")):
        missing.append("assignments.csv or memberships.csv")
    if missing:
        raise StageError(f"missing stage artifacts in {out}: {', '.join(missing)}")

    parts = ["# Lineup compatibility report", ""]
    parts += ["## Cluster sizes", ""]
    for name, title in (("assignments.csv", "Shooting-style clusters"), ("memberships.csv", "Role clusters")):
        if not (out / name).is_file():
            continue
        rows = _read_csv(stage.input(out / name))
        key = "cluster" if name == "assignments.csv" else "argmax"
        counts = defaultdict(int)
        for r in rows:
            counts[int(r[key])] += 1
        parts += [f"{title} ({len(rows)} players)", "",
                  _md_table(["cluster", "players"], [(k, counts[k]) for k in sorted(counts)]), ""]

    sweep = _read_csv(stage.input(out / "silhouette_sweep.csv"))
    best = max(sweep, key=lambda r: float(r["silhouette"]))
    parts += ["## Silhouette sweep", "", f"Maximum at k = {best['k']}.", "",
              _md_table(["k", "mean silhouette"], [(r["k"], f"{float(r['silhouette']):.4f}") for r in sweep]), ""]

    preds = _read_csv(stage.input(out / "baseline_predictions.csv"))
    preds.sort(key=lambda r: (-float(r["prediction"]), r["lineup_key"]))
    k = min(n_lineups, len(preds))
    header = ["lineup", "team", "adjusted OFFRTG", "predicted", "sd"]

    def fmt_row(r):
        return (r["lineup_key"].replace("|", ", "), r["team"], f"{float(r['y']):.2f}",
                f"{float(r['prediction']):.2f}", f"{float(r['sd']):.2f}")

    parts += ["## Lineups by baseline prediction", "",
              "Out-of-fold predictions from leave-one-team-out ridge regression.", "",
              f"Top {k}", "", _md_table(header, [fmt_row(r) for r in preds[:k]]), "",
              f"Bottom {k}", "", _md_table(header, [fmt_row(r) for r in preds[::-1][:k]]), ""]
    if (out / "metrics.json").is_file():
        m = json.loads(stage.input(out / "metrics.json").read_text(encoding="utf-8"))
        parts += [_md_table(["folds", "rmse", "mae", "nll"],
                            [(m["n_folds"], f"{m['rmse']:.4f}", f"{m['mae']:.4f}", f"{m['nll']:.4f}")]), ""]

    table = EffectTable.read_csv(stage.input(out / "effects.csv")).sorted()
    parts += ["## Pair effects", ""]
    if not table.converged:
        parts += ["**WARNING: the fit did not reach the R-hat threshold; treat these effects as unreliable.**", ""]
    lo, hi = 50 - 50 * table.level, 50 + 50 * table.level
    parts += [_md_table(["pair", "median across teams", f"q{lo:g}", f"q{hi:g}"],
                        [(lab, f"{m:.4f}", f"{a:.4f}", f"{b:.4f}")
                         for lab, m, a, b in zip(table.labels, table.median, table.lower, table.upper)]), ""]
    stage.output("report.md").write_text("\n".join(parts), encoding="utf-8")


# -- entry point ---------------------------------------------------------------

STAGES = {
    "synth": run_synth,
    "features": run_features,
    "cluster-shots": run_cluster_shots,
    "cluster-roles": run_cluster_roles,
    "build-design": run_build_design,
    "fit": run_fit,
    "report": run_report,
}


def _data_dir(args) -> Path:
    if args.data is None:
        raise StageError(f"{args.command} needs --data pointing at the input directory")
    data = Path(args.data)
    if not data.is_dir():
        raise StageError(f"data directory {data} does not exist")
    if data.resolve() == Path(args.out).resolve():
        raise StageError("--out must differ from --data so inputs are never modified")
    return data


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lineup-compat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON pipeline config (defaults apply when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        if name != "synth":
            p.add_argument("--data", help="directory holding segments.csv, playtypes.csv, lineups.csv")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker cap for distances and chains")
        p.add_argument("--force", action="store_true", help="write effects even if the fit did not converge")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "data"):
        args.data = None
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig().validate()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stage = Stage(args.command, cfg, out, args.config)
        extra = STAGES[args.command](stage, args)
        stage.write_manifest(extra)
    except StageError as exc:
        log.error("%s", exc)
        return exc.code
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
