"""Command-line entry point: ``slammot {simulate,track,eval,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
structural error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import ConfigError, TrackerConfig
from .fileio import (
    DataError,
    detection_records,
    ego_records,
    frame_inputs,
    ground_truth_records,
    load_scenario,
    load_tracker_config,
    odometry_records,
    read_estimate,
    read_ground_truth,
    scenario_to_dict,
    track_records,
    tracker_config_to_dict,
    write_json,
    write_ndjson,
)
from .geometry import compose, inverse
from .graph import GraphStructureError
from .metrics import EgoReport, MotReport, align_map_to_world, est_boxes, evaluate_ego, evaluate_mot, gt_boxes
from .simulator import generate
from .solver import StructuralDeficiencyError
from .tracker import TrackingResult, frames_from_scenario, run_tracker

log = logging.getLogger("slammot")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4
JOBS_ENV = "SLAMMOT_JOBS"
VERSION = f"slammot v{__version__}"


def _manifest(command: str, **extra) -> dict:
    return {"version": VERSION, "command": command, **extra}


# -- simulate -----------------------------------------------------------------------


def cmd_simulate(scenario: str, out: Path, seed: int | None = None) -> list[Path]:
    cfg = load_scenario(scenario)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    data = generate(cfg)
    out.mkdir(parents=True, exist_ok=True)
    man = _manifest("simulate", scenario=cfg.name, seeds=[cfg.seed])
    paths = [out / "scenario.json", out / "ground_truth.ndjson", out / "odometry.ndjson", out / "detections.ndjson"]
    write_json(paths[0], {"manifest": man, "scenario": scenario_to_dict(cfg)})
    write_ndjson(paths[1], ground_truth_records(data), man)
    write_ndjson(paths[2], odometry_records(data.odometry, data.stamps), man)
    write_ndjson(paths[3], detection_records(data.detections, data.stamps), man)
    return paths


# -- track --------------------------------------------------------------------------


def _timing_summary(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"count": 0, "mean_ms": 0.0, "max_ms": 0.0}
    return {"count": int(arr.size), "mean_ms": float(arr.mean()), "max_ms": float(arr.max())}


def write_tracking(result: TrackingResult, out: Path, cfg: TrackerConfig, inputs: dict) -> None:
    """Write tracker outputs. Data files embed a manifest without wall-clock
    timings so that identical inputs give identical bytes; ``manifest.json``
    adds the timings."""
    out.mkdir(parents=True, exist_ok=True)
    man = _manifest("track", inputs=inputs, tracker_config=tracker_config_to_dict(cfg))
    write_ndjson(out / "ego.ndjson", ego_records(result), man)
    write_ndjson(out / "tracks.ndjson", track_records(result), man)
    write_ndjson(out / "solve_log.ndjson", result.solve_log, man)
    timings = {
        "association_ms": _timing_summary(result.timings["association_ms"]),
        "solve_ms": _timing_summary(result.timings["solve_ms"]),
        "keyframe_backend_ms": _timing_summary(result.timings["keyframe_backend_ms"]),
    }
    write_json(out / "manifest.json", {**man, "timings": timings})


def cmd_track(det_path, odo_path, cfg: TrackerConfig, out: Path) -> TrackingResult:
    frames = frame_inputs(det_path, odo_path)
    if not frames:
        raise DataError(f"{odo_path}: no frames")
    result = run_tracker(frames, cfg)
    write_tracking(result, out, cfg, {"detections": str(det_path), "odometry": str(odo_path)})
    return result


# -- eval ---------------------------------------------------------------------------


def evaluate(gt_ego, gt_frames, est_ego, est_frames, iou: float = 0.5) -> tuple[MotReport, EgoReport]:
    """Align the estimate's map frame onto the ground truth by the first ego pose, then score."""
    if len(gt_ego) != len(est_ego):
        raise DataError(f"frame misalignment: ground truth has {len(gt_ego)} frames, estimate {len(est_ego)}")
    if not gt_ego:
        raise DataError("no frames to evaluate")
    T = compose(gt_ego[0], inverse(est_ego[0]))
    mot = evaluate_mot(gt_frames, align_map_to_world(est_frames, T), iou)
    return mot, evaluate_ego(gt_ego, est_ego)


def format_report(mot: MotReport, ego: EgoReport) -> str:
    lines = [
        f"{'MOTA':>8} {'MOTP':>8} {'Recall':>8} {'Prec':>8} {'IDSW':>5} {'FP':>5} {'FN':>5} {'GT':>6}",
        f"{mot.mota:8.4f} {mot.motp:8.4f} {mot.recall:8.4f} {mot.precision:8.4f} "
        f"{mot.id_switches:5d} {mot.false_positives:5d} {mot.false_negatives:5d} {mot.gt_count:6d}",
        "",
        f"ego MEAN {ego.mean_err:.4f} m   RMSE {ego.rmse:.4f} m",
        "",
        f"{'gt track':>8} {'tracked frames':>15} {'long [m]':>9} {'lat [m]':>9} {'yaw [rad]':>10}",
    ]
    for gid, e in sorted(mot.per_track.items()):
        lines.append(
            f"{gid:>8} {e.tracked_frame_length:>15d} {e.rmse_long:9.4f} {e.rmse_lat:9.4f} {e.rmse_yaw:10.5f}"
        )
    return "\n".join(lines)


def cmd_eval(gt_path, est_path, out: Path | None = None, iou: float = 0.5) -> tuple[MotReport, EgoReport]:
    gt = read_ground_truth(gt_path)
    est = read_estimate(est_path)
    mot, ego = evaluate(gt.ego, gt.boxes, est.ego, est.boxes, iou)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        man = _manifest("eval", inputs={"ground_truth": str(gt_path), "estimate": str(est_path)},
                        iou_threshold=iou)
        write_json(out, {"manifest": man, "mot": mot.as_dict(), "ego": ego.as_dict()})
    return mot, ego


# -- sweep --------------------------------------------------------------------------


def run_cell(scenario, cfg: TrackerConfig, seed: int) -> dict:
    data = generate(scenario.with_seed(seed))
    result = run_tracker(frames_from_scenario(data), cfg)
    mot, ego = evaluate(data.gt_ego, gt_boxes(data), result.ego, est_boxes(result.tracks))
    return {
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "sigma": cfg.sigma_gate,
        "seed": seed,
        "mota": mot.mota,
        "idsw": mot.id_switches,
        "ego_rmse_m": ego.rmse,
    }


def _cell_job(args):
    return run_cell(*args)


def cmd_sweep(scenario_spec: str, base: TrackerConfig, alphas, betas, sigmas, seeds, out: Path | None) -> tuple[list[dict], list[dict]]:
    scenario = load_scenario(scenario_spec)
    if not (alphas and betas and sigmas and seeds):
        raise ConfigError("parameter grid and seed list must be non-empty")
    jobs = [
        (scenario, base.replace(alpha=a, beta=b, sigma_gate=s), seed)
        for a in alphas for b in betas for s in sigmas for seed in seeds
    ]
    n_workers = _jobs_from_env()
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_cell_job, jobs))
    else:
        rows = [run_cell(*j) for j in jobs]
    summary = []
    for a in alphas:
        for b in betas:
            for s in sigmas:
                cell = [r for r in rows if (r["alpha"], r["beta"], r["sigma"]) == (float(a), float(b), float(s))]
                entry = {"alpha": float(a), "beta": float(b), "sigma": float(s), "n": len(cell)}
                for key in ("mota", "idsw", "ego_rmse_m"):
                    vals = np.array([r[key] for r in cell], dtype=float)
                    entry[f"{key}_mean"] = float(vals.mean())
                    entry[f"{key}_std"] = float(vals.std())
                summary.append(entry)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        man = _manifest("sweep", scenario=scenario.name, seeds=list(seeds),
                        tracker_config=tracker_config_to_dict(base))
        write_ndjson(out / "rows.ndjson", rows, man)
        write_ndjson(out / "summary.ndjson", summary, man)
    return rows, summary


def _jobs_from_env() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{JOBS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, min(n, os.cpu_count() or 1))


def format_summary(summary: list[dict]) -> str:
    lines = [f"{'alpha':>7} {'beta':>7} {'sigma':>7} {'n':>3} {'MOTA':>17} {'IDSW':>13} {'ego RMSE [m]':>17}"]
    for e in summary:
        lines.append(
            f"{e['alpha']:7.3f} {e['beta']:7.1f} {e['sigma']:7.2f} {e['n']:3d} "
            f"{e['mota_mean']:8.4f}±{e['mota_std']:<8.4f} {e['idsw_mean']:6.2f}±{e['idsw_std']:<6.2f} "
            f"{e['ego_rmse_m_mean']:8.4f}±{e['ego_rmse_m_std']:<8.4f}"
        )
    return "\n".join(lines)


# -- argument parsing ----------------------------------------------------------------


def _parse_seeds(items: Sequence[str]) -> list[int]:
    out = []
    for item in items:
        try:
            if "-" in item.lstrip("-"):
                lo, hi = item.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(item))
        except ValueError as exc:
            raise ConfigError(f"bad seed specification {item!r}") from exc
    return out


def _add_tracker_flags(p: argparse.ArgumentParser, multi: bool = False) -> None:
    nargs = "+" if multi else None
    p.add_argument("--config", help="tracker config JSON (flat keys)")
    p.add_argument("--alpha", type=float, nargs=nargs, help="confidence decay rate")
    p.add_argument("--beta", type=float, nargs=nargs, help="detection covariance scale")
    p.add_argument("--sigma", type=float, nargs=nargs, help="association gate threshold")
    p.add_argument("--n-miss", type=int, help="misses tolerated before a track retires")
    p.add_argument("--keyframe-stride", type=int, help="frames between ego keyframes")


def _tracker_config(args, multi: bool = False) -> TrackerConfig:
    cfg = load_tracker_config(args.config) if args.config else TrackerConfig()
    changes = {}
    if not multi:
        if args.alpha is not None:
            changes["alpha"] = args.alpha
        if args.beta is not None:
            changes["beta"] = args.beta
        if args.sigma is not None:
            changes["sigma_gate"] = args.sigma
    if args.n_miss is not None:
        changes["n_miss"] = args.n_miss
    if args.keyframe_stride is not None:
        changes["keyframe_stride"] = args.keyframe_stride
    return cfg.replace(**changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slammot", description="Joint ego / multi-object tracking backend")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a scenario's ground truth and sensor streams")
    p.add_argument("--config", required=True, help="scenario JSON file or reference scenario name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("track", help="run the tracker on detection and odometry files")
    p.add_argument("--detections", type=Path, help="detections NDJSON (omit for odometry only)")
    p.add_argument("--odometry", required=True, type=Path)
    _add_tracker_flags(p)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("eval", help="score a tracker output against ground truth")
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--est", required=True, type=Path, help="track output directory or ground-truth file")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", type=Path, help="report JSON path")

    p = sub.add_parser("sweep", help="grid over alpha/beta/sigma and seeds")
    p.add_argument("--scenario", required=True)
    _add_tracker_flags(p, multi=True)
    p.add_argument("--seed", nargs="+", default=["0"], help="seeds, e.g. 0 1 2 or 1-10")
    p.add_argument("--out", type=Path)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            for path in cmd_simulate(args.config, args.out, args.seed):
                print(path)
        elif args.command == "track":
            cfg = _tracker_config(args)
            result = cmd_track(args.detections, args.odometry, cfg, args.out)
            n_tracks = len({t.track_id for frame in result.tracks for t in frame})
            kf = result.timings["keyframe_backend_ms"]
            mean_ms = float(np.mean(kf)) if kf else 0.0
            print(f"{len(result.frames)} frames, {n_tracks} tracks, mean keyframe backend {mean_ms:.1f} ms -> {args.out}")
        elif args.command == "eval":
            mot, ego = cmd_eval(args.gt, args.est, args.out, args.iou)
            print(format_report(mot, ego))
        elif args.command == "sweep":
            base = _tracker_config(args, multi=True)
            alphas = args.alpha or [base.alpha]
            betas = args.beta or [base.beta]
            sigmas = args.sigma or [base.sigma_gate]
            _, summary = cmd_sweep(args.scenario, base, alphas, betas, sigmas, _parse_seeds(args.seed), args.out)
            print(format_summary(summary))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StructuralDeficiencyError, GraphStructureError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
