"""Command-line front end: ``rbftomo [--config C] [--output D] <command>``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from rbftomo.config import ConfigError, ExperimentConfig, load_config, parse_config
from rbftomo.io import (
    FormatError,
    read_pgm,
    read_sinogram_csv,
    write_mask_csv,
    write_pgm,
    write_sinogram_csv,
    write_trace_csv,
)
from rbftomo.metrics import MetricReport, compare, otsu_threshold, sirt
from rbftomo.projector import Sinogram, build_system_matrix, forward
from rbftomo.solver import NumericalFailure, SingularSystemError, reconstruct
from rbftomo.shape import synthesize_image

log = logging.getLogger("rbftomo")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

METRICS_HEADER = (
    "experiment", "method", "views", "angle_range", "jaccard",
    "pixel_error", "sinogram_rmse", "iters", "seconds",
)

TRUTH_PGM = "truth.pgm"
TRUTH_MASK_CSV = "truth_mask.csv"
SINOGRAM_CSV = "sinogram.csv"
EFFECTIVE_CONFIG = "effective_config.txt"


class InputError(RuntimeError):
    pass


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return format(v, ".10g") if isinstance(v, float) else str(v)


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(METRICS_HEADER)
        for row in rows:
            out.writerow([_fmt(row.get(k)) for k in METRICS_HEADER])


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_effective_config(cfg: ExperimentConfig, out: Path) -> None:
    (out / EFFECTIVE_CONFIG).write_text(cfg.dumps())


def _truth_path(cfg, out) -> Path:
    return Path(cfg.truth) if cfg.truth else out / TRUTH_PGM


def _load_truth(cfg, out, required=False):
    path = _truth_path(cfg, out)
    if not path.exists():
        if required:
            raise InputError(f"truth image not found: {path}")
        return None
    img = read_pgm(path)
    if img.shape != cfg.grid().shape:
        raise InputError(f"truth image {path} is {img.shape}, grid is {cfg.grid().shape}")
    return img


def _load_sinogram(cfg, out) -> Sinogram:
    path = Path(cfg.sinogram) if cfg.sinogram else out / SINOGRAM_CSV
    if not path.exists():
        raise InputError(f"sinogram not found: {path}")
    sino = read_sinogram_csv(path)
    geom = cfg.geometry()
    if (sino.n_angles, sino.n_det) != (geom.n_angles, geom.n_det):
        raise InputError(
            f"sinogram {path} is {sino.n_angles}x{sino.n_det}, "
            f"geometry expects {geom.n_angles}x{geom.n_det}"
        )
    return sino


def cmd_phantom(cfg: ExperimentConfig) -> dict:
    out = _outdir(cfg)
    ph = cfg.phantom()
    mask = ph.mask.reshape(cfg.grid().shape)
    write_pgm(mask.astype(float), out / TRUTH_PGM)
    write_mask_csv(mask, out / TRUTH_MASK_CSV)
    _write_effective_config(cfg, out)
    log.info("phantom %s: %d of %d pixels inside", ph.name, int(mask.sum()), mask.size)
    return {}


def cmd_project(cfg: ExperimentConfig) -> dict:
    out = _outdir(cfg)
    u = _load_truth(cfg, out, required=True)
    A = build_system_matrix(cfg.grid(), cfg.geometry())
    b = forward(A, u.ravel()).values
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.seed)
        b = b + rng.normal(0.0, cfg.noise_sigma, size=b.shape)
    write_sinogram_csv(Sinogram(b, A.geometry.n_angles, A.geometry.n_det), out / SINOGRAM_CSV)
    _write_effective_config(cfg, out)
    return {}


def _row(cfg, method, report=None, iters=None, seconds=None) -> dict:
    row = {
        "experiment": cfg.experiment,
        "method": method,
        "views": len(cfg.angle_list()),
        "angle_range": cfg.angle_range(),
        "iters": iters,
        "seconds": seconds,
    }
    if report is not None:
        row.update(
            jaccard=report.jaccard,
            pixel_error=report.pixel_error_fraction,
            sinogram_rmse=report.sinogram_rmse,
        )
    return row


def _report(mask, truth, A, b) -> MetricReport:
    if truth is not None:
        return compare(mask, truth.ravel() > 0.5, A, b)
    # no ground truth: only the data misfit is meaningful
    rmse = compare(mask, mask, A, b).sinogram_rmse
    return MetricReport(float("nan"), float("nan"), rmse)


def cmd_reconstruct(cfg: ExperimentConfig) -> dict:
    out = _outdir(cfg)
    b = _load_sinogram(cfg, out)
    truth = _load_truth(cfg, out)
    grid = cfg.grid()
    A = build_system_matrix(grid, cfg.geometry())
    dictionary = cfg.dictionary()
    t0 = time.perf_counter()
    try:
        res = reconstruct(A, b, dictionary, cfg.solver_options(), cfg.u_in, cfg.u_ex, cfg.eps)
    except (NumericalFailure, SingularSystemError) as exc:
        if exc.state is not None:
            write_trace_csv(exc.state.trace, out / "trace.csv")
        raise
    seconds = time.perf_counter() - t0

    soft = synthesize_image(dictionary, res.params)
    lo, hi = min(cfg.u_in, cfg.u_ex), max(cfg.u_in, cfg.u_ex)
    write_pgm(res.mask.reshape(grid.shape).astype(float), out / "recon_mask.pgm")
    write_pgm(((soft - lo) / (hi - lo)).reshape(grid.shape), out / "recon_soft.pgm")
    write_trace_csv(res.trace, out / "trace.csv")
    report = _report(res.mask, truth, A, b)
    row = _row(cfg, "rbf-levelset", report, res.state.iter, seconds)
    write_metrics_csv([row], out / "metrics_levelset.csv")
    _write_effective_config(cfg, out)
    log.info("reconstruct: %s after %d iterations, jaccard %s", res.stop_reason, res.state.iter, _fmt(row.get("jaccard")))
    return row


def cmd_baseline(cfg: ExperimentConfig) -> dict:
    out = _outdir(cfg)
    b = _load_sinogram(cfg, out)
    truth = _load_truth(cfg, out)
    grid = cfg.grid()
    A = build_system_matrix(grid, cfg.geometry())
    t0 = time.perf_counter()
    u = sirt(A, b, cfg.sirt_iterations, cfg.sirt_relaxation)
    mask = otsu_threshold(u)
    seconds = time.perf_counter() - t0
    write_pgm(u.reshape(grid.shape), out / "baseline_sirt.pgm")
    write_pgm(mask.reshape(grid.shape).astype(float), out / "baseline_mask.pgm")
    report = _report(mask, truth, A, b)
    row = _row(cfg, "sirt-otsu", report, cfg.sirt_iterations, seconds)
    write_metrics_csv([row], out / "metrics_baseline.csv")
    return row


def cmd_evaluate(est_path, true_path, out_path=None) -> dict:
    est = read_pgm(est_path)
    true = read_pgm(true_path)
    if est.shape != true.shape:
        raise InputError(f"image sizes differ: {est.shape} vs {true.shape}")
    report = compare(est.ravel() > 0.5, true.ravel() > 0.5)
    row = {
        "experiment": Path(est_path).stem,
        "method": "evaluate",
        "jaccard": report.jaccard,
        "pixel_error": report.pixel_error_fraction,
    }
    if out_path:
        write_metrics_csv([row], out_path)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    writer.writerow([_fmt(row.get(k)) for k in METRICS_HEADER])
    return row


def cmd_run(cfg: ExperimentConfig) -> list[dict]:
    """phantom -> project -> reconstruct -> baseline, one combined metrics file."""
    cmd_phantom(cfg)
    cmd_project(cfg)
    rows = [cmd_reconstruct(cfg), cmd_baseline(cfg)]
    write_metrics_csv(rows, Path(cfg.output_dir) / "metrics.csv")
    return rows


COMMANDS = {
    "phantom": cmd_phantom,
    "project": cmd_project,
    "reconstruct": cmd_reconstruct,
    "baseline": cmd_baseline,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbftomo", description=__doc__)
    p.add_argument("--config", action="append", metavar="PATH",
                   help="experiment config (repeat for several experiments)")
    p.add_argument("--output", metavar="DIR", help="output directory (overrides output_dir)")
    p.add_argument("--jobs", type=int, default=1, metavar="K",
                   help="run independent experiments in K processes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", help="write the truth phantom (PGM + mask CSV)")
    sub.add_parser("project", help="forward-project the truth phantom to a sinogram CSV")
    sub.add_parser("reconstruct", help="level-set reconstruction from the sinogram")
    sub.add_parser("baseline", help="SIRT + Otsu baseline from the sinogram")
    sub.add_parser("run", help="phantom, project, reconstruct and baseline in one go")
    ev = sub.add_parser("evaluate", help="compare two binary PGM masks")
    ev.add_argument("estimate")
    ev.add_argument("truth")
    ev.add_argument("--metrics", metavar="PATH", help="also write the row to this CSV")
    return p


def _configs(args) -> list[ExperimentConfig]:
    paths = args.config or []
    if not paths:
        return [parse_config("", output_dir=args.output)]
    if len(paths) == 1:
        return [load_config(paths[0], output_dir=args.output)]
    cfgs = []
    for path in paths:
        cfg = load_config(path)
        if args.output:
            cfg.output_dir = str(Path(args.output) / cfg.experiment)
        cfgs.append(cfg)
    return cfgs


def _run_one(command: str, cfg: ExperimentConfig):
    return COMMANDS[command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "evaluate":
            cmd_evaluate(args.estimate, args.truth, args.metrics)
            return EXIT_OK
        cfgs = _configs(args)
        if args.jobs > 1 and len(cfgs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                list(pool.map(_run_one, [args.command] * len(cfgs), cfgs))
        else:
            for cfg in cfgs:
                _run_one(args.command, cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (NumericalFailure, SingularSystemError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (InputError, FormatError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
