"""Command-line front end.

Subcommands::

    vlp simulate  --pose X,Y,THETA_DEG --out frame.pgm
    vlp locate    FRAME.pgm [--intrinsics calibrated.cfg]
    vlp calibrate --method rotation|dispersion --out calibrated.cfg
    vlp evaluate  --calibration none|rotation|dispersion --out DIR

Machine-readable results go to stdout as one JSON object per line; prose
goes to stderr.  The config comes from ``--config``, else ``$VLP_CONFIG``,
else the bundled default.

Exit codes:

    0  success
    2  bad command line
    3  ParseError (malformed config, registry, PGM or CSV)
    4  ValidationError (well-formed input violating an invariant)
    5  I/O error
    6  InsufficientBeacons (fewer than two lamps decoded)
    7  decode failure
    8  calibration failure
    9  experiment failure (too many failed trials)
    1  any other package error
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import List, Optional

from . import calibration as cal
from .config import Config, format_config, parse_config
from .errors import (CalibrationError, DecodeError, ExperimentFailed, InsufficientBeacons, ParseError,
                     ValidationError, VlpError)
from .geometry import Pose2D
from .pgm import read_pgm, write_pgm
from .pipeline_eval import (compute_stats, default_workers, derive_seed, format_results_csv,
                            format_stats_csv, locate, run_grid_experiment)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_IO = 5
EXIT_BEACONS = 6
EXIT_DECODE = 7
EXIT_CALIBRATION = 8
EXIT_EXPERIMENT = 9


def exit_code_for(exc: BaseException) -> int:
    # order matters: ValidationError is a ParseError
    for cls, code in ((ValidationError, EXIT_VALIDATION), (ParseError, EXIT_PARSE),
                      (InsufficientBeacons, EXIT_BEACONS), (DecodeError, EXIT_DECODE),
                      (CalibrationError, EXIT_CALIBRATION), (ExperimentFailed, EXIT_EXPERIMENT),
                      (OSError, EXIT_IO), (VlpError, EXIT_OTHER)):
        if isinstance(exc, cls):
            return code
    raise exc


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _pose(text: str) -> Pose2D:
    parts = text.split(",")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError("expected X,Y or X,Y,THETA_DEG")
    try:
        x, y, *rest = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number in {text!r}") from None
    return Pose2D.make(x, y, math.radians(rest[0]) if rest else 0.0)


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory: {exc.strerror}", str(path)) from None


def cmd_simulate(cfg: Config, seed: int, args) -> int:
    scenario = cfg.scenario(seed)
    pose = args.pose
    if not scenario.in_platform(pose.x, pose.y):
        x0, y0 = scenario.platform_origin
        raise ValidationError(f"pose ({pose.x}, {pose.y}) lies outside the platform "
                              f"[{x0}, {x0 + scenario.platform[0]}] x [{y0}, {y0 + scenario.platform[1]}]")
    frame = scenario.capture(pose, derive_seed(seed, "simulate"))
    out = Path(args.out)
    if out.parent != Path(""):
        _ensure_dir(out.parent)
    write_pgm(out, frame)
    _say(f"wrote {frame.width}x{frame.height} frame at pose "
         f"({pose.x:.2f}, {pose.y:.2f}, {math.degrees(pose.theta):.2f} deg) to {out}")
    _emit({"command": "simulate", "out": str(out), "width": frame.width, "height": frame.height,
           "x": pose.x, "y": pose.y, "theta": pose.theta, "seed": frame.seed})
    return EXIT_OK


def cmd_locate(cfg: Config, seed: int, args) -> int:
    k = cfg.camera
    if args.intrinsics:
        k = parse_config(args.intrinsics).camera
    frame = read_pgm(args.frame)
    if (frame.width, frame.height) != (k.width, k.height):
        raise ValidationError(f"frame is {frame.width}x{frame.height} but camera is {k.width}x{k.height}",
                              path=args.frame)
    fix = locate(frame, cfg.registry, k, cfg.height, cfg.shutter)
    p = fix.pose
    _say(f"camera at ({p.x:.3f}, {p.y:.3f}) cm, heading {math.degrees(p.theta):.3f} deg, "
         f"from LEDs {fix.led_pair[0]} and {fix.led_pair[1]}")
    record = {"command": "locate", "frame": str(args.frame), "x": p.x, "y": p.y, "theta": p.theta,
              "leds": list(fix.led_pair)}
    if frame.pose is not None:
        record["error_cm"] = math.hypot(p.x - frame.pose.x, p.y - frame.pose.y)
        _say(f"embedded ground truth ({frame.pose.x:.3f}, {frame.pose.y:.3f}); "
             f"error {record['error_cm']:.4f} cm")
    _emit(record)
    return EXIT_OK


def cmd_calibrate(cfg: Config, seed: int, args) -> int:
    out = Path(args.out)
    if out.parent != Path(""):
        _ensure_dir(out.parent)
    result = cal.calibrate_end_to_end(args.method, cfg.scenario(seed), cfg.calibration,
                                      derive_seed(seed, "calibration"))
    samples_path = out.with_name(out.stem + "_samples.csv")
    out.write_text(format_config(cfg, result.intrinsics))
    cal.write_samples_csv(samples_path, result.samples, result.sample_units)

    nominal = cfg.camera.principal_point
    pp = result.principal_point
    di, dj = pp.i - nominal.i, pp.j - nominal.j
    _say(f"{args.method} calibration from {len(result.samples)} samples")
    _say(f"principal point ({pp.i:.3f}, {pp.j:.3f}) px, shift ({di:+.3f}, {dj:+.3f}) from nominal")
    if result.dispersion is not None:
        dx, dy = result.dispersion.delta
        _say(f"dispersion center ({dx:+.3f}, {dy:+.3f}) cm; min circle radius {result.min_circle.radius:.3f} cm")
    if result.fit is not None:
        _say(f"fitted circle radius {result.fit.radius:.3f} px")
    _say(f"wrote {out} and {samples_path}")
    _emit({"command": "calibrate", "method": args.method, "principal_point": [pp.i, pp.j],
           "shift": [di, dj], "samples": len(result.samples), "out": str(out),
           "samples_csv": str(samples_path)})
    return EXIT_OK


def cmd_evaluate(cfg: Config, seed: int, args) -> int:
    out = Path(args.out)
    _ensure_dir(out)
    workers = args.workers if args.workers is not None else default_workers()
    try:
        records = run_grid_experiment(cfg.grid.spec(), cfg.scenario(seed), args.calibration,
                                      master_seed=seed, rig=cfg.calibration, workers=workers)
    except ExperimentFailed as exc:
        if exc.records is not None:
            (out / "results.csv").write_text(format_results_csv(exc.records))
        raise
    stats = compute_stats(records)
    (out / "results.csv").write_text(format_results_csv(records))
    (out / "stats.csv").write_text(format_stats_csv(stats))
    _say(f"{len(records)} trials ({stats.failed} failed), calibration={args.calibration}: "
         f"mean {stats.mean:.3f} cm, p90 {stats.p90:.3f} cm, max {stats.max:.3f} cm")
    _emit({"command": "evaluate", "calibration": args.calibration, "trials": len(records),
           "failed": stats.failed, "mean_cm": stats.mean, "p90_cm": stats.p90, "max_cm": stats.max,
           "out": str(out)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def shared(default):
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--config", default=default,
                       help="scenario config (default: $VLP_CONFIG or the bundled one)")
        p.add_argument("--seed", type=int, default=default, help="master seed (default: [general] seed)")
        return p

    # the flags work before or after the subcommand; SUPPRESS keeps the
    # subparser from clobbering a value given before it
    parser = argparse.ArgumentParser(prog="vlp", description="Rolling-shutter visible light positioning.",
                                     parents=[shared(None)])
    common = shared(argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render one frame to PGM")
    p.add_argument("--pose", type=_pose, required=True, help="X,Y[,THETA_DEG] in cm / degrees")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("locate", parents=[common], help="estimate the pose from a PGM frame")
    p.add_argument("frame")
    p.add_argument("--intrinsics", help="config whose [camera] block replaces the nominal one")
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("calibrate", parents=[common], help="estimate the principal point")
    p.add_argument("--method", choices=("rotation", "dispersion"), required=True)
    p.add_argument("--out", required=True, help="corrected config to write")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", parents=[common], help="run the grid experiment")
    p.add_argument("--calibration", choices=("none", "rotation", "dispersion"), default="none")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = parse_config(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        return args.func(cfg, seed, args)
    except (VlpError, OSError) as exc:
        if isinstance(exc, OSError) and exc.filename:
            _say(f"error: {exc.filename}: {exc.strerror or exc}")
        else:
            _say(f"error: {type(exc).__name__}: {exc}")
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
