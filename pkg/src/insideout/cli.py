"""Command-line pipeline: simulate -> calibrate -> evaluate / bullseye.

Exit status: 0 success, 2 invalid input, 3 solver failure (degenerate or
unreachable), 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Sequence

from . import serialization as ser
from .chain import calibrate as close_calibration
from .evaluation import (
    BullseyeUnreachableError,
    align_to_bullseye,
    check_bullseye,
    compute_tre,
    gantry_ray,
    simulate_gaze,
)
from .handeye import HandEyeError, solve
from .trajectory import (
    PAIR_MODES,
    PoseStream,
    add_out_of_plane_poses,
    generate_orbit,
    relative_pairs,
    simulate_tracker,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def _config(args) -> ser.RunConfig:
    cfg = ser.load_config(args.config) if args.config else ser.RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            noise=dataclasses.replace(cfg.noise, seed=args.seed),
            gaze=dataclasses.replace(cfg.gaze, seed=args.seed),
        )
    return cfg


def _emit(doc: dict, out: str | None) -> None:
    if out:
        ser.write_json(doc, out)
    else:
        sys.stdout.write(ser.dumps(doc))


def simulate_stream(cfg: ser.RunConfig) -> PoseStream:
    orbit = generate_orbit(cfg.orbit)
    stream = simulate_tracker(orbit, cfg.ground_truth_X, cfg.world_T_volume, cfg.noise)
    if cfg.out_of_plane_tilts:
        stream = add_out_of_plane_poses(
            stream,
            cfg.out_of_plane_tilts,
            cfg.ground_truth_X,
            cfg.world_T_volume,
            orbit_axis=cfg.orbit.orbit_axis,
            rotation_angle=cfg.out_of_plane_rotation,
            noise=cfg.noise,
        )
    return stream


def cmd_simulate(args) -> int:
    stream = simulate_stream(_config(args))
    _emit(ser.stream_to_dict(stream), args.out)
    if args.csv:
        Path(args.csv).write_text(ser.stream_to_csv(stream), encoding="utf-8")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    stream = ser.load_stream(args.poses)
    pair_mode = args.pair_mode
    if pair_mode is None:
        pair_mode = _config(args).pair_mode if args.config else "all_pairs"
    solution = solve(relative_pairs(stream, pair_mode))
    first = stream[0]
    state = close_calibration(first.world_T_tracker, solution.X, first.volume_T_carm)
    _emit(ser.report_to_dict(solution, state, pair_mode), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = ser.load_report(args.report)
    cfg = _config(args)
    phantom = ser.load_phantom(args.phantom) if args.phantom else cfg.phantom
    if args.gaze:
        observations = ser.load_gaze(args.gaze)
    else:
        # Users aim at where the spheres really are, per the synthetic ground truth.
        observations = simulate_gaze(
            phantom, cfg.true_state(), cfg.user_positions(), cfg.gaze.aim_error_sigma, cfg.gaze.seed
        )
    grid = None if args.any_grid else (args.users, len(phantom.spheres))
    result = compute_tre(phantom, report.state, observations, expected_grid=grid)
    _emit(ser.tre_to_dict(result), args.out)
    return EXIT_OK


def cmd_bullseye(args) -> int:
    report = ser.load_report(args.report)
    cfg = _config(args)
    phantom = ser.load_phantom(args.phantom) if args.phantom else cfg.phantom
    gantry = cfg.gantry
    if args.mode == "check":
        ray = gantry_ray(report.state, gantry, args.orbital, args.angulation, args.shift)
        check = check_bullseye(phantom, ray)
        doc = ser.bullseye_to_dict("check", args.orbital, args.angulation, args.shift, ray, check)
        _emit(doc, args.out)
        return EXIT_OK
    try:
        solution = align_to_bullseye(phantom, report.state, gantry)
    except BullseyeUnreachableError as exc:
        if exc.best is not None:
            doc = ser.bullseye_solution_to_dict(exc.best, status="unreachable", message=str(exc))
            _emit(doc, args.out)
        raise
    _emit(ser.bullseye_solution_to_dict(solution), args.out)
    return EXIT_OK


def cmd_init_config(args) -> int:
    _emit(ser.config_to_dict(_config(args)), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="insideout", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="run configuration JSON (defaults used when omitted)")
        p.add_argument("--seed", type=int, help="override the noise and gaze seeds")
        p.add_argument("--out", help="output path (stdout when omitted)")

    p = sub.add_parser("simulate", help="simulate a noisy orbit and write a pose file")
    common(p)
    p.add_argument("--csv", help="also export the stream as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="hand-eye calibration of a pose file")
    p.add_argument("poses", help="pose stream JSON")
    p.add_argument("--pair-mode", choices=PAIR_MODES, help="default: config value or all_pairs")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="point-to-line TRE for a calibration report")
    p.add_argument("report", help="hand-eye report JSON")
    p.add_argument("--phantom", help="phantom JSON (config phantom when omitted)")
    p.add_argument("--gaze", help="gaze observations JSON (simulated from the config when omitted)")
    p.add_argument("--users", type=int, default=4, help="expected number of users (default 4)")
    p.add_argument("--any-grid", action="store_true", help="accept any complete users x targets grid")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bullseye", help="check or solve a bull's-eye gantry setting")
    p.add_argument("report", help="hand-eye report JSON")
    p.add_argument("--phantom", help="phantom JSON (config phantom when omitted)")
    p.add_argument("--mode", choices=("check", "solve"), default="solve")
    p.add_argument("--orbital", type=float, default=0.0, help="check mode, degrees")
    p.add_argument("--angulation", type=float, default=0.0, help="check mode, degrees")
    p.add_argument("--shift", type=float, nargs=3, default=[0.0, 0.0, 0.0], metavar=("X", "Y", "Z"))
    common(p)
    p.set_defaults(func=cmd_bullseye)

    p = sub.add_parser("init-config", help="write the default run configuration")
    common(p)
    p.set_defaults(func=cmd_init_config)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (HandEyeError, BullseyeUnreachableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
