"""Command line front end for scenario runs, analyses and the nodes.

Exit codes: 0 success, 1 a requested check failed, 2 bad usage or bad
config, 3 the simulation diverged.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

import numpy as np

from .arm_model import forward_kinematics, load_arm_file, matrix_to_quat
from .configio import ConfigError
from .harness import (
    MountingOption,
    RunResult,
    assist_comparison,
    default_mounting_grid,
    delay_compensation_report,
    load_pose_set,
    run_scenario,
    run_split,
    run_station,
    save_pose_set,
    seated_pose_set,
    workspace_analysis,
)
from .hand_channel import MalformedMapping
from .scenario import builtin_config, find_scenario, list_bundled_scenarios, load_scenario
from .sim_world import NumericalBlowup
from .teleop_link import SocketLink
from .wrench_calib import (
    DegenerateSampleSet,
    MalformedSampleFile,
    calibrate,
    load_samples_csv,
    residual_rms,
    save_profile,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_DIVERGED = 3


def _print_summary(result: RunResult) -> None:
    print(f"scenario {result.scenario_name}: {result.ticks} ticks")
    if result.operator_trace:
        print(f"  operator trace: {result.operator_trace}")
    if result.avatar_trace:
        print(f"  avatar trace:   {result.avatar_trace}")
    for key in sorted(result.summary):
        print(f"  {key} = {result.summary[key]:g}")


def _resolve_arm(value: str) -> str:
    if value in ("builtin:operator", "builtin:avatar"):
        return builtin_config(value.split(":", 1)[1] + "_arm.cfg")
    if not os.path.exists(value):
        raise ConfigError(f"arm file not found: '{value}'")
    return value


def _host_port(value: str):
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(
            f"expected HOST:PORT, got '{value}'")
    return host, int(port)


# ====================== subcommands ======================


def cmd_list(args) -> int:
    for name in list_bundled_scenarios():
        print(name)
    return EXIT_OK


def cmd_run(args) -> int:
    path = find_scenario(args.scenario)
    if args.mode == "split":
        result = run_split(path, trace_dir=args.trace_dir)
    else:
        result = run_scenario(load_scenario(path), trace_dir=args.trace_dir)
    _print_summary(result)
    return EXIT_OK


def cmd_assist_compare(args) -> int:
    scenario = load_scenario(find_scenario(args.scenario))
    report = assist_comparison(scenario, trace_dir=args.trace_dir)
    for key in ("assist_force_rms", "baseline_force_rms",
                "assist_force_peak", "baseline_force_peak",
                "assist_torque_rms", "baseline_torque_rms",
                "rms_reduction"):
        print(f"{key} = {report[key]:.4f}")
    if args.check and report["assist_force_rms"] >= report["baseline_force_rms"]:
        print("CHECK FAILED: assist did not lower the interaction force RMS")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_delay_report(args) -> int:
    report = delay_compensation_report(args.operator_trace, args.avatar_trace,
                                       max_lag_s=args.max_lag_s,
                                       settle_s=args.settle_s)
    print(f"sample spacing: {report.sample_ms:.3f} ms")
    print("joint  mirror_lag_ms  telemetry_lag_ms  motion_range_rad")
    for joint, mirror_ms, telem_ms, span in report.per_joint:
        print(f"{joint:>5}  {mirror_ms:>13.3f}  {telem_ms:>16.3f}  {span:>16.4f}")
    print(f"mirror lag (all moving joints):  {report.mirror_lag_ms:.3f} ms")
    print(f"telemetry lag (all moving joints): {report.telemetry_lag_ms:.3f} ms")
    failed = False
    if args.check_mirror_ms is not None and report.mirror_lag_ms > args.check_mirror_ms:
        print(f"CHECK FAILED: mirror lag {report.mirror_lag_ms:.3f} ms "
              f"> {args.check_mirror_ms} ms")
        failed = True
    if (args.check_telemetry_min_ms is not None
            and report.telemetry_lag_ms < args.check_telemetry_min_ms):
        print(f"CHECK FAILED: telemetry lag {report.telemetry_lag_ms:.3f} ms "
              f"< {args.check_telemetry_min_ms} ms")
        failed = True
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_workspace(args) -> int:
    setup = load_arm_file(_resolve_arm(args.arm))
    if args.poses:
        poses = load_pose_set(args.poses)
    else:
        start = forward_kinematics(setup.model, setup.model.rest_pose)
        reference = matrix_to_quat(
            (setup.world_from_base @ start.matrix())[:3, :3])
        poses = seated_pose_set(args.synthesize, seed=args.seed,
                                reference_quat=reference)
    if args.save_poses:
        save_pose_set(args.save_poses, poses)
        print(f"saved {poses.shape[0]} poses to {args.save_poses}")

    mountings: List[MountingOption] = default_mounting_grid()
    report = workspace_analysis(poses, setup.model, mountings,
                                restarts=args.restarts,
                                max_iters=args.max_iters)
    print(f"{poses.shape[0]} target poses, {len(mountings)} mountings "
          f"(baseline: {report.baseline.name})")
    print("mounting                        reached  fraction")
    for row in report.rows:
        print(f"{row.name:<30}  {row.reached:>7}  {row.fraction:>8.3f}")
    gain_pp = 100.0 * (report.best.fraction - report.baseline.fraction)
    print(f"best mounting: {report.best.name} "
          f"(+{gain_pp:.1f} pp over baseline)")
    if args.min_gain_pp is not None and gain_pp < args.min_gain_pp:
        print(f"CHECK FAILED: best mounting gains {gain_pp:.1f} pp "
              f"< {args.min_gain_pp} pp")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_calibrate(args) -> int:
    samples = load_samples_csv(args.samples)
    profile = calibrate(samples)
    rms = residual_rms(profile, samples)
    save_profile(args.out, profile, rms=rms)
    print(f"recovered mass: {profile.mass:.6f} kg")
    print(f"force bias:  {np.array2string(profile.force_bias, precision=6)}")
    print(f"torque bias: {np.array2string(profile.torque_bias, precision=6)}")
    print(f"center of mass: {np.array2string(profile.com, precision=6)}")
    print(f"residual rms: force {rms[0]:.6f} N, torque {rms[1]:.6f} N*m")
    print(f"profile written to {args.out}")
    return EXIT_OK


def _run_node(role: str, args) -> int:
    scenario = load_scenario(find_scenario(args.scenario))
    if args.listen is not None:
        host, port = args.listen
        link = SocketLink.listen(host, port)
    else:
        host, port = args.connect
        link = SocketLink.connect(host, port)
    try:
        summary = run_station(role, scenario, link, trace_path=args.trace)
    finally:
        link.close()
    for key in sorted(summary):
        print(f"{key} = {summary[key]:g}")
    return EXIT_OK


def cmd_operator_node(args) -> int:
    return _run_node("operator", args)


def cmd_avatar_node(args) -> int:
    return _run_node("avatar", args)


# ====================== parser ======================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="telearm",
        description="Bilateral teleoperation scenarios, analyses and nodes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("list", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("run", help="run a scenario closed loop")
    p.add_argument("scenario", help="scenario file or bundled name")
    p.add_argument("--trace-dir", default=None,
                   help="write per-station trace CSVs here")
    p.add_argument("--mode", choices=("loopback", "split"), default="loopback",
                   help="single process, or operator in a subprocess")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("assist-compare",
                       help="same scenario with assist on and off")
    p.add_argument("scenario")
    p.add_argument("--trace-dir", default=None)
    p.add_argument("--check", action="store_true",
                   help="fail unless assist lowers the force RMS")
    p.set_defaults(func=cmd_assist_compare)

    p = sub.add_parser("delay-report",
                       help="mirror and telemetry lag from a traced run")
    p.add_argument("operator_trace")
    p.add_argument("avatar_trace")
    p.add_argument("--max-lag-s", type=float, default=0.4)
    p.add_argument("--settle-s", type=float, default=3.0)
    p.add_argument("--check-mirror-ms", type=float, default=None)
    p.add_argument("--check-telemetry-min-ms", type=float, default=None)
    p.set_defaults(func=cmd_delay_report)

    p = sub.add_parser("workspace",
                       help="reachable fraction per mounting candidate")
    p.add_argument("--arm", default="builtin:avatar",
                   help="arm file or builtin:operator / builtin:avatar")
    p.add_argument("--poses", default=None,
                   help="pose-set CSV (default: synthesize)")
    p.add_argument("--synthesize", type=int, default=250, metavar="N",
                   help="number of poses to synthesize")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-poses", default=None, metavar="CSV")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--max-iters", type=int, default=60)
    p.add_argument("--min-gain-pp", type=float, default=None,
                   help="fail unless the best mounting beats the baseline "
                        "by this many percentage points")
    p.set_defaults(func=cmd_workspace)

    p = sub.add_parser("calibrate",
                       help="fit sensor bias, mass and center of mass")
    p.add_argument("samples", help="CSV of gravity direction + raw reading")
    p.add_argument("--out", required=True, help="profile file to write")
    p.set_defaults(func=cmd_calibrate)

    for role in ("operator", "avatar"):
        p = sub.add_parser(f"{role}-node",
                           help=f"run the {role} station over TCP")
        p.add_argument("--scenario", required=True)
        p.add_argument("--trace", default=None, help="trace CSV path")
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--connect", type=_host_port, metavar="HOST:PORT")
        group.add_argument("--listen", type=_host_port, metavar="HOST:PORT")
        p.set_defaults(func=cmd_operator_node if role == "operator"
                       else cmd_avatar_node)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalBlowup as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, MalformedMapping, MalformedSampleFile,
            DegenerateSampleSet, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
