"""Command-line driver.

Exit codes: 0 ok, 2 configuration error, 3 malformed input file,
4 numerical or calibration failure, 5 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .circulator import CalibrationError
from .config import ConfigError, build, load_config
from .encoder import (AmbiguityError, DegenerateCalibrationError, TrackingLossError,
                      build_calibration, decode_trace, read_calibration, resolution_metric,
                      write_calibration, write_decoded)
from .jointsim import protractor_reference, simulate_joint
from .magnetostatics import axial_profile, superpose_points, write_axial_profile, write_field_grid
from .placement import PlacementError, sweep_delta_d, write_placement
from .sweep import GeometryError, TraceFormatError, read_trace, synthesize_sweep, write_trace

log = logging.getLogger("moencoder")

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5
NUMERIC_ERRORS = (AmbiguityError, TrackingLossError, CalibrationError, DegenerateCalibrationError,
                  PlacementError, FloatingPointError)


def _write_meta(out: Path, command: str, args, cfg: dict, extra: dict | None = None) -> None:
    meta = {"command": command, "seed": args.seed, "version": __version__, "config": cfg}
    if extra:
        meta.update(extra)
    (out / f"{command}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def cmd_map_field(args, cfg, out: Path) -> int:
    objs = build(cfg, calibrate=False)
    fm = cfg["field_map"]
    magnets = objs.assembly.magnets_at(0.0)
    z0 = float(magnets[0].center[2])
    xs = np.arange(fm["x_range_mm"][0], fm["x_range_mm"][1] + 1e-9, fm["step_mm"])
    ys = np.arange(fm["y_range_mm"][0], fm["y_range_mm"][1] + 1e-9, fm["step_mm"])
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, z0)])
    inside = np.zeros(len(pts), dtype=bool)
    for m in magnets:
        inside |= m.contains(pts, strict_tol=-1e-9)
    pts = pts[~inside]
    B = superpose_points(magnets, pts)
    write_field_grid(out / "field_grid.csv", pts, B)
    # axial profile beside the device, at the magnetometer offset, facing the rotor
    off = fm["profile_offset_mm"]
    prof = axial_profile(magnets, (off, 0.0, 0.0), (off, 0.0, 50.0), int(fm["profile_samples"]))
    write_axial_profile(out / "axial_profile.csv", prof)
    _write_meta(out, "map-field", args, cfg, {"points": int(len(pts))})
    log.info("field grid: %d points, max |B| = %.3f mT", len(pts),
             float(np.linalg.norm(B, axis=1).max()) if len(B) else 0.0)
    return EXIT_OK


def cmd_sweep(args, cfg, out: Path) -> int:
    objs = build(cfg)
    trace = synthesize_sweep(objs.model, objs.assembly, objs.sweep, args.seed)
    write_trace(out / "trace.csv", trace)
    _write_meta(out, "sweep", args, cfg, {"lumped_K": objs.lumped_K, "samples": len(trace)})
    log.info("trace: %d samples, K = %.6g dB/mT", len(trace), objs.lumped_K)
    return EXIT_OK


def cmd_calibrate(args, cfg, out: Path) -> int:
    objs = build(cfg)
    table = build_calibration(objs.model, objs.assembly, cfg["encoder"]["grid_step_deg"])
    write_calibration(out / "calibration.csv", table)
    res = resolution_metric(table, cfg["encoder"]["calibration_noise_sigma_dB"])
    _write_meta(out, "calibrate", args, cfg, {"lumped_K": objs.lumped_K,
                                             "reference_dB": table.reference_dB,
                                             "resolution_deg": res})
    log.info("calibration: K = %.6g dB/mT, resolution %.4f deg", objs.lumped_K, res)
    return EXIT_OK


def cmd_decode(args, cfg, out: Path) -> int:
    table = read_calibration(args.calibration or out / "calibration.csv")
    trace = read_trace(args.trace or out / "trace.csv")
    if len(trace) == 0:
        raise TraceFormatError("trace has no samples")
    s, e = cfg["sweep"], cfg["encoder"]
    decoded = decode_trace(table, trace, velocity_deg_per_s=s["velocity_deg_per_s"],
                           direction_hint=e["direction_hint"],
                           noise_sigma_dB=s["noise_sigma_dB"])
    write_decoded(out / "decoded.csv", decoded)
    _write_meta(out, "decode", args, cfg, {"samples": len(decoded),
                                          "flat_fraction": float(decoded.flat.mean())})
    log.info("decoded %d samples", len(decoded))
    return EXIT_OK


def cmd_optimize(args, cfg, out: Path) -> int:
    objs = build(cfg)
    p = cfg["placement"]
    res = sweep_delta_d(objs.model, objs.assembly, p["delta_d_min_mm"], p["delta_d_max_mm"],
                        p["delta_d_step_mm"], cfg["encoder"]["calibration_noise_sigma_dB"],
                        threads=args.threads, grid_step_deg=cfg["encoder"]["grid_step_deg"])
    write_placement(out / "placement.csv", out / "placement.json", res)
    _write_meta(out, "optimize", args, cfg, {"lumped_K": objs.lumped_K})
    log.info("best delta_d = %g mm, resolution %.4f deg", res.best_delta_d, res.best_resolution_deg)
    return EXIT_OK


def cmd_jointsim(args, cfg, out: Path) -> int:
    objs = build(cfg)
    j = cfg["joint"]
    table = build_calibration(objs.model, objs.assembly, cfg["encoder"]["grid_step_deg"])
    reports = [simulate_joint(objs.model, objs.assembly, objs.joint, cfg["sweep"]["noise_sigma_dB"],
                              args.seed + k, table) for k in range(int(j["runs"]))]
    errs = [e for r in reports for e in r.per_increment_error_deg]
    summary = {
        "runs": [r.to_dict() for r in reports],
        "mean_abs_error_deg": float(np.mean(errs)) if errs else 0.0,
        "max_increment_error_deg": float(np.max(errs)) if errs else 0.0,
        "protractor_deg": protractor_reference(objs.joint, j["protractor_quantization_deg"],
                                               args.seed).tolist(),
        "truncated": any(r.truncated for r in reports),
        "config": cfg,
    }
    if reports and reports[0].decoded is not None:
        write_decoded(out / "joint_decoded.csv", reports[0].decoded)
    (out / "joint_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_meta(out, "jointsim", args, cfg, {"lumped_K": objs.lumped_K})
    log.info("joint: mean |error| %.3f deg over %d runs", summary["mean_abs_error_deg"], len(reports))
    return EXIT_NUMERIC if summary["truncated"] else EXIT_OK


COMMANDS = {"map-field": cmd_map_field, "sweep": cmd_sweep, "calibrate": cmd_calibrate,
            "decode": cmd_decode, "optimize": cmd_optimize, "jointsim": cmd_jointsim}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="TOML run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="noise seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads for the offset search")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="moencoder", parents=[common],
                                     description="Magneto-optic rotary encoder simulation.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("map-field", parents=[common], help="rotor field grid and axial profile")
    sub.add_parser("sweep", parents=[common], help="synthesize an attenuation sweep")
    sub.add_parser("calibrate", parents=[common], help="fit K and write the calibration table")
    p = sub.add_parser("decode", parents=[common], help="decode a trace into angles")
    p.add_argument("--trace", type=Path, help="trace CSV (default OUT/trace.csv)")
    p.add_argument("--calibration", type=Path, help="calibration CSV (default OUT/calibration.csv)")
    sub.add_parser("optimize", parents=[common], help="search the magnet offset")
    sub.add_parser("jointsim", parents=[common], help="simulate stepped joint motion")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", 0), ("out", Path("out")),
                          ("threads", os.cpu_count() or 1), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, args.out)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceFormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
