"""Command-line entry point.

Exit codes: 0 success, 1 error, 2 a legitimate but empty result (the
certified inner approximation has no points).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy

from .certify import Certificate, contour2d, inner_volume
from .estimator import PipelineError, compute, module_tag
from .model import SolveConfig, load_spec
from .moments import objective_vector
from .sdp import export_sdpa
from .simulate import validate_inner
from .soscompile import build_sos_program, compile_to_sdp

log = logging.getLogger("reachsos")

EXIT_OK, EXIT_ERROR, EXIT_EMPTY = 0, 1, 2


def _versions() -> dict[str, str]:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"reachsos": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _write_manifest(out: Path, command: str, argv: Sequence[str], **fields: Any) -> Path:
    path = out.with_name(out.name + ".manifest.json")
    doc = {"command": command, "argv": list(argv), "versions": _versions(), **fields}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable))
    return path


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _config(args) -> SolveConfig:
    md = None
    if getattr(args, "multiplier_degrees", None):
        md = tuple(int(v) for v in args.multiplier_degrees.split(","))
    try:
        return SolveConfig(psi_degree=args.degree, multiplier_degrees=md, strict=getattr(args, "strict", False),
                           max_iters=args.max_iters, seed=getattr(args, "seed", 0), scale=not args.no_scale)
    except ValueError as exc:
        raise PipelineError("model", str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_compute(args) -> int:
    spec = load_spec(args.spec)
    cfg = _config(args)
    result = compute(spec, cfg, geometry=not args.skip_geometry, time_limit=args.time_limit,
                     verbose=args.verbose)
    cert = result.certificate
    out = Path(args.out)
    cert.save(out)
    empty = result.empty
    _write_manifest(out, "compute", args.argv, spec=str(args.spec), spec_fingerprint=spec.fingerprint(),
                    config=cfg.to_dict(), sizes=result.sizes, timings=result.timings, solver=result.solver,
                    objective_value=cert.objective_value, max_residual=cert.max_residual,
                    min_eigenvalue=cert.min_eigenvalue, empty=empty,
                    min_psi0=result.emptiness.min_value, seed=cfg.seed)
    print(f"d*_{cfg.psi_degree} = {cert.objective_value:.10g}  residual {cert.max_residual:.2e}  "
          f"min eig {cert.min_eigenvalue:.2e}  ({result.solver['iterations']} iterations, "
          f"{result.timings['solve']:.2f}s)")
    if empty:
        print(f"inner approximation is empty: min psi(x,0) over B = {result.emptiness.min_value:.6g} > 0")
        return EXIT_EMPTY
    return EXIT_OK


def cmd_validate(args) -> int:
    cert = Certificate.load(args.cert)
    spec = load_spec(args.spec) if args.spec else cert.spec
    report = validate_inner(cert, spec, n_samples=args.samples, signals_per_sample=args.signals,
                            M=args.segments, dt=args.dt, seed=args.seed, method=args.method)
    text = report.to_json()
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        _write_manifest(out, "validate", args.argv, cert=str(args.cert), spec_fingerprint=spec.fingerprint(),
                        seed=args.seed, passed=report.passed, violations=len(report.violations))
    if report.empty:
        print("certificate describes an empty set; nothing to validate")
        return EXIT_OK
    print(f"{report.samples} samples x {report.signals_per_sample} signals: "
          f"{len(report.violations)} violations")
    for v in report.violations[:10]:
        print(f"  {v['kind']} at t={v['time']:.4g} from x0={v['x0']} (signal {v['signal']}, {v['signal_kind']})")
    return EXIT_OK if report.passed else EXIT_ERROR


def cmd_hj2d(args) -> int:
    from .hjgrid import run, zero_contour

    spec = load_spec(args.spec)
    t0 = time.perf_counter()
    field = run(spec, args.grid)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    field.save(out)
    contour = zero_contour(field, axes=spec.state_vars)
    if args.contour:
        contour.save(Path(args.contour))
    _write_manifest(out, "hj2d", args.argv, spec=str(args.spec), spec_fingerprint=spec.fingerprint(),
                    grid=args.grid, seconds=elapsed, contour_curves=len(contour))
    print(f"{args.grid}x{args.grid} grid solved in {elapsed:.1f}s, {len(contour)} zero-level curve(s)")
    return EXIT_OK


def _parse_slice(text: str | None) -> dict[str, float]:
    out = {}
    for part in (text or "").split(","):
        if part.strip():
            name, _, val = part.partition("=")
            out[name.strip()] = float(val)
    return out


def cmd_levelset(args) -> int:
    cert = Certificate.load(args.cert)
    axes = args.axes.split(",") if args.axes else None
    contour = contour2d(cert, args.resolution, axes=axes, slice_values=_parse_slice(args.slice))
    out = Path(args.out)
    contour.save(out)
    _write_manifest(out, "levelset", args.argv, cert=str(args.cert), spec_fingerprint=cert.fingerprint,
                    resolution=args.resolution, curves=len(contour))
    print(f"{len(contour)} curve(s) written to {out}")
    return EXIT_OK


def cmd_export_sdpa(args) -> int:
    spec = load_spec(args.spec)
    cfg = _config(args)
    program = build_sos_program(spec, cfg)
    inst = compile_to_sdp(program, objective_vector(cfg.psi_degree, spec, unit=program.working.scaling.active))
    out = Path(args.out)
    out.write_bytes(export_sdpa(inst))
    sizes = inst.sizes()
    _write_manifest(out, "export-sdpa", args.argv, spec=str(args.spec), spec_fingerprint=spec.fingerprint(),
                    config=cfg.to_dict(), sizes=sizes,
                    objective_jacobian=program.working.scaling.jacobian(spec.n_states))
    print(f"free_vars={sizes['free_vars']} eq_constraints={sizes['eq_constraints']} "
          f"psd_blocks={sizes['psd_blocks']} max_block={sizes['max_block']}")
    return EXIT_OK


SWEEP_COLUMNS = ["degree", "d_star", "free_vars", "eq_constraints", "psd_blocks", "max_block", "iterations",
                 "wall_time", "area", "area_se", "empty"]


def cmd_sweep(args) -> int:
    spec = load_spec(args.spec)
    degrees = [int(v) for v in args.degrees.split(",")]
    rows = []
    for k in degrees:
        args.degree = k
        cfg = _config(args)
        t0 = time.perf_counter()
        result = compute(spec, cfg, geometry=not args.skip_geometry, time_limit=args.time_limit)
        wall = time.perf_counter() - t0
        cert = result.certificate
        if args.cert_dir:
            Path(args.cert_dir).mkdir(parents=True, exist_ok=True)
            cert.save(Path(args.cert_dir) / f"{spec.name or 'spec'}_k{k}.json")
        area, se = (0.0, 0.0) if result.empty else inner_volume(cert, args.area_samples, seed=args.seed)
        sizes = result.sizes
        rows.append({"degree": k, "d_star": cert.objective_value, "free_vars": sizes["free_vars"],
                     "eq_constraints": sizes["eq_constraints"], "psd_blocks": sizes["psd_blocks"],
                     "max_block": sizes["max_block"], "iterations": result.solver["iterations"],
                     "wall_time": wall, "area": area, "area_se": se, "empty": result.empty})
    monotone = all(b["d_star"] <= a["d_star"] + 1e-6 for a, b in zip(rows, rows[1:]))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    table = buf.getvalue()
    if args.out:
        out = Path(args.out)
        out.write_text(table)
        _write_manifest(out, "sweep", args.argv, spec=str(args.spec), spec_fingerprint=spec.fingerprint(),
                        degrees=degrees, rows=rows, d_star_non_increasing=monotone, seed=args.seed)
    sys.stdout.write(table)
    if not monotone:
        print("d* is not non-increasing across the sweep", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _solver_flags(p):
    p.add_argument("--spec", required=True, help="spec JSON path or bundled example name (ex1a, ...)")
    p.add_argument("--multiplier-degrees", help="explicit pair 'ds,ds_prime' instead of the automatic policy")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--no-scale", action="store_true", help="compile in original coordinates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reachsos", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="solver log on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="solve the SOS program and write a certificate")
    _solver_flags(p)
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--strict", action="store_true", help="tighten acceptance thresholds 100x")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-limit", type=float, help="solver wall-clock budget in seconds")
    p.add_argument("--skip-geometry", action="store_true")
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("validate", help="Monte-Carlo soundness check of a certificate")
    p.add_argument("--cert", required=True)
    p.add_argument("--spec")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--signals", type=int, default=20)
    p.add_argument("--segments", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--method", choices=("rk4", "euler"), default="rk4")
    p.add_argument("--out", help="ValidationReport JSON")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("hj2d", help="grid solution of the obstacle HJ equation (2 states)")
    p.add_argument("--spec", required=True)
    p.add_argument("--grid", type=int, default=500)
    p.add_argument("--out", required=True)
    p.add_argument("--contour")
    p.set_defaults(func=cmd_hj2d)

    p = sub.add_parser("levelset", help="zero contour of psi(x, 0) as CSV")
    p.add_argument("--cert", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=400)
    p.add_argument("--axes", help="two state names, e.g. x1,x2")
    p.add_argument("--slice", help="fixed values for the other states, e.g. x3=0,x4=0")
    p.set_defaults(func=cmd_levelset)

    p = sub.add_parser("export-sdpa", help="write the compiled SDP in SDPA sparse format")
    _solver_flags(p)
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_sdpa)

    p = sub.add_parser("sweep", help="solve over a list of degrees and tabulate")
    _solver_flags(p)
    p.add_argument("--degrees", default="4,6,8")
    p.add_argument("--out", help="CSV table")
    p.add_argument("--cert-dir")
    p.add_argument("--area-samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--skip-geometry", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error [cli]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (PipelineError, ValueError, RuntimeError, OSError) as exc:
        tag = module_tag(exc)
        msg = str(exc)
        if isinstance(exc, PipelineError):
            msg = msg.split("] ", 1)[1]
        print(f"error [{tag}]: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
