"""
convexreg command line.

Usage:
    python convexreg.py fit --input data.csv --x-cols age --y-col lens \\
        --shape concave --smoother localpoly --degree 1 --bandwidth cv --grid 100 --out out/
    python convexreg.py band --input data.csv --alpha 0.05 --delta-exponent 0.3 --out out/
    python convexreg.py simulate --study regression1d --seed 7 --out out/
    python convexreg.py replay --manifest out/manifest.json --out again/

Every command writes a manifest.json next to its outputs. On failure exactly
one line goes to stderr:

    error: <category>: <message>

Exit codes: 0 ok, 1 internal, 2 usage, 3 parse, 4 geometry, 5 smoothing,
6 input, 7 simulation.
"""

import argparse
import sys
import time

import numpy as np

import log
from bands import BandConfig, confidence_band
from config import load_config, pipeline_section
from csv_io import RunManifest, band_text, envelope_to_json, file_digest, read_table, table_text
from errors import ConvexRegError, UsageError
from geometry import make_box_domain, polytope_grid, uniform_grid
from outputs import DirectoryOutput
from pipeline import PipelineConfig, run_procedure
from simharness import STUDIES, reproduce_figure

logger = log.get_logger("cli")

EVAL_PER_AXIS = {1: 1001, 2: 101}


class _Parser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of printing usage and exiting."""

    def error(self, message):
        raise UsageError(message)


def _columns(text: str | None) -> list[str] | None:
    return [c.strip() for c in text.split(",") if c.strip()] if text else None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="convexreg", description="Convex regression by smoothing and convexification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a convex (or concave) regression")
    fit.add_argument("--input", required=True)
    fit.add_argument("--x-cols")
    fit.add_argument("--y-col")
    fit.add_argument("--shape", choices=("convex", "concave"))
    fit.add_argument("--smoother", choices=("localpoly", "nw", "window"))
    fit.add_argument("--degree", type=int)
    fit.add_argument("--kernel")
    fit.add_argument("--bandwidth", help="a number, 'cv' or 'tran'")
    fit.add_argument("--grid", help="points per axis, or 'design'")
    fit.add_argument("--domain", choices=("box", "hull"))
    fit.add_argument("--extend", action="store_true", help="evaluate the curve on the whole bounding box")
    mode = fit.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=None)
    mode.add_argument("--lenient", dest="strict", action="store_false")
    fit.add_argument("--config")
    fit.add_argument("--out", required=True)

    band = sub.add_parser("band", help="uniform confidence band (1D)")
    band.add_argument("--input", required=True)
    band.add_argument("--x-cols")
    band.add_argument("--y-col")
    band.add_argument("--alpha", type=float)
    band.add_argument("--delta-exponent", type=float)
    band.add_argument("--kernel")
    band.add_argument("--correction", help="kappa, or 'bickel-rosenblatt'")
    band.add_argument("--attach", choices=("smoother", "envelope"), default="smoother")
    band.add_argument("--config")
    band.add_argument("--out", required=True)

    sim = sub.add_parser("simulate", help="reproduce a simulation study")
    sim.add_argument("--study", required=True, choices=STUDIES)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--config")
    sim.add_argument("--out", required=True)

    replay = sub.add_parser("replay", help="re-run a command from its manifest")
    replay.add_argument("--manifest", required=True)
    replay.add_argument("--out")
    return parser


# ── Commands ────────────────────────────────────────────────────────────

def _pipeline_config(args, cfg: dict) -> PipelineConfig:
    section = pipeline_section(cfg)
    for key in ("shape", "smoother", "degree", "kernel", "bandwidth", "grid", "domain", "strict"):
        value = getattr(args, key)
        if value is not None:
            section[key] = value
    return PipelineConfig.from_dict(section)


def _curve_points(domain, extend: bool) -> np.ndarray:
    per_axis = EVAL_PER_AXIS.get(domain.dim, 21)
    if extend and not domain.is_box:
        lo, hi = domain.bounding_box()
        return uniform_grid(make_box_domain(lo, hi), per_axis).points
    return polytope_grid(domain, per_axis).points


def cli_fit(args, argv: list[str]) -> RunManifest:
    cfg = load_config(args.config) if args.config else load_config()
    config = _pipeline_config(args, cfg)
    table = read_table(args.input, _columns(args.x_cols), args.y_col)
    data = table.dataset()

    started = time.monotonic()
    run = run_procedure(data, config)
    elapsed = time.monotonic() - started

    pts = _curve_points(run.envelope.domain, args.extend)
    smooth, _ = run.smoother.evaluate_many(pts)
    names = ["x"] if data.dim == 1 else [f"x{k + 1}" for k in range(data.dim)]
    out = DirectoryOutput(args.out)
    out.write_text("envelope.json", envelope_to_json(run.envelope))
    out.write_text("curve.csv", table_text(
        [*names, "estimate", "smoother"],
        [*pts.T, run.envelope.evaluate_many(pts, extend=True), run.sign * smooth]))

    logger.info(f"✅ {config.shape} fit: {len(run.envelope.offsets)} pieces, h={run.smoother.bandwidth:.4g}, "
                f"{len(run.grid)} grid points → {args.out}")
    return _finish(out, "fit", argv, config.to_dict(), table.path, {"fit_s": elapsed},
                   {"bandwidth": run.smoother.bandwidth, "pieces": len(run.envelope.offsets),
                    "excluded_grid_points": run.sample.excluded_count,
                    "fallback_grid_points": run.sample.fallback_count})


def cli_band(args, argv: list[str]) -> RunManifest:
    cfg = load_config(args.config) if args.config else load_config()
    section = dict(cfg.get("bands", {}))
    for key in ("alpha", "delta_exponent", "kernel", "correction"):
        value = getattr(args, key)
        if value is not None:
            section[key] = value
    if isinstance(section.get("correction"), str) and section["correction"] != "bickel-rosenblatt":
        try:
            section["correction"] = float(section["correction"])
        except ValueError:
            raise UsageError("--correction must be a number or 'bickel-rosenblatt'") from None
    config = BandConfig.from_dict(section)
    table = read_table(args.input, _columns(args.x_cols), args.y_col)

    started = time.monotonic()
    band = confidence_band(table.dataset(), config, attach=args.attach)
    out = DirectoryOutput(args.out)
    out.write_text("band.csv", band_text(band))
    logger.info(f"✅ band: width {band.width:.4f} (α={config.alpha}, n={band.n}) → {args.out}")
    return _finish(out, "band", argv, {**section, "attach": args.attach}, table.path,
                   {"band_s": time.monotonic() - started}, {"width": band.width, **band.constants})


def cli_simulate(args, argv: list[str]) -> RunManifest:
    cfg = load_config(args.config) if args.config else load_config()
    studies = cfg.get("studies", {})
    seed = args.seed if args.seed is not None else int(studies.get("seed", 2009))
    reps = args.reps or studies.get("replications")
    out = DirectoryOutput(args.out)
    pipeline = PipelineConfig.from_dict(pipeline_section(cfg)) if args.config else None
    return reproduce_figure(args.study, out, seed=seed, replications=reps, pipeline=pipeline, argv=argv)


def _finish(out, command, argv, config, input_path, timings, summary) -> RunManifest:
    manifest = RunManifest(
        command=command, argv=argv, config=config,
        input_digest=file_digest(input_path), outputs=dict(out.digests),
        timings={k: round(v, 3) for k, v in timings.items()}, summary=summary,
    )
    out.write_text("manifest.json", manifest.to_json())
    return manifest


def cli_replay(args) -> RunManifest:
    """Re-run the manifest's command (optionally into another directory) and compare digests."""
    manifest = RunManifest.load(args.manifest)
    argv = list(manifest.argv)
    if args.out:
        argv = _replace_out(argv, args.out)
    replayed = dispatch(build_parser().parse_args(argv), argv)

    differ = sorted(p for p, digest in manifest.outputs.items() if replayed.outputs.get(p) != digest)
    if differ:
        raise ConvexRegError(f"replay differs from the manifest in {len(differ)} file(s): {', '.join(differ)}")
    logger.info(f"✅ replay: {len(manifest.outputs)} files identical")
    return replayed


def _replace_out(argv: list[str], out: str) -> list[str]:
    argv = list(argv)
    for i, arg in enumerate(argv):
        if arg == "--out" and i + 1 < len(argv):
            argv[i + 1] = out
            return argv
        if arg.startswith("--out="):
            argv[i] = f"--out={out}"
            return argv
    return argv + ["--out", out]


def dispatch(args, argv: list[str]) -> RunManifest:
    if args.command == "fit":
        return cli_fit(args, argv)
    if args.command == "band":
        return cli_band(args, argv)
    if args.command == "simulate":
        return cli_simulate(args, argv)
    return cli_replay(args)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        log.setup(args.verbose)
        dispatch(args, [a for a in argv if a not in ("-v", "--verbose")])
        return 0
    except ConvexRegError as e:
        print(e.cli_line(), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        print(f"error: internal: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n👋 Bye!")
        sys.exit(130)
