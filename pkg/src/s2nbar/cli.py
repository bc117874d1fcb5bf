"""``nbar`` command line.

Exit codes: 0 success, 1 fatal error, 2 partial failure, 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from . import brdf, pipeline
from .axioms import BandId, constants_csv, params_for
from .errors import NbarError
from .indices import IndexId, compute_index, delta_psi
from .raster import GeoTransform, write_cfactor_geotiffs, write_stack

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("s2nbar")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    verbosity: int
    jobs: int
    fmt: str


def _bands(text: str) -> tuple[BandId, ...]:
    try:
        return tuple(BandId.parse(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _indices(text: str) -> tuple[IndexId, ...]:
    try:
        return tuple(IndexId.parse(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nbar", description="Sentinel-2 L2A surface reflectance to NBAR (c-factor method).")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("safe", help="NBAR for every band of a SAFE scene")
    s.add_argument("safe_dir", type=Path)
    s.add_argument("--format", choices=("gtiff", "cog"), default="gtiff")
    s.add_argument("--bands", type=_bands, default=None)
    s.add_argument("--jobs", type=_positive_int, default=None)

    c = sub.add_parser("cube", help="NBAR for a time-series cube described by a manifest")
    c.add_argument("--manifest", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--format", choices=("gtiff", "cog"), default="gtiff")
    c.add_argument("--jobs", type=_positive_int, default=None)

    k = sub.add_parser("kernels", help="evaluate kernels (angles in degrees)")
    k.add_argument("--sun-zenith", type=float, required=True)
    k.add_argument("--view-zenith", type=float, required=True)
    k.add_argument("--rel-azimuth", type=float, required=True)
    k.add_argument("--band", type=BandId.parse, default=None)

    cf = sub.add_parser("c-factor", help="export the 23x23 c-factor of one scene")
    cf.add_argument("source", help="SAFE directory, MTD_TL.xml, or STAC item (path or URL)")
    cf.add_argument("--out", type=Path, required=True)
    cf.add_argument("--format", choices=("csv", "gtiff", "both"), default="csv")

    sub.add_parser("dump-constants", help="print the spectral parameter table as CSV")

    ix = sub.add_parser("indices", help="vegetation indices and NBAR-minus-SR differences")
    ix.add_argument("--nbar", type=Path, required=True, help="manifest of NBAR rasters")
    ix.add_argument("--sr", type=Path, required=True, help="manifest of surface reflectance rasters")
    ix.add_argument("--out", type=Path, required=True)
    ix.add_argument("--index", type=_indices, default=tuple(IndexId))
    return p


def _jobs(arg: int | None) -> int:
    if arg is not None:
        return arg
    try:
        return pipeline.default_jobs()
    except ValueError:
        raise UsageError("NBAR_JOBS must be a positive integer") from None


def _num(x: float) -> str:
    return f"{x + 0.0:.12g}"


def cmd_kernels(args) -> int:
    th, tv, phi = (brdf.to_radians(a) for a in (args.sun_zenith, args.view_zenith, args.rel_azimuth))
    kv, kg = brdf.k_vol(th, tv, phi), brdf.k_geo(th, tv, phi)
    fields = [kv, kg]
    if args.band is not None:
        params = params_for(args.band)
        fields += [brdf.brdf(params, kv, kg), brdf.c_factor(params, th, tv, phi)]
    print(",".join(_num(v) for v in fields))
    return EXIT_OK


def cmd_safe(args, cfg: CliConfig) -> int:
    report = pipeline.nbar_safe(args.safe_dir, fmt=cfg.fmt, bands=args.bands, jobs=cfg.jobs)
    for band, path in report.outputs.items():
        print(f"{band.value} {path} pb={report.processing_baseline:.2f}")
    for band, why in report.failures.items():
        print(f"{band.value} FAILED {why}", file=sys.stderr)
    return EXIT_PARTIAL if report.failures else EXIT_OK


def _load_manifest(path: Path) -> pipeline.CubeSpec:
    try:
        return pipeline.load_manifest(path)
    except OSError as exc:
        raise UsageError(f"cannot read manifest: {exc}") from None
    except ValueError as exc:  # includes JSONDecodeError
        raise UsageError(f"bad manifest {path}: {exc}") from None


def _stamp(t: datetime) -> str:
    return t.strftime("%Y%m%dT%H%M%S")


def cmd_cube(args, cfg: CliConfig) -> int:
    spec = _load_manifest(args.manifest)
    result = pipeline.nbar_cube(spec, jobs=cfg.jobs)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for t, ts in enumerate(spec.timesteps):
        stamp = _stamp(ts.time)
        files = {}
        for b_i, band in enumerate(spec.bands):
            path = write_stack(out / stamp / f"{band.value}.tif", result.nbar.data[t, b_i],
                               spec.target, fmt=cfg.fmt, descriptions=[band.value])
            files[band.value] = str(path.relative_to(out))
        pb = result.nbar.pb[t]
        entries.append({
            "datetime": ts.time.isoformat(),
            "metadata": ts.metadata,
            "bands": files,
            "processing_baseline": None if math.isnan(pb) else float(pb),
            "harmonized": True,
        })
        print(f"{stamp} {result.report[t].status}")
    target = pipeline.spec_target_json(spec)
    (out / "manifest.json").write_text(json.dumps({"target": target, "timesteps": entries}, indent=2) + "\n")
    report = {
        "bands": [b.value for b in spec.bands],
        "target": target,
        "timesteps": [r.to_json() for r in result.report],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_PARTIAL if result.failed else EXIT_OK


def _scene(source: str):
    # the c-factor does not depend on the baseline; 0 avoids requiring product metadata
    ts = pipeline.Timestep(datetime(1970, 1, 1), source, processing_baseline=0.0)
    return pipeline.resolve_metadata(ts)


def cmd_c_factor(args) -> int:
    grid = brdf.c_factor_field(_scene(args.source))
    args.out.mkdir(parents=True, exist_ok=True)
    if args.format in ("csv", "both"):
        path = args.out / "cfactor.csv"
        path.write_text(grid.to_csv())
        print(path)
    if args.format in ("gtiff", "both"):
        for path in write_cfactor_geotiffs(grid, args.out):
            print(path)
    return EXIT_OK


def cmd_indices(args) -> int:
    nbar_spec, sr_spec = _load_manifest(args.nbar), _load_manifest(args.sr)
    nbar = pipeline.read_harmonized(nbar_spec)
    sr = pipeline.read_harmonized(sr_spec)
    if nbar.data.shape != sr.data.shape or nbar.bands != sr.bands:
        raise NbarError(f"manifests disagree: {nbar.data.shape} {nbar.bands} vs {sr.data.shape} {sr.bands}")
    args.out.mkdir(parents=True, exist_ok=True)
    stamps = [_stamp(ts.time) for ts in nbar_spec.timesteps]
    target: GeoTransform = nbar_spec.target
    rows = []
    for index in args.index:
        psi_nbar, psi_sr = compute_index(nbar, index), compute_index(sr, index)
        d = delta_psi(psi_nbar, psi_sr)
        for name, arr in (("nbar", psi_nbar), ("sr", psi_sr), ("delta", d.values)):
            write_stack(args.out / f"{index.value}_{name}.tif", arr.astype(np.float64), target,
                        nodata=float("nan"), descriptions=stamps)
        rows += [(s, index.value, lo, hi) for s, (lo, hi) in zip(stamps, d.per_timestep)]
        print(f"{index.value} min={d.min:.6g} max={d.max:.6g}")
    with open(args.out / "delta_psi.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestep", "index", "min", "max"])
        w.writerows((s, i, repr(lo), repr(hi)) for s, i, lo, hi in rows)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.cmd == "dump-constants":
            sys.stdout.write(constants_csv())
            return EXIT_OK
        if args.cmd == "kernels":
            return cmd_kernels(args)
        if args.cmd == "c-factor":
            return cmd_c_factor(args)
        if args.cmd == "indices":
            return cmd_indices(args)
        cfg = CliConfig(args.cmd, args.verbose, _jobs(args.jobs), args.format)
        return cmd_safe(args, cfg) if args.cmd == "safe" else cmd_cube(args, cfg)
    except UsageError as exc:
        print(f"nbar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NbarError, OSError) as exc:
        print(f"nbar: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
