"""End-to-end NBAR: single SAFE scenes and time-series cubes."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .axioms import BANDS, BandId, resolution_of
from .brdf import CFactorGrid, c_factor_field
from .errors import (
    DimensionMismatch,
    MissingBandRaster,
    MissingMetadata,
    NbarError,
)
from .metadata import (
    MSI_BAND_NAMES,
    SceneMetadata,
    load_safe_metadata,
    parse_product_metadata,
    scene_from_documents,
)
from .raster import (
    DN_SCALE,
    NODATA,
    BandRaster,
    GeoTransform,
    harmonize,
    harmonize_reflectance,
    interp_to_grid,
    read_band_raster,
    write_band_raster,
)
from .stac import fetch_bytes, fetch_stac_metadata, is_url

log = logging.getLogger(__name__)

NBAR_DIR = "NBAR"
BLOCK_ROWS = 1024
_RASTER_EXT = (".jp2", ".tif", ".tiff")


def default_jobs() -> int:
    env = os.environ.get("NBAR_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def apply_c_factor(dn: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``rint(c * dn)`` for valid pixels, kept within [1, 65535]; nodata stays 0."""
    out = np.clip(np.rint(c * dn), 1, np.iinfo(np.uint16).max)
    return np.where(dn == NODATA, NODATA, out).astype(dn.dtype)


def nbar_band(raster: BandRaster, cgrid: CFactorGrid, pb: float, block_rows: int = BLOCK_ROWS) -> np.ndarray:
    """NBAR for one band raster, interpolating the c-factor in row blocks."""
    band = raster.band
    single = cgrid.select([band])
    harmonized = harmonize(raster.data, pb)
    h, w = harmonized.shape
    out = np.empty_like(harmonized)
    for r0 in range(0, h, block_rows):
        rows = min(block_rows, h - r0)
        c = interp_to_grid(single, raster.transform.row_offset(r0), (rows, w))[0]
        out[r0:r0 + rows] = apply_c_factor(harmonized[r0:r0 + rows], c)
    return out


# ---------------------------------------------------------------- SAFE

@dataclass
class SafeReport:
    safe_dir: Path
    processing_baseline: float
    outputs: dict[BandId, Path] = field(default_factory=dict)
    failures: dict[BandId, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def find_band_raster(safe_dir, band: BandId) -> Path:
    """L2A band file at its native resolution under ``GRANULE/*/IMG_DATA``."""
    res = resolution_of(band)
    candidates = [
        p for p in sorted(Path(safe_dir).glob("GRANULE/*/IMG_DATA/**/*"))
        if p.suffix.lower() in _RASTER_EXT
    ]
    native = [p for p in candidates if f"_{band.value}_{res}m" in p.name]
    if native:
        return native[0]
    loose = [p for p in candidates if f"_{band.value}." in p.name or f"_{band.value}_" in p.name]
    if loose:
        return loose[0]
    raise MissingBandRaster(f"no {band.value} raster under {safe_dir}/GRANULE/*/IMG_DATA")


def nbar_safe(
    safe_dir,
    fmt: str = "gtiff",
    bands=None,
    jobs: int | None = None,
) -> SafeReport:
    """Write ``NBAR/<band file name>.tif`` for each requested band of a SAFE scene.

    Metadata problems are fatal. A band that fails is recorded in the report
    and the other bands still run.
    """
    safe_dir = Path(safe_dir)
    bands = tuple(BANDS if bands is None else (BandId(b) for b in bands))
    meta = load_safe_metadata(safe_dir)
    cgrid = c_factor_field(meta)
    report = SafeReport(safe_dir, meta.processing_baseline)
    out_dir = safe_dir / NBAR_DIR

    def run(band: BandId) -> Path:
        if band not in cgrid.bands:
            raise MissingMetadata(f"no viewing angles for {band.value}")
        src = find_band_raster(safe_dir, band)
        raster = read_band_raster(src, band)
        data = nbar_band(raster, cgrid, meta.processing_baseline)
        dst = out_dir / (src.stem + ".tif")
        write_band_raster(BandRaster(data, raster.transform, band), dst, fmt)
        return dst

    with ThreadPoolExecutor(max_workers=jobs or default_jobs()) as pool:
        futures = {b: pool.submit(run, b) for b in bands}
    for band, fut in futures.items():
        try:
            report.outputs[band] = fut.result()
        except NbarError as exc:
            log.error("%s: %s", band.value, exc)
            report.failures[band] = f"{type(exc).__name__}: {exc}"
    return report


# ---------------------------------------------------------------- cubes

@dataclass(frozen=True)
class Timestep:
    time: datetime
    metadata: str
    bands: dict[BandId, str] = field(default_factory=dict)
    processing_baseline: float | None = None
    product_metadata: str | None = None
    harmonized: bool = False


@dataclass(frozen=True)
class CubeSpec:
    timesteps: tuple[Timestep, ...]
    target: GeoTransform
    shape: tuple[int, int]
    bands: tuple[BandId, ...]

    def __post_init__(self):
        times = [t.time for t in self.timesteps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("timesteps must be strictly increasing")
        if not self.bands:
            raise ValueError("a cube needs at least one band")
        if self.shape[0] < 1 or self.shape[1] < 1:
            raise ValueError(f"cube shape {self.shape} is empty")

    @property
    def resolution(self) -> float:
        return self.target.pixel_w


@dataclass(eq=False)
class CubeSlab:
    """``data`` is ``(T, B, y, x)``: integer DN or float reflectance. ``mask`` marks nodata."""

    data: np.ndarray
    bands: tuple[BandId, ...]
    pb: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.bands = tuple(BandId(b) for b in self.bands)
        if self.data.ndim != 4 or self.data.shape[1] != len(self.bands):
            raise DimensionMismatch(f"slab shape {self.data.shape} does not match {len(self.bands)} bands")
        if self.mask is None:
            self.mask = np.isnan(self.data) if self.is_reflectance else self.data == NODATA
        if self.mask.shape != self.data.shape:
            raise DimensionMismatch("mask shape differs from data shape")
        if self.pb is None:
            self.pb = np.full(self.data.shape[0], np.nan)
        self.pb = np.asarray(self.pb, dtype=float)
        if self.pb.shape != (self.data.shape[0],):
            raise DimensionMismatch("one processing baseline per timestep expected")

    @property
    def is_reflectance(self) -> bool:
        return self.data.dtype.kind == "f"

    def reflectance(self) -> np.ndarray:
        refl = self.data.astype(float) if self.is_reflectance else self.data / DN_SCALE
        return np.where(self.mask, np.nan, refl)

    def band(self, band: BandId) -> np.ndarray:
        return self.data[:, self.bands.index(BandId(band))]


@dataclass
class TimestepReport:
    time: datetime
    status: str
    processing_baseline: float | None = None
    error: str | None = None
    c_factor: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "datetime": self.time.isoformat(),
            "status": self.status,
            "processing_baseline": self.processing_baseline,
            "error": self.error,
            "c_factor": self.c_factor,
        }


@dataclass(eq=False)
class CubeResult:
    nbar: CubeSlab
    harmonized: CubeSlab
    report: list[TimestepReport]

    @property
    def failed(self) -> list[int]:
        return [i for i, r in enumerate(self.report) if r.status != "ok"]


def resolve_metadata(ts: Timestep, **http) -> SceneMetadata:
    """SceneMetadata from a SAFE directory, a tile XML, or a STAC item (path or URL)."""
    src = str(ts.metadata)
    local = None if is_url(src) else Path(src)
    if local is not None and local.is_dir():
        meta = load_safe_metadata(local)
        if ts.processing_baseline is not None:
            meta = SceneMetadata(meta.angles, meta.geocode, ts.processing_baseline, meta.scene_id)
        return meta
    if local is not None and not local.is_file():
        raise MissingMetadata(f"{src} does not exist")

    raw = fetch_bytes(src, **http)
    if raw.lstrip()[:1] == b"{":
        item = json.loads(raw)
        m = fetch_stac_metadata(item, base=src, baseline=ts.processing_baseline, **http)
        return scene_from_documents(m.tile_xml, m.processing_baseline, m.item_id)
    if ts.processing_baseline is not None:
        pb = ts.processing_baseline
    elif ts.product_metadata:
        pb = parse_product_metadata(fetch_bytes(ts.product_metadata, **http))
    else:
        raise MissingMetadata(f"{src}: tile metadata given without a processing baseline")
    return scene_from_documents(raw, pb, Path(src).stem)


def _read_timestep(ts: Timestep, spec: CubeSpec) -> np.ndarray:
    planes = []
    for band in spec.bands:
        if band not in ts.bands:
            raise MissingBandRaster(f"{ts.time.isoformat()}: no raster for {band.value}")
        r = read_band_raster(ts.bands[band], band)
        if r.data.shape != spec.shape:
            raise DimensionMismatch(
                f"{ts.bands[band]}: shape {r.data.shape} differs from cube {spec.shape}"
            )
        planes.append(r.data)
    return np.stack(planes)


def _c_stats(bands, c: np.ndarray) -> dict[str, dict[str, float]]:
    return {
        b.value: {"min": float(p.min()), "max": float(p.max()), "mean": float(p.mean())}
        for b, p in zip(bands, c)
    }


def nbar_cube(
    spec: CubeSpec,
    slab: CubeSlab | None = None,
    jobs: int | None = None,
    resolve=resolve_metadata,
) -> CubeResult:
    """NBAR for every timestep of a cube.

    With ``slab=None`` the band rasters named in ``spec`` are read. A timestep
    whose metadata or rasters cannot be obtained becomes all-nodata and is
    marked ``failed`` in the report.
    """
    n_t = len(spec.timesteps)
    if slab is not None:
        expected = (n_t, len(spec.bands)) + tuple(spec.shape)
        if slab.data.shape != expected:
            raise DimensionMismatch(f"slab shape {slab.data.shape}, cube expects {expected}")
        if slab.bands != spec.bands:
            raise DimensionMismatch("slab band order differs from cube bands")
        dtype = slab.data.dtype
    else:
        dtype = np.dtype(np.uint16)

    full = (n_t, len(spec.bands)) + tuple(spec.shape)
    reflectance = dtype.kind == "f"
    fill = np.nan if reflectance else NODATA
    nbar = np.full(full, fill, dtype=dtype)
    harm = np.full(full, fill, dtype=dtype)
    mask = np.ones(full, dtype=bool)
    pbs = np.full(n_t, np.nan)
    report: list[TimestepReport | None] = [None] * n_t

    def run(t: int) -> None:
        ts = spec.timesteps[t]
        try:
            meta = resolve(ts)
            cgrid = c_factor_field(meta)
            missing = [b.value for b in spec.bands if b not in cgrid.bands]
            if missing:
                raise MissingMetadata(f"no viewing angles for {', '.join(missing)}")
            c = interp_to_grid(cgrid.select(spec.bands), spec.target, spec.shape)
            if slab is not None:
                data, m = slab.data[t], slab.mask[t]
            else:
                data = _read_timestep(ts, spec)
                m = data == NODATA
            pb = meta.processing_baseline
            if reflectance:
                rho = data.astype(float) if ts.harmonized else harmonize_reflectance(data, pb)
                rho = np.where(m, np.nan, rho)
                out = np.where(m, np.nan, c * rho)
            else:
                rho = np.where(m, NODATA, data)
                if not ts.harmonized:
                    rho = harmonize(rho, pb)
                out = apply_c_factor(rho, c)
        except (NbarError, OSError, ValueError) as exc:
            log.error("timestep %s failed: %s", ts.time.isoformat(), exc)
            report[t] = TimestepReport(ts.time, "failed", error=f"{type(exc).__name__}: {exc}")
            return
        # disjoint time planes: no locking needed
        nbar[t], harm[t], mask[t], pbs[t] = out, rho, m, pb
        report[t] = TimestepReport(ts.time, "ok", pb, c_factor=_c_stats(spec.bands, c))

    workers = max(1, min(jobs or default_jobs(), n_t or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, range(n_t)))

    return CubeResult(
        nbar=CubeSlab(nbar, spec.bands, pbs, mask),
        harmonized=CubeSlab(harm, spec.bands, pbs, mask.copy()),
        report=report,
    )


def delta_rho(nbar: CubeSlab, harmonized: CubeSlab) -> CubeSlab:
    """``NBAR - rho*`` in reflectance units; NaN wherever either input is nodata."""
    if nbar.data.shape != harmonized.data.shape:
        raise DimensionMismatch(f"{nbar.data.shape} vs {harmonized.data.shape}")
    diff = nbar.reflectance() - harmonized.reflectance()
    return CubeSlab(diff, nbar.bands, nbar.pb, np.isnan(diff))


# ---------------------------------------------------------------- manifests

def _band_key(key: str) -> BandId:
    key = str(key).strip()
    if key.isdigit():
        n = int(key)
        if not 0 <= n < len(MSI_BAND_NAMES):
            raise ValueError(f"bandId {n} outside 0-12")
        key = MSI_BAND_NAMES[n]
    return BandId.parse(key)


def _resolve_path(value: str, root: Path) -> str:
    if is_url(value) or Path(value).is_absolute():
        return value
    return str(root / value)


def parse_manifest(doc, root=".") -> CubeSpec:
    """Build a CubeSpec from manifest JSON (already decoded).

    Accepts ``{"target": {...}, "timesteps": [...]}`` or a JSON array whose
    entries are timesteps plus one ``{"target": {...}}`` entry.
    """
    root = Path(root)
    if isinstance(doc, dict):
        target, steps = doc.get("target"), doc.get("timesteps")
    elif isinstance(doc, list):
        targets = [e["target"] for e in doc if isinstance(e, dict) and "target" in e]
        target = targets[0] if len(targets) == 1 else None
        steps = [e for e in doc if isinstance(e, dict) and "target" not in e]
    else:
        raise ValueError("manifest must be a JSON object or array")
    if not isinstance(target, dict):
        raise ValueError("manifest needs exactly one 'target' object")
    if not isinstance(steps, list) or not steps:
        raise ValueError("manifest has no timesteps")
    try:
        pixel = float(target["pixel"])
        gt = GeoTransform(float(target["origin_x"]), float(target["origin_y"]), pixel, pixel, int(target["epsg"]))
        shape = (int(target["height"]), int(target["width"]))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad target: {exc}") from None

    timesteps = []
    seen: set[BandId] = set()
    for i, e in enumerate(steps):
        try:
            when = datetime.fromisoformat(str(e["datetime"]).replace("Z", "+00:00"))
            meta = _resolve_path(str(e["metadata"]), root)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"timestep {i}: {exc}") from None
        bands = {_band_key(k): _resolve_path(str(v), root) for k, v in (e.get("bands") or {}).items()}
        seen.update(bands)
        pb = e.get("processing_baseline")
        timesteps.append(Timestep(
            time=when,
            metadata=meta,
            bands=bands,
            processing_baseline=None if pb is None else float(pb),
            product_metadata=_resolve_path(e["product_metadata"], root) if e.get("product_metadata") else None,
            harmonized=bool(e.get("harmonized", False)),
        ))
    bands = tuple(b for b in BANDS if b in seen)
    return CubeSpec(tuple(timesteps), gt, shape, bands)


def load_manifest(path) -> CubeSpec:
    path = Path(path)
    return parse_manifest(json.loads(path.read_text()), path.parent)


def spec_target_json(spec: CubeSpec) -> dict:
    t = spec.target
    return {
        "epsg": t.epsg, "origin_x": t.origin_x, "origin_y": t.origin_y,
        "pixel": t.pixel_w, "width": spec.shape[1], "height": spec.shape[0],
    }


def read_harmonized(spec: CubeSpec, resolve=resolve_metadata) -> CubeSlab:
    """Read a manifest's band rasters as harmonized DN (entries flagged ``harmonized`` are taken as-is)."""
    data = np.zeros((len(spec.timesteps), len(spec.bands)) + tuple(spec.shape), dtype=np.uint16)
    pbs = np.full(len(spec.timesteps), np.nan)
    for t, ts in enumerate(spec.timesteps):
        raw = _read_timestep(ts, spec)
        if ts.harmonized:
            data[t] = raw
            if ts.processing_baseline is not None:
                pbs[t] = ts.processing_baseline
            continue
        pb = ts.processing_baseline if ts.processing_baseline is not None else resolve(ts).processing_baseline
        data[t], pbs[t] = harmonize(raw, pb), pb
    return CubeSlab(data, spec.bands, pbs)
