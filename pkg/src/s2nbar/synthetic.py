"""Synthetic Sentinel-2 L2A scenes laid out like SAFE products.

Used to build test fixtures and demo cubes without downloading anything.
"""
from __future__ import annotations

from datetime import datetime
from pathlib import Path

import numpy as np

from .axioms import BANDS, BandId, resolution_of
from .metadata import (
    GRID_SIZE,
    PRODUCT_DOC,
    TILE_DOC,
    AngleGrid,
    DetectorGrids,
    TileGeocode,
    product_metadata_xml,
    tile_metadata_xml,
)
from .raster import BandRaster, GeoTransform, write_band_raster

DEFAULT_GEOCODE = TileGeocode(ulx=600000.0, uly=5800020.0, epsg=32632)


def detector_grids(
    seed: int = 0,
    sun_zenith: float = 38.0,
    sun_azimuth: float = 162.0,
    n_detectors: int = 4,
) -> DetectorGrids:
    """Plausible pushbroom geometry: overlapping detector strips with NaN outside each footprint.

    View zenith grows away from a nadir line, view azimuth flips across it,
    and each detector carries a small band/detector-specific offset.
    """
    rng = np.random.default_rng(seed)
    rows, cols = np.indices((GRID_SIZE, GRID_SIZE), dtype=float)
    sun_z = sun_zenith + 0.12 * rows - 0.03 * cols
    sun_a = sun_azimuth + 0.05 * cols + 0.02 * rows
    nadir_col = 9.5 + 0.1 * rows
    offset = cols - nadir_col
    edges = np.linspace(-1, GRID_SIZE, n_detectors + 1)
    view = {}
    for b_i, band in enumerate(BANDS):
        for det in range(n_detectors):
            lo, hi = edges[det] - 1.0, edges[det + 1] + 1.0  # one node of overlap
            inside = (cols >= lo) & (cols <= hi)
            jitter = rng.normal(0.0, 0.05)
            zen = np.abs(offset) * 0.95 + 0.4 + 0.02 * b_i + jitter
            az = np.where(offset < 0, 103.5 + 0.3 * b_i, 284.0 + 0.3 * b_i) + 0.04 * rows + jitter
            view[(band, det + 1)] = (np.where(inside, zen, np.nan), np.where(inside, az, np.nan))
    return DetectorGrids(sun_z, sun_a, view)


def dn_field(shape, seed: int = 0, base: int = 1500, offset: int = 1000, nodata_frac: float = 0.01) -> np.ndarray:
    """Smooth-ish uint16 reflectance field with a sprinkle of nodata pixels."""
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    field = base + 600 * np.sin(xx / 17.0) * np.cos(yy / 23.0) + rng.normal(0, 80, shape)
    dn = np.clip(np.rint(field), 50, 20000).astype(np.uint16) + np.uint16(offset)
    dn[rng.random(shape) < nodata_frac] = 0
    return dn


def write_safe(
    root,
    rasters: dict[BandId, np.ndarray],
    origin: tuple[float, float],
    angles: AngleGrid | DetectorGrids,
    geocode: TileGeocode = DEFAULT_GEOCODE,
    baseline: str = "05.00",
    sensing: datetime = datetime(2023, 6, 1, 10, 26, 1),
    tile: str = "T32UPB",
    fmt: str = "gtiff",
) -> Path:
    """Write a minimal SAFE directory and return its path.

    ``rasters`` maps bands to DN arrays at the band's native resolution, all
    sharing the upper-left ``origin``.
    """
    stamp = sensing.strftime("%Y%m%dT%H%M%S")
    safe = Path(root) / f"S2A_MSIL2A_{stamp}_N{baseline.replace('.', '')}_R108_{tile}_{stamp}.SAFE"
    granule = safe / "GRANULE" / f"L2A_{tile}_A000000_{stamp}"
    safe.mkdir(parents=True, exist_ok=True)
    (safe / PRODUCT_DOC).write_bytes(product_metadata_xml(baseline, safe.name))
    grids = angles.to_detector_grids() if isinstance(angles, AngleGrid) else angles
    granule.mkdir(parents=True, exist_ok=True)
    (granule / TILE_DOC).write_bytes(tile_metadata_xml(grids, geocode))
    for band, data in rasters.items():
        res = resolution_of(band)
        gt = GeoTransform(origin[0], origin[1], res, res, geocode.epsg)
        path = granule / "IMG_DATA" / f"R{res}m" / f"{tile}_{stamp}_{band.value}_{res}m.tif"
        write_band_raster(BandRaster(np.asarray(data, dtype=np.uint16), gt, band), path, fmt)
    return safe


def full_band_set(size_10m: int, seed: int = 0, offset: int = 1000) -> dict[BandId, np.ndarray]:
    """DN arrays for all nine bands; 20 m bands get half the 10 m edge length."""
    out = {}
    for i, band in enumerate(BANDS):
        n = size_10m if resolution_of(band) == 10 else size_10m // 2
        out[band] = dn_field((n, n), seed=seed * 101 + i, base=800 + 250 * i, offset=offset)
    return out


# 20 m copies that L2A products also ship under R20m; lets a 20 m cube carry the visible bands
_EXTRA_20M = (BandId.B02, BandId.B03, BandId.B04)


def write_cube(
    root,
    n_timesteps: int = 3,
    size: int = 64,
    res: int = 10,
    seed: int = 0,
    baselines: tuple[str, ...] = ("03.01", "04.00", "05.00"),
) -> Path:
    """Write ``n_timesteps`` synthetic SAFE scenes plus a cube manifest; return the manifest path.

    ``size`` is the cube edge in pixels at resolution ``res`` (10 or 20). Each
    timestep gets its own detector geometry and cycles through ``baselines``.
    """
    import json
    from datetime import timedelta

    if res not in (10, 20):
        raise ValueError("res must be 10 or 20")
    root = Path(root)
    origin = (DEFAULT_GEOCODE.ulx + 41000.0, DEFAULT_GEOCODE.uly - 37000.0)
    n10 = size if res == 10 else 2 * size
    cube_bands = [b for b in BANDS if resolution_of(b) == res]
    if res == 20:
        cube_bands = sorted(set(cube_bands) | set(_EXTRA_20M), key=BANDS.index)
    steps = []
    for t in range(n_timesteps):
        sensing = datetime(2023, 5, 2, 10, 26, 1) + timedelta(days=5 * t)
        pb = baselines[t % len(baselines)]
        offset = 1000 if float(pb) >= 4 else 0
        rasters = full_band_set(n10, seed=seed * 31 + t, offset=offset)
        angles = detector_grids(seed=seed * 31 + t, sun_zenith=30.0 + 6.0 * t, sun_azimuth=150.0 + 4.0 * t)
        safe = write_safe(root, rasters, origin, angles, baseline=pb, sensing=sensing)
        granule = next((safe / "GRANULE").iterdir())
        stamp = sensing.strftime("%Y%m%dT%H%M%S")
        files = {}
        for band in cube_bands:
            if resolution_of(band) == res:
                files[band.value] = str(next(granule.glob(f"IMG_DATA/R{res}m/*_{band.value}_{res}m.tif")).relative_to(root))
                continue
            # block-average the 10 m raster, ignoring nodata, for the 20 m copy
            blocks = rasters[band].reshape(size, 2, size, 2).astype(float)
            valid = (blocks > 0).sum(axis=(1, 3))
            mean = np.where(valid > 0, blocks.sum(axis=(1, 3)) / np.maximum(valid, 1), 0)
            gt = GeoTransform(origin[0], origin[1], 20.0, 20.0, DEFAULT_GEOCODE.epsg)
            path = granule / "IMG_DATA" / "R20m" / f"T32UPB_{stamp}_{band.value}_20m.tif"
            write_band_raster(BandRaster(np.rint(mean).astype(np.uint16), gt, band), path)
            files[band.value] = str(path.relative_to(root))
        steps.append({
            "datetime": sensing.isoformat(),
            "metadata": str(safe.relative_to(root)),
            "bands": files,
        })
    target = {
        "epsg": DEFAULT_GEOCODE.epsg, "origin_x": origin[0], "origin_y": origin[1],
        "pixel": res, "width": size, "height": size,
    }
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"target": target, "timesteps": steps}, indent=2) + "\n")
    return manifest
