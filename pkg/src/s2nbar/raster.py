"""Georeferenced array plumbing.

Geotransforms, processing-baseline harmonization, bilinear interpolation of the
coarse c-factor lattice onto raster grids (optionally across UTM zones), and
GeoTIFF / COG input and output.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import rasterio
import rasterio.shutil
from rasterio.crs import CRS as RioCRS
from rasterio.enums import Resampling
from rasterio.errors import RasterioError
from rasterio.io import MemoryFile
from rasterio.transform import Affine

from .axioms import BandId
from .brdf import CFactorGrid
from .errors import (
    CrsMismatch,
    EmptyTarget,
    IoError,
    UnsupportedCrs,
    UnsupportedRasterLayout,
)
from .metadata import GRID_SIZE, TileGeocode

NODATA = 0
DN_SCALE = 10000.0
BASELINE_OFFSET_DN = 1000
HARMONIZE_FROM_BASELINE = 4.0
COG_BLOCK = 512
COG_OVERVIEWS = (2, 4, 8)


@dataclass(frozen=True)
class GeoTransform:
    """North-up, axis-aligned grid. ``pixel_h`` is positive; rows run south."""

    origin_x: float
    origin_y: float
    pixel_w: float
    pixel_h: float
    epsg: int

    def __post_init__(self):
        if not (self.pixel_w > 0 and self.pixel_h > 0):
            raise ValueError("pixel sizes must be positive")

    def to_affine(self) -> Affine:
        return Affine(self.pixel_w, 0.0, self.origin_x, 0.0, -self.pixel_h, self.origin_y)

    @classmethod
    def from_affine(cls, affine: Affine, epsg: int) -> "GeoTransform":
        if affine.b != 0 or affine.d != 0:
            raise UnsupportedRasterLayout("rotated or sheared geotransforms are not supported")
        if affine.a <= 0 or affine.e >= 0:
            raise UnsupportedRasterLayout("only north-up grids are supported")
        return cls(affine.c, affine.f, affine.a, -affine.e, epsg)

    def pixel_centers(self, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """Column x-coordinates and row y-coordinates of pixel centers."""
        h, w = shape
        x = self.origin_x + (np.arange(w) + 0.5) * self.pixel_w
        y = self.origin_y - (np.arange(h) + 0.5) * self.pixel_h
        return x, y

    def row_offset(self, rows: int) -> "GeoTransform":
        return GeoTransform(
            self.origin_x, self.origin_y - rows * self.pixel_h, self.pixel_w, self.pixel_h, self.epsg
        )


@dataclass(frozen=True, eq=False)
class BandRaster:
    data: np.ndarray
    transform: GeoTransform
    band: BandId | None = None
    nodata: int = NODATA


# ---------------------------------------------------------------- harmonization

def harmonize(dn, pb: float):
    """Remove the +1000 DN offset of baseline >= 4.00 products.

    Nodata stays 0 and valid pixels never drop below 1.
    """
    arr = np.asarray(dn)
    if pb < HARMONIZE_FROM_BASELINE:
        out = arr.copy()
    else:
        shifted = np.maximum(arr.astype(np.int64) - BASELINE_OFFSET_DN, 1)
        out = np.where(arr == NODATA, NODATA, shifted).astype(arr.dtype if arr.dtype.kind in "iu" else np.int64)
    return out.item() if out.ndim == 0 else out


def harmonize_reflectance(refl, pb: float):
    """Same rule on physical reflectance; NaN is nodata."""
    arr = np.asarray(refl, dtype=float)
    if pb < HARMONIZE_FROM_BASELINE:
        return arr.copy()
    return np.maximum(arr - BASELINE_OFFSET_DN / DN_SCALE, 1.0 / DN_SCALE)


# ---------------------------------------------------------------- interpolation

def _lattice(frac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower node index and weight; positions off the lattice clamp to the edge."""
    f = np.clip(frac, 0.0, GRID_SIZE - 1.0)
    i0 = np.minimum(np.floor(f).astype(np.intp), GRID_SIZE - 2)
    return i0, f - i0


def _lattice_coords(geo: TileGeocode, x, y):
    return (np.asarray(x) - geo.ulx) / geo.col_step_m, (geo.uly - np.asarray(y)) / geo.row_step_m


def interp_bilinear(
    coarse: CFactorGrid,
    target: GeoTransform,
    shape: tuple[int, int],
    points: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Bilinear interpolation of the node lattice at target pixel centers.

    Returns ``(B, H, W)``. When ``target`` is in a different CRS from the
    lattice, ``points`` must give each pixel center in the lattice CRS (see
    :func:`reproject_query_points`).
    """
    h, w = shape
    if h < 1 or w < 1:
        raise EmptyTarget(f"target shape {shape} is empty")
    v = np.asarray(coarse.values, dtype=float)

    if points is None:
        if target.epsg != coarse.geocode.epsg:
            raise CrsMismatch(
                f"target EPSG:{target.epsg} differs from c-factor EPSG:{coarse.geocode.epsg}"
                " and no coordinate mapping was supplied"
            )
        xs, ys = target.pixel_centers(shape)
        fx, fy = _lattice_coords(coarse.geocode, xs, ys)
        x0, wx = _lattice(fx)
        y0, wy = _lattice(fy)
        top, bot = v[:, y0, :], v[:, y0 + 1, :]
        rows = top + wy[None, :, None] * (bot - top)          # (B, H, 23)
        left, right = rows[:, :, x0], rows[:, :, x0 + 1]
        return left + wx[None, None, :] * (right - left)

    px, py = points
    if px.shape != (h, w) or py.shape != (h, w):
        raise ValueError(f"points must have shape {shape}")
    fx, fy = _lattice_coords(coarse.geocode, px, py)
    x0, wx = _lattice(fx)
    y0, wy = _lattice(fy)
    left = v[:, y0, x0] + wy * (v[:, y0 + 1, x0] - v[:, y0, x0])
    right = v[:, y0, x0 + 1] + wy * (v[:, y0 + 1, x0 + 1] - v[:, y0, x0 + 1])
    return left + wx * (right - left)


def _utm_crs(epsg: int):
    from pyproj import CRS
    from pyproj.exceptions import CRSError

    try:
        crs = CRS.from_epsg(epsg)
    except CRSError as exc:
        raise UnsupportedCrs(f"EPSG:{epsg}: {exc}") from None
    if not crs.is_projected or crs.utm_zone is None:
        raise UnsupportedCrs(f"EPSG:{epsg} is not a UTM projection")
    return crs


def reproject_query_points(
    target: GeoTransform, shape: tuple[int, int], source_epsg: int
) -> tuple[np.ndarray, np.ndarray]:
    """Target pixel centers expressed in ``source_epsg``, each of shape ``(H, W)``."""
    h, w = shape
    if h < 1 or w < 1:
        raise EmptyTarget(f"target shape {shape} is empty")
    xs, ys = target.pixel_centers(shape)
    xx, yy = np.meshgrid(xs, ys)
    if target.epsg == source_epsg:
        return xx, yy
    from pyproj import Transformer

    transformer = Transformer.from_crs(
        _utm_crs(target.epsg), _utm_crs(source_epsg), always_xy=True
    )
    qx, qy = xx.ravel(), yy.ravel()
    if qx.size == 1:  # pyproj takes its scalar path for size-1 arrays
        qx, qy = qx.tolist(), qy.tolist()
    sx, sy = transformer.transform(qx, qy)
    return np.asarray(sx, dtype=float).reshape(h, w), np.asarray(sy, dtype=float).reshape(h, w)


def interp_to_grid(coarse: CFactorGrid, target: GeoTransform, shape: tuple[int, int]) -> np.ndarray:
    """:func:`interp_bilinear`, reprojecting query points when the CRS differs."""
    if target.epsg == coarse.geocode.epsg:
        return interp_bilinear(coarse, target, shape)
    points = reproject_query_points(target, shape, coarse.geocode.epsg)
    return interp_bilinear(coarse, target, shape, points)


# ---------------------------------------------------------------- file io

_BAND_IN_NAME = re.compile(r"(?:^|_)(B\d{2}|B8A)(?=_|\.|$)")


def band_from_filename(path) -> BandId | None:
    m = _BAND_IN_NAME.search(Path(path).name)
    if m is None:
        return None
    try:
        return BandId(m.group(1))
    except ValueError:
        return None


def read_band_raster(path, band: BandId | None = None) -> BandRaster:
    try:
        with rasterio.open(path) as src:
            if src.crs is None or src.crs.to_epsg() is None:
                raise UnsupportedRasterLayout(f"{path}: no EPSG-coded CRS")
            transform = GeoTransform.from_affine(src.transform, src.crs.to_epsg())
            data = src.read(1)
            nodata = src.nodata
    except RasterioError as exc:
        raise IoError(f"{path}: {exc}") from exc
    if data.dtype.kind not in "iu":
        raise UnsupportedRasterLayout(f"{path}: expected integer DN, got {data.dtype}")
    return BandRaster(
        data=data,
        transform=transform,
        band=band if band is not None else band_from_filename(path),
        nodata=NODATA if nodata is None else int(nodata),
    )


def _profile(data: np.ndarray, transform: GeoTransform, nodata) -> dict:
    count, h, w = data.shape
    return dict(
        driver="GTiff",
        width=w,
        height=h,
        count=count,
        dtype=data.dtype,
        crs=RioCRS.from_epsg(transform.epsg),
        transform=transform.to_affine(),
        nodata=nodata,
        compress="deflate",
    )


def write_stack(
    path,
    data: np.ndarray,
    transform: GeoTransform,
    nodata=NODATA,
    fmt: str = "gtiff",
    descriptions: list[str] | None = None,
) -> Path:
    """Write a ``(count, H, W)`` or ``(H, W)`` array as GeoTIFF or COG."""
    if fmt not in ("gtiff", "cog"):
        raise ValueError(f"unknown format {fmt!r}")
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[None]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    profile = _profile(data, transform, nodata)
    try:
        if fmt == "gtiff":
            with rasterio.open(path, "w", **profile) as dst:
                dst.write(data)
                for i, d in enumerate(descriptions or [], start=1):
                    dst.set_band_description(i, d)
            return path
        # COG: tiled source with internal overviews, copied so overviews precede the data
        profile.update(tiled=True, blockxsize=COG_BLOCK, blockysize=COG_BLOCK)
        with MemoryFile() as mem:
            with mem.open(**profile) as tmp:
                tmp.write(data)
                for i, d in enumerate(descriptions or [], start=1):
                    tmp.set_band_description(i, d)
                tmp.build_overviews(list(COG_OVERVIEWS), Resampling.nearest)
            with mem.open() as src:
                rasterio.shutil.copy(
                    src, path, driver="GTiff", copy_src_overviews=True, tiled=True,
                    blockxsize=COG_BLOCK, blockysize=COG_BLOCK, compress="deflate",
                )
    except RasterioError as exc:
        raise IoError(f"{path}: {exc}") from exc
    return path


def write_band_raster(raster: BandRaster, path, fmt: str = "gtiff") -> Path:
    desc = [raster.band.value] if raster.band is not None else None
    return write_stack(path, raster.data, raster.transform, raster.nodata, fmt, desc)


def cfactor_transform(geocode: TileGeocode) -> GeoTransform:
    """Pixel-is-area transform whose pixel centers sit on the angle nodes."""
    half_x, half_y = geocode.col_step_m / 2, geocode.row_step_m / 2
    return GeoTransform(
        geocode.ulx - half_x, geocode.uly + half_y, geocode.col_step_m, geocode.row_step_m, geocode.epsg
    )


def write_cfactor_geotiffs(grid: CFactorGrid, out_dir, prefix: str = "cfactor") -> list[Path]:
    transform = cfactor_transform(grid.geocode)
    return [
        write_stack(Path(out_dir) / f"{prefix}_{b.value}.tif", plane.astype(np.float64), transform,
                    nodata=float("nan"), descriptions=[b.value])
        for b, plane in zip(grid.bands, grid.values)
    ]
