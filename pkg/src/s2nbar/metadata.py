"""Sentinel-2 L2A metadata: processing baseline, tile geocoding and angle grids.

The tile document (``MTD_TL.xml``) carries a 23x23 grid of sun angles and, for
every band and detector, a 23x23 grid of viewing incidence angles sampled every
5 km from the tile's upper-left corner. Detector footprints only cover part of
the tile, so every per-detector grid is mostly ``NaN``; :func:`merge_detectors`
folds them into one fully populated :class:`AngleGrid`.
"""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .axioms import BANDS, BandId
from .errors import (
    DomainError,
    EmptyInput,
    GridShapeMismatch,
    MalformedXml,
    MissingField,
    MissingMetadata,
    UnknownBandId,
    UnparsableBaseline,
)

GRID_SIZE = 23
GRID_STEP_M = 5000.0
SUN = "sun"
# sun first, then convertible bands in canonical order
ANGLE_ROWS: tuple[str, ...] = (SUN,) + tuple(b.value for b in BANDS)
ZENITH, AZIMUTH = 0, 1

# bandId attribute -> MSI band name
MSI_BAND_NAMES = (
    "B01", "B02", "B03", "B04", "B05", "B06", "B07",
    "B08", "B8A", "B09", "B10", "B11", "B12",
)
_BAND_TO_MSI_ID = {name: i for i, name in enumerate(MSI_BAND_NAMES)}

TILE_DOC = "MTD_TL.xml"
PRODUCT_DOC = "MTD_MSIL2A.xml"


@dataclass(frozen=True)
class TileGeocode:
    ulx: float
    uly: float
    epsg: int
    col_step_m: float = GRID_STEP_M
    row_step_m: float = GRID_STEP_M

    def __post_init__(self):
        if self.col_step_m != GRID_STEP_M or self.row_step_m != GRID_STEP_M:
            raise GridShapeMismatch(
                f"angle grid spacing must be {GRID_STEP_M:g} m, "
                f"got COL_STEP={self.col_step_m:g} ROW_STEP={self.row_step_m:g}"
            )


@dataclass(frozen=True, eq=False)
class DetectorGrids:
    """Raw grids as found in the tile document; ``NaN`` marks missing cells.

    ``view`` maps ``(band, detector) -> (zenith, azimuth)``.
    """

    sun_zenith: np.ndarray
    sun_azimuth: np.ndarray
    view: dict[tuple[BandId, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class AngleGrid:
    """Angles in degrees, shape ``(10, 2, 23, 23)``: rows follow ``ANGLE_ROWS``."""

    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        shape = (len(ANGLE_ROWS), 2, GRID_SIZE, GRID_SIZE)
        if self.values.shape != shape or self.missing.shape != shape:
            raise GridShapeMismatch(f"angle grid must have shape {shape}, got {self.values.shape}")
        zen = self.values[:, ZENITH][~self.missing[:, ZENITH]]
        az = self.values[:, AZIMUTH][~self.missing[:, AZIMUTH]]
        if zen.size and not (np.all(zen >= 0.0) and np.all(zen < 90.0)):
            raise DomainError("zenith angles must lie in [0, 90) degrees")
        if az.size and not (np.all(az >= 0.0) and np.all(az <= 360.0)):
            raise DomainError("azimuth angles must lie in [0, 360] degrees")
        self.values.setflags(write=False)
        self.missing.setflags(write=False)

    def row(self, key: str | BandId) -> int:
        return ANGLE_ROWS.index(key.value if isinstance(key, BandId) else key)

    @property
    def sun_zenith(self) -> np.ndarray:
        return self.values[0, ZENITH]

    @property
    def sun_azimuth(self) -> np.ndarray:
        return self.values[0, AZIMUTH]

    def view_zenith(self) -> np.ndarray:
        return self.values[1:, ZENITH]

    def view_azimuth(self) -> np.ndarray:
        return self.values[1:, AZIMUTH]

    def has_band(self, band: BandId) -> bool:
        return not self.missing[self.row(band)].any()

    def to_detector_grids(self) -> DetectorGrids:
        """One pseudo-detector per band; bands with no data are left out."""
        view = {}
        for band in BANDS:
            plane = self.values[self.row(band)]
            mask = self.missing[self.row(band)]
            if mask.all():
                continue
            view[(band, 1)] = tuple(np.where(mask[i], np.nan, plane[i]) for i in (ZENITH, AZIMUTH))
        sun = np.where(self.missing[0], np.nan, self.values[0])
        return DetectorGrids(sun[ZENITH], sun[AZIMUTH], view)

    @classmethod
    def constant(cls, sun_zenith, sun_azimuth, view_zenith, view_azimuth) -> "AngleGrid":
        """Spatially constant grid. View angles may be scalars or per-band mappings;
        bands left out of a mapping are missing."""
        values = np.empty((len(ANGLE_ROWS), 2, GRID_SIZE, GRID_SIZE))
        values[0, ZENITH] = sun_zenith
        values[0, AZIMUTH] = sun_azimuth
        missing = np.zeros(values.shape, dtype=bool)
        for i, band in enumerate(BANDS, start=1):
            zen = view_zenith.get(band) if isinstance(view_zenith, dict) else view_zenith
            az = view_azimuth.get(band) if isinstance(view_azimuth, dict) else view_azimuth
            if zen is None or az is None:
                values[i], missing[i] = np.nan, True
            else:
                values[i, ZENITH], values[i, AZIMUTH] = zen, az
        return cls(values, missing)


@dataclass(frozen=True, eq=False)
class SceneMetadata:
    angles: AngleGrid
    geocode: TileGeocode
    processing_baseline: float
    scene_id: str = ""

    def __post_init__(self):
        pb = self.processing_baseline
        if not (math.isfinite(pb) and pb >= 0):
            raise UnparsableBaseline(f"processing baseline must be finite and >= 0, got {pb!r}")


# ---------------------------------------------------------------- parsing

def _root(document) -> ET.Element:
    if isinstance(document, (str, Path)) and not str(document).lstrip().startswith("<"):
        document = Path(document).read_bytes()
    try:
        return ET.fromstring(document)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _find(parent: ET.Element, name: str) -> ET.Element | None:
    for el in parent.iter():
        if _local(el.tag) == name:
            return el
    return None


def _child(parent: ET.Element, name: str) -> ET.Element | None:
    for el in parent:
        if _local(el.tag) == name:
            return el
    return None


def _require(parent: ET.Element, name: str, context: str = "") -> ET.Element:
    el = _child(parent, name)
    if el is None:
        raise MissingField(f"{context}/{name}" if context else name)
    return el


def parse_baseline(text: str) -> float:
    """``"05.00"`` -> 5.0."""
    try:
        value = float(text.strip())
    except (ValueError, AttributeError):
        raise UnparsableBaseline(f"processing baseline {text!r} is not a number") from None
    if not math.isfinite(value) or value < 0:
        raise UnparsableBaseline(f"processing baseline {text!r} is not a finite non-negative number")
    return value


def parse_product_metadata(document) -> float:
    """Processing baseline from ``MTD_MSIL2A.xml`` (bytes, text or path)."""
    el = _find(_root(document), "PROCESSING_BASELINE")
    if el is None:
        raise MissingField("PROCESSING_BASELINE")
    return parse_baseline(el.text or "")


def _values_grid(angle_el: ET.Element, context: str) -> np.ndarray:
    for step in ("COL_STEP", "ROW_STEP"):
        s = _require(angle_el, step, context)
        try:
            v = float(s.text)
        except (TypeError, ValueError):
            raise MalformedXml(f"{context}/{step}: {s.text!r}") from None
        if v != GRID_STEP_M:
            raise GridShapeMismatch(f"{context}/{step} is {v:g}, expected {GRID_STEP_M:g}")
    rows = [r for r in _require(angle_el, "Values_List", context) if _local(r.tag) == "VALUES"]
    if len(rows) != GRID_SIZE:
        raise GridShapeMismatch(f"{context}: {len(rows)} rows, expected {GRID_SIZE}")
    out = np.empty((GRID_SIZE, GRID_SIZE))
    for i, r in enumerate(rows):
        cells = (r.text or "").split()
        if len(cells) != GRID_SIZE:
            raise GridShapeMismatch(f"{context} row {i}: {len(cells)} values, expected {GRID_SIZE}")
        try:
            out[i] = [float(c) for c in cells]
        except ValueError as exc:
            raise MalformedXml(f"{context} row {i}: {exc}") from None
    return out


def _zen_az(el: ET.Element, context: str) -> tuple[np.ndarray, np.ndarray]:
    return (
        _values_grid(_require(el, "Zenith", context), context + "/Zenith"),
        _values_grid(_require(el, "Azimuth", context), context + "/Azimuth"),
    )


def parse_tile_metadata(document) -> tuple[DetectorGrids, TileGeocode]:
    """Raw detector grids and geocoding from ``MTD_TL.xml`` (bytes, text or path)."""
    root = _root(document)

    geocoding = _find(root, "Tile_Geocoding")
    if geocoding is None:
        raise MissingField("Tile_Geocoding")
    code = _require(geocoding, "HORIZONTAL_CS_CODE", "Tile_Geocoding").text or ""
    try:
        epsg = int(code.strip().upper().removeprefix("EPSG:"))
    except ValueError:
        raise MalformedXml(f"HORIZONTAL_CS_CODE {code!r}") from None
    positions = [el for el in geocoding if _local(el.tag) == "Geoposition"]
    if not positions:
        raise MissingField("Geoposition")
    pos = next((p for p in positions if p.get("resolution") == "10"), positions[0])
    try:
        ulx = float(_require(pos, "ULX", "Geoposition").text)
        uly = float(_require(pos, "ULY", "Geoposition").text)
    except (TypeError, ValueError):
        raise MalformedXml("Geoposition ULX/ULY is not numeric") from None

    sun = _find(root, "Sun_Angles_Grid")
    if sun is None:
        raise MissingField("Sun_Angles_Grid")
    sun_zen, sun_az = _zen_az(sun, "Sun_Angles_Grid")

    view: dict[tuple[BandId, int], tuple[np.ndarray, np.ndarray]] = {}
    for el in root.iter():
        if _local(el.tag) != "Viewing_Incidence_Angles_Grids":
            continue
        band_attr, det_attr = el.get("bandId"), el.get("detectorId")
        if band_attr is None or det_attr is None:
            raise MissingField("Viewing_Incidence_Angles_Grids@bandId/@detectorId")
        try:
            band_num = int(band_attr)
        except ValueError:
            raise UnknownBandId(f"bandId {band_attr!r}") from None
        if not 0 <= band_num < len(MSI_BAND_NAMES):
            raise UnknownBandId(f"bandId {band_num} outside 0-12")
        try:
            detector = int(det_attr)
        except ValueError:
            raise MalformedXml(f"detectorId {det_attr!r}") from None
        context = f"Viewing_Incidence_Angles_Grids[bandId={band_num},detectorId={detector}]"
        grids = _zen_az(el, context)
        name = MSI_BAND_NAMES[band_num]
        if name not in BandId.__members__:
            continue  # B01, B8A, B09, B10: parsed for validation, then dropped
        key = (BandId(name), detector)
        if key in view:
            raise MalformedXml(f"duplicate {context}")
        view[key] = grids

    return DetectorGrids(sun_zen, sun_az, view), TileGeocode(ulx, uly, epsg)


# ---------------------------------------------------------------- merging

def _nearest_fill(plane: np.ndarray) -> np.ndarray:
    """Fill NaN nodes from the nearest valid node (ties: lowest row, then column)."""
    missing = np.isnan(plane)
    if not missing.any() or missing.all():
        return plane
    rows, cols = np.indices(plane.shape)
    vr, vc = rows[~missing], cols[~missing]  # row-major order, so argmin breaks ties correctly
    mr, mc = rows[missing], cols[missing]
    d2 = (mr[:, None] - vr[None, :]) ** 2 + (mc[:, None] - vc[None, :]) ** 2
    nearest = np.argmin(d2, axis=1)
    out = plane.copy()
    out[mr, mc] = plane[vr[nearest], vc[nearest]]
    return out


def _mean_of_available(stack: np.ndarray, azimuth: bool) -> np.ndarray:
    if azimuth:
        # unwrap across 0/360 where detectors straddle north
        lo, hi = np.nanmin(stack, axis=0, initial=np.inf), np.nanmax(stack, axis=0, initial=-np.inf)
        wraps = (hi - lo) > 180.0
        if wraps.any():
            stack = np.where(wraps & (stack < 180.0), stack + 360.0, stack)
    # sorting fixes the summation order, so detector order cannot change the result
    stack = np.sort(stack, axis=0)
    count = np.sum(~np.isnan(stack), axis=0)
    total = np.nansum(stack, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    if azimuth:
        mean = np.where(mean >= 360.0, mean - 360.0, mean)
    return mean


def merge_detectors(grids: DetectorGrids) -> AngleGrid:
    """Average overlapping detectors per node, then fill any holes by nearest neighbour."""
    if not grids.view:
        raise EmptyInput("tile metadata holds no viewing angle grids")
    values = np.full((len(ANGLE_ROWS), 2, GRID_SIZE, GRID_SIZE), np.nan)
    values[0, ZENITH] = grids.sun_zenith
    values[0, AZIMUTH] = grids.sun_azimuth
    for i, band in enumerate(BANDS, start=1):
        dets = sorted(d for (b, d) in grids.view if b == band)
        if not dets:
            continue
        for a, is_az in ((ZENITH, False), (AZIMUTH, True)):
            stack = np.stack([grids.view[(band, d)][a] for d in dets])
            values[i, a] = _nearest_fill(_mean_of_available(stack, is_az))
    return AngleGrid(values, np.isnan(values))


def grid_node_coordinates(geocode: TileGeocode) -> tuple[np.ndarray, np.ndarray]:
    """Easting and northing of the 23 angle-grid columns and rows (nodes sit on UL offsets)."""
    k = np.arange(GRID_SIZE, dtype=float)
    return geocode.ulx + k * geocode.col_step_m, geocode.uly - k * geocode.row_step_m


def scene_from_documents(tile_xml, baseline: float, scene_id: str = "") -> SceneMetadata:
    grids, geocode = parse_tile_metadata(tile_xml)
    return SceneMetadata(merge_detectors(grids), geocode, float(baseline), scene_id)


def find_safe_documents(safe_dir) -> tuple[Path, Path]:
    """Locate ``(MTD_MSIL2A.xml, GRANULE/*/MTD_TL.xml)`` inside a SAFE directory."""
    safe_dir = Path(safe_dir)
    product = safe_dir / PRODUCT_DOC
    if not product.is_file():
        raise MissingMetadata(f"{product} not found")
    tiles = sorted(safe_dir.glob(f"GRANULE/*/{TILE_DOC}"))
    if not tiles:
        raise MissingMetadata(f"no GRANULE/*/{TILE_DOC} under {safe_dir}")
    if len(tiles) > 1:
        raise MissingMetadata(f"expected a single granule under {safe_dir}, found {len(tiles)}")
    return product, tiles[0]


def load_safe_metadata(safe_dir) -> SceneMetadata:
    product, tile = find_safe_documents(safe_dir)
    pb = parse_product_metadata(product.read_bytes())
    scene_id = Path(safe_dir).name.removesuffix(".SAFE")
    return scene_from_documents(tile.read_bytes(), pb, scene_id)


# ---------------------------------------------------------------- writing

def _fmt(v: float) -> str:
    return "NaN" if math.isnan(v) else repr(float(v))


def _values_xml(parent: ET.Element, name: str, grid: np.ndarray) -> None:
    el = ET.SubElement(parent, name)
    ET.SubElement(el, "COL_STEP", unit="m").text = f"{GRID_STEP_M:g}"
    ET.SubElement(el, "ROW_STEP", unit="m").text = f"{GRID_STEP_M:g}"
    vl = ET.SubElement(el, "Values_List")
    for row in grid:
        ET.SubElement(vl, "VALUES").text = " ".join(_fmt(v) for v in row)


_NS = "https://psd-14.sentinel2.eo.esa.int/PSD/S2_PDI_Level-2A_Tile_Metadata.xsd"


def tile_metadata_xml(
    grids: DetectorGrids,
    geocode: TileGeocode,
    tile_id: str = "S2A_OPER_MSI_L2A_TL_SYNT_20230601T000000_A000000_T32UPB_N05.00",
    sizes: dict[int, tuple[int, int]] | None = None,
) -> bytes:
    """Serialize grids into an ``MTD_TL.xml``-shaped document that :func:`parse_tile_metadata` reads back exactly."""
    ET.register_namespace("n1", _NS)
    root = ET.Element(f"{{{_NS}}}Level-2A_Tile_ID")
    general = ET.SubElement(root, f"{{{_NS}}}General_Info")
    ET.SubElement(general, "TILE_ID").text = tile_id
    geo = ET.SubElement(root, f"{{{_NS}}}Geometric_Info")
    tg = ET.SubElement(geo, "Tile_Geocoding", metadataLevel="Brief")
    ET.SubElement(tg, "HORIZONTAL_CS_CODE").text = f"EPSG:{geocode.epsg}"
    sizes = sizes or {10: (10980, 10980), 20: (5490, 5490), 60: (1830, 1830)}
    for res, (nrows, ncols) in sizes.items():
        s = ET.SubElement(tg, "Size", resolution=str(res))
        ET.SubElement(s, "NROWS").text = str(nrows)
        ET.SubElement(s, "NCOLS").text = str(ncols)
    for res in sizes:
        p = ET.SubElement(tg, "Geoposition", resolution=str(res))
        ET.SubElement(p, "ULX").text = repr(float(geocode.ulx))
        ET.SubElement(p, "ULY").text = repr(float(geocode.uly))
        ET.SubElement(p, "XDIM").text = str(res)
        ET.SubElement(p, "YDIM").text = str(-res)
    angles = ET.SubElement(geo, "Tile_Angles")
    sun = ET.SubElement(angles, "Sun_Angles_Grid")
    _values_xml(sun, "Zenith", grids.sun_zenith)
    _values_xml(sun, "Azimuth", grids.sun_azimuth)
    for (band, det) in sorted(grids.view, key=lambda k: (_BAND_TO_MSI_ID[k[0].value], k[1])):
        zen, az = grids.view[(band, det)]
        v = ET.SubElement(
            angles, "Viewing_Incidence_Angles_Grids",
            bandId=str(_BAND_TO_MSI_ID[band.value]), detectorId=str(det),
        )
        _values_xml(v, "Zenith", zen)
        _values_xml(v, "Azimuth", az)
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def product_metadata_xml(baseline_text: str, product_uri: str = "") -> bytes:
    ns = "https://psd-14.sentinel2.eo.esa.int/PSD/User_Product_Level-2A.xsd"
    ET.register_namespace("n1", ns)
    root = ET.Element(f"{{{ns}}}Level-2A_User_Product")
    info = ET.SubElement(ET.SubElement(root, f"{{{ns}}}General_Info"), "Product_Info")
    ET.SubElement(info, "PRODUCT_URI").text = product_uri
    ET.SubElement(info, "PROCESSING_LEVEL").text = "Level-2A"
    ET.SubElement(info, "PROCESSING_BASELINE").text = baseline_text
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)
