"""Ross-Thick / Li-Sparse reciprocal kernels, the kernel-driven BRDF and the c-factor.

All kernel functions take radians and broadcast like numpy ufuncs.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .axioms import BANDS, KERNEL_CONSTANTS, BandId, SpectralParams, params_for
from .errors import DegenerateBrdf, DomainError
from .metadata import AZIMUTH, ZENITH, AngleGrid, SceneMetadata, TileGeocode

MAX_ZENITH_DEG = 85.0
DEGENERATE_BRDF = 1e-8


def to_radians(degrees):
    """The one place degrees become radians."""
    return np.asarray(degrees, dtype=float) * (np.pi / 180.0)


MAX_ZENITH = float(to_radians(MAX_ZENITH_DEG))


def _zenith(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    bad = ~((x >= 0.0) & (x <= MAX_ZENITH))
    if np.any(bad):
        worst = x[bad].flat[0] if x.ndim else float(x)
        raise DomainError(
            f"{name} {np.degrees(worst):.6g} deg outside [0, {MAX_ZENITH_DEG:g}] deg"
        )
    return x


def _azimuth(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("relative azimuth must be finite")
    return x


def _scalar_or_array(a):
    return float(a) if np.ndim(a) == 0 else a


def k_vol(sun_zenith, view_zenith, rel_azimuth):
    """RossThick volumetric kernel."""
    th = _zenith(sun_zenith, "sun zenith")
    tv = _zenith(view_zenith, "view zenith")
    phi = _azimuth(rel_azimuth)
    cos_th, cos_tv = np.cos(th), np.cos(tv)
    cos_xi = np.clip(cos_th * cos_tv + np.sin(th) * np.sin(tv) * np.cos(phi), -1.0, 1.0)
    xi = np.arccos(cos_xi)
    out = ((np.pi / 2 - xi) * cos_xi + np.sin(xi)) / (cos_th + cos_tv) - np.pi / 4
    return _scalar_or_array(out)


def k_geo(sun_zenith, view_zenith, rel_azimuth, constants=KERNEL_CONSTANTS):
    """LiSparse reciprocal geometric kernel."""
    th = _zenith(sun_zenith, "sun zenith")
    tv = _zenith(view_zenith, "view zenith")
    phi = _azimuth(rel_azimuth)
    cos_phi = np.cos(phi)

    # equivalent-sphere angles
    th_p = np.arctan(constants.b_over_r * np.tan(th))
    tv_p = np.arctan(constants.b_over_r * np.tan(tv))
    tan_th, tan_tv = np.tan(th_p), np.tan(tv_p)
    sec_th, sec_tv = 1.0 / np.cos(th_p), 1.0 / np.cos(tv_p)
    sec_sum = sec_th + sec_tv

    # same D^2 as tan^2 + tan^2 - 2 tan tan cos(phi), without cancellation near the hotspot
    d2 = (tan_th - tan_tv) ** 2 + 4.0 * tan_th * tan_tv * np.sin(0.5 * phi) ** 2
    cross = tan_th * tan_tv * np.sin(phi)
    cos_t = np.clip(constants.h_over_b * np.sqrt(d2 + cross**2) / sec_sum, -1.0, 1.0)
    t = np.arccos(cos_t)
    overlap = (t - np.sin(t) * cos_t) * sec_sum / np.pi

    cos_xi_p = np.clip(
        np.cos(th_p) * np.cos(tv_p) + np.sin(th_p) * np.sin(tv_p) * cos_phi, -1.0, 1.0
    )
    out = overlap - sec_th - sec_tv + 0.5 * (1.0 + cos_xi_p) * sec_th * sec_tv
    return _scalar_or_array(out)


def brdf(params, kvol, kgeo):
    """``f_iso + f_vol * kvol + f_geo * kgeo``.

    ``params`` is a :class:`SpectralParams` or an ``(f_iso, f_vol, f_geo)``
    triple of arrays that broadcast against the kernels.
    """
    if isinstance(params, SpectralParams):
        f_iso, f_vol, f_geo = params.f_iso, params.f_vol, params.f_geo
    else:
        f_iso, f_vol, f_geo = params
    return _scalar_or_array(f_iso + f_vol * np.asarray(kvol) + f_geo * np.asarray(kgeo))


def stacked_params(bands: Iterable[BandId]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-band parameters shaped ``(B, 1, 1)`` for broadcasting over grids."""
    ps = [params_for(b) for b in bands]
    col = lambda name: np.array([getattr(p, name) for p in ps]).reshape(-1, 1, 1)  # noqa: E731
    return col("f_iso"), col("f_vol"), col("f_geo")


def c_factor(params, sun_zenith, view_zenith, rel_azimuth):
    """Nadir-to-observed BRDF ratio; the nadir term keeps the observed sun zenith and azimuth."""
    th = np.asarray(sun_zenith, dtype=float)
    tv = np.asarray(view_zenith, dtype=float)
    phi = np.asarray(rel_azimuth, dtype=float)
    nadir = np.zeros(np.broadcast(th, tv).shape)
    num = brdf(params, k_vol(th, nadir, phi), k_geo(th, nadir, phi))
    den = brdf(params, k_vol(th, tv, phi), k_geo(th, tv, phi))
    if np.any(np.asarray(den) <= DEGENERATE_BRDF):
        raise DegenerateBrdf(f"modelled BRDF <= {DEGENERATE_BRDF:g}; geometry is pathological")
    return _scalar_or_array(np.asarray(num) / np.asarray(den))


@dataclass(frozen=True, eq=False)
class AngleField:
    """Radians. ``sun_zenith`` is (H, W); view zenith and relative azimuth are (B, H, W)."""

    sun_zenith: np.ndarray
    view_zenith: np.ndarray
    rel_azimuth: np.ndarray
    bands: tuple[BandId, ...]


def wrap_pi(angle):
    """Wrap radians into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


def angle_field(angles: AngleGrid, bands: Iterable[BandId] | None = None) -> AngleField:
    bands = tuple(b for b in BANDS if angles.has_band(b)) if bands is None else tuple(bands)
    rows = [angles.row(b) for b in bands]
    view = angles.values[rows]
    if angles.missing[0].any():
        raise DomainError("sun angle grid has missing nodes")
    for b, r in zip(bands, rows):
        if angles.missing[r].any():
            raise DomainError(f"no viewing angles for {b}")
    sun_az = angles.values[0, AZIMUTH]
    return AngleField(
        sun_zenith=to_radians(angles.values[0, ZENITH]),
        view_zenith=to_radians(view[:, ZENITH]),
        rel_azimuth=wrap_pi(to_radians(sun_az[None] - view[:, AZIMUTH])),
        bands=bands,
    )


@dataclass(frozen=True, eq=False)
class CFactorGrid:
    """c-factor at the 23x23 angle nodes, one plane per band in ``bands``."""

    values: np.ndarray
    bands: tuple[BandId, ...]
    geocode: TileGeocode

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] != len(self.bands):
            raise ValueError(f"values shape {self.values.shape} does not match {len(self.bands)} bands")

    def plane(self, band: BandId) -> np.ndarray:
        return self.values[self.bands.index(BandId(band))]

    def select(self, bands: Iterable[BandId]) -> "CFactorGrid":
        bands = tuple(BandId(b) for b in bands)
        return CFactorGrid(self.values[[self.bands.index(b) for b in bands]], bands, self.geocode)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["band", "row", "col", "c"])
        for b, plane in zip(self.bands, self.values):
            for (r, c), v in np.ndenumerate(plane):
                w.writerow([b.value, r, c, repr(float(v))])
        return buf.getvalue()


def c_factor_field(metadata: SceneMetadata, bands: Iterable[BandId] | None = None) -> CFactorGrid:
    """c-factor for every band with viewing angles, evaluated on the native angle grid."""
    field = angle_field(metadata.angles, bands)
    values = c_factor(
        stacked_params(field.bands), field.sun_zenith[None], field.view_zenith, field.rel_azimuth
    )
    return CFactorGrid(np.asarray(values, dtype=float), field.bands, metadata.geocode)
