"""Vegetation indices on reflectance slabs and NBAR-minus-SR index differences."""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .axioms import BandId
from .errors import AllNodata, DimensionMismatch, MissingBand
from .pipeline import CubeSlab


class IndexId(str, enum.Enum):
    NDVI = "NDVI"
    NIRv = "NIRv"
    kNDVI = "kNDVI"
    IRECI = "IRECI"

    @property
    def bands(self) -> tuple[BandId, ...]:
        if self is IndexId.IRECI:
            return (BandId.B04, BandId.B05, BandId.B06, BandId.B07)
        return (BandId.B08, BandId.B04)

    @classmethod
    def parse(cls, text: str) -> "IndexId":
        for member in cls:
            if member.value.lower() == text.strip().lower():
                return member
        raise ValueError(f"unknown index {text!r}; choose from {', '.join(m.value for m in cls)}")


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den == 0, np.nan, num / np.where(den == 0, 1.0, den))


def ndvi(nir, red):
    return _ratio(nir - red, nir + red)


def index_values(index: IndexId, refl: dict[BandId, np.ndarray]) -> np.ndarray:
    """Elementwise index from physical reflectance arrays keyed by band; NaN is nodata."""
    if index is IndexId.IRECI:
        b4, b5, b6, b7 = (refl[b] for b in index.bands)
        return _ratio(b7 - b4, _ratio(b5, b6))
    n, r = refl[BandId.B08], refl[BandId.B04]
    nd = ndvi(n, r)
    if index is IndexId.NDVI:
        return nd
    if index is IndexId.NIRv:
        return nd * n
    return np.tanh(nd**2)


def compute_index(slab: CubeSlab, index: IndexId | str) -> np.ndarray:
    """Index plane per timestep, shape ``(T, y, x)``; integer slabs are scaled from DN first."""
    index = IndexId.parse(index) if isinstance(index, str) else index
    missing = [b.value for b in index.bands if b not in slab.bands]
    if missing:
        raise MissingBand(f"{index.value} needs {', '.join(missing)}")
    refl = slab.reflectance()
    planes = {b: refl[:, slab.bands.index(b)] for b in index.bands}
    if all(np.isnan(p).all() for p in planes.values()):
        raise AllNodata(f"every pixel of the {index.value} input bands is nodata")
    return index_values(index, planes)


@dataclass(frozen=True, eq=False)
class DeltaPsi:
    values: np.ndarray
    per_timestep: list[tuple[float, float]]

    @property
    def min(self) -> float:
        return float(np.nanmin(self.values)) if not np.isnan(self.values).all() else float("nan")

    @property
    def max(self) -> float:
        return float(np.nanmax(self.values)) if not np.isnan(self.values).all() else float("nan")


def delta_psi(index_nbar: np.ndarray, index_sr: np.ndarray) -> DeltaPsi:
    """Index difference NBAR minus SR, with per-timestep (min, max)."""
    a, b = np.asarray(index_nbar, dtype=float), np.asarray(index_sr, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    d = a - b
    stats = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN timesteps
        for plane in d.reshape(d.shape[0], -1) if d.ndim > 1 else [d]:
            stats.append((float(np.nanmin(plane)), float(np.nanmax(plane))))
    return DeltaPsi(d, stats)
