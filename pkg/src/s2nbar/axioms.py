"""Fixed constants of the c-factor method.

MODIS-derived Ross-Li spectral parameters for the Sentinel-2 MSI bands that
can be converted to NBAR, their native resolutions, and the LiSparse shape
ratios. B01 and B8A have no parameters and are deliberately not members of
:class:`BandId`.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass


class BandId(str, enum.Enum):
    B02 = "B02"
    B03 = "B03"
    B04 = "B04"
    B05 = "B05"
    B06 = "B06"
    B07 = "B07"
    B08 = "B08"
    B11 = "B11"
    B12 = "B12"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "BandId":
        """Accept ``B04``, ``b04`` or ``B4``; raise ValueError for anything else."""
        t = text.strip().upper()
        if len(t) == 2 and t[0] == "B" and t[1].isdigit():
            t = "B0" + t[1]
        try:
            return cls(t)
        except ValueError:
            raise ValueError(f"{text!r} is not a convertible band") from None


BANDS: tuple[BandId, ...] = tuple(BandId)


@dataclass(frozen=True)
class SpectralParams:
    f_iso: float
    f_vol: float
    f_geo: float
    resolution_m: int = 10

    def __post_init__(self):
        if not (self.f_iso > 0 and self.f_vol > 0 and self.f_geo > 0):
            raise ValueError("spectral parameters must be strictly positive")
        if self.resolution_m not in (10, 20):
            raise ValueError(f"resolution_m must be 10 or 20, got {self.resolution_m}")

    def scaled(self, factor: float) -> "SpectralParams":
        return SpectralParams(
            self.f_iso * factor, self.f_vol * factor, self.f_geo * factor, self.resolution_m
        )


@dataclass(frozen=True)
class KernelConstants:
    h_over_b: float = 2.0
    b_over_r: float = 1.0


KERNEL_CONSTANTS = KernelConstants()

_PARAMS: dict[BandId, SpectralParams] = {
    BandId.B02: SpectralParams(f_iso=0.0774, f_vol=0.0372, f_geo=0.0079, resolution_m=10),
    BandId.B03: SpectralParams(f_iso=0.1306, f_vol=0.0580, f_geo=0.0178, resolution_m=10),
    BandId.B04: SpectralParams(f_iso=0.1690, f_vol=0.0574, f_geo=0.0227, resolution_m=10),
    BandId.B05: SpectralParams(f_iso=0.2085, f_vol=0.0845, f_geo=0.0256, resolution_m=20),
    BandId.B06: SpectralParams(f_iso=0.2316, f_vol=0.1003, f_geo=0.0273, resolution_m=20),
    BandId.B07: SpectralParams(f_iso=0.2599, f_vol=0.1197, f_geo=0.0294, resolution_m=20),
    BandId.B08: SpectralParams(f_iso=0.3093, f_vol=0.1535, f_geo=0.0330, resolution_m=10),
    BandId.B11: SpectralParams(f_iso=0.3430, f_vol=0.1154, f_geo=0.0453, resolution_m=20),
    BandId.B12: SpectralParams(f_iso=0.2658, f_vol=0.0639, f_geo=0.0387, resolution_m=20),
}

# Central wavelengths (nm) for S2A / S2B. Documentation only.
CENTRAL_WAVELENGTH_NM: dict[BandId, tuple[float, float]] = {
    BandId.B02: (496.6, 492.1),
    BandId.B03: (560.0, 559.0),
    BandId.B04: (664.5, 665.0),
    BandId.B05: (703.9, 703.8),
    BandId.B06: (740.2, 739.1),
    BandId.B07: (782.5, 779.7),
    BandId.B08: (835.1, 833.0),
    BandId.B11: (1613.7, 1610.4),
    BandId.B12: (2202.4, 2185.7),
}


def params_for(band: BandId | str) -> SpectralParams:
    return _PARAMS[BandId(band)]


def resolution_of(band: BandId | str) -> int:
    return _PARAMS[BandId(band)].resolution_m


def constants_csv() -> str:
    """The parameter table as CSV, one row per band in canonical order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["band", "f_iso", "f_geo", "f_vol", "resolution_m"])
    for band in BANDS:
        p = _PARAMS[band]
        w.writerow([band.value, f"{p.f_iso:.4f}", f"{p.f_geo:.4f}", f"{p.f_vol:.4f}", p.resolution_m])
    return buf.getvalue()
