"""Independent reference computations.

Nothing here imports from ``s2nbar``. Kernels are evaluated in 50-digit
mpmath, transverse Mercator uses Krueger series, and the end-to-end scene
oracle parses the XML with minidom and does every step with scalar loops.

Run ``python tests/oracle.py`` to regenerate ``tests/data/expected_nbar.npz``
from the checked-in SAFE fixture.
"""
from __future__ import annotations

import math
import sys
from pathlib import Path
from xml.dom import minidom

import mpmath as mp

mp.mp.dps = 50

DATA = Path(__file__).parent / "data"
FIXTURE_SAFE = DATA / "S2A_MSIL2A_20230601T102601_N0500_R108_T32UPB_20230601T102601.SAFE"
EXPECTED_NBAR = DATA / "expected_nbar.npz"

# typed in from the parameter table: band -> (f_iso, f_vol, f_geo, resolution)
PARAMS = {
    "B02": ("0.0774", "0.0372", "0.0079", 10),
    "B03": ("0.1306", "0.0580", "0.0178", 10),
    "B04": ("0.1690", "0.0574", "0.0227", 10),
    "B05": ("0.2085", "0.0845", "0.0256", 20),
    "B06": ("0.2316", "0.1003", "0.0273", 20),
    "B07": ("0.2599", "0.1197", "0.0294", 20),
    "B08": ("0.3093", "0.1535", "0.0330", 10),
    "B11": ("0.3430", "0.1154", "0.0453", 20),
    "B12": ("0.2658", "0.0639", "0.0387", 20),
}
BAND_BY_ID = {1: "B02", 2: "B03", 3: "B04", 4: "B05", 5: "B06", 6: "B07", 7: "B08", 11: "B11", 12: "B12"}


# ---------------------------------------------------------------- kernels

def _clamp(x):
    return max(mp.mpf(-1), min(mp.mpf(1), x))


def kvol(sz, vz, ra):
    sz, vz, ra = mp.mpf(sz), mp.mpf(vz), mp.mpf(ra)
    cxi = _clamp(mp.cos(sz) * mp.cos(vz) + mp.sin(sz) * mp.sin(vz) * mp.cos(ra))
    xi = mp.acos(cxi)
    return ((mp.pi / 2 - xi) * cxi + mp.sin(xi)) / (mp.cos(sz) + mp.cos(vz)) - mp.pi / 4


def kgeo(sz, vz, ra, hb=2, br=1):
    sz, vz, ra = mp.mpf(sz), mp.mpf(vz), mp.mpf(ra)
    szp = mp.atan(br * mp.tan(sz))
    vzp = mp.atan(br * mp.tan(vz))
    D = mp.sqrt(max(mp.mpf(0), mp.tan(szp) ** 2 + mp.tan(vzp) ** 2 - 2 * mp.tan(szp) * mp.tan(vzp) * mp.cos(ra)))
    secs = mp.sec(szp) + mp.sec(vzp)
    cost = _clamp(hb * mp.sqrt(D**2 + (mp.tan(szp) * mp.tan(vzp) * mp.sin(ra)) ** 2) / secs)
    t = mp.acos(cost)
    O = (t - mp.sin(t) * cost) * secs / mp.pi
    cxip = _clamp(mp.cos(szp) * mp.cos(vzp) + mp.sin(szp) * mp.sin(vzp) * mp.cos(ra))
    return O - mp.sec(szp) - mp.sec(vzp) + (1 + cxip) * mp.sec(szp) * mp.sec(vzp) / 2


def brdf(band, sz, vz, ra):
    fi, fv, fg, _ = PARAMS[band]
    return mp.mpf(fi) + mp.mpf(fv) * kvol(sz, vz, ra) + mp.mpf(fg) * kgeo(sz, vz, ra)


def cfactor(band, sz, vz, ra):
    return brdf(band, sz, 0, ra) / brdf(band, sz, vz, ra)


def rad(deg):
    return mp.mpf(deg) * mp.pi / 180


# ---------------------------------------------------------------- UTM (Krueger series, WGS84)

_A_AXIS = 6378137.0
_F = 1 / 298.257223563
_K0 = 0.9996
_N = _F / (2 - _F)
_E = math.sqrt(_F * (2 - _F))
_AR = _A_AXIS / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)
n = _N
_ALPHA = (
    n / 2 - 2 * n**2 / 3 + 5 * n**3 / 16 + 41 * n**4 / 180 - 127 * n**5 / 288 + 7891 * n**6 / 37800,
    13 * n**2 / 48 - 3 * n**3 / 5 + 557 * n**4 / 1440 + 281 * n**5 / 630 - 1983433 * n**6 / 1935360,
    61 * n**3 / 240 - 103 * n**4 / 140 + 15061 * n**5 / 26880 + 167603 * n**6 / 181440,
    49561 * n**4 / 161280 - 179 * n**5 / 168 + 6601661 * n**6 / 7257600,
    34729 * n**5 / 80640 - 3418889 * n**6 / 1995840,
    212378941 * n**6 / 319334400,
)
_BETA = (
    n / 2 - 2 * n**2 / 3 + 37 * n**3 / 96 - n**4 / 360 - 81 * n**5 / 512 + 96199 * n**6 / 604800,
    n**2 / 48 + n**3 / 15 - 437 * n**4 / 1440 + 46 * n**5 / 105 - 1118711 * n**6 / 3870720,
    17 * n**3 / 480 - 37 * n**4 / 840 - 209 * n**5 / 4480 + 5569 * n**6 / 90720,
    4397 * n**4 / 161280 - 11 * n**5 / 504 - 830251 * n**6 / 7257600,
    4583 * n**5 / 161280 - 108847 * n**6 / 3991680,
    20648693 * n**6 / 638668800,
)
del n


def utm_forward(lat_deg, lon_deg, zone):
    phi = math.radians(lat_deg)
    lam = math.radians(lon_deg - (6 * zone - 183))
    t = math.sinh(math.atanh(math.sin(phi)) - _E * math.atanh(_E * math.sin(phi)))
    xi_p = math.atan2(t, math.cos(lam))
    eta_p = math.atanh(math.sin(lam) / math.sqrt(1 + t * t))
    xi, eta = xi_p, eta_p
    for j, a in enumerate(_ALPHA, start=1):
        xi += a * math.sin(2 * j * xi_p) * math.cosh(2 * j * eta_p)
        eta += a * math.cos(2 * j * xi_p) * math.sinh(2 * j * eta_p)
    return 500000.0 + _K0 * _AR * eta, _K0 * _AR * xi


def utm_inverse(easting, northing, zone):
    xi = northing / (_K0 * _AR)
    eta = (easting - 500000.0) / (_K0 * _AR)
    xi_p, eta_p = xi, eta
    for j, b in enumerate(_BETA, start=1):
        xi_p -= b * math.sin(2 * j * xi) * math.cosh(2 * j * eta)
        eta_p -= b * math.cos(2 * j * xi) * math.sinh(2 * j * eta)
    chi = math.asin(math.sin(xi_p) / math.cosh(eta_p))
    lam = math.atan2(math.sinh(eta_p), math.cos(xi_p))
    phi = chi
    for _ in range(20):
        s = _E * math.sin(phi)
        phi = 2 * math.atan(math.tan(math.pi / 4 + chi / 2) * ((1 + s) / (1 - s)) ** (_E / 2)) - math.pi / 2
    return math.degrees(phi), math.degrees(lam) + (6 * zone - 183)


def utm_zone_to_zone(easting, northing, src_zone, dst_zone):
    lat, lon = utm_inverse(easting, northing, src_zone)
    return utm_forward(lat, lon, dst_zone)


# ---------------------------------------------------------------- end-to-end scene oracle

def _text(node):
    return "".join(c.data for c in node.childNodes if c.nodeType == c.TEXT_NODE)


def _grid(angle_node):
    vl = angle_node.getElementsByTagName("Values_List")[0]
    return [[float(v) for v in _text(r).split(" ")] for r in vl.getElementsByTagName("VALUES")]


def _merge(grids, azimuth=False):
    size = len(grids[0])
    out = [[None] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            vals = [g[i][j] for g in grids if not math.isnan(g[i][j])]
            out[i][j] = sum(vals) / len(vals) if vals else None
    valid = [(i, j) for i in range(size) for j in range(size) if out[i][j] is not None]
    filled = [row[:] for row in out]
    for i in range(size):
        for j in range(size):
            if out[i][j] is None:
                best = None
                for (r, c) in valid:
                    d = (r - i) ** 2 + (c - j) ** 2
                    if best is None or d < best[0]:
                        best = (d, r, c)
                filled[i][j] = out[best[1]][best[2]]
    return filled


def scene_oracle(safe_dir):
    """Return {band: NBAR array} for every band raster in the SAFE directory."""
    import numpy as np
    import rasterio

    safe_dir = Path(safe_dir)
    prod = minidom.parse(str(safe_dir / "MTD_MSIL2A.xml"))
    pb = float(_text(prod.getElementsByTagName("PROCESSING_BASELINE")[0]))
    tile_path = next(safe_dir.glob("GRANULE/*/MTD_TL.xml"))
    tile = minidom.parse(str(tile_path))
    pos = [p for p in tile.getElementsByTagName("Geoposition") if p.getAttribute("resolution") == "10"][0]
    ulx = float(_text(pos.getElementsByTagName("ULX")[0]))
    uly = float(_text(pos.getElementsByTagName("ULY")[0]))
    sun = tile.getElementsByTagName("Sun_Angles_Grid")[0]
    sun_z = _grid(sun.getElementsByTagName("Zenith")[0])
    sun_a = _grid(sun.getElementsByTagName("Azimuth")[0])

    per_band = {}
    for node in tile.getElementsByTagName("Viewing_Incidence_Angles_Grids"):
        bid = int(node.getAttribute("bandId"))
        if bid not in BAND_BY_ID:
            continue
        zs, az = per_band.setdefault(BAND_BY_ID[bid], ([], []))
        zs.append(_grid(node.getElementsByTagName("Zenith")[0]))
        az.append(_grid(node.getElementsByTagName("Azimuth")[0]))

    result = {}
    for raster_path in sorted(safe_dir.glob("GRANULE/*/IMG_DATA/*/*.tif")):
        band = raster_path.stem.split("_")[-2]
        vz = _merge(per_band[band][0])
        va = _merge(per_band[band][1])
        c = [[0.0] * 23 for _ in range(23)]
        for i in range(23):
            for j in range(23):
                ra = math.radians(sun_a[i][j] - va[i][j])
                c[i][j] = float(cfactor(band, math.radians(sun_z[i][j]), math.radians(vz[i][j]), ra))

        with rasterio.open(raster_path) as src:
            dn = src.read(1)
            a = src.transform
        h, w = dn.shape
        out = np.zeros((h, w), dtype=np.int64)
        for r in range(h):
            y = a.f + (r + 0.5) * a.e
            fy = min(max((uly - y) / 5000.0, 0.0), 22.0)
            y0 = min(int(math.floor(fy)), 21)
            wy = fy - y0
            for col in range(w):
                v = int(dn[r, col])
                if v == 0:
                    continue
                if pb >= 4:
                    v = max(v - 1000, 1)
                x = a.c + (col + 0.5) * a.a
                fx = min(max((x - ulx) / 5000.0, 0.0), 22.0)
                x0 = min(int(math.floor(fx)), 21)
                wx = fx - x0
                cc = (
                    c[y0][x0] * (1 - wx) * (1 - wy)
                    + c[y0][x0 + 1] * wx * (1 - wy)
                    + c[y0 + 1][x0] * (1 - wx) * wy
                    + c[y0 + 1][x0 + 1] * wx * wy
                )
                out[r, col] = min(max(round(cc * v), 1), 65535)
        result[band] = out
    return result


if __name__ == "__main__":
    import numpy as np

    safe = Path(sys.argv[1]) if len(sys.argv) > 1 else FIXTURE_SAFE
    expected = scene_oracle(safe)
    np.savez_compressed(EXPECTED_NBAR, **{b: v.astype(np.uint16) for b, v in expected.items()})
    print(f"wrote {EXPECTED_NBAR} ({', '.join(sorted(expected))})")
