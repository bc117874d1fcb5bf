"""Rebuild the checked-in 256x256 SAFE test fixture and its frozen oracle output.

    python scripts/build_fixture.py

The raster window straddles one angle-grid node in each direction so that the
bilinear interpolation of the c-factor is exercised across cell boundaries.
"""
import shutil
import subprocess
import sys
from pathlib import Path

from s2nbar import synthetic

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "tests" / "data"

# node lines at x=605000 and y=5795020 fall inside the window
ORIGIN = (603720.0, 5796300.0)
SIZE_10M = 256


def main():
    for old in DATA.glob("*.SAFE"):
        shutil.rmtree(old)
    safe = synthetic.write_safe(
        DATA,
        synthetic.full_band_set(SIZE_10M, seed=7),
        ORIGIN,
        synthetic.detector_grids(seed=7),
        baseline="05.00",
    )
    print(f"wrote {safe.relative_to(ROOT)}")
    subprocess.run([sys.executable, str(ROOT / "tests" / "oracle.py"), str(safe)], check=True)


if __name__ == "__main__":
    main()
