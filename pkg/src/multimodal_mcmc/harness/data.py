"""Dataset ingestion and synthetic stand-ins."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..targets import SurData


class GridFormatError(ValueError):
    def __init__(self, message: str, row: int):
        self.row = row
        super().__init__(f"row {row}: {message}")


def parse_grid(text: str) -> np.ndarray:
    """ASCII rows of 0/1 characters -> (H, W) int8 matrix. Trailing blank lines are ignored."""
    rows = text.splitlines()
    while rows and not rows[-1].strip():
        rows.pop()
    if not rows:
        raise GridFormatError("empty grid", 1)
    width = None
    out = []
    for n, row in enumerate(rows, 1):
        row = row.rstrip("\r")
        bad = set(row) - {"0", "1"}
        if bad:
            raise GridFormatError(f"unexpected character {sorted(bad)[0]!r}", n)
        if not row:
            raise GridFormatError("empty row", n)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise GridFormatError(f"expected {width} columns, found {len(row)}", n)
        out.append([int(c) for c in row])
    return np.array(out, dtype=np.int8)


def ingest_grid(path) -> np.ndarray:
    with open(path) as fh:
        return parse_grid(fh.read())


def format_grid(grid) -> str:
    return "".join("".join(str(int(v)) for v in row) + "\n" for row in np.asarray(grid))


def synth_ice(height: int = 40, width: int = 40, seed: int = 0, smoothness: float = 2.5) -> np.ndarray:
    """Blob-structured binary image: a smoothed Gaussian field thresholded at its median."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(7,))))
    field = ndimage.gaussian_filter(rng.standard_normal((height, width)), smoothness, mode="reflect")
    return (field > np.median(field)).astype(np.int8)


# Bivariate SUR data with one covariate per equation (n = 8). Found by a
# seeded random search and checked on a dense grid: the profile likelihood
# has two separated local maxima of comparable posterior mass.
SUR_X = [
    [-1.023, 0.004, -0.031, 1.54, -0.348, -0.449, -0.581, 0.902],
    [-1.468, -0.226, 0.683, -0.129, -0.683, -0.672, 1.95, 0.793],
]
SUR_Y = [
    [2.371, -0.878, -0.483, -0.397, 1.609, 2.671, -1.747, -1.263],
    [-2.825, -1.553, 0.668, -1.902, -1.562, -1.358, 5.913, 1.482],
]


def bimodal_sur_data() -> SurData:
    return SurData(np.array(SUR_Y, dtype=float), np.array(SUR_X, dtype=float)[:, :, None])
