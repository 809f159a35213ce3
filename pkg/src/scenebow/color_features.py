"""Color and texture descriptors: HSV histograms, color moments, one-level
Haar wavelet statistics, and their pyramidal/weighted variants.

Histograms carry raw counts; all normalization happens once when a whole
representation is composed (see :mod:`scenebow.bow`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .errors import StoreError
from .fileio import read_exact
from .imaging import CellBounds, HsvImage, Image, pyramid_cells

HIST_BINS_HUE = 36
HIST_BINS_SATURATION = 32
HIST_BINS_VALUE = 16
HIST_BINS_GREY = 36

# Default per-level weights for the weighted pyramid variant, levels 0..2.
DEFAULT_LEVEL_WEIGHTS = (0.25, 0.25, 0.5)

KIND_COLHIST = "colhist"
KIND_COLMOM = "colmom"
KIND_DWT = "dwt"
KIND_PCOLMOM = "pcolmom"


@dataclass(frozen=True, eq=False)
class FeatureBlock:
    """One extracted descriptor block, tagged with its kind.

    Pyramidal blocks record ``max_level`` so the weighting step can recover
    the per-level cell layout; ``weighted`` marks blocks that already went
    through :func:`weight_pyramid`.
    """

    kind: str
    values: np.ndarray
    max_level: int | None = None
    weighted: bool = False

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


# Persisted block tags: (kind, max_level, weighted) -> u8.
_KIND_TAGS = {
    (KIND_COLHIST, None, False): 1,
    (KIND_COLMOM, None, False): 2,
    (KIND_DWT, None, False): 3,
    (KIND_PCOLMOM, 0, False): 4,
    (KIND_PCOLMOM, 1, False): 5,
    (KIND_PCOLMOM, 2, False): 6,
    (KIND_PCOLMOM, 0, True): 7,
    (KIND_PCOLMOM, 1, True): 8,
    (KIND_PCOLMOM, 2, True): 9,
}
_TAG_KINDS = {tag: key for key, tag in _KIND_TAGS.items()}


def _region_planes(img: Image | HsvImage, bounds: CellBounds) -> list[np.ndarray]:
    """Per-channel region views: [h, s, v] for HSV inputs, [grey] otherwise."""
    if isinstance(img, HsvImage):
        planes = [img.hue, img.saturation, img.value]
    elif img.channels == 1:
        planes = [img.pixels]
    else:
        raise ValueError("color images must be converted with to_hsv first")
    height, width = planes[0].shape
    if bounds.x1 > width or bounds.y1 > height:
        raise ValueError(f"bounds {bounds} exceed image {width}x{height}")
    return [bounds.slice_from(p) for p in planes]


def color_histogram(img: Image | HsvImage, bounds: CellBounds) -> FeatureBlock:
    """HSV histogram (36+32+16 bins) or 36-bin intensity histogram for grey.

    Bins partition [0, 1] uniformly with the upper edge folded into the last
    bin; bin values are raw pixel counts.
    """
    planes = _region_planes(img, bounds)
    if len(planes) == 3:
        bins = (HIST_BINS_HUE, HIST_BINS_SATURATION, HIST_BINS_VALUE)
    else:
        bins = (HIST_BINS_GREY,)
    parts = [
        np.histogram(plane.ravel(), bins=n, range=(0.0, 1.0))[0].astype(np.float64)
        for plane, n in zip(planes, bins)
    ]
    return FeatureBlock(kind=KIND_COLHIST, values=np.concatenate(parts))


def color_moments(img: Image | HsvImage, bounds: CellBounds) -> FeatureBlock:
    """Per-channel (mean, population std): 6 values for HSV, 2 for grey."""
    planes = _region_planes(img, bounds)
    values = []
    for plane in planes:
        values.append(plane.mean())
        values.append(plane.std())
    return FeatureBlock(kind=KIND_COLMOM, values=np.asarray(values, dtype=np.float64))


def _haar_detail_stats(region: np.ndarray) -> list[float]:
    """(mean |coef|, std coef) for the LH, HL, HH bands of a one-level
    orthonormal 2-D Haar transform; odd regions are zero-padded to even."""
    h, w = region.shape
    if h % 2 or w % 2:
        padded = np.zeros((h + h % 2, w + w % 2), dtype=np.float64)
        padded[:h, :w] = region
        region = padded
    a = region[0::2, 0::2]
    b = region[0::2, 1::2]
    c = region[1::2, 0::2]
    d = region[1::2, 1::2]
    lh = (a + b - c - d) / 2.0  # vertical variation (horizontal edges)
    hl = (a - b + c - d) / 2.0  # horizontal variation (vertical edges)
    hh = (a - b - c + d) / 2.0
    stats = []
    for band in (lh, hl, hh):
        stats.append(float(np.abs(band).mean()))
        stats.append(float(band.std()))
    return stats


def dwt_texture(img: Image | HsvImage, bounds: CellBounds) -> FeatureBlock:
    """One-level Haar detail statistics: 6 values per channel (18-D for HSV)."""
    if bounds.width < 2 or bounds.height < 2:
        raise ValueError(f"dwt_texture needs at least a 2x2 region, got {bounds}")
    planes = _region_planes(img, bounds)
    values: list[float] = []
    for plane in planes:
        values.extend(_haar_detail_stats(np.asarray(plane, dtype=np.float64)))
    return FeatureBlock(kind=KIND_DWT, values=np.asarray(values, dtype=np.float64))


def pyramidal_color_moments(img: Image | HsvImage, max_level: int) -> FeatureBlock:
    """Color moments of every pyramid cell, concatenated in cell order.

    Dims for HSV inputs: 6 at level 0, 126 at level 2 (21 cells x 6).
    """
    cells = pyramid_cells(img.width, img.height, max_level)
    parts = [color_moments(img, cell).values for cell in cells]
    return FeatureBlock(
        kind=KIND_PCOLMOM, values=np.concatenate(parts), max_level=max_level
    )


def weight_pyramid(
    block: FeatureBlock, level_weights: Sequence[float]
) -> FeatureBlock:
    """Scale every cell's sub-vector by its pyramid level's weight."""
    if block.max_level is None:
        raise ValueError("weight_pyramid requires a pyramidal block")
    n_levels = block.max_level + 1
    if len(level_weights) != n_levels:
        raise ValueError(
            f"expected {n_levels} level weights, got {len(level_weights)}"
        )
    cells_per_level = [4**level for level in range(n_levels)]
    total_cells = sum(cells_per_level)
    if block.dim % total_cells:
        raise ValueError(
            f"block dim {block.dim} is not divisible by {total_cells} cells"
        )
    sub = block.dim // total_cells
    per_cell = np.repeat(
        np.asarray(level_weights, dtype=np.float64), cells_per_level
    )
    scaled = block.values * np.repeat(per_cell, sub)
    return FeatureBlock(
        kind=block.kind, values=scaled, max_level=block.max_level, weighted=True
    )


def write_feature_block(handle: BinaryIO, block: FeatureBlock) -> None:
    """Binary record ``(kind tag u8, dim u32 LE, dim x f64 LE)``."""
    key = (block.kind, block.max_level, block.weighted)
    if key not in _KIND_TAGS:
        raise ValueError(f"block kind {key} has no persistence tag")
    handle.write(struct.pack("<BI", _KIND_TAGS[key], block.dim))
    handle.write(np.asarray(block.values, dtype="<f8").tobytes())


def read_feature_block(handle: BinaryIO) -> FeatureBlock:
    tag, dim = struct.unpack("<BI", read_exact(handle, 5, "feature block header"))
    if tag not in _TAG_KINDS:
        raise StoreError(f"unknown feature block tag {tag}")
    kind, max_level, weighted = _TAG_KINDS[tag]
    raw = read_exact(handle, 8 * dim, "feature block values")
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return FeatureBlock(kind=kind, values=values, max_level=max_level, weighted=weighted)
