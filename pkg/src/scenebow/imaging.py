"""Image decoding, HSV conversion, and grid/pyramid/half geometry.

Every feature extractor works on the types defined here: float rasters in
[0, 1], half-open cell bounds, and the upper/lower half rule shared by the
half-specific vocabularies and annotators.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import DecodeError

UPPER = "upper"
LOWER = "lower"

_GREY_MODES = {"1", "L", "I", "I;16", "F", "LA"}


@dataclass(frozen=True, eq=False)
class Image:
    """Decoded raster with float64 pixels in [0, 1].

    ``pixels`` has shape (H, W) for grey images and (H, W, 3) for RGB.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.ndim not in (2, 3):
            raise ValueError("pixels must be (H, W) or (H, W, 3)")
        if self.pixels.ndim == 3 and self.pixels.shape[2] != 3:
            raise ValueError("color images must carry exactly 3 channels")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0, 1]: min={lo}, max={hi}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


@dataclass(frozen=True, eq=False)
class HsvImage:
    """Per-plane HSV raster: hue in [0, 1), saturation and value in [0, 1]."""

    hue: np.ndarray
    saturation: np.ndarray
    value: np.ndarray

    def __post_init__(self) -> None:
        if not (self.hue.shape == self.saturation.shape == self.value.shape):
            raise ValueError("HSV planes must share one shape")

    @property
    def height(self) -> int:
        return self.hue.shape[0]

    @property
    def width(self) -> int:
        return self.hue.shape[1]


@dataclass(frozen=True)
class CellBounds:
    """Half-open pixel rectangle [x0, x1) x [y0, y1) with a level tag."""

    x0: int
    y0: int
    x1: int
    y1: int
    level: int | str = "grid"

    def __post_init__(self) -> None:
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(f"degenerate cell bounds {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, x: float, y: float) -> bool:
        """A continuous point belongs to the cell holding (floor(x), floor(y))."""
        return self.x0 <= math.floor(x) < self.x1 and self.y0 <= math.floor(y) < self.y1

    def slice_from(self, plane: np.ndarray) -> np.ndarray:
        return plane[self.y0 : self.y1, self.x0 : self.x1]


def decode_image(data: bytes) -> Image:
    """Decode PNG/JPEG bytes into an ``Image`` with 8-bit samples mapped by v/255."""
    try:
        with PILImage.open(io.BytesIO(data)) as decoded:
            decoded.load()
            if decoded.mode in _GREY_MODES:
                arr = np.asarray(decoded.convert("L"), dtype=np.float64)
            else:
                arr = np.asarray(decoded.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc
    return Image(arr / 255.0)


def load_image(path) -> Image:
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise DecodeError(f"cannot read image file {path}: {exc}") from exc
    return decode_image(data)


def to_hsv(img: Image) -> HsvImage:
    """Convert an RGB image to HSV planes (hue scaled to [0, 1))."""
    if img.channels != 3:
        raise ValueError("to_hsv requires a 3-channel image")
    rgb = img.pixels
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=2)
    minc = rgb.min(axis=2)
    delta = maxc - minc
    safe_delta = np.where(delta == 0.0, 1.0, delta)

    hue = np.zeros_like(maxc)
    r_is_max = (maxc == r) & (delta > 0)
    g_is_max = (maxc == g) & (delta > 0) & ~r_is_max
    b_is_max = (delta > 0) & ~r_is_max & ~g_is_max
    hue[r_is_max] = np.mod((g - b)[r_is_max] / safe_delta[r_is_max], 6.0)
    hue[g_is_max] = (b - r)[g_is_max] / safe_delta[g_is_max] + 2.0
    hue[b_is_max] = (r - g)[b_is_max] / safe_delta[b_is_max] + 4.0
    hue = hue / 6.0
    hue = np.where(hue >= 1.0, hue - 1.0, hue)

    saturation = np.where(maxc > 0, delta / np.where(maxc == 0, 1.0, maxc), 0.0)
    return HsvImage(hue=hue, saturation=saturation, value=maxc)


def to_grey(img: Image) -> Image:
    """Grey view of an image: the HSV value plane (max over RGB) for color inputs."""
    if img.channels == 1:
        return img
    return Image(img.pixels.max(axis=2))


def _axis_edges(size: int, parts: int) -> list[int]:
    # base width floor(size/parts); the remainder goes one pixel each to the
    # last cells so the union always covers the axis exactly
    base = size // parts
    remainder = size % parts
    edges = [0]
    for i in range(parts):
        width = base + (1 if i >= parts - remainder else 0)
        edges.append(edges[-1] + width)
    return edges


def grid_partition(
    width: int, height: int, rows: int, cols: int, level: int | str = "grid"
) -> list[CellBounds]:
    """Partition a W x H raster into rows x cols cells, row-major order."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be at least 1")
    if rows > height or cols > width:
        raise ValueError(
            f"grid {rows}x{cols} exceeds image dimensions {width}x{height}"
        )
    x_edges = _axis_edges(width, cols)
    y_edges = _axis_edges(height, rows)
    cells = []
    for r in range(rows):
        for c in range(cols):
            cells.append(
                CellBounds(
                    x0=x_edges[c],
                    y0=y_edges[r],
                    x1=x_edges[c + 1],
                    y1=y_edges[r + 1],
                    level=level,
                )
            )
    return cells


PYRAMID_CELL_COUNTS = {0: 1, 1: 5, 2: 21}


def pyramid_cells(width: int, height: int, max_level: int) -> list[CellBounds]:
    """Cells of all pyramid levels 0..max_level, level-ascending then row-major.

    Level l splits the image into 2^l x 2^l cells, so max_level 2 yields
    1 + 4 + 16 = 21 cells.
    """
    if max_level not in (0, 1, 2):
        raise ValueError(f"unsupported pyramid level {max_level}")
    cells: list[CellBounds] = []
    for level in range(max_level + 1):
        parts = 2**level
        cells.extend(grid_partition(width, height, parts, parts, level=level))
    return cells


def half_of(y: float, height: int) -> str:
    """Assign a pixel row to the image half it belongs to.

    The middle row of odd-height images belongs to the lower half; continuous
    coordinates are floored first, matching cell assignment.
    """
    if not 0 <= y < height:
        raise ValueError(f"row {y} outside image of height {height}")
    return UPPER if math.floor(y) < height // 2 else LOWER


def cell_half(cell: CellBounds, height: int) -> str:
    """Half of a grid cell: upper only when every row lies above the midline."""
    return UPPER if cell.y1 <= height // 2 else LOWER
