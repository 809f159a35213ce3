"""Difference-of-Gaussian keypoint detection and 128-D gradient descriptors.

The detector builds a Gaussian scale-space pyramid, finds strict 26-neighbor
extrema in the DoG layers, refines them with a quadratic fit, and filters by
contrast and edge response. Each surviving point is duplicated per dominant
orientation. Descriptors accumulate Gaussian-weighted gradient magnitudes in
a 4x4 grid of 8-bin orientation histograms over the keypoint's oriented,
scale-normalized frame, then are normalized, clamped at 0.2 and renormalized.

Everything is pure numpy/scipy and bit-for-bit deterministic for a given
image and parameter set.
"""

from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import DescriptorWindowError, StoreError
from .fileio import pack_str, read_exact, unpack_str, write_if_changed
from .imaging import Image, to_grey

logger = logging.getLogger(__name__)

DESCRIPTOR_SIZE = 128


@dataclass(frozen=True)
class Keypoint:
    """Scale-space interest point in original image coordinates."""

    x: float
    y: float
    scale: float
    orientation: float  # radians in [0, 2*pi)


@dataclass(frozen=True)
class DetectorParams:
    intervals: int = 3
    sigma: float = 1.6
    assumed_blur: float = 0.5
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    double_first_octave: bool = False
    min_octave_size: int = 16
    border: int = 5
    max_refine_steps: int = 5
    orientation_bins: int = 36
    orientation_peak_ratio: float = 0.8
    orientation_sigma_factor: float = 1.5
    orientation_radius_factor: float = 3.0
    descriptor_width: int = 4
    descriptor_bins: int = 8
    descriptor_scale_factor: float = 3.0
    descriptor_clamp: float = 0.2


@dataclass(frozen=True)
class _RawKeypoint:
    x: float
    y: float
    scale: float
    orientation: float
    octave: int
    layer: int
    x_oct: float
    y_oct: float
    sigma_oct: float

    def to_keypoint(self) -> Keypoint:
        return Keypoint(x=self.x, y=self.y, scale=self.scale, orientation=self.orientation)


def _n_octaves(width: int, height: int, params: DetectorParams) -> int:
    smallest = min(width, height)
    if smallest < params.min_octave_size:
        return 0
    return int(math.floor(math.log2(smallest / params.min_octave_size))) + 1


def _base_image(pixels: np.ndarray, params: DetectorParams) -> np.ndarray:
    if params.double_first_octave:
        pixels = ndimage.zoom(pixels, 2.0, order=1, mode="mirror")
        assumed = 2.0 * params.assumed_blur
    else:
        assumed = params.assumed_blur
    diff = math.sqrt(max(params.sigma**2 - assumed**2, 0.01))
    return ndimage.gaussian_filter(pixels, diff, mode="mirror")


def _gaussian_pyramid(base: np.ndarray, params: DetectorParams) -> list[list[np.ndarray]]:
    s = params.intervals
    k = 2.0 ** (1.0 / s)
    # incremental blurs between consecutive layers of one octave
    increments = []
    for i in range(1, s + 3):
        prev_total = params.sigma * k ** (i - 1)
        total = params.sigma * k**i
        increments.append(math.sqrt(total**2 - prev_total**2))

    octaves = []
    current = base
    while True:
        layers = [current]
        for inc in increments:
            layers.append(ndimage.gaussian_filter(layers[-1], inc, mode="mirror"))
        octaves.append(layers)
        nxt = layers[s][::2, ::2]
        if min(nxt.shape) < params.min_octave_size:
            break
        current = nxt
    return octaves


def _dog_stack(layers: list[np.ndarray]) -> np.ndarray:
    stack = np.stack(layers)
    return stack[1:] - stack[:-1]


def _candidate_extrema(dogs: np.ndarray, params: DetectorParams) -> list[tuple[int, int, int]]:
    """Strict 26-neighbor extrema above the preliminary contrast threshold."""
    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    prelim = 0.5 * params.contrast_threshold / params.intervals
    b = params.border
    candidates = []
    n_layers, height, width = dogs.shape
    if height <= 2 * b or width <= 2 * b:
        return candidates
    for layer in range(1, n_layers - 1):
        volume = dogs[layer - 1 : layer + 2]
        center = volume[1]
        neigh_max = ndimage.maximum_filter(volume, footprint=footprint)[1]
        neigh_min = ndimage.minimum_filter(volume, footprint=footprint)[1]
        mask = (np.abs(center) > prelim) & (
            (center > neigh_max) | (center < neigh_min)
        )
        mask[:b, :] = False
        mask[-b:, :] = False
        mask[:, :b] = False
        mask[:, -b:] = False
        for r, c in np.argwhere(mask):
            candidates.append((layer, int(r), int(c)))
    return candidates


def _derivatives(dogs: np.ndarray, layer: int, r: int, c: int):
    d = dogs
    grad = 0.5 * np.array(
        [
            d[layer, r, c + 1] - d[layer, r, c - 1],
            d[layer, r + 1, c] - d[layer, r - 1, c],
            d[layer + 1, r, c] - d[layer - 1, r, c],
        ]
    )
    value = d[layer, r, c]
    dxx = d[layer, r, c + 1] + d[layer, r, c - 1] - 2 * value
    dyy = d[layer, r + 1, c] + d[layer, r - 1, c] - 2 * value
    dss = d[layer + 1, r, c] + d[layer - 1, r, c] - 2 * value
    dxy = 0.25 * (
        d[layer, r + 1, c + 1]
        - d[layer, r + 1, c - 1]
        - d[layer, r - 1, c + 1]
        + d[layer, r - 1, c - 1]
    )
    dxs = 0.25 * (
        d[layer + 1, r, c + 1]
        - d[layer + 1, r, c - 1]
        - d[layer - 1, r, c + 1]
        + d[layer - 1, r, c - 1]
    )
    dys = 0.25 * (
        d[layer + 1, r + 1, c]
        - d[layer + 1, r - 1, c]
        - d[layer - 1, r + 1, c]
        + d[layer - 1, r - 1, c]
    )
    hessian = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return grad, hessian


def _refine_candidate(
    dogs: np.ndarray, layer: int, r: int, c: int, params: DetectorParams
):
    """Quadratic sub-pixel fit; returns (layer+ds, r+dy, c+dx) or None."""
    n_layers, height, width = dogs.shape
    b = params.border
    offset = np.zeros(3)
    for _ in range(params.max_refine_steps):
        grad, hessian = _derivatives(dogs, layer, r, c)
        try:
            offset = -np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            break
        c += int(round(offset[0]))
        r += int(round(offset[1]))
        layer += int(round(offset[2]))
        if (
            layer < 1
            or layer > n_layers - 2
            or r < b
            or r >= height - b
            or c < b
            or c >= width - b
        ):
            return None
    else:
        return None

    grad, _ = _derivatives(dogs, layer, r, c)
    contrast = dogs[layer, r, c] + 0.5 * float(grad @ offset)
    if abs(contrast) < params.contrast_threshold / params.intervals:
        return None

    value = dogs[layer, r, c]
    dxx = dogs[layer, r, c + 1] + dogs[layer, r, c - 1] - 2 * value
    dyy = dogs[layer, r + 1, c] + dogs[layer, r - 1, c] - 2 * value
    dxy = 0.25 * (
        dogs[layer, r + 1, c + 1]
        - dogs[layer, r + 1, c - 1]
        - dogs[layer, r - 1, c + 1]
        + dogs[layer, r - 1, c - 1]
    )
    trace = dxx + dyy
    det = dxx * dyy - dxy * dxy
    ratio = params.edge_ratio
    if det <= 0 or trace * trace * ratio >= (ratio + 1) ** 2 * det:
        return None
    return layer + offset[2], r + offset[1], c + offset[0]


def _orientation_histogram(
    raster: np.ndarray, x: float, y: float, sigma_oct: float, params: DetectorParams
) -> np.ndarray:
    """Gradient orientation histogram around a point, Gaussian weighted."""
    n_bins = params.orientation_bins
    sigma_ori = params.orientation_sigma_factor * sigma_oct
    radius = max(1, int(round(params.orientation_radius_factor * sigma_ori)))
    height, width = raster.shape
    xi, yi = int(round(x)), int(round(y))
    r0 = max(1, yi - radius)
    r1 = min(height - 2, yi + radius)
    c0 = max(1, xi - radius)
    c1 = min(width - 2, xi + radius)
    if r1 < r0 or c1 < c0:
        return np.zeros(n_bins)
    rows = np.arange(r0, r1 + 1)
    cols = np.arange(c0, c1 + 1)
    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    dx = raster[grid_r, grid_c + 1] - raster[grid_r, grid_c - 1]
    dy = raster[grid_r + 1, grid_c] - raster[grid_r - 1, grid_c]
    mag = np.hypot(dx, dy)
    ang = np.arctan2(dy, dx)
    dist2 = (grid_r - y) ** 2 + (grid_c - x) ** 2
    weight = np.exp(-dist2 / (2.0 * sigma_ori**2)) * mag

    bins = np.round(ang * n_bins / (2.0 * np.pi)).astype(np.int64) % n_bins
    hist = np.zeros(n_bins)
    np.add.at(hist, bins.ravel(), weight.ravel())

    # one circular [1, 4, 6, 4, 1]/16 smoothing pass
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    padded = np.concatenate([hist[-2:], hist, hist[:2]])
    return np.convolve(padded, kernel, mode="valid")


def _orientation_peaks(hist: np.ndarray, params: DetectorParams) -> list[float]:
    n_bins = hist.shape[0]
    peak = hist.max()
    if peak <= 0:
        return []
    threshold = params.orientation_peak_ratio * peak
    angles = []
    for i in range(n_bins):
        left = hist[(i - 1) % n_bins]
        right = hist[(i + 1) % n_bins]
        if hist[i] > left and hist[i] > right and hist[i] >= threshold:
            denom = left - 2.0 * hist[i] + right
            shift = 0.0 if denom == 0 else 0.5 * (left - right) / denom
            angle = (i + shift) * 2.0 * np.pi / n_bins
            angles.append(angle % (2.0 * np.pi))
    return angles


def _detect_raw(
    pixels: np.ndarray, params: DetectorParams
) -> tuple[list[_RawKeypoint], list[list[np.ndarray]]]:
    height, width = pixels.shape
    if _n_octaves(width, height, params) == 0:
        return [], []
    base = _base_image(pixels, params)
    gaussians = _gaussian_pyramid(base, params)
    k = 2.0 ** (1.0 / params.intervals)
    coord_base = 0.5 if params.double_first_octave else 1.0

    raws: list[_RawKeypoint] = []
    for octave, layers in enumerate(gaussians):
        dogs = _dog_stack(layers)
        factor = coord_base * 2.0**octave
        for layer, r, c in _candidate_extrema(dogs, params):
            refined = _refine_candidate(dogs, layer, r, c, params)
            if refined is None:
                continue
            layer_f, row_f, col_f = refined
            x_img = col_f * factor
            y_img = row_f * factor
            if not (0 <= x_img < width and 0 <= y_img < height):
                continue
            sigma_oct = params.sigma * k**layer_f
            scale = sigma_oct * factor
            raster_layer = int(np.clip(round(layer_f), 0, len(layers) - 1))
            hist = _orientation_histogram(
                layers[raster_layer], col_f, row_f, sigma_oct, params
            )
            for angle in _orientation_peaks(hist, params):
                raws.append(
                    _RawKeypoint(
                        x=x_img,
                        y=y_img,
                        scale=scale,
                        orientation=angle,
                        octave=octave,
                        layer=raster_layer,
                        x_oct=col_f,
                        y_oct=row_f,
                        sigma_oct=sigma_oct,
                    )
                )

    raws.sort(key=lambda p: (p.x, p.y, p.scale, p.orientation))
    deduped: list[_RawKeypoint] = []
    seen: set[tuple[float, float, float, float]] = set()
    for raw in raws:
        key = (raw.x, raw.y, raw.scale, raw.orientation)
        if key not in seen:
            seen.add(key)
            deduped.append(raw)
    return deduped, gaussians


def _as_grey_pixels(img: Image) -> np.ndarray:
    return to_grey(img).pixels


def detect_keypoints(img: Image, params: DetectorParams | None = None) -> list[Keypoint]:
    """Detect DoG keypoints; color inputs are reduced to their value plane.

    Images smaller than the minimum octave size yield an empty list.
    """
    params = params or DetectorParams()
    raws, _ = _detect_raw(_as_grey_pixels(img), params)
    return [raw.to_keypoint() for raw in raws]


def _descriptor_from_raster(
    raster: np.ndarray,
    x: float,
    y: float,
    sigma_local: float,
    orientation: float,
    params: DetectorParams,
) -> np.ndarray:
    d = params.descriptor_width
    n_bins = params.descriptor_bins
    hist_width = params.descriptor_scale_factor * sigma_local
    radius = int(round(hist_width * (d + 1) * math.sqrt(2) / 2.0))
    height, width = raster.shape
    xi, yi = int(round(x)), int(round(y))
    if xi - radius < 1 or xi + radius > width - 2 or yi - radius < 1 or yi + radius > height - 2:
        raise DescriptorWindowError(
            f"support window of radius {radius} at ({x:.1f}, {y:.1f}) exceeds "
            f"{width}x{height} raster"
        )

    rows = np.arange(yi - radius, yi + radius + 1)
    cols = np.arange(xi - radius, xi + radius + 1)
    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    dx = raster[grid_r, grid_c + 1] - raster[grid_r, grid_c - 1]
    dy = raster[grid_r + 1, grid_c] - raster[grid_r - 1, grid_c]
    mag = np.hypot(dx, dy).ravel()
    ang = np.arctan2(dy, dx).ravel()

    cos_o = math.cos(orientation)
    sin_o = math.sin(orientation)
    off_x = (grid_c - x).ravel()
    off_y = (grid_r - y).ravel()
    x_rot = (off_x * cos_o + off_y * sin_o) / hist_width
    y_rot = (-off_x * sin_o + off_y * cos_o) / hist_width
    rbin = y_rot + d / 2.0 - 0.5
    cbin = x_rot + d / 2.0 - 0.5
    obin = (ang - orientation) * n_bins / (2.0 * np.pi)
    weight = np.exp(-(x_rot**2 + y_rot**2) / (0.5 * d * d)) * mag

    valid = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d) & (mag > 0)
    rbin, cbin, obin, weight = rbin[valid], cbin[valid], obin[valid], weight[valid]

    r0 = np.floor(rbin).astype(np.int64)
    c0 = np.floor(cbin).astype(np.int64)
    o0 = np.floor(obin).astype(np.int64)
    dr = rbin - r0
    dc = cbin - c0
    do = obin - o0
    o0 = o0 % n_bins

    hist = np.zeros((d + 2, d + 2, n_bins))
    for r_step in (0, 1):
        wr = weight * (dr if r_step else 1.0 - dr)
        for c_step in (0, 1):
            wc = wr * (dc if c_step else 1.0 - dc)
            for o_step in (0, 1):
                wo = wc * (do if o_step else 1.0 - do)
                np.add.at(
                    hist,
                    (r0 + 1 + r_step, c0 + 1 + c_step, (o0 + o_step) % n_bins),
                    wo,
                )

    vector = hist[1 : d + 1, 1 : d + 1, :].ravel()
    norm = np.linalg.norm(vector)
    if norm == 0:
        return vector
    vector = np.minimum(vector / norm, params.descriptor_clamp)
    norm = np.linalg.norm(vector)
    if norm > 0:
        vector = vector / norm
    return vector


def describe(img: Image, kp: Keypoint, params: DetectorParams | None = None) -> np.ndarray:
    """128-D descriptor of one keypoint, computed on the full-resolution image
    blurred to the keypoint's scale.

    Raises :class:`DescriptorWindowError` when the oriented support window
    does not fit inside the image. For bulk extraction prefer
    :func:`detect_and_describe`, which reuses the scale-space pyramid.
    """
    params = params or DetectorParams()
    pixels = _as_grey_pixels(img)
    diff = math.sqrt(max(kp.scale**2 - params.assumed_blur**2, 0.01))
    raster = ndimage.gaussian_filter(pixels, diff, mode="mirror")
    return _descriptor_from_raster(raster, kp.x, kp.y, kp.scale, kp.orientation, params)


def detect_and_describe(
    img: Image, params: DetectorParams | None = None
) -> tuple[list[Keypoint], np.ndarray]:
    """Detect keypoints and describe them on their own pyramid layers.

    Keypoints whose support window falls outside their octave raster are
    dropped (counted in a log message), so the returned keypoint list and
    descriptor rows stay aligned.
    """
    params = params or DetectorParams()
    raws, gaussians = _detect_raw(_as_grey_pixels(img), params)
    kept: list[Keypoint] = []
    descriptors: list[np.ndarray] = []
    skipped = 0
    for raw in raws:
        raster = gaussians[raw.octave][raw.layer]
        try:
            vector = _descriptor_from_raster(
                raster, raw.x_oct, raw.y_oct, raw.sigma_oct, raw.orientation, params
            )
        except DescriptorWindowError:
            skipped += 1
            continue
        kept.append(raw.to_keypoint())
        descriptors.append(vector)
    if skipped:
        logger.debug("skipped %d keypoints with out-of-image support windows", skipped)
    if not descriptors:
        return [], np.zeros((0, DESCRIPTOR_SIZE))
    return kept, np.vstack(descriptors)


_STORE_MAGIC = b"DESC"
_STORE_VERSION = 1


def _pack_image_record(image_id: str, kps: Sequence[Keypoint], descs: np.ndarray) -> bytes:
    if len(kps) != len(descs):
        raise ValueError("keypoint and descriptor counts differ")
    out = io.BytesIO()
    out.write(pack_str(image_id))
    out.write(struct.pack("<I", len(kps)))
    geometry = np.array(
        [[kp.x, kp.y, kp.scale, kp.orientation] for kp in kps], dtype="<f4"
    ).reshape(len(kps), 4)
    out.write(geometry.tobytes())
    out.write(np.asarray(descs, dtype="<f4").tobytes())
    return out.getvalue()


def write_descriptor_store(
    path: str | Path,
    per_image: Mapping[str, tuple[Sequence[Keypoint], np.ndarray]],
) -> bool:
    """Write per-image records: id, count, n x (x, y, scale, orientation) f32,
    then n x 128 f32 descriptors."""
    out = io.BytesIO()
    out.write(_STORE_MAGIC + struct.pack("<H", _STORE_VERSION))
    for image_id, (kps, descs) in per_image.items():
        out.write(_pack_image_record(image_id, kps, descs))
    return write_if_changed(path, out.getvalue())


def read_descriptor_store(
    path: str | Path,
) -> dict[str, tuple[list[Keypoint], np.ndarray]]:
    result: dict[str, tuple[list[Keypoint], np.ndarray]] = {}
    with open(path, "rb") as handle:
        magic = read_exact(handle, 4, "descriptor store magic")
        if magic != _STORE_MAGIC:
            raise StoreError(f"{path} is not a descriptor store")
        (version,) = struct.unpack("<H", read_exact(handle, 2, "store version"))
        if version != _STORE_VERSION:
            raise StoreError(f"unsupported descriptor store version {version}")
        while True:
            probe = handle.read(2)
            if not probe:
                break
            handle.seek(-2, 1)
            image_id = unpack_str(handle, "image id")
            (count,) = struct.unpack("<I", read_exact(handle, 4, "keypoint count"))
            geometry = np.frombuffer(
                read_exact(handle, 16 * count, "keypoint geometry"), dtype="<f4"
            ).reshape(count, 4)
            descs = np.frombuffer(
                read_exact(handle, 4 * DESCRIPTOR_SIZE * count, "descriptors"),
                dtype="<f4",
            ).reshape(count, DESCRIPTOR_SIZE)
            kps = [
                Keypoint(
                    x=float(gx), y=float(gy), scale=float(gs), orientation=float(go)
                )
                for gx, gy, gs, go in geometry
            ]
            result[image_id] = (kps, descs.astype(np.float64))
    return result
