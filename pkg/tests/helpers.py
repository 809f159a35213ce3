"""Shared builders for synthetic images, datasets, and descriptors."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from scenebow.imaging import Image
from scenebow.keypoints import Keypoint


def texture(shape=(96, 96), seed=0, smooth=2.0) -> Image:
    """Grey image with smooth random structure (plenty of DoG extrema)."""
    rng = np.random.default_rng(seed)
    arr = ndimage.gaussian_filter(rng.random(shape), smooth)
    lo, hi = arr.min(), arr.max()
    return Image((arr - lo) / (hi - lo))


def color_texture(shape=(64, 64), seed=0, tint=(1.0, 1.0, 1.0)) -> Image:
    """RGB image: smooth random texture scaled by a per-channel tint."""
    base = texture(shape, seed=seed).pixels
    rgb = np.stack([base * t for t in tint], axis=2)
    return Image(np.clip(rgb, 0.0, 1.0))


def png_bytes(pixels: np.ndarray) -> bytes:
    """Encode a float [0,1] array ((H,W) grey or (H,W,3) RGB) as PNG."""
    arr = np.round(np.asarray(pixels) * 255).astype(np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def jpeg_bytes(pixels: np.ndarray, grey: bool = False) -> bytes:
    arr = np.round(np.asarray(pixels) * 255).astype(np.uint8)
    mode = "L" if grey or arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode=mode).save(buf, format="JPEG")
    return buf.getvalue()


def solid_rgb(size: int, rgb: tuple[float, float, float]) -> np.ndarray:
    return np.tile(np.asarray(rgb, dtype=np.float64), (size, size, 1))


def write_dataset(root: Path, images: dict[str, dict[str, np.ndarray]]) -> Path:
    """Lay out ``root/<category>/<name>.png`` from float pixel arrays."""
    for category, files in images.items():
        (root / category).mkdir(parents=True, exist_ok=True)
        for name, pixels in files.items():
            (root / category / f"{name}.png").write_bytes(png_bytes(pixels))
    return root


def random_keypoints(n: int, width: int, height: int, seed: int = 0) -> list[Keypoint]:
    rng = np.random.default_rng(seed)
    return [
        Keypoint(
            x=float(rng.uniform(0, width - 1e-9)),
            y=float(rng.uniform(0, height - 1e-9)),
            scale=float(rng.uniform(1.0, 4.0)),
            orientation=float(rng.uniform(0, 2 * np.pi)),
        )
        for _ in range(n)
    ]


def random_descriptors(n: int, seed: int = 0, dim: int = 128) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((n, dim))
