"""Bag-of-visual-words encoding and the 14 whole-image representations.

Every multi-part representation follows one normalization contract: each
part is L2-normalized on its own (zero parts stay zero), the parts are
concatenated in recipe order (BOW part first, color part second), and the
concatenation is normalized to unit length.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .color_features import (
    DEFAULT_LEVEL_WEIGHTS,
    KIND_COLHIST,
    KIND_COLMOM,
    KIND_DWT,
    KIND_PCOLMOM,
    FeatureBlock,
    color_histogram,
    dwt_texture,
    pyramidal_color_moments,
    weight_pyramid,
)
from .errors import DataError, StoreError
from .fileio import pack_str, read_exact, unpack_str, write_if_changed
from .imaging import CellBounds, HsvImage, Image, pyramid_cells, to_hsv
from .keypoints import Keypoint
from .vocabulary import Vocabulary, assign_many


class Approach(enum.Enum):
    """The whole-image representations, in their canonical table order."""

    COLHIST = "colhist"
    PCOLMOM_L0 = "pcolmom_l0"
    DWT = "dwt"
    COLHIST_DWT = "colhist+dwt"
    PCOLMOM_L2 = "pcolmom_l2"
    UBOW = "ubow"
    IBOW = "ibow"
    PUBOW_L1 = "pubow_l1"
    PUBOW_L2 = "pubow_l2"
    PUBOW_L2_PCOLMOM_L2 = "pubow_l2+pcolmom_l2"
    PIBOW_L1 = "pibow_l1"
    PIBOW_L2 = "pibow_l2"
    PIBOW_L2_PCOLMOM_L2 = "pibow_l2+pcolmom_l2"
    PIBOW_L2_WPCOLMOM_L2 = "pibow_l2+wpcolmom_l2"


APPROACH_NAMES = tuple(a.value for a in Approach)
_APPROACH_TAGS = {a: i + 1 for i, a in enumerate(Approach)}
_TAG_APPROACHES = {tag: a for a, tag in _APPROACH_TAGS.items()}


@dataclass(frozen=True)
class Recipe:
    """Parts of one representation: an optional BOW part and color blocks.

    ``bow`` is (vocabulary kind, pyramid max level); color entries are
    (block kind, pyramid max level or None). ``weighted`` applies the
    per-level pyramid weights to the color part before its normalization.
    """

    bow: tuple[str, int] | None = None
    color: tuple[tuple[str, int | None], ...] = ()
    weighted: bool = False


_UNIVERSAL = "universal"
_INTEGRATED = "integrated"

RECIPES: dict[Approach, Recipe] = {
    Approach.COLHIST: Recipe(color=((KIND_COLHIST, None),)),
    Approach.PCOLMOM_L0: Recipe(color=((KIND_PCOLMOM, 0),)),
    Approach.DWT: Recipe(color=((KIND_DWT, None),)),
    Approach.COLHIST_DWT: Recipe(color=((KIND_COLHIST, None), (KIND_DWT, None))),
    Approach.PCOLMOM_L2: Recipe(color=((KIND_PCOLMOM, 2),)),
    Approach.UBOW: Recipe(bow=(_UNIVERSAL, 0)),
    Approach.IBOW: Recipe(bow=(_INTEGRATED, 0)),
    Approach.PUBOW_L1: Recipe(bow=(_UNIVERSAL, 1)),
    Approach.PUBOW_L2: Recipe(bow=(_UNIVERSAL, 2)),
    Approach.PUBOW_L2_PCOLMOM_L2: Recipe(
        bow=(_UNIVERSAL, 2), color=((KIND_PCOLMOM, 2),)
    ),
    Approach.PIBOW_L1: Recipe(bow=(_INTEGRATED, 1)),
    Approach.PIBOW_L2: Recipe(bow=(_INTEGRATED, 2)),
    Approach.PIBOW_L2_PCOLMOM_L2: Recipe(
        bow=(_INTEGRATED, 2), color=((KIND_PCOLMOM, 2),)
    ),
    Approach.PIBOW_L2_WPCOLMOM_L2: Recipe(
        bow=(_INTEGRATED, 2), color=((KIND_PCOLMOM, 2),), weighted=True
    ),
}

_PYRAMID_CELLS = {0: 1, 1: 5, 2: 21}


def parse_approach(name: str) -> Approach:
    try:
        return Approach(name)
    except ValueError:
        raise ValueError(
            f"unknown approach '{name}' (valid: {', '.join(APPROACH_NAMES)})"
        ) from None


def color_block_dim(kind: str, level: int | None, channels: int) -> int:
    per_channel = {KIND_COLHIST: None, KIND_COLMOM: 2, KIND_DWT: 6}
    if kind == KIND_COLHIST:
        return 84 if channels == 3 else 36
    if kind == KIND_PCOLMOM:
        return 2 * channels * _PYRAMID_CELLS[level]
    return per_channel[kind] * channels


def expected_dim(approach: Approach, channels: int, words: int, categories: int) -> int:
    """Vector dimensionality of an approach for a channel count, K, and M."""
    recipe = RECIPES[approach]
    total = 0
    if recipe.bow is not None:
        vocab_kind, level = recipe.bow
        n_words = words * (categories if vocab_kind == _INTEGRATED else 1)
        total += n_words * _PYRAMID_CELLS[level]
    for kind, level in recipe.color:
        total += color_block_dim(kind, level, channels)
    return total


@dataclass(frozen=True, eq=False)
class BowHistogram:
    """Visual-word counts over the keypoints inside one cell."""

    counts: np.ndarray
    vocab: Vocabulary
    bounds: CellBounds

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Unit-normalized whole-image representation (zero vectors are flagged)."""

    approach: Approach
    values: np.ndarray
    is_zero: bool

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass
class VocabularySet:
    """The vocabularies one run works with; unused slots stay None."""

    universal: Vocabulary | None = None
    integrated: Vocabulary | None = None
    upper: Vocabulary | None = None
    lower: Vocabulary | None = None

    def require(self, slot: str) -> Vocabulary:
        vocab = getattr(self, slot)
        if vocab is None:
            raise DataError(f"missing {slot} vocabulary")
        return vocab


def _positions(keypoints: Sequence[Keypoint]) -> tuple[np.ndarray, np.ndarray]:
    if not keypoints:
        return np.zeros(0), np.zeros(0)
    xs = np.floor(np.array([kp.x for kp in keypoints]))
    ys = np.floor(np.array([kp.y for kp in keypoints]))
    return xs, ys


def cell_histograms(
    keypoints: Sequence[Keypoint],
    word_ids: np.ndarray,
    n_words: int,
    cells: Sequence[CellBounds],
) -> np.ndarray:
    """Word-count rows for each cell, from precomputed word assignments."""
    if len(keypoints) != len(word_ids):
        raise ValueError("keypoint and word-id counts differ")
    out = np.zeros((len(cells), n_words), dtype=np.int64)
    if not keypoints:
        return out
    xs, ys = _positions(keypoints)
    for i, cell in enumerate(cells):
        mask = (xs >= cell.x0) & (xs < cell.x1) & (ys >= cell.y0) & (ys < cell.y1)
        if mask.any():
            out[i] = np.bincount(word_ids[mask], minlength=n_words)
    return out


def bow_histogram(
    keypoints: Sequence[Keypoint],
    descriptors: np.ndarray,
    vocab: Vocabulary,
    bounds: CellBounds,
) -> BowHistogram:
    """Histogram of visual-word occurrences for keypoints inside ``bounds``.

    Cells without keypoints yield an all-zero histogram rather than an error.
    """
    word_ids = assign_many(descriptors, vocab)
    counts = cell_histograms(keypoints, word_ids, vocab.n_words, [bounds])[0]
    return BowHistogram(counts=counts, vocab=vocab, bounds=bounds)


def pyramid_bow(
    keypoints: Sequence[Keypoint],
    descriptors: np.ndarray,
    vocab: Vocabulary,
    width: int,
    height: int,
    max_level: int,
) -> np.ndarray:
    """Concatenated per-cell histograms over all pyramid levels 0..max_level."""
    cells = pyramid_cells(width, height, max_level)
    word_ids = assign_many(descriptors, vocab)
    rows = cell_histograms(keypoints, word_ids, vocab.n_words, cells)
    return rows.reshape(-1).astype(np.float64)


def normalize_part(values: np.ndarray) -> np.ndarray:
    """L2-normalize a vector; identically-zero vectors pass through."""
    values = np.asarray(values, dtype=np.float64)
    norm = np.linalg.norm(values)
    if norm == 0:
        return values
    return values / norm


def compose_parts(parts: Sequence[np.ndarray]) -> tuple[np.ndarray, bool]:
    normalized = [normalize_part(p) for p in parts]
    stacked = np.concatenate(normalized) if len(normalized) > 1 else normalized[0]
    norm = np.linalg.norm(stacked)
    if norm == 0:
        return stacked, True
    return stacked / norm, False


def compose_representation(
    approach: Approach,
    parts: Sequence[np.ndarray | FeatureBlock],
    level_weights: Sequence[float] = DEFAULT_LEVEL_WEIGHTS,
) -> FeatureVector:
    """Assemble a representation from its raw parts under the normalization
    contract. Weighted variants apply the pyramid level weights to the color
    part (which must arrive as a pyramidal :class:`FeatureBlock`) before it
    is normalized.
    """
    recipe = RECIPES[approach]
    expected_parts = (1 if recipe.bow else 0) + len(recipe.color)
    if len(parts) != expected_parts:
        raise ValueError(
            f"{approach.value} expects {expected_parts} parts, got {len(parts)}"
        )
    vectors: list[np.ndarray] = []
    cursor = 0
    if recipe.bow is not None:
        bow_part = parts[cursor]
        cursor += 1
        vectors.append(
            bow_part.values if isinstance(bow_part, FeatureBlock) else np.asarray(bow_part)
        )
    for kind, level in recipe.color:
        part = parts[cursor]
        cursor += 1
        if isinstance(part, FeatureBlock):
            if part.kind != kind:
                raise ValueError(
                    f"{approach.value} expects a {kind} block, got {part.kind}"
                )
            if recipe.weighted and not part.weighted:
                part = weight_pyramid(part, level_weights[: (level or 0) + 1])
            vectors.append(part.values)
        else:
            if recipe.weighted:
                raise ValueError(
                    "weighted recipes need a FeatureBlock color part to "
                    "recover the pyramid layout"
                )
            vectors.append(np.asarray(part))
    values, is_zero = compose_parts(vectors)
    return FeatureVector(approach=approach, values=values, is_zero=is_zero)


def encode_image(
    image: Image,
    keypoints: Sequence[Keypoint],
    descriptors: np.ndarray,
    approach: Approach,
    vocabs: VocabularySet | None = None,
    level_weights: Sequence[float] = DEFAULT_LEVEL_WEIGHTS,
) -> FeatureVector:
    """Whole-image representation of a decoded image.

    ``keypoints``/``descriptors`` are only consulted for BOW approaches, so
    color-only encodes may pass empty ones.
    """
    recipe = RECIPES[approach]
    parts: list[np.ndarray | FeatureBlock] = []
    if recipe.bow is not None:
        vocab_kind, level = recipe.bow
        vocab = (vocabs or VocabularySet()).require(
            "universal" if vocab_kind == _UNIVERSAL else "integrated"
        )
        parts.append(
            pyramid_bow(keypoints, descriptors, vocab, image.width, image.height, level)
        )
    if recipe.color:
        source: Image | HsvImage = to_hsv(image) if image.channels == 3 else image
        full = CellBounds(0, 0, image.width, image.height, level="image")
        for kind, level in recipe.color:
            if kind == KIND_COLHIST:
                parts.append(color_histogram(source, full))
            elif kind == KIND_DWT:
                parts.append(dwt_texture(source, full))
            elif kind == KIND_PCOLMOM:
                parts.append(pyramidal_color_moments(source, level))
            else:
                raise ValueError(f"unsupported color block kind {kind}")
    return compose_representation(approach, parts, level_weights)


def quantize_unit(values: np.ndarray) -> np.ndarray:
    """Round-trip a vector through the store's f32 payload and renormalize.

    Query vectors go through this so they compare bit-for-bit against
    database vectors loaded from a feature store.
    """
    values = np.asarray(values, dtype=np.float32).astype(np.float64)
    return normalize_part(values)


_MAGIC = b"FSTO"
_VERSION = 1


def write_feature_store(
    path: str | Path, approach: Approach, vectors: Mapping[str, np.ndarray]
) -> bool:
    """One file per (dataset, approach): an id -> offset index header followed
    by ``(image_id, approach tag u8, dim u32, f32 values)`` records."""
    ids = list(vectors)
    records = []
    for image_id in ids:
        body = io.BytesIO()
        body.write(pack_str(image_id))
        values = np.asarray(vectors[image_id], dtype="<f4")
        body.write(struct.pack("<BI", _APPROACH_TAGS[approach], values.shape[0]))
        body.write(values.tobytes())
        records.append(body.getvalue())

    header = _MAGIC + struct.pack("<HBI", _VERSION, _APPROACH_TAGS[approach], len(ids))
    index_size = sum(2 + len(i.encode("utf-8")) + 8 for i in ids)
    offset = len(header) + index_size
    index = io.BytesIO()
    for image_id, record in zip(ids, records):
        index.write(pack_str(image_id))
        index.write(struct.pack("<Q", offset))
        offset += len(record)
    return write_if_changed(path, header + index.getvalue() + b"".join(records))


def read_feature_store(path: str | Path) -> tuple[Approach, dict[str, np.ndarray]]:
    """Load a feature store; non-zero vectors are renormalized to unit length
    after the f32 payload is widened back to f64."""
    with open(path, "rb") as handle:
        if read_exact(handle, 4, "feature store magic") != _MAGIC:
            raise StoreError(f"{path} is not a feature store")
        version, tag, count = struct.unpack(
            "<HBI", read_exact(handle, 7, "feature store header")
        )
        if version != _VERSION:
            raise StoreError(f"unsupported feature store version {version}")
        if tag not in _TAG_APPROACHES:
            raise StoreError(f"unknown approach tag {tag}")
        approach = _TAG_APPROACHES[tag]
        for _ in range(count):
            unpack_str(handle, "index id")
            read_exact(handle, 8, "index offset")
        vectors: dict[str, np.ndarray] = {}
        for _ in range(count):
            image_id = unpack_str(handle, "record id")
            rec_tag, dim = struct.unpack(
                "<BI", read_exact(handle, 5, "record header")
            )
            if rec_tag != tag:
                raise StoreError(f"record approach tag {rec_tag} != store tag {tag}")
            raw = read_exact(handle, 4 * dim, "record values")
            values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            vectors[image_id] = normalize_part(values)
    return approach, vectors
