"""Local semantic concepts: region representations, half-specific concept
annotators, and concept-occurrence vectors.

Images are split into a regular grid (10x10 by default). Regions above the
horizontal midline are handled by an upper-half model and vocabulary,
regions at or below it by the lower-half ones. Annotating an image yields
one concept label per cell; counting label weights over the grid and
dividing by the cell count gives the 9-D concept-occurrence vector.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bow import cell_histograms, compose_parts
from .color_features import (
    KIND_COLHIST,
    KIND_COLMOM,
    KIND_DWT,
    color_histogram,
    color_moments,
    dwt_texture,
)
from .dataset import CONCEPTS, RegionGrid
from .errors import DataError
from .fileio import write_text_if_changed
from .imaging import (
    LOWER,
    UPPER,
    CellBounds,
    HsvImage,
    Image,
    cell_half,
    grid_partition,
    to_hsv,
)
from .keypoints import DetectorParams, Keypoint, detect_and_describe
from .vocabulary import assign_many

logger = logging.getLogger(__name__)

DEFAULT_KNN_K = 5

ANNOTATOR_KNN = "knn"
ANNOTATOR_NEAREST_CENTROID = "nearest-centroid"


class RegionApproach(enum.Enum):
    """Region representations used to train and run concept annotators."""

    COLHIST = "colhist"
    COLMOM = "colmom"
    DWT = "dwt"
    COLHIST_DWT = "colhist+dwt"
    UBOW = "ubow"
    IBOW = "ibow"
    UBOW_COLHIST = "ubow+colhist"
    UBOW_COLMOM = "ubow+colmom"
    UBOW_DWT = "ubow+dwt"
    UBOW_COLHIST_DWT = "ubow+colhist+dwt"
    IBOW_COLHIST = "ibow+colhist"
    IBOW_COLMOM = "ibow+colmom"
    IBOW_DWT = "ibow+dwt"
    IBOW_COLHIST_DWT = "ibow+colhist+dwt"


REGION_APPROACH_NAMES = tuple(a.value for a in RegionApproach)

# bow slot: None, "universal", or "integrated" (half-specific); color kinds
# follow in recipe order.
_REGION_RECIPES: dict[RegionApproach, tuple[str | None, tuple[str, ...]]] = {
    RegionApproach.COLHIST: (None, (KIND_COLHIST,)),
    RegionApproach.COLMOM: (None, (KIND_COLMOM,)),
    RegionApproach.DWT: (None, (KIND_DWT,)),
    RegionApproach.COLHIST_DWT: (None, (KIND_COLHIST, KIND_DWT)),
    RegionApproach.UBOW: ("universal", ()),
    RegionApproach.IBOW: ("integrated", ()),
    RegionApproach.UBOW_COLHIST: ("universal", (KIND_COLHIST,)),
    RegionApproach.UBOW_COLMOM: ("universal", (KIND_COLMOM,)),
    RegionApproach.UBOW_DWT: ("universal", (KIND_DWT,)),
    RegionApproach.UBOW_COLHIST_DWT: ("universal", (KIND_COLHIST, KIND_DWT)),
    RegionApproach.IBOW_COLHIST: ("integrated", (KIND_COLHIST,)),
    RegionApproach.IBOW_COLMOM: ("integrated", (KIND_COLMOM,)),
    RegionApproach.IBOW_DWT: ("integrated", (KIND_DWT,)),
    RegionApproach.IBOW_COLHIST_DWT: ("integrated", (KIND_COLHIST, KIND_DWT)),
}

_COLOR_EXTRACTORS = {
    KIND_COLHIST: color_histogram,
    KIND_COLMOM: color_moments,
    KIND_DWT: dwt_texture,
}


def parse_region_approach(name: str) -> RegionApproach:
    try:
        return RegionApproach(name)
    except ValueError:
        raise ValueError(
            f"unknown region approach '{name}' "
            f"(valid: {', '.join(REGION_APPROACH_NAMES)})"
        ) from None


def region_vocab_slot(approach: RegionApproach) -> str | None:
    """Which vocabulary family the approach's BOW part needs, if any."""
    return _REGION_RECIPES[approach][0]


class RegionEncoder:
    """Per-image context for encoding many grid cells cheaply.

    Keypoints are detected and assigned to the relevant vocabularies once;
    each cell encode then reduces to masked counting plus color extraction
    over the cell.
    """

    def __init__(
        self,
        image: Image,
        approach: RegionApproach,
        vocabs=None,
        detector_params: DetectorParams | None = None,
        keypoints: Sequence[Keypoint] | None = None,
        descriptors: np.ndarray | None = None,
    ):
        self.image = image
        self.approach = approach
        bow_slot, color_kinds = _REGION_RECIPES[approach]
        self._bow_slot = bow_slot
        self._color_kinds = color_kinds

        self._source: Image | HsvImage
        if color_kinds and image.channels == 3:
            self._source = to_hsv(image)
        else:
            self._source = image

        self._keypoints: Sequence[Keypoint] = ()
        self._words: dict[str, tuple[np.ndarray, int]] = {}
        if bow_slot is not None:
            if keypoints is None or descriptors is None:
                keypoints, descriptors = detect_and_describe(image, detector_params)
            self._keypoints = keypoints
            if bow_slot == "universal":
                vocab = _require(vocabs, "universal")
                ids = assign_many(descriptors, vocab)
                self._words[UPPER] = (ids, vocab.n_words)
                self._words[LOWER] = (ids, vocab.n_words)
            else:
                for half in (UPPER, LOWER):
                    vocab = _require(vocabs, half)
                    ids = assign_many(descriptors, vocab)
                    self._words[half] = (ids, vocab.n_words)

    def encode(self, region: CellBounds, half: str) -> np.ndarray:
        if half not in (UPPER, LOWER):
            raise ValueError(f"half must be '{UPPER}' or '{LOWER}', got {half!r}")
        parts: list[np.ndarray] = []
        if self._bow_slot is not None:
            word_ids, n_words = self._words[half]
            counts = cell_histograms(self._keypoints, word_ids, n_words, [region])[0]
            parts.append(counts.astype(np.float64))
        for kind in self._color_kinds:
            parts.append(_COLOR_EXTRACTORS[kind](self._source, region).values)
        values, _ = compose_parts(parts)
        return values


def _require(vocabs, slot: str):
    if vocabs is None:
        raise DataError(f"missing {slot} vocabulary")
    return vocabs.require(slot)


def region_representation(
    image: Image,
    region: CellBounds,
    half: str,
    approach: RegionApproach,
    vocabs=None,
    detector_params: DetectorParams | None = None,
    keypoints: Sequence[Keypoint] | None = None,
    descriptors: np.ndarray | None = None,
) -> np.ndarray:
    """Encode one image region under a region approach.

    BOW parts count keypoints inside the region against the half-appropriate
    vocabulary (the universal one for UBOW variants). When encoding many
    regions of one image, build a :class:`RegionEncoder` instead.
    """
    encoder = RegionEncoder(
        image,
        approach,
        vocabs=vocabs,
        detector_params=detector_params,
        keypoints=keypoints,
        descriptors=descriptors,
    )
    return encoder.encode(region, half)


@dataclass(frozen=True, eq=False)
class AnnotatorModel:
    """Exemplar-memorizing concept classifier for one image half."""

    half: str
    approach: RegionApproach
    kind: str
    vectors: np.ndarray
    labels: tuple[str, ...]
    k: int

    def predict(self, vector: np.ndarray) -> str:
        return self.predict_many(np.asarray(vector, dtype=np.float64)[None, :])[0]

    def predict_many(self, matrix: np.ndarray) -> list[str]:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != self.vectors.shape[1]:
            raise ValueError(
                f"queries have shape {matrix.shape}, exemplars are "
                f"{self.vectors.shape[1]}-D"
            )
        if self.kind == ANNOTATOR_NEAREST_CENTROID:
            return self._predict_centroid(matrix)
        return self._predict_knn(matrix)

    def _predict_knn(self, matrix: np.ndarray) -> list[str]:
        d2 = _sqdist_rows(matrix, self.vectors)
        results = []
        for row in d2:
            # stable order: distance, then exemplar index
            order = np.lexsort((np.arange(len(row)), row))[: self.k]
            votes: dict[str, int] = {}
            nearest_rank: dict[str, int] = {}
            for rank, idx in enumerate(order):
                label = self.labels[idx]
                votes[label] = votes.get(label, 0) + 1
                nearest_rank.setdefault(label, rank)
            top = max(votes.values())
            tied = [label for label, count in votes.items() if count == top]
            results.append(min(tied, key=lambda lbl: nearest_rank[lbl]))
        return results

    def _predict_centroid(self, matrix: np.ndarray) -> list[str]:
        present = sorted(set(self.labels), key=CONCEPTS.index)
        centroids = np.vstack(
            [
                self.vectors[[i for i, lbl in enumerate(self.labels) if lbl == c]].mean(axis=0)
                for c in present
            ]
        )
        d2 = _sqdist_rows(matrix, centroids)
        return [present[int(np.argmin(row))] for row in d2]


def _sqdist_rows(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    # |q|^2 - 2 q.p + |p|^2, chunked over queries to bound memory
    p2 = np.einsum("ij,ij->i", points, points)
    out = np.empty((len(queries), len(points)), dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, len(points)))
    for start in range(0, len(queries), chunk):
        block = queries[start : start + chunk]
        d2 = (
            np.einsum("ij,ij->i", block, block)[:, None]
            - 2.0 * (block @ points.T)
            + p2[None, :]
        )
        np.maximum(d2, 0.0, out=d2)
        out[start : start + chunk] = d2
    return out


def train_annotator(
    labeled_regions: Sequence[tuple[np.ndarray, str]],
    half: str,
    approach: RegionApproach,
    k: int = DEFAULT_KNN_K,
    kind: str = ANNOTATOR_KNN,
) -> AnnotatorModel:
    """Build a KNN (or nearest-centroid) annotator from labeled region vectors.

    KNN predicts the majority label of the k nearest exemplars by Euclidean
    distance; vote ties go to the class with the nearest member.
    """
    if kind not in (ANNOTATOR_KNN, ANNOTATOR_NEAREST_CENTROID):
        raise ValueError(f"unknown annotator kind '{kind}'")
    if not labeled_regions:
        raise ValueError("no training exemplars")
    if kind == ANNOTATOR_KNN and len(labeled_regions) < k:
        raise ValueError(
            f"need at least k={k} exemplars, got {len(labeled_regions)}"
        )
    dims = {np.asarray(v).shape for v, _ in labeled_regions}
    if len(dims) != 1:
        raise ValueError(f"exemplar vectors have mixed shapes: {sorted(dims)}")
    for _, label in labeled_regions:
        if label not in CONCEPTS:
            raise ValueError(f"unknown concept label '{label}'")
    vectors = np.vstack([np.asarray(v, dtype=np.float64) for v, _ in labeled_regions])
    labels = tuple(label for _, label in labeled_regions)
    return AnnotatorModel(
        half=half, approach=approach, kind=kind, vectors=vectors, labels=labels, k=k
    )


def training_exemplars(
    grid: RegionGrid,
    encoder: RegionEncoder,
    cells: Sequence[CellBounds],
    height: int,
    cols: int,
) -> dict[str, list[tuple[np.ndarray, str]]]:
    """Per-half (vector, label) pairs from one ground-truth grid.

    Cells without a unique dominant concept (e.g. a 0.5/0.5 split) carry no
    single label and are skipped.
    """
    out: dict[str, list[tuple[np.ndarray, str]]] = {UPPER: [], LOWER: []}
    for i, cell in enumerate(cells):
        weights = grid[i // cols][i % cols]
        best = max(weights.values())
        dominant = [c for c, w in weights.items() if w == best]
        if len(dominant) != 1:
            continue
        half = cell_half(cell, height)
        out[half].append((encoder.encode(cell, half), dominant[0]))
    return out


def annotate_image(
    image: Image,
    models: tuple[AnnotatorModel, AnnotatorModel],
    grid: tuple[int, int] = (10, 10),
    vocabs=None,
    detector_params: DetectorParams | None = None,
    keypoints: Sequence[Keypoint] | None = None,
    descriptors: np.ndarray | None = None,
) -> list[list[str]]:
    """Assign one concept label to every grid cell of an image.

    Rows entirely above the midline use the upper model; rows at or below it
    use the lower model.
    """
    upper_model, lower_model = models
    if upper_model.approach != lower_model.approach:
        raise ValueError("upper and lower models use different approaches")
    if (upper_model.half, lower_model.half) != (UPPER, LOWER):
        raise ValueError("models must be passed as (upper, lower)")
    rows, cols = grid
    encoder = RegionEncoder(
        image,
        upper_model.approach,
        vocabs=vocabs,
        detector_params=detector_params,
        keypoints=keypoints,
        descriptors=descriptors,
    )
    cells = grid_partition(image.width, image.height, rows, cols)
    labels: list[str] = []
    for cell in cells:
        half = cell_half(cell, image.height)
        model = upper_model if half == UPPER else lower_model
        labels.append(model.predict(encoder.encode(cell, half)))
    return [labels[r * cols : (r + 1) * cols] for r in range(rows)]


def cov_from_annotations(grid: RegionGrid | Sequence[Sequence[str]]) -> np.ndarray:
    """Concept-occurrence vector: per-concept weight totals over the grid,
    divided by the cell count. Hard label grids weigh each cell 1."""
    totals = dict.fromkeys(CONCEPTS, 0.0)
    n_cells = 0
    for row in grid:
        for cell in row:
            n_cells += 1
            if isinstance(cell, str):
                if cell not in totals:
                    raise ValueError(f"unknown concept label '{cell}'")
                totals[cell] += 1.0
            else:
                for concept, weight in cell.items():
                    if concept not in totals:
                        raise ValueError(f"unknown concept label '{concept}'")
                    totals[concept] += weight
    if n_cells == 0:
        raise ValueError("empty grid")
    return np.array([totals[c] / n_cells for c in CONCEPTS], dtype=np.float64)


def hard_grid(labels: Sequence[Sequence[str]]) -> RegionGrid:
    """Wrap predicted labels as a weight-1 region grid (for export)."""
    return tuple(tuple({label: 1.0} for label in row) for row in labels)


def format_cov_file(covs: Mapping[str, np.ndarray]) -> str:
    lines = []
    for image_id, vector in covs.items():
        if len(vector) != len(CONCEPTS):
            raise ValueError(f"{image_id}: COV must have {len(CONCEPTS)} components")
        lines.append(image_id + "\t" + " ".join(f"{v:.9f}" for v in vector))
    return "\n".join(lines) + "\n"


def write_cov_file(path: str | Path, covs: Mapping[str, np.ndarray]) -> bool:
    return write_text_if_changed(path, format_cov_file(covs))


def read_cov_file(path: str | Path) -> dict[str, np.ndarray]:
    covs: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            image_id, values = line.split("\t", 1)
            vector = np.array([float(v) for v in values.split()], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed COV line") from exc
        if len(vector) != len(CONCEPTS):
            raise DataError(f"{path}:{lineno}: expected {len(CONCEPTS)} values")
        covs[image_id] = vector
    return covs
