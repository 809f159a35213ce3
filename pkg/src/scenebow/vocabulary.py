"""Visual vocabularies: seeded k-means over descriptors and the universal,
integrated (per-category) and upper/lower-half integrated variants."""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError, StoreError
from .fileio import pack_str, read_exact, unpack_str, write_if_changed
from .seeding import derive_rng

DEFAULT_WORDS_PER_CATEGORY = 200
DEFAULT_MAX_ITER = 100
DEFAULT_REL_TOL = 1e-4
DEFAULT_TRAINING_CAP = 500_000


class VocabularyKind(enum.Enum):
    UNIVERSAL = "universal"
    INTEGRATED = "integrated"
    UPPER_INTEGRATED = "upper"
    LOWER_INTEGRATED = "lower"


_KIND_TAGS = {
    VocabularyKind.UNIVERSAL: 0,
    VocabularyKind.INTEGRATED: 1,
    VocabularyKind.UPPER_INTEGRATED: 2,
    VocabularyKind.LOWER_INTEGRATED: 3,
}
_TAG_KINDS = {tag: kind for kind, tag in _KIND_TAGS.items()}


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Matrix of visual words with provenance.

    Integrated kinds concatenate one K-word block per category in
    ``category_order``, so word ``w`` belongs to category block ``w // K``.
    """

    centroids: np.ndarray
    kind: VocabularyKind
    words_per_category: int
    category_order: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.centroids.ndim != 2:
            raise ValueError("centroids must be a 2-D matrix")
        if np.isnan(self.centroids).any():
            raise ValueError("centroids contain NaN")
        expected = self.words_per_category * self.n_categories
        if self.n_words != expected:
            raise ValueError(
                f"{self.kind.value} vocabulary has {self.n_words} words, "
                f"expected K*M = {expected}"
            )

    @property
    def n_words(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])

    @property
    def n_categories(self) -> int:
        return len(self.category_order) if self.category_order else 1

    def category_of_word(self, word: int) -> str | None:
        if not self.category_order:
            return None
        return self.category_order[word // self.words_per_category]


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    distortion: float
    iterations: int
    trace: tuple[float, ...] = ()  # distortion after each assignment round


def _min_sqdist(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-point (argmin, min) of squared distance to the centroid set.

    Uses the |p|^2 - 2 p.c + |c|^2 expansion, chunked over points to bound
    memory; ties resolve to the lowest centroid index via argmin.
    """
    n = len(points)
    best_idx = np.empty(n, dtype=np.int64)
    best_d2 = np.empty(n, dtype=np.float64)
    c2 = np.einsum("ij,ij->i", centroids, centroids)
    chunk = max(1, (1 << 22) // max(1, centroids.shape[0]))
    for start in range(0, n, chunk):
        block = points[start : start + chunk]
        d2 = (
            np.einsum("ij,ij->i", block, block)[:, None]
            - 2.0 * (block @ centroids.T)
            + c2[None, :]
        )
        np.maximum(d2, 0.0, out=d2)
        idx = np.argmin(d2, axis=1)
        best_idx[start : start + chunk] = idx
        best_d2[start : start + chunk] = d2[np.arange(len(block)), idx]
    return best_idx, best_d2


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    diff = points - centroids[0]
    d2 = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centroids[i] = points[idx]
        diff = points - centroids[i]
        np.minimum(d2, np.einsum("ij,ij->i", diff, diff), out=d2)
    return centroids


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = DEFAULT_MAX_ITER,
    rel_tol: float = DEFAULT_REL_TOL,
) -> KMeansResult:
    """Seeded k-means++ with Lloyd iterations.

    Stops when the relative distortion improvement drops below ``rel_tol``
    or after ``max_iter`` assignment rounds. Empty clusters are re-seeded
    with the point currently farthest from its assigned centroid. The
    returned assignments are optimal for the returned centroids, and results
    are bit-for-bit reproducible for a given seed.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D matrix")
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(points) < k:
        raise ValueError(f"need at least k={k} points, got {len(points)}")

    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(points, k, rng)

    previous = None
    assignments = np.zeros(len(points), dtype=np.int64)
    distortion = 0.0
    iterations = 0
    trace: list[float] = []
    for _ in range(max_iter):
        assignments, d2 = _min_sqdist(points, centroids)
        distortion = float(d2.sum())
        iterations += 1
        trace.append(distortion)
        if previous is not None:
            # Lloyd guarantees non-increasing distortion; tolerate rounding
            assert distortion <= previous * (1.0 + 1e-12) + 1e-12
            improvement = 0.0 if previous == 0 else (previous - distortion) / previous
            if improvement < rel_tol:
                break
        previous = distortion

        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, points)
        counts = np.bincount(assignments, minlength=k).astype(np.float64)
        empty = np.flatnonzero(counts == 0)
        occupied = counts > 0
        centroids[occupied] = sums[occupied] / counts[occupied, None]
        if empty.size:
            available = d2.copy()
            for cluster in empty:
                farthest = int(np.argmax(available))
                centroids[cluster] = points[farthest]
                available[farthest] = -1.0
    return KMeansResult(
        centroids=centroids,
        assignments=assignments,
        distortion=distortion,
        iterations=iterations,
        trace=tuple(trace),
    )


def subsample_rows(points: np.ndarray, cap: int, seed: int) -> np.ndarray:
    """Uniform seeded subsample keeping row order, applied before clustering."""
    if cap <= 0 or len(points) <= cap:
        return points
    rng = derive_rng(seed, "subsample", len(points), cap)
    idx = np.sort(rng.choice(len(points), size=cap, replace=False))
    return points[idx]


def _checked(descriptors: np.ndarray, k: int, label: str) -> np.ndarray:
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2:
        raise ValueError(f"{label}: descriptors must be a 2-D matrix")
    if len(descriptors) < k:
        raise DataError(
            f"{label}: insufficient descriptors ({len(descriptors)} < K={k})"
        )
    return descriptors


def build_universal_vocabulary(
    descriptors: np.ndarray,
    words: int = DEFAULT_WORDS_PER_CATEGORY,
    seed: int = 0,
    max_points: int = DEFAULT_TRAINING_CAP,
    max_iter: int = DEFAULT_MAX_ITER,
    rel_tol: float = DEFAULT_REL_TOL,
) -> Vocabulary:
    """Cluster the pooled training descriptors into one K-word vocabulary."""
    descriptors = _checked(descriptors, words, "universal vocabulary")
    sample = subsample_rows(descriptors, max_points, seed)
    result = kmeans(sample, words, seed, max_iter=max_iter, rel_tol=rel_tol)
    return Vocabulary(
        centroids=result.centroids,
        kind=VocabularyKind.UNIVERSAL,
        words_per_category=words,
    )


def _build_category_blocks(
    per_category: Mapping[str, np.ndarray],
    words: int,
    seed: int,
    kind: VocabularyKind,
    max_points: int,
    max_iter: int,
    rel_tol: float,
) -> Vocabulary:
    if not per_category:
        raise DataError("no categories with descriptors")
    order = tuple(sorted(per_category))
    blocks = []
    for i, category in enumerate(order):
        descriptors = _checked(
            per_category[category], words, f"category '{category}' ({kind.value})"
        )
        sample = subsample_rows(descriptors, max_points, seed + i)
        result = kmeans(sample, words, seed + i, max_iter=max_iter, rel_tol=rel_tol)
        blocks.append(result.centroids)
    return Vocabulary(
        centroids=np.vstack(blocks),
        kind=kind,
        words_per_category=words,
        category_order=order,
    )


def build_integrated_vocabulary(
    per_category: Mapping[str, np.ndarray],
    words: int = DEFAULT_WORDS_PER_CATEGORY,
    seed: int = 0,
    max_points: int = DEFAULT_TRAINING_CAP,
    max_iter: int = DEFAULT_MAX_ITER,
    rel_tol: float = DEFAULT_REL_TOL,
) -> Vocabulary:
    """Cluster each category separately and concatenate the K-word blocks
    in lexicographic category order (K x M words total)."""
    return _build_category_blocks(
        per_category,
        words,
        seed,
        VocabularyKind.INTEGRATED,
        max_points,
        max_iter,
        rel_tol,
    )


def build_half_vocabularies(
    per_category: Mapping[str, tuple[np.ndarray, np.ndarray]],
    words: int = DEFAULT_WORDS_PER_CATEGORY,
    seed: int = 0,
    max_points: int = DEFAULT_TRAINING_CAP,
    max_iter: int = DEFAULT_MAX_ITER,
    rel_tol: float = DEFAULT_REL_TOL,
) -> tuple[Vocabulary, Vocabulary]:
    """Build the upper/lower integrated vocabularies from descriptors whose
    keypoints fall in the respective image half."""
    upper = {c: pair[0] for c, pair in per_category.items()}
    lower = {c: pair[1] for c, pair in per_category.items()}
    upper_vocab = _build_category_blocks(
        upper, words, seed, VocabularyKind.UPPER_INTEGRATED, max_points, max_iter, rel_tol
    )
    lower_vocab = _build_category_blocks(
        lower, words, seed, VocabularyKind.LOWER_INTEGRATED, max_points, max_iter, rel_tol
    )
    return upper_vocab, lower_vocab


def assign(descriptor: np.ndarray, vocab: Vocabulary) -> int:
    """Index of the nearest visual word; ties break to the lowest index."""
    descriptor = np.asarray(descriptor, dtype=np.float64)
    if descriptor.shape != (vocab.dim,):
        raise ValueError(
            f"descriptor has shape {descriptor.shape}, vocabulary dim is {vocab.dim}"
        )
    diff = vocab.centroids - descriptor
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def assign_many(descriptors: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2 or descriptors.shape[1] != vocab.dim:
        raise ValueError(
            f"descriptors have shape {descriptors.shape}, vocabulary dim is {vocab.dim}"
        )
    if len(descriptors) == 0:
        return np.zeros(0, dtype=np.int64)
    idx, _ = _min_sqdist(descriptors, vocab.centroids)
    return idx


_MAGIC = b"VOCB"
_VERSION = 1


def save_vocabulary(path: str | Path, vocab: Vocabulary) -> bool:
    out = io.BytesIO()
    out.write(_MAGIC)
    out.write(
        struct.pack(
            "<HBIII",
            _VERSION,
            _KIND_TAGS[vocab.kind],
            vocab.words_per_category,
            vocab.n_categories,
            vocab.dim,
        )
    )
    out.write(struct.pack("<I", len(vocab.category_order)))
    for name in vocab.category_order:
        out.write(pack_str(name))
    out.write(np.asarray(vocab.centroids, dtype="<f8").tobytes())
    return write_if_changed(path, out.getvalue())


def load_vocabulary(path: str | Path) -> Vocabulary:
    with open(path, "rb") as handle:
        if read_exact(handle, 4, "vocabulary magic") != _MAGIC:
            raise StoreError(f"{path} is not a vocabulary file")
        version, tag, words, n_categories, dim = struct.unpack(
            "<HBIII", read_exact(handle, 15, "vocabulary header")
        )
        if version != _VERSION:
            raise StoreError(f"unsupported vocabulary version {version}")
        if tag not in _TAG_KINDS:
            raise StoreError(f"unknown vocabulary kind tag {tag}")
        (n_names,) = struct.unpack("<I", read_exact(handle, 4, "category count"))
        names = tuple(unpack_str(handle, "category name") for _ in range(n_names))
        n_words = words * n_categories
        raw = read_exact(handle, 8 * n_words * dim, "centroids")
        centroids = np.frombuffer(raw, dtype="<f8").reshape(n_words, dim).copy()
    return Vocabulary(
        centroids=centroids,
        kind=_TAG_KINDS[tag],
        words_per_category=words,
        category_order=names,
    )
