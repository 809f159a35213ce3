"""Exhaustive query-by-example search over feature vectors or COVs."""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import StoreError
from .fileio import pack_str, read_exact, unpack_str, write_if_changed

# Dimension above which the single-pair distance switches to compensated
# (exact) summation by default.
COMPENSATED_DIM = 10_000


def euclidean(a: np.ndarray, b: np.ndarray, compensated: bool | None = None) -> float:
    """Euclidean distance in double precision.

    ``compensated`` switches to ``math.fsum`` accumulation; by default it is
    enabled for vectors longer than ``COMPENSATED_DIM``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if compensated is None:
        compensated = a.shape[0] > COMPENSATED_DIM
    diff = a - b
    if compensated:
        return math.sqrt(math.fsum((diff * diff).tolist()))
    return float(np.sqrt(np.sum(diff * diff)))


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    """Immutable scan index: ids, categories, and a row-per-image matrix."""

    image_ids: tuple[str, ...]
    categories: tuple[str, ...]
    matrix: np.ndarray
    approach: str = ""

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.image_ids)


@dataclass(frozen=True)
class RankedItem:
    image_id: str
    category: str
    distance: float


@dataclass(frozen=True, eq=False)
class RankedList:
    items: tuple[RankedItem, ...]
    query_id: str | None = None


def build_index(
    entries: Iterable[tuple[str, str, np.ndarray]], approach: str = ""
) -> RetrievalIndex:
    """Build an index from (image_id, category, vector) triples."""
    ids: list[str] = []
    categories: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim: int | None = None
    for image_id, category, vector in entries:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.ndim != 1:
            raise ValueError(f"{image_id}: vector must be 1-D")
        if dim is None:
            dim = vector.shape[0]
        elif vector.shape[0] != dim:
            raise ValueError(
                f"{image_id}: dimension {vector.shape[0]} differs from index dim {dim}"
            )
        if image_id in seen:
            raise ValueError(f"duplicate image_id '{image_id}'")
        seen.add(image_id)
        ids.append(image_id)
        categories.append(category)
        rows.append(vector)
    if not rows:
        raise ValueError("cannot build an empty index")
    return RetrievalIndex(
        image_ids=tuple(ids),
        categories=tuple(categories),
        matrix=np.vstack(rows),
        approach=approach,
    )


def _distances(matrix: np.ndarray, q: np.ndarray, compensated: bool) -> np.ndarray:
    if compensated:
        return np.array(
            [math.sqrt(math.fsum(((row - q) ** 2).tolist())) for row in matrix]
        )
    n = len(matrix)
    out = np.empty(n, dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, matrix.shape[1]))
    for start in range(0, n, chunk):
        diff = matrix[start : start + chunk] - q
        out[start : start + chunk] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


def query(
    index: RetrievalIndex,
    q: np.ndarray,
    top: int | None = None,
    query_id: str | None = None,
    compensated: bool = False,
) -> RankedList:
    """Rank the whole index by ascending distance to ``q``.

    Equal distances order by image_id ascending; ``top`` truncates the
    result after ranking.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise ValueError(f"query has shape {q.shape}, index dim is {index.dim}")
    distances = _distances(index.matrix, q, compensated)
    ids = np.array(index.image_ids)
    order = np.lexsort((ids, distances))
    if top is not None:
        order = order[:top]
    items = tuple(
        RankedItem(
            image_id=index.image_ids[i],
            category=index.categories[i],
            distance=float(distances[i]),
        )
        for i in order
    )
    return RankedList(items=items, query_id=query_id)


def format_ranked_list(ranked: RankedList) -> str:
    lines = [
        f"{rank}\t{item.image_id}\t{item.category}\t{item.distance:.9f}"
        for rank, item in enumerate(ranked.items, start=1)
    ]
    return "\n".join(lines) + "\n"


_MAGIC = b"RIDX"
_VERSION = 1


def save_index(path: str | Path, index: RetrievalIndex) -> bool:
    out = io.BytesIO()
    out.write(_MAGIC)
    out.write(struct.pack("<H", _VERSION))
    out.write(pack_str(index.approach))
    out.write(struct.pack("<II", len(index), index.dim))
    for image_id, category in zip(index.image_ids, index.categories):
        out.write(pack_str(image_id))
        out.write(pack_str(category))
    out.write(np.asarray(index.matrix, dtype="<f8").tobytes())
    return write_if_changed(path, out.getvalue())


def load_index(path: str | Path) -> RetrievalIndex:
    with open(path, "rb") as handle:
        if read_exact(handle, 4, "index magic") != _MAGIC:
            raise StoreError(f"{path} is not a retrieval index")
        (version,) = struct.unpack("<H", read_exact(handle, 2, "index version"))
        if version != _VERSION:
            raise StoreError(f"unsupported index version {version}")
        approach = unpack_str(handle, "approach")
        count, dim = struct.unpack("<II", read_exact(handle, 8, "index size"))
        pairs = [
            (unpack_str(handle, "image id"), unpack_str(handle, "category"))
            for _ in range(count)
        ]
        raw = read_exact(handle, 8 * count * dim, "index matrix")
        matrix = np.frombuffer(raw, dtype="<f8").reshape(count, dim).copy()
    return RetrievalIndex(
        image_ids=tuple(p[0] for p in pairs),
        categories=tuple(p[1] for p in pairs),
        matrix=matrix,
        approach=approach,
    )
