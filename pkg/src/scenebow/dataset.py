"""Dataset ingestion: category-labeled image collections, ground-truth
region annotations, and deterministic fold plans for the query protocol."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping

from .errors import AnnotationError, DataError, ManifestError
from .seeding import derive_rng

# The closed set of local semantic concepts, in canonical order. Concept
# occurrence vectors index their components by this order.
CONCEPTS = (
    "sky",
    "water",
    "grass",
    "trunks",
    "foliage",
    "field",
    "rocks",
    "flowers",
    "sand",
)
_CONCEPT_SET = frozenset(CONCEPTS)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}

# A region grid is a rows x cols nested sequence; each cell maps concept
# name -> weight, with the weights of one cell summing to 1.
RegionGrid = tuple[tuple[dict[str, float], ...], ...]


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: Path
    category: str


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    categories: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.categories) < 2:
            raise ManifestError("a dataset needs at least 2 categories")
        known = set(self.categories)
        seen: set[str] = set()
        for entry in self.entries:
            if entry.category not in known:
                raise ManifestError(f"entry {entry.image_id} has unknown category")
            if entry.image_id in seen:
                raise ManifestError(f"duplicate image_id '{entry.image_id}'")
            seen.add(entry.image_id)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @cached_property
    def category_by_id(self) -> dict[str, str]:
        return {e.image_id: e.category for e in self.entries}

    @cached_property
    def path_by_id(self) -> dict[str, Path]:
        return {e.image_id: e.path for e in self.entries}

    def ids_by_category(self) -> dict[str, list[str]]:
        grouped: dict[str, list[str]] = {c: [] for c in self.categories}
        for entry in self.entries:
            grouped[entry.category].append(entry.image_id)
        return grouped


def load_manifest(root: str | Path) -> DatasetManifest:
    """Load a dataset from ``<root>/<category>/<images>`` or ``<root>/manifest.tsv``.

    Categories come out sorted lexicographically and entries in a
    deterministic order, so repeated loads of one tree are identical.
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"dataset root {root} does not exist")

    manifest_file = root / "manifest.tsv"
    if manifest_file.is_file():
        return _load_manifest_file(root, manifest_file)

    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not subdirs:
        raise ManifestError(f"no categories found under {root}")
    entries: list[ManifestEntry] = []
    for sub in subdirs:
        files = sorted(
            f for f in sub.iterdir()
            if f.is_file() and f.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise ManifestError(f"category directory {sub} holds no images")
        for f in files:
            entries.append(
                ManifestEntry(
                    image_id=f"{sub.name}/{f.stem}", path=f, category=sub.name
                )
            )
    categories = tuple(d.name for d in subdirs)
    return DatasetManifest(entries=tuple(entries), categories=categories)


def _load_manifest_file(root: Path, manifest_file: Path) -> DatasetManifest:
    entries: list[ManifestEntry] = []
    try:
        lines = manifest_file.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestError(f"unreadable manifest file {manifest_file}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(
                f"{manifest_file}:{lineno}: expected 3 tab-separated fields"
            )
        image_id, rel_path, category = (p.strip() for p in parts)
        if not image_id or not rel_path or not category:
            raise ManifestError(f"{manifest_file}:{lineno}: empty field")
        path = Path(rel_path)
        if not path.is_absolute():
            path = root / path
        entries.append(ManifestEntry(image_id=image_id, path=path, category=category))
    if not entries:
        raise ManifestError(f"manifest file {manifest_file} lists no images")
    categories = tuple(sorted({e.category for e in entries}))
    return DatasetManifest(entries=tuple(entries), categories=categories)


@dataclass(frozen=True, eq=False)
class RegionAnnotations:
    """Ground-truth concept weights on a rows x cols grid, per image."""

    rows: int
    cols: int
    by_image: Mapping[str, RegionGrid]

    def __post_init__(self) -> None:
        for image_id, grid in self.by_image.items():
            validate_region_grid(grid, self.rows, self.cols, image_id)


def validate_region_grid(
    grid: RegionGrid, rows: int, cols: int, image_id: str = "?"
) -> None:
    if len(grid) != rows or any(len(r) != cols for r in grid):
        raise AnnotationError(f"{image_id}: grid is not {rows}x{cols}")
    for row in grid:
        for cell in row:
            if not cell:
                raise AnnotationError(f"{image_id}: empty cell")
            for concept in cell:
                if concept not in _CONCEPT_SET:
                    raise AnnotationError(f"{image_id}: unknown concept '{concept}'")
            total = sum(cell.values())
            if abs(total - 1.0) > 1e-9:
                raise AnnotationError(f"{image_id}: cell weights sum to {total}")


def parse_region_file(text: str, rows: int, cols: int, name: str = "?") -> RegionGrid:
    """Parse one ``.regions.txt`` body: ``rows`` lines of ``cols`` tokens.

    A token is either a concept name or ``a/b``, which weights each of the
    two concepts 0.5 in that cell.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) != rows:
        raise AnnotationError(f"{name}: expected {rows} rows, found {len(lines)}")
    grid: list[tuple[dict[str, float], ...]] = []
    for lineno, line in enumerate(lines):
        tokens = line.split()
        if len(tokens) != cols:
            raise AnnotationError(
                f"{name}: row {lineno} has {len(tokens)} tokens, expected {cols}"
            )
        row: list[dict[str, float]] = []
        for token in tokens:
            row.append(_parse_cell_token(token, name))
        grid.append(tuple(row))
    return tuple(grid)


def _parse_cell_token(token: str, name: str) -> dict[str, float]:
    parts = token.split("/")
    if len(parts) == 1:
        concept = parts[0]
        if concept not in _CONCEPT_SET:
            raise AnnotationError(f"{name}: unknown concept '{concept}'")
        return {concept: 1.0}
    if len(parts) == 2:
        a, b = parts
        if not a or not b or a == b:
            raise AnnotationError(f"{name}: malformed split token '{token}'")
        for concept in (a, b):
            if concept not in _CONCEPT_SET:
                raise AnnotationError(f"{name}: unknown concept '{concept}'")
        return {a: 0.5, b: 0.5}
    raise AnnotationError(f"{name}: malformed split token '{token}'")


def format_region_grid(grid: RegionGrid) -> str:
    """Serialize a grid back to the ``.regions.txt`` format (round-trippable).

    Split cells print their two concepts in canonical concept order.
    """
    lines = []
    for row in grid:
        tokens = []
        for cell in row:
            concepts = sorted(cell, key=CONCEPTS.index)
            if len(concepts) == 1 and abs(cell[concepts[0]] - 1.0) <= 1e-9:
                tokens.append(concepts[0])
            elif len(concepts) == 2 and all(
                abs(cell[c] - 0.5) <= 1e-9 for c in concepts
            ):
                tokens.append(f"{concepts[0]}/{concepts[1]}")
            else:
                raise ValueError(f"cell {cell} is not representable as a token")
        lines.append(" ".join(tokens))
    return "\n".join(lines) + "\n"


def load_region_annotations(
    path: str | Path, rows: int = 10, cols: int = 10
) -> RegionAnnotations:
    """Load every ``<image_id>.regions.txt`` beneath ``path``.

    Image ids that contain ``/`` (the directory-layout form) map to files in
    matching subdirectories.
    """
    path = Path(path)
    if not path.is_dir():
        raise AnnotationError(f"annotation directory {path} does not exist")
    by_image: dict[str, RegionGrid] = {}
    for file in sorted(path.rglob("*.regions.txt")):
        rel = file.relative_to(path).as_posix()
        image_id = rel[: -len(".regions.txt")]
        text = file.read_text(encoding="utf-8")
        by_image[image_id] = parse_region_file(text, rows, cols, name=image_id)
    return RegionAnnotations(rows=rows, cols=cols, by_image=by_image)


def save_region_grid(path: str | Path, grid: RegionGrid) -> bool:
    from .fileio import write_text_if_changed

    return write_text_if_changed(path, format_region_grid(grid))


@dataclass(frozen=True)
class FoldSplit:
    queries: tuple[str, ...]
    database: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class Fold:
    index: int
    splits: Mapping[str, FoldSplit]

    def query_items(self) -> list[tuple[str, str]]:
        return [
            (image_id, category)
            for category in sorted(self.splits)
            for image_id in self.splits[category].queries
        ]

    def database_items(self) -> list[tuple[str, str]]:
        return [
            (image_id, category)
            for category in sorted(self.splits)
            for image_id in self.splits[category].database
        ]


@dataclass(frozen=True, eq=False)
class FoldPlan:
    folds: tuple[Fold, ...]
    seed: int

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(sorted(self.folds[0].splits))


def split_folds(manifest: DatasetManifest, n_folds: int, seed: int) -> FoldPlan:
    """Partition each category into ``n_folds`` near-equal query sets.

    Fold i uses part i of a category as queries and the remaining parts as
    its database side; remainder images go to the earliest folds. The plan
    is a pure function of (manifest, n_folds, seed).
    """
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    grouped = manifest.ids_by_category()
    for category, ids in grouped.items():
        if len(ids) < n_folds:
            raise DataError(
                f"category '{category}' has {len(ids)} images, fewer than "
                f"{n_folds} folds"
            )

    parts_by_category: dict[str, list[list[str]]] = {}
    for category in manifest.categories:
        ids = grouped[category]
        rng = derive_rng(seed, "folds", category)
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        base, remainder = divmod(len(ids), n_folds)
        parts = []
        cursor = 0
        for i in range(n_folds):
            size = base + (1 if i < remainder else 0)
            parts.append(shuffled[cursor : cursor + size])
            cursor += size
        parts_by_category[category] = parts

    folds = []
    for i in range(n_folds):
        splits: dict[str, FoldSplit] = {}
        for category in manifest.categories:
            parts = parts_by_category[category]
            queries = tuple(sorted(parts[i]))
            database = tuple(
                sorted(x for j, part in enumerate(parts) if j != i for x in part)
            )
            splits[category] = FoldSplit(queries=queries, database=database)
        folds.append(Fold(index=i, splits=splits))
    return FoldPlan(folds=tuple(folds), seed=seed)


def format_fold_plan(plan: FoldPlan) -> str:
    lines = []
    for fold in plan.folds:
        for category in sorted(fold.splits):
            split = fold.splits[category]
            for image_id in split.queries:
                lines.append(f"{fold.index}\t{category}\tquery\t{image_id}")
            for image_id in split.database:
                lines.append(f"{fold.index}\t{category}\tdb\t{image_id}")
    return "\n".join(lines) + "\n"


def export_fold_plan(plan: FoldPlan, path: str | Path) -> bool:
    from .fileio import write_text_if_changed

    return write_text_if_changed(path, format_fold_plan(plan))
