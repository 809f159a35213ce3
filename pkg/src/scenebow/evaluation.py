"""Retrieval metrics and the 10-fold benchmark protocol.

Precision and recall at rank Y follow P = Z/Y and R = Z/X, with Z the
relevant images among the Y retrieved and X the relevant images in the
database. Average precision means the precision values at each relevant
rank, divided by X; a category's MAP pools its queries across folds, and an
approach's retrieval accuracy is the arithmetic mean of its category MAPs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import FoldPlan
from .errors import DataError
from .fileio import write_text_if_changed
from .retrieval import build_index, query


@dataclass(frozen=True)
class PrecisionRecallPoint:
    rank: int                 # Y, images retrieved so far
    relevant_retrieved: int   # Z
    total_relevant: int       # X
    precision: float
    recall: float


def _check_relevance(ranked_relevance: Sequence[bool], total_relevant: int) -> None:
    if total_relevant < 1:
        raise ValueError("total_relevant must be at least 1")
    found = sum(bool(flag) for flag in ranked_relevance)
    if found != total_relevant:
        raise ValueError(
            f"relevance list marks {found} relevant items, expected "
            f"{total_relevant} (full-database ranking required)"
        )


def precision_recall_curve(
    ranked_relevance: Sequence[bool], total_relevant: int
) -> list[PrecisionRecallPoint]:
    """One precision/recall point per rank of a full ranking."""
    _check_relevance(ranked_relevance, total_relevant)
    points = []
    relevant = 0
    for rank, flag in enumerate(ranked_relevance, start=1):
        if flag:
            relevant += 1
        points.append(
            PrecisionRecallPoint(
                rank=rank,
                relevant_retrieved=relevant,
                total_relevant=total_relevant,
                precision=relevant / rank,
                recall=relevant / total_relevant,
            )
        )
    return points


def average_precision(ranked_relevance: Sequence[bool], total_relevant: int) -> float:
    """Mean of the precision values at each relevant rank, divided by X."""
    _check_relevance(ranked_relevance, total_relevant)
    relevant = 0
    total = 0.0
    for rank, flag in enumerate(ranked_relevance, start=1):
        if flag:
            relevant += 1
            total += relevant / rank
    return total / total_relevant


class _CurveAccumulator:
    """Per-rank running mean of precision and recall, truncated to the
    shortest contributing ranking."""

    def __init__(self) -> None:
        self.count = 0
        self._precision: np.ndarray | None = None
        self._recall: np.ndarray | None = None

    def add(self, precision: np.ndarray, recall: np.ndarray) -> None:
        if self._precision is None:
            self._precision = precision.copy()
            self._recall = recall.copy()
        else:
            n = min(len(self._precision), len(precision))
            self._precision = self._precision[:n] + precision[:n]
            self._recall = self._recall[:n] + recall[:n]
        self.count += 1

    def mean(self) -> list[tuple[float, float]]:
        if self._precision is None or self.count == 0:
            return []
        return [
            (float(r / self.count), float(p / self.count))
            for r, p in zip(self._recall, self._precision)
        ]


@dataclass
class EvalReport:
    """Benchmark results shaped like the MAP tables and PR graphs."""

    approaches: tuple[str, ...]
    categories: tuple[str, ...]
    category_map: dict[str, dict[str, float]]
    accuracy: dict[str, float]
    fold_map: dict[str, dict[int, dict[str, float]]]
    curves: dict[str, dict[str, list[tuple[float, float]]]]
    mean_curves: dict[str, list[tuple[float, float]]]
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "approaches": list(self.approaches),
            "categories": list(self.categories),
            "category_map": self.category_map,
            "accuracy": self.accuracy,
            "fold_map": {
                a: {str(f): m for f, m in folds.items()}
                for a, folds in self.fold_map.items()
            },
            "curves": self.curves,
            "mean_curves": self.mean_curves,
            "metadata": self.metadata,
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        return cls(
            approaches=tuple(payload["approaches"]),
            categories=tuple(payload["categories"]),
            category_map=payload["category_map"],
            accuracy=payload["accuracy"],
            fold_map={
                a: {int(f): m for f, m in folds.items()}
                for a, folds in payload["fold_map"].items()
            },
            curves={
                a: {c: [tuple(p) for p in pts] for c, pts in cats.items()}
                for a, cats in payload["curves"].items()
            },
            mean_curves={
                a: [tuple(p) for p in pts] for a, pts in payload["mean_curves"].items()
            },
            metadata=payload.get("metadata", {}),
        )


def run_benchmark(
    fold_plan: FoldPlan,
    features: Mapping[str, Mapping[str, np.ndarray]],
    approaches: Sequence[str],
    metadata: Mapping | None = None,
) -> EvalReport:
    """Execute the cross-validated query protocol for each approach.

    Per fold, the non-query images of every category form the database; each
    query ranks the full database and counts same-category images as
    relevant. Category MAPs pool queries across folds.
    """
    if not approaches:
        raise ValueError("no approaches requested")
    categories = fold_plan.categories

    category_map: dict[str, dict[str, float]] = {}
    accuracy: dict[str, float] = {}
    fold_map: dict[str, dict[int, dict[str, float]]] = {}
    curves: dict[str, dict[str, list[tuple[float, float]]]] = {}
    mean_curves: dict[str, list[tuple[float, float]]] = {}

    for approach in approaches:
        if approach not in features:
            raise DataError(f"no feature store loaded for approach '{approach}'")
        vectors = features[approach]
        ap_by_category: dict[str, list[float]] = {c: [] for c in categories}
        accumulators = {c: _CurveAccumulator() for c in categories}
        fold_map[approach] = {}

        for fold in fold_plan.folds:
            db_items = fold.database_items()
            try:
                index = build_index(
                    (
                        (image_id, category, _vector_of(vectors, image_id, approach))
                        for image_id, category in db_items
                    ),
                    approach=approach,
                )
            except ValueError as exc:
                raise DataError(
                    f"approach '{approach}', fold {fold.index}: {exc}"
                ) from exc
            db_count_by_category: dict[str, int] = {}
            for _, category in db_items:
                db_count_by_category[category] = db_count_by_category.get(category, 0) + 1

            fold_aps: dict[str, list[float]] = {c: [] for c in categories}
            for query_id, category in fold.query_items():
                try:
                    ranked = query(
                        index,
                        _vector_of(vectors, query_id, approach),
                        query_id=query_id,
                    )
                except ValueError as exc:
                    raise DataError(
                        f"approach '{approach}', query '{query_id}': {exc}"
                    ) from exc
                flags = [item.category == category for item in ranked.items]
                total_relevant = db_count_by_category.get(category, 0)
                if total_relevant == 0:
                    raise DataError(
                        f"fold {fold.index}: no database images for "
                        f"category '{category}'"
                    )
                ap = average_precision(flags, total_relevant)
                ap_by_category[category].append(ap)
                fold_aps[category].append(ap)

                relevant = np.cumsum(np.asarray(flags, dtype=np.float64))
                ranks = np.arange(1, len(flags) + 1, dtype=np.float64)
                accumulators[category].add(relevant / ranks, relevant / total_relevant)
            fold_map[approach][fold.index] = {
                c: float(np.mean(aps)) for c, aps in fold_aps.items() if aps
            }

        category_map[approach] = {
            c: float(np.mean(aps)) for c, aps in ap_by_category.items()
        }
        accuracy[approach] = float(
            np.mean([category_map[approach][c] for c in categories])
        )
        curves[approach] = {c: accumulators[c].mean() for c in categories}

        overall = _CurveAccumulator()
        for c in categories:
            points = curves[approach][c]
            if points:
                overall.add(
                    np.array([p for _, p in points]), np.array([r for r, _ in points])
                )
        mean_curves[approach] = overall.mean()

    return EvalReport(
        approaches=tuple(approaches),
        categories=categories,
        category_map=category_map,
        accuracy=accuracy,
        fold_map=fold_map,
        curves=curves,
        mean_curves=mean_curves,
        metadata=dict(metadata or {}),
    )


def _vector_of(vectors: Mapping[str, np.ndarray], image_id: str, approach: str):
    try:
        return vectors[image_id]
    except KeyError:
        raise DataError(
            f"approach '{approach}' has no feature vector for image '{image_id}'"
        ) from None


def _safe_name(name: str) -> str:
    return "".join(ch if (ch.isalnum() or ch in "+-_.") else "-" for ch in name)


def format_map_table(report: EvalReport) -> str:
    """Tab-separated MAP table: one approach per row, categories then accuracy."""
    header = "approach\t" + "\t".join(report.categories) + "\taccuracy"
    lines = [header]
    for approach in report.approaches:
        row = [approach]
        row.extend(
            f"{report.category_map[approach][c]:.4f}" for c in report.categories
        )
        row.append(f"{report.accuracy[approach]:.4f}")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def _format_curve(points: Sequence[tuple[float, float]]) -> str:
    lines = ["recall\tprecision"]
    lines.extend(f"{r:.6f}\t{p:.6f}" for r, p in points)
    return "\n".join(lines) + "\n"


def export_pr_curves(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write per-(approach, category) curve files plus the per-approach mean."""
    out_dir = Path(out_dir)
    written = []
    for approach in report.approaches:
        base = _safe_name(approach)
        for category in report.categories:
            path = out_dir / "pr" / f"{base}__{_safe_name(category)}.tsv"
            write_text_if_changed(path, _format_curve(report.curves[approach][category]))
            written.append(path)
        path = out_dir / "pr" / f"{base}.tsv"
        write_text_if_changed(path, _format_curve(report.mean_curves[approach]))
        written.append(path)
    return written


def export_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write the MAP table, all PR curves, and the replayable JSON report."""
    if not report.approaches:
        raise ValueError("report covers no approaches")
    out_dir = Path(out_dir)
    table_path = out_dir / "map_table.tsv"
    write_text_if_changed(table_path, format_map_table(report))
    json_path = out_dir / "report.json"
    write_text_if_changed(json_path, report.to_json())
    return [table_path, json_path] + export_pr_curves(report, out_dir)
