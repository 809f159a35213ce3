"""Command-line surface: vocabulary building, feature extraction, concept
annotation, indexing, single queries, and full benchmark runs.

All outputs land under the configured ``--out`` directory and are written
atomically; re-running a command over unchanged inputs rewrites nothing.
Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image as PILImage

from . import bow, concepts, dataset, evaluation, retrieval, vocabulary
from .bow import Approach, VocabularySet, parse_approach
from .concepts import parse_region_approach
from .errors import DataError, DecodeError, UsageError
from .fileio import write_text_if_changed
from .imaging import grid_partition, load_image
from .keypoints import (
    DetectorParams,
    detect_and_describe,
    read_descriptor_store,
    write_descriptor_store,
)
from .seeding import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """One run's knobs; round-trips losslessly through key=value text."""

    dataset: str = ""
    out: str = "out"
    grid_rows: int = 10
    grid_cols: int = 10
    vocab_size: int = 200
    pyramid_level: int = 2
    sift_sigma: float = 1.6
    sift_intervals: int = 3
    sift_contrast: float = 0.03
    sift_edge_ratio: float = 10.0
    sift_double: bool = False
    knn_k: int = 5
    seed: int = 0
    approaches: tuple[str, ...] = bow.APPROACH_NAMES
    annotator: str = concepts.ANNOTATOR_KNN
    n_folds: int = 10
    threads: int = 1
    descriptor_cap: int = 500_000
    level_weights: tuple[float, ...] = (0.25, 0.25, 0.5)
    annotations: str = ""

    def detector_params(self) -> DetectorParams:
        return DetectorParams(
            intervals=self.sift_intervals,
            sigma=self.sift_sigma,
            contrast_threshold=self.sift_contrast,
            edge_ratio=self.sift_edge_ratio,
            double_first_octave=self.sift_double,
        )

    def validate(self) -> None:
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise UsageError("grid_rows and grid_cols must be at least 1")
        if self.vocab_size < 1:
            raise UsageError("vocab_size must be at least 1")
        if self.pyramid_level not in (0, 1, 2):
            raise UsageError("pyramid_level must be 0, 1 or 2")
        if self.knn_k < 1:
            raise UsageError("knn_k must be at least 1")
        if self.n_folds < 2:
            raise UsageError("n_folds must be at least 2")
        if self.threads < 1:
            raise UsageError("threads must be at least 1")
        if len(self.level_weights) != 3:
            raise UsageError("level_weights needs one value per pyramid level (3)")
        if self.annotator not in (
            concepts.ANNOTATOR_KNN,
            concepts.ANNOTATOR_NEAREST_CENTROID,
        ):
            raise UsageError(f"unknown annotator kind '{self.annotator}'")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = str(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read config file {path}: {exc}") from exc
        values: dict[str, object] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in _CONFIG_PARSERS:
                raise DataError(f"{path}:{lineno}: unknown config key '{key}'")
            try:
                values[key] = _CONFIG_PARSERS[key](raw.strip())
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad value for {key}") from exc
        return cls(**values)


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(raw)


def _parse_str_tuple(raw: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _parse_float_tuple(raw: str) -> tuple[float, ...]:
    return tuple(float(s) for s in raw.split(",") if s.strip())


_CONFIG_PARSERS: dict[str, Callable[[str], object]] = {
    "dataset": str,
    "out": str,
    "grid_rows": int,
    "grid_cols": int,
    "vocab_size": int,
    "pyramid_level": int,
    "sift_sigma": float,
    "sift_intervals": int,
    "sift_contrast": float,
    "sift_edge_ratio": float,
    "sift_double": _parse_bool,
    "knn_k": int,
    "seed": int,
    "approaches": _parse_str_tuple,
    "annotator": str,
    "n_folds": int,
    "threads": int,
    "descriptor_cap": int,
    "level_weights": _parse_float_tuple,
    "annotations": str,
}


def _out_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out)


def _vocab_path(cfg: RunConfig, kind: str) -> Path:
    return _out_dir(cfg) / "vocab" / f"{kind}.vocb"


def _descriptor_path(cfg: RunConfig) -> Path:
    return _out_dir(cfg) / "descriptors.bin"


def _feature_path(cfg: RunConfig, approach_name: str) -> Path:
    return _out_dir(cfg) / "features" / f"{approach_name}.feat"


def _index_path(cfg: RunConfig, approach_name: str) -> Path:
    return _out_dir(cfg) / "index" / f"{approach_name}.ridx"


def _cov_path(cfg: RunConfig) -> Path:
    return _out_dir(cfg) / "cov.tsv"


def _record_config(cfg: RunConfig) -> None:
    write_text_if_changed(_out_dir(cfg) / "run_config.txt", cfg.to_text())


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _image_height(path: Path) -> int:
    with PILImage.open(path) as im:
        return im.size[1]


def _ensure_descriptors(cfg: RunConfig, manifest, needed_ids: Sequence[str]):
    """Return id -> (keypoints, descriptors), computing and caching missing ones.

    Undecodable images are logged and left out of the mapping.
    """
    store_path = _descriptor_path(cfg)
    cached = read_descriptor_store(store_path) if store_path.exists() else {}
    missing = [i for i in needed_ids if i not in cached]
    if missing:
        params = cfg.detector_params()
        paths = manifest.path_by_id

        def work(image_id: str):
            try:
                img = load_image(paths[image_id])
            except DecodeError as exc:
                logger.warning("skipping %s: %s", image_id, exc)
                return None
            return detect_and_describe(img, params)

        logger.info("extracting descriptors for %d images", len(missing))
        results = _parallel_map(work, missing, cfg.threads)
        for image_id, result in zip(missing, results):
            if result is not None:
                cached[image_id] = result
        ordered = {
            e.image_id: cached[e.image_id]
            for e in manifest.entries
            if e.image_id in cached
        }
        write_descriptor_store(store_path, ordered)
        cached = ordered
    return cached


def _load_vocabs(cfg: RunConfig, slots: set[str]) -> VocabularySet:
    vocabs = VocabularySet()
    for slot in slots:
        path = _vocab_path(cfg, slot)
        if not path.exists():
            raise DataError(
                f"missing {slot} vocabulary file {path}; run build-vocab first"
            )
        setattr(vocabs, slot, vocabulary.load_vocabulary(path))
    return vocabs


def cmd_build_vocab(cfg: RunConfig, kinds: Sequence[str]) -> int:
    manifest = dataset.load_manifest(cfg.dataset)
    per_image = _ensure_descriptors(cfg, manifest, [e.image_id for e in manifest.entries])

    by_category: dict[str, list[np.ndarray]] = {c: [] for c in manifest.categories}
    upper_by_category: dict[str, list[np.ndarray]] = {c: [] for c in manifest.categories}
    lower_by_category: dict[str, list[np.ndarray]] = {c: [] for c in manifest.categories}
    for entry in manifest.entries:
        if entry.image_id not in per_image:
            continue
        kps, descs = per_image[entry.image_id]
        by_category[entry.category].append(descs)
        if not kps:
            continue
        height = _image_height(entry.path)
        ys = np.floor(np.array([kp.y for kp in kps]))
        upper_mask = ys < height // 2
        upper_by_category[entry.category].append(descs[upper_mask])
        lower_by_category[entry.category].append(descs[~upper_mask])

    def pooled(groups: dict[str, list[np.ndarray]]) -> dict[str, np.ndarray]:
        return {
            c: np.vstack(v) if v else np.zeros((0, 128))
            for c, v in groups.items()
        }

    k = cfg.vocab_size
    descriptors_by_category = pooled(by_category)
    if "universal" in kinds:
        pooled_all = np.vstack(
            [d for _, d in sorted(descriptors_by_category.items())]
        )
        vocab = vocabulary.build_universal_vocabulary(
            pooled_all, k, derive_seed(cfg.seed, "vocab", "universal"),
            max_points=cfg.descriptor_cap,
        )
        vocabulary.save_vocabulary(_vocab_path(cfg, "universal"), vocab)
        logger.info("wrote universal vocabulary (%d words)", vocab.n_words)
    if "integrated" in kinds:
        vocab = vocabulary.build_integrated_vocabulary(
            descriptors_by_category, k, derive_seed(cfg.seed, "vocab", "integrated"),
            max_points=cfg.descriptor_cap,
        )
        vocabulary.save_vocabulary(_vocab_path(cfg, "integrated"), vocab)
        logger.info("wrote integrated vocabulary (%d words)", vocab.n_words)
    if "upper" in kinds or "lower" in kinds:
        upper_pool = pooled(upper_by_category)
        lower_pool = pooled(lower_by_category)
        halves = {
            c: (upper_pool[c], lower_pool[c]) for c in manifest.categories
        }
        upper_vocab, lower_vocab = vocabulary.build_half_vocabularies(
            halves, k, derive_seed(cfg.seed, "vocab", "half"),
            max_points=cfg.descriptor_cap,
        )
        if "upper" in kinds:
            vocabulary.save_vocabulary(_vocab_path(cfg, "upper"), upper_vocab)
            logger.info("wrote upper vocabulary (%d words)", upper_vocab.n_words)
        if "lower" in kinds:
            vocabulary.save_vocabulary(_vocab_path(cfg, "lower"), lower_vocab)
            logger.info("wrote lower vocabulary (%d words)", lower_vocab.n_words)
    _record_config(cfg)
    return 0


def cmd_encode(cfg: RunConfig, approach_names: Sequence[str]) -> int:
    manifest = dataset.load_manifest(cfg.dataset)
    approaches = [parse_approach(name) for name in approach_names]

    stores: dict[Approach, dict[str, np.ndarray]] = {}
    for approach in approaches:
        path = _feature_path(cfg, approach.value)
        if path.exists():
            stored, vectors = bow.read_feature_store(path)
            if stored != approach:
                raise DataError(f"{path} holds approach '{stored.value}'")
            stores[approach] = vectors
        else:
            stores[approach] = {}

    todo: dict[str, list[Approach]] = {}
    for entry in manifest.entries:
        pending = [a for a in approaches if entry.image_id not in stores[a]]
        if pending:
            todo[entry.image_id] = pending
    if not todo:
        logger.info("feature stores already cover all %d images", len(manifest.entries))
        _record_config(cfg)
        return 0

    pending_approaches = {a for lst in todo.values() for a in lst}
    vocab_slots = set()
    for approach in pending_approaches:
        recipe = bow.RECIPES[approach]
        if recipe.bow is not None:
            vocab_slots.add(recipe.bow[0])
    vocabs = _load_vocabs(cfg, vocab_slots)

    need_sift = bool(vocab_slots)
    per_image = (
        _ensure_descriptors(cfg, manifest, list(todo)) if need_sift else {}
    )

    paths = manifest.path_by_id
    failures: list[str] = []

    def work(image_id: str):
        try:
            img = load_image(paths[image_id])
        except DecodeError as exc:
            logger.warning("skipping %s: %s", image_id, exc)
            return None
        kps, descs = per_image.get(image_id, ((), np.zeros((0, 128))))
        out = {}
        for approach in todo[image_id]:
            fv = bow.encode_image(
                img, kps, descs, approach, vocabs, level_weights=cfg.level_weights
            )
            out[approach] = fv.values
        return out

    results = _parallel_map(work, list(todo), cfg.threads)
    for image_id, result in zip(todo, results):
        if result is None:
            failures.append(image_id)
            continue
        for approach, values in result.items():
            stores[approach][image_id] = values

    if failures and len(failures) == len(todo):
        raise DataError(f"all {len(failures)} images failed to decode")

    for approach in approaches:
        ordered = {
            e.image_id: stores[approach][e.image_id]
            for e in manifest.entries
            if e.image_id in stores[approach]
        }
        bow.write_feature_store(_feature_path(cfg, approach.value), approach, ordered)
        logger.info(
            "feature store %s: %d images", approach.value, len(ordered)
        )
    _record_config(cfg)
    return 0


def _grid_cells(cfg: RunConfig, img, image_id: str = "?") -> list:
    try:
        return grid_partition(img.width, img.height, cfg.grid_rows, cfg.grid_cols)
    except ValueError as exc:
        raise DataError(f"{image_id}: {exc}") from exc


def cmd_annotate(
    cfg: RunConfig,
    approach_name: str | None,
    use_ground_truth: bool,
) -> int:
    manifest = dataset.load_manifest(cfg.dataset)
    if not cfg.annotations:
        raise UsageError("annotate requires --annotations (ground-truth directory)")
    annotations = dataset.load_region_annotations(
        cfg.annotations, rows=cfg.grid_rows, cols=cfg.grid_cols
    )

    if use_ground_truth:
        missing = [
            e.image_id for e in manifest.entries
            if e.image_id not in annotations.by_image
        ]
        if missing:
            raise DataError(
                f"{len(missing)} images lack ground-truth annotations "
                f"(first few: {', '.join(missing[:5])})"
            )
        covs = {
            e.image_id: concepts.cov_from_annotations(annotations.by_image[e.image_id])
            for e in manifest.entries
        }
        concepts.write_cov_file(_cov_path(cfg), covs)
        logger.info("wrote ground-truth COVs for %d images", len(covs))
        _record_config(cfg)
        return 0

    if not approach_name:
        raise UsageError("annotate requires --approach unless --use-ground-truth")
    approach = parse_region_approach(approach_name)
    bow_slot = concepts.region_vocab_slot(approach)
    slots: set[str] = set()
    if bow_slot == "universal":
        slots = {"universal"}
    elif bow_slot == "integrated":
        slots = {"upper", "lower"}
    vocabs = _load_vocabs(cfg, slots) if slots else None

    annotated_ids = [
        e.image_id for e in manifest.entries if e.image_id in annotations.by_image
    ]
    if not annotated_ids:
        raise DataError("no manifest image has a ground-truth annotation file")

    per_image = (
        _ensure_descriptors(cfg, manifest, [e.image_id for e in manifest.entries])
        if bow_slot
        else {}
    )
    paths = manifest.path_by_id
    params = cfg.detector_params()

    def exemplars_for(image_id: str):
        img = load_image(paths[image_id])
        kps, descs = per_image.get(image_id, ((), np.zeros((0, 128))))
        encoder = concepts.RegionEncoder(
            img, approach, vocabs=vocabs, detector_params=params,
            keypoints=kps, descriptors=descs,
        )
        cells = _grid_cells(cfg, img, image_id)
        return concepts.training_exemplars(
            annotations.by_image[image_id], encoder, cells, img.height, cfg.grid_cols
        )

    pools = _parallel_map(exemplars_for, annotated_ids, cfg.threads)
    training: dict[str, list] = {concepts.UPPER: [], concepts.LOWER: []}
    for pool in pools:
        for half in training:
            training[half].extend(pool[half])

    models = {}
    for half in (concepts.UPPER, concepts.LOWER):
        if not training[half]:
            raise DataError(f"no training exemplars for the {half} half")
        models[half] = concepts.train_annotator(
            training[half], half, approach, k=cfg.knn_k, kind=cfg.annotator
        )
    seen_concepts = {label for half in training for _, label in training[half]}
    absent = [c for c in dataset.CONCEPTS if c not in seen_concepts]
    if absent:
        logger.warning(
            "concepts never seen in training and never predicted: %s",
            ", ".join(absent),
        )

    model_pair = (models[concepts.UPPER], models[concepts.LOWER])

    def annotate_one(image_id: str):
        img = load_image(paths[image_id])
        kps, descs = per_image.get(image_id, ((), np.zeros((0, 128))))
        try:
            return concepts.annotate_image(
                img,
                model_pair,
                grid=(cfg.grid_rows, cfg.grid_cols),
                vocabs=vocabs,
                detector_params=params,
                keypoints=kps,
                descriptors=descs,
            )
        except ValueError as exc:
            raise DataError(f"{image_id}: {exc}") from exc

    all_ids = [e.image_id for e in manifest.entries]
    logger.info("annotating %d images with %s", len(all_ids), approach.value)
    grids = _parallel_map(annotate_one, all_ids, cfg.threads)

    covs = {}
    regions_dir = _out_dir(cfg) / "predicted_regions"
    for image_id, labels in zip(all_ids, grids):
        covs[image_id] = concepts.cov_from_annotations(labels)
        dataset.save_region_grid(
            regions_dir / f"{image_id}.regions.txt", concepts.hard_grid(labels)
        )
    concepts.write_cov_file(_cov_path(cfg), covs)
    logger.info("wrote predicted COVs for %d images", len(covs))
    _record_config(cfg)
    return 0


def _load_feature_mapping(cfg: RunConfig, name: str, cov_file: str | None):
    if name == "cov":
        path = Path(cov_file) if cov_file else _cov_path(cfg)
        if not path.exists():
            raise DataError(f"missing COV file {path}; run annotate first")
        return concepts.read_cov_file(path)
    approach = parse_approach(name)
    path = _feature_path(cfg, approach.value)
    if not path.exists():
        raise DataError(f"missing feature store {path}; run encode first")
    stored, vectors = bow.read_feature_store(path)
    if stored != approach:
        raise DataError(f"{path} holds approach '{stored.value}'")
    return vectors


def cmd_index(cfg: RunConfig, approach_name: str) -> int:
    manifest = dataset.load_manifest(cfg.dataset)
    vectors = _load_feature_mapping(cfg, approach_name, None)
    entries = []
    for entry in manifest.entries:
        if entry.image_id not in vectors:
            raise DataError(
                f"feature store for '{approach_name}' lacks image "
                f"'{entry.image_id}'"
            )
        entries.append((entry.image_id, entry.category, vectors[entry.image_id]))
    try:
        index = retrieval.build_index(entries, approach=approach_name)
    except ValueError as exc:
        raise DataError(f"cannot index '{approach_name}': {exc}") from exc
    retrieval.save_index(_index_path(cfg, approach_name), index)
    logger.info("indexed %d vectors (%d-D)", len(index), index.dim)
    _record_config(cfg)
    return 0


def cmd_query(cfg: RunConfig, image_path: str, approach_name: str, top: int | None) -> int:
    approach = parse_approach(approach_name)
    index_file = _index_path(cfg, approach_name)
    if index_file.exists():
        index = retrieval.load_index(index_file)
        if index.approach and index.approach != approach_name:
            raise DataError(
                f"index {index_file} holds approach '{index.approach}', "
                f"not '{approach_name}'"
            )
    else:
        manifest = dataset.load_manifest(cfg.dataset)
        vectors = _load_feature_mapping(cfg, approach_name, None)
        index = retrieval.build_index(
            (
                (e.image_id, e.category, vectors[e.image_id])
                for e in manifest.entries
                if e.image_id in vectors
            ),
            approach=approach_name,
        )

    img = load_image(image_path)
    recipe = bow.RECIPES[approach]
    if recipe.bow is not None:
        vocabs = _load_vocabs(
            cfg, {"universal" if recipe.bow[0] == "universal" else "integrated"}
        )
        kps, descs = detect_and_describe(img, cfg.detector_params())
    else:
        vocabs, kps, descs = None, (), np.zeros((0, 128))
    fv = bow.encode_image(
        img, kps, descs, approach, vocabs, level_weights=cfg.level_weights
    )
    q = bow.quantize_unit(fv.values)
    if q.shape[0] != index.dim:
        raise DataError(
            f"query image encodes to {q.shape[0]}-D but the "
            f"'{approach_name}' index is {index.dim}-D "
            "(grey query against a color store, or a stale index?)"
        )
    ranked = retrieval.query(index, q, top=top, query_id=str(image_path))
    sys.stdout.write(retrieval.format_ranked_list(ranked))
    return 0


def cmd_evaluate(
    cfg: RunConfig, approach_names: Sequence[str], cov_file: str | None
) -> int:
    manifest = dataset.load_manifest(cfg.dataset)
    plan = dataset.split_folds(manifest, cfg.n_folds, derive_seed(cfg.seed, "folds"))
    dataset.export_fold_plan(plan, _out_dir(cfg) / "folds.tsv")

    features = {
        name: _load_feature_mapping(cfg, name, cov_file) for name in approach_names
    }
    metadata = {
        "seed": cfg.seed,
        "vocab_size": cfg.vocab_size,
        "n_categories": manifest.n_categories,
        "annotator": cfg.annotator,
        "n_folds": cfg.n_folds,
    }
    report = evaluation.run_benchmark(plan, features, approach_names, metadata)
    evaluation.export_report(report, _out_dir(cfg) / "report")
    for name in report.approaches:
        sys.stdout.write(f"{name}\t{report.accuracy[name]:.4f}\n")
    _record_config(cfg)
    return 0


def cmd_export_pr(report_path: str, out_dir: str) -> int:
    try:
        text = Path(report_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read report {report_path}: {exc}") from exc
    report = evaluation.EvalReport.from_json(text)
    written = evaluation.export_pr_curves(report, out_dir)
    logger.info("wrote %d curve files", len(written))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="scenebow",
        description="Scene image retrieval with visual words and concept vectors",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="dataset root (category dirs or manifest.tsv)")
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--threads", type=int, help="worker threads (default: 1)")
    common.add_argument("--k", type=int, dest="vocab_size", help="words per category")
    common.add_argument("--folds", type=int, dest="n_folds", help="fold count")

    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("build-vocab", parents=[common], help="cluster visual vocabularies")
    p.add_argument(
        "--kind",
        choices=["universal", "integrated", "upper", "lower", "half", "all"],
        default="all",
    )

    p = sub.add_parser("encode", parents=[common], help="extract whole-image features")
    p.add_argument(
        "--approach", action="append", help="approach name (repeatable; default: all)"
    )

    p = sub.add_parser("annotate", parents=[common], help="annotate regions, build COVs")
    p.add_argument("--annotations", help="directory of <image_id>.regions.txt files")
    p.add_argument("--approach", help="region representation for the annotator")
    p.add_argument(
        "--use-ground-truth",
        action="store_true",
        help="build COVs straight from the annotation files",
    )
    p.add_argument(
        "--annotator",
        choices=[concepts.ANNOTATOR_KNN, concepts.ANNOTATOR_NEAREST_CENTROID],
    )
    p.add_argument("--knn-k", type=int, dest="knn_k")

    p = sub.add_parser("index", parents=[common], help="freeze a retrieval index")
    p.add_argument("--approach", required=True)

    p = sub.add_parser("query", parents=[common], help="query by example image")
    p.add_argument("--image", required=True)
    p.add_argument("--approach", required=True)
    p.add_argument("--top", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="run the fold protocol")
    p.add_argument(
        "--approach",
        action="append",
        help="approach name or 'cov' (repeatable; default: config list)",
    )
    p.add_argument("--cov", help="COV file for the 'cov' approach")

    p = sub.add_parser("export-pr", parents=[common], help="re-export PR curves")
    p.add_argument("--report", required=True, help="report.json from evaluate")

    return parser


_OVERRIDE_FIELDS = (
    "dataset",
    "out",
    "seed",
    "threads",
    "vocab_size",
    "n_folds",
    "annotations",
    "annotator",
    "knn_k",
)


def _merge_config(args: argparse.Namespace) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig()
    for name in _OVERRIDE_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


def _require_dataset(cfg: RunConfig) -> None:
    if not cfg.dataset:
        raise UsageError("--dataset is required (or set dataset= in the config file)")


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required (see scenebow --help)")
        cfg = _merge_config(args)

        if args.command == "build-vocab":
            _require_dataset(cfg)
            kinds = (
                ["universal", "integrated", "upper", "lower"]
                if args.kind == "all"
                else (["upper", "lower"] if args.kind == "half" else [args.kind])
            )
            return cmd_build_vocab(cfg, kinds)
        if args.command == "encode":
            _require_dataset(cfg)
            names = args.approach or list(cfg.approaches)
            for name in names:
                _validate_approach_name(name)
            return cmd_encode(cfg, names)
        if args.command == "annotate":
            _require_dataset(cfg)
            if args.approach and not args.use_ground_truth:
                _validate_region_approach_name(args.approach)
            return cmd_annotate(cfg, args.approach, args.use_ground_truth)
        if args.command == "index":
            _require_dataset(cfg)
            if args.approach != "cov":
                _validate_approach_name(args.approach)
            return cmd_index(cfg, args.approach)
        if args.command == "query":
            _validate_approach_name(args.approach)
            return cmd_query(cfg, args.image, args.approach, args.top)
        if args.command == "evaluate":
            _require_dataset(cfg)
            names = args.approach or list(cfg.approaches)
            for name in names:
                if name != "cov":
                    _validate_approach_name(name)
            return cmd_evaluate(cfg, names, args.cov)
        if args.command == "export-pr":
            return cmd_export_pr(args.report, cfg.out)
        raise UsageError(f"unknown command '{args.command}'")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _validate_approach_name(name: str) -> None:
    try:
        parse_approach(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _validate_region_approach_name(name: str) -> None:
    try:
        parse_region_approach(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
