"""Scene image retrieval: bag-of-visual-words representations, local
semantic concept vectors, and a reproducible retrieval benchmark."""

from .bow import (
    Approach,
    BowHistogram,
    FeatureVector,
    VocabularySet,
    bow_histogram,
    compose_representation,
    encode_image,
    pyramid_bow,
)
from .concepts import (
    AnnotatorModel,
    RegionApproach,
    annotate_image,
    cov_from_annotations,
    region_representation,
    train_annotator,
)
from .dataset import (
    CONCEPTS,
    DatasetManifest,
    FoldPlan,
    RegionAnnotations,
    load_manifest,
    load_region_annotations,
    split_folds,
)
from .evaluation import (
    EvalReport,
    average_precision,
    precision_recall_curve,
    run_benchmark,
)
from .imaging import CellBounds, HsvImage, Image, decode_image, to_hsv
from .keypoints import (
    DetectorParams,
    Keypoint,
    describe,
    detect_and_describe,
    detect_keypoints,
)
from .retrieval import RankedList, RetrievalIndex, build_index, euclidean, query
from .vocabulary import (
    KMeansResult,
    Vocabulary,
    assign,
    build_half_vocabularies,
    build_integrated_vocabulary,
    build_universal_vocabulary,
    kmeans,
)

__version__ = "0.1.0"

__all__ = [
    "Approach",
    "AnnotatorModel",
    "BowHistogram",
    "CellBounds",
    "CONCEPTS",
    "DatasetManifest",
    "DetectorParams",
    "EvalReport",
    "FeatureVector",
    "FoldPlan",
    "HsvImage",
    "Image",
    "Keypoint",
    "KMeansResult",
    "RankedList",
    "RegionAnnotations",
    "RegionApproach",
    "RetrievalIndex",
    "Vocabulary",
    "VocabularySet",
    "annotate_image",
    "assign",
    "average_precision",
    "bow_histogram",
    "build_half_vocabularies",
    "build_index",
    "build_integrated_vocabulary",
    "build_universal_vocabulary",
    "compose_representation",
    "cov_from_annotations",
    "decode_image",
    "describe",
    "detect_and_describe",
    "detect_keypoints",
    "encode_image",
    "euclidean",
    "kmeans",
    "load_manifest",
    "load_region_annotations",
    "precision_recall_curve",
    "pyramid_bow",
    "query",
    "region_representation",
    "run_benchmark",
    "split_folds",
    "to_hsv",
    "train_annotator",
]
