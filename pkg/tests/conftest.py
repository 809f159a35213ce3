import numpy as np
import pytest

from scenebow.bow import VocabularySet
from scenebow.vocabulary import (
    build_half_vocabularies,
    build_integrated_vocabulary,
    build_universal_vocabulary,
)

SIX_CATEGORIES = ("coasts", "forests", "mountains", "plains", "rivers", "sky")


@pytest.fixture(scope="session")
def vocab_set_k200() -> VocabularySet:
    """Universal + integrated + half vocabularies with K=200, M=6, built from
    random descriptors. Shared session-wide; vocabularies are immutable."""
    rng = np.random.default_rng(42)
    per_category = {c: rng.random((210, 128)) for c in SIX_CATEGORIES}
    pooled = np.vstack(list(per_category.values()))
    halves = {c: (rng.random((205, 128)), rng.random((205, 128))) for c in SIX_CATEGORIES}
    upper, lower = build_half_vocabularies(halves, 200, seed=3)
    return VocabularySet(
        universal=build_universal_vocabulary(pooled, 200, seed=1),
        integrated=build_integrated_vocabulary(per_category, 200, seed=2),
        upper=upper,
        lower=lower,
    )


@pytest.fixture(scope="session")
def vocab_set_small() -> VocabularySet:
    """Tiny vocabularies (K=4, M=2) for fast unit tests."""
    rng = np.random.default_rng(7)
    per_category = {c: rng.random((12, 128)) for c in ("alpha", "beta")}
    pooled = np.vstack(list(per_category.values()))
    halves = {c: (rng.random((10, 128)), rng.random((10, 128))) for c in ("alpha", "beta")}
    upper, lower = build_half_vocabularies(halves, 4, seed=3)
    return VocabularySet(
        universal=build_universal_vocabulary(pooled, 4, seed=1),
        integrated=build_integrated_vocabulary(per_category, 4, seed=2),
        upper=upper,
        lower=lower,
    )
