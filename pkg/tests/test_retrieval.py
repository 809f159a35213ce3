import numpy as np
import pytest

from scenebow.errors import StoreError
from scenebow.retrieval import (
    build_index,
    euclidean,
    format_ranked_list,
    load_index,
    query,
    save_index,
)


def _random_index(n=20, dim=8, seed=0, categories=("a", "b")):
    rng = np.random.default_rng(seed)
    entries = [
        (f"img{i:03d}", categories[i % len(categories)], rng.random(dim))
        for i in range(n)
    ]
    return build_index(entries), entries


class TestEuclidean:
    def test_identical_vectors(self):
        v = np.array([1.0, 2.0, 3.0])
        assert euclidean(v, v) == 0.0

    def test_three_four_five(self):
        assert euclidean(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 5.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            euclidean(np.zeros(3), np.zeros(4))

    def test_compensated_matches_plain(self):
        rng = np.random.default_rng(0)
        a, b = rng.random(500), rng.random(500)
        assert abs(euclidean(a, b, True) - euclidean(a, b, False)) < 1e-12

    def test_compensated_auto_for_high_dims(self):
        rng = np.random.default_rng(1)
        a, b = rng.random(10_001), rng.random(10_001)
        assert euclidean(a, b) == euclidean(a, b, compensated=True)


class TestBuildIndex:
    def test_dims_recorded(self):
        index, _ = _random_index(n=7, dim=9)
        assert index.dim == 9 and len(index) == 7

    def test_seven_hundred_cov_entries(self):
        rng = np.random.default_rng(8)
        entries = []
        for i in range(700):
            cov = rng.random(9)
            entries.append((f"img{i:04d}", f"cat{i % 6}", cov / cov.sum()))
        index = build_index(entries)
        assert index.dim == 9 and len(index) == 700

    def test_duplicate_id(self):
        entries = [("x", "a", np.zeros(3)), ("x", "b", np.ones(3))]
        with pytest.raises(ValueError, match="duplicate"):
            build_index(entries)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            build_index([])

    def test_mixed_dims(self):
        entries = [("x", "a", np.zeros(84)), ("y", "b", np.zeros(18))]
        with pytest.raises(ValueError, match="dimension"):
            build_index(entries)


class TestQuery:
    def test_self_retrieval(self):
        index, entries = _random_index()
        image_id, _, vector = entries[4]
        ranked = query(index, vector)
        assert ranked.items[0].image_id == image_id
        assert ranked.items[0].distance == 0.0

    def test_tie_breaks_by_id(self):
        entries = [
            ("zzz", "a", np.array([1.0, 0.0])),
            ("aaa", "a", np.array([-1.0, 0.0])),
            ("mmm", "b", np.array([5.0, 5.0])),
        ]
        ranked = query(build_index(entries), np.array([0.0, 0.0]))
        assert [i.image_id for i in ranked.items[:2]] == ["aaa", "zzz"]

    def test_top_truncates(self):
        index, _ = _random_index(n=25)
        ranked = query(index, np.zeros(8), top=10)
        assert len(ranked.items) == 10

    def test_full_ranking_is_permutation(self):
        index, entries = _random_index(n=30)
        ranked = query(index, np.full(8, 0.3))
        assert sorted(i.image_id for i in ranked.items) == sorted(
            e[0] for e in entries
        )

    def test_distances_nondecreasing(self):
        index, _ = _random_index(n=30, seed=3)
        ranked = query(index, np.full(8, 0.5))
        dists = [i.distance for i in ranked.items]
        assert dists == sorted(dists)

    def test_matches_pairwise_sort_oracle(self):
        rng = np.random.default_rng(4)
        for trial in range(10):
            index, entries = _random_index(n=50, dim=6, seed=trial)
            q = rng.random(6)
            ranked = query(index, q)
            oracle = sorted(
                entries, key=lambda e: (float(np.sqrt(np.sum((e[2] - q) ** 2))), e[0])
            )
            assert [i.image_id for i in ranked.items] == [e[0] for e in oracle]

    def test_cosine_rank_equivalence_on_unit_vectors(self):
        rng = np.random.default_rng(5)
        vectors = rng.normal(size=(40, 12))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        entries = [(f"v{i:02d}", "c", v) for i, v in enumerate(vectors)]
        index = build_index(entries)
        q = rng.normal(size=12)
        q /= np.linalg.norm(q)
        ranked = query(index, q)
        by_cosine = sorted(
            entries, key=lambda e: (-float(e[2] @ q), e[0])
        )
        assert [i.image_id for i in ranked.items] == [e[0] for e in by_cosine]

    def test_compensated_same_ranking(self):
        index, _ = _random_index(n=30, seed=6)
        q = np.full(8, 0.4)
        plain = query(index, q)
        comp = query(index, q, compensated=True)
        assert [i.image_id for i in plain.items] == [i.image_id for i in comp.items]

    def test_dim_mismatch(self):
        index, _ = _random_index()
        with pytest.raises(ValueError, match="dim"):
            query(index, np.zeros(5))


class TestFormatting:
    def test_ranked_list_lines(self):
        entries = [("b", "cat", np.array([0.0])), ("a", "cat", np.array([1.0]))]
        ranked = query(build_index(entries), np.array([0.0]))
        lines = format_ranked_list(ranked).splitlines()
        assert lines[0] == "1\tb\tcat\t0.000000000"
        assert lines[1] == "2\ta\tcat\t1.000000000"


class TestIndexPersistence:
    def test_roundtrip(self, tmp_path):
        index, _ = _random_index(n=9, dim=5, seed=7)
        path = tmp_path / "x.ridx"
        save_index(path, index)
        loaded = load_index(path)
        assert loaded.image_ids == index.image_ids
        assert loaded.categories == index.categories
        assert np.array_equal(loaded.matrix, index.matrix)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ridx"
        path.write_bytes(b"WHAT" + b"\x00" * 32)
        with pytest.raises(StoreError):
            load_index(path)
