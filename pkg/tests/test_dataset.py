import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import png_bytes, write_dataset
from scenebow.dataset import (
    CONCEPTS,
    format_fold_plan,
    format_region_grid,
    load_manifest,
    load_region_annotations,
    parse_region_file,
    split_folds,
)
from scenebow.errors import AnnotationError, DataError, ManifestError


def _tiny(seed=0):
    return np.random.default_rng(seed).random((4, 4, 3))


class TestLoadManifestDirectories:
    def test_two_categories(self, tmp_path):
        write_dataset(
            tmp_path,
            {
                "coast": {f"c{i}": _tiny(i) for i in range(3)},
                "forest": {f"f{i}": _tiny(10 + i) for i in range(2)},
            },
        )
        manifest = load_manifest(tmp_path)
        assert manifest.n_categories == 2
        assert len(manifest.entries) == 5
        assert manifest.categories == ("coast", "forest")

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ManifestError, match="no categories"):
            load_manifest(tmp_path)

    def test_missing_root(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "nope")

    def test_empty_category(self, tmp_path):
        (tmp_path / "coast").mkdir()
        (tmp_path / "forest").mkdir()
        (tmp_path / "forest" / "a.png").write_bytes(png_bytes(_tiny()))
        with pytest.raises(ManifestError, match="no images"):
            load_manifest(tmp_path)

    def test_six_categories(self, tmp_path):
        cats = ["coasts", "rivers", "forests", "plains", "mountains", "sky"]
        write_dataset(tmp_path, {c: {"a": _tiny()} for c in cats[:-1]})
        write_dataset(tmp_path, {cats[-1]: {"a": _tiny(), "b": _tiny(1)}})
        manifest = load_manifest(tmp_path)
        assert manifest.n_categories == 6
        assert manifest.categories == tuple(sorted(cats))

    def test_deterministic_ordering(self, tmp_path):
        write_dataset(
            tmp_path,
            {"a": {f"x{i}": _tiny(i) for i in range(4)}, "b": {"y": _tiny(9)}},
        )
        first = load_manifest(tmp_path)
        second = load_manifest(tmp_path)
        assert [e.image_id for e in first.entries] == [
            e.image_id for e in second.entries
        ]

    def test_single_category_rejected(self, tmp_path):
        write_dataset(tmp_path, {"only": {"a": _tiny()}})
        with pytest.raises(ManifestError):
            load_manifest(tmp_path)


class TestManifestFile:
    def _write(self, tmp_path, lines):
        for cat in ("coast", "forest"):
            (tmp_path / cat).mkdir(exist_ok=True)
        (tmp_path / "coast" / "a.png").write_bytes(png_bytes(_tiny()))
        (tmp_path / "forest" / "b.png").write_bytes(png_bytes(_tiny(1)))
        (tmp_path / "manifest.tsv").write_text("\n".join(lines) + "\n")

    def test_parse_with_comments(self, tmp_path):
        self._write(
            tmp_path,
            ["# comment", "img1\tcoast/a.png\tcoast", "img2\tforest/b.png\tforest"],
        )
        manifest = load_manifest(tmp_path)
        assert [e.image_id for e in manifest.entries] == ["img1", "img2"]
        assert manifest.categories == ("coast", "forest")

    def test_duplicate_image_id(self, tmp_path):
        self._write(
            tmp_path,
            ["img1\tcoast/a.png\tcoast", "img1\tforest/b.png\tforest"],
        )
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(tmp_path)

    def test_wrong_field_count(self, tmp_path):
        self._write(tmp_path, ["img1\tcoast/a.png"])
        with pytest.raises(ManifestError, match="3 tab-separated"):
            load_manifest(tmp_path)


class TestRegionAnnotations:
    def _grid_text(self, token, rows=10, cols=10):
        return "\n".join(" ".join([token] * cols) for _ in range(rows))

    def test_uniform_sky(self, tmp_path):
        (tmp_path / "img1.regions.txt").write_text(self._grid_text("sky"))
        annotations = load_region_annotations(tmp_path)
        grid = annotations.by_image["img1"]
        assert all(cell == {"sky": 1.0} for row in grid for cell in row)

    def test_split_token(self):
        grid = parse_region_file(self._grid_text("sky/water"), 10, 10)
        assert grid[0][0] == {"sky": 0.5, "water": 0.5}

    def test_unknown_concept(self):
        with pytest.raises(AnnotationError, match="unknown concept"):
            parse_region_file(self._grid_text("lava"), 10, 10)

    def test_wrong_row_count(self):
        with pytest.raises(AnnotationError, match="rows"):
            parse_region_file(self._grid_text("sky", rows=9), 10, 10)

    def test_wrong_column_count(self):
        with pytest.raises(AnnotationError, match="tokens"):
            parse_region_file(self._grid_text("sky", cols=9), 10, 10)

    @pytest.mark.parametrize("token", ["sky/", "/sky", "sky/sky", "sky/water/grass"])
    def test_malformed_split_tokens(self, token):
        with pytest.raises(AnnotationError):
            parse_region_file(self._grid_text(token), 10, 10)

    def test_nested_annotation_layout(self, tmp_path):
        sub = tmp_path / "coast"
        sub.mkdir()
        (sub / "a.regions.txt").write_text(self._grid_text("sand"))
        annotations = load_region_annotations(tmp_path)
        assert "coast/a" in annotations.by_image

    def test_roundtrip_preserves_weights(self):
        rng = np.random.default_rng(3)
        rows = []
        for _ in range(10):
            row = []
            for _ in range(10):
                if rng.random() < 0.3:
                    a, b = rng.choice(len(CONCEPTS), size=2, replace=False)
                    row.append({CONCEPTS[a]: 0.5, CONCEPTS[b]: 0.5})
                else:
                    row.append({CONCEPTS[rng.integers(len(CONCEPTS))]: 1.0})
            rows.append(tuple(row))
        grid = tuple(rows)
        parsed = parse_region_file(format_region_grid(grid), 10, 10)
        for row_in, row_out in zip(grid, parsed):
            for cell_in, cell_out in zip(row_in, row_out):
                assert set(cell_in) == set(cell_out)
                for concept, weight in cell_in.items():
                    assert abs(weight - cell_out[concept]) <= 1e-12


def _manifest_with_sizes(tmp_path, sizes: dict[str, int]):
    write_dataset(
        tmp_path,
        {cat: {f"{cat}{i}": _tiny(i) for i in range(n)} for cat, n in sizes.items()},
    )
    return load_manifest(tmp_path)


class TestFolds:
    def test_thirty_images_ten_folds(self, tmp_path):
        manifest = _manifest_with_sizes(tmp_path, {"a": 30, "b": 30})
        plan = split_folds(manifest, 10, seed=1)
        for fold in plan.folds:
            assert len(fold.splits["a"].queries) == 3
            assert len(fold.splits["a"].database) == 27

    def test_thirty_four_images_fold_sizes(self, tmp_path):
        manifest = _manifest_with_sizes(tmp_path, {"sky": 34, "b": 10})
        plan = split_folds(manifest, 10, seed=0)
        sizes = [len(f.splits["sky"].queries) for f in plan.folds]
        assert set(sizes) <= {3, 4}
        assert sum(sizes) == 34
        # remainder images land in the earliest folds
        assert sizes == sorted(sizes, reverse=True)

    def test_partition_property(self, tmp_path):
        manifest = _manifest_with_sizes(tmp_path, {"a": 23, "b": 17})
        plan = split_folds(manifest, 5, seed=9)
        for cat, total in (("a", 23), ("b", 17)):
            pooled = [q for f in plan.folds for q in f.splits[cat].queries]
            assert len(pooled) == total
            assert len(set(pooled)) == total
        for fold in plan.folds:
            for split in fold.splits.values():
                assert not set(split.queries) & set(split.database)
                assert len(split.queries) + len(split.database) == len(
                    set(split.queries) | set(split.database)
                )

    def test_deterministic_plan(self, tmp_path):
        manifest = _manifest_with_sizes(tmp_path, {"a": 12, "b": 15})
        first = format_fold_plan(split_folds(manifest, 10, seed=7))
        second = format_fold_plan(split_folds(manifest, 10, seed=7))
        assert first == second

    def test_seed_changes_plan(self, tmp_path):
        manifest = _manifest_with_sizes(tmp_path, {"a": 12, "b": 15})
        first = format_fold_plan(split_folds(manifest, 10, seed=7))
        second = format_fold_plan(split_folds(manifest, 10, seed=8))
        assert first != second

    def test_category_smaller_than_folds(self, tmp_path):
        manifest = _manifest_with_sizes(tmp_path, {"a": 4, "b": 15})
        with pytest.raises(DataError, match="fewer than"):
            split_folds(manifest, 10, seed=0)

    @given(size_a=st.integers(10, 60), size_b=st.integers(10, 60), seed=st.integers(0, 99))
    @settings(max_examples=15, deadline=None)
    def test_partition_property_random(self, tmp_path_factory, size_a, size_b, seed):
        tmp_path = tmp_path_factory.mktemp("folds")
        manifest = _manifest_with_sizes(tmp_path, {"a": size_a, "b": size_b})
        plan = split_folds(manifest, 10, seed=seed)
        pooled = sorted(q for f in plan.folds for q in f.splits["a"].queries)
        assert pooled == sorted(e.image_id for e in manifest.entries if e.category == "a")
