import numpy as np
import pytest

from helpers import write_dataset
from scenebow.dataset import load_manifest, split_folds
from scenebow.errors import DataError
from scenebow.evaluation import (
    EvalReport,
    average_precision,
    export_report,
    format_map_table,
    precision_recall_curve,
    run_benchmark,
)


class TestPrecisionRecallCurve:
    def test_alternating_list(self):
        points = precision_recall_curve([True, False, True, False], 2)
        assert [p.precision for p in points] == [1.0, 0.5, 2 / 3, 0.5]
        assert [p.recall for p in points] == [0.5, 0.5, 1.0, 1.0]
        assert [p.relevant_retrieved for p in points] == [1, 1, 2, 2]

    def test_direct_ratio_substitution(self):
        # 5 relevant among the first 10 of a ranking holding 20 relevant total
        flags = [i % 2 == 0 for i in range(10)] + [True] * 15 + [False] * 5
        points = precision_recall_curve(flags, 20)
        tenth = points[9]
        assert tenth.precision == 5 / 10
        assert tenth.recall == 5 / 20

    def test_all_relevant(self):
        points = precision_recall_curve([True] * 6, 6)
        assert all(p.precision == 1.0 for p in points)

    def test_recall_monotone(self):
        rng = np.random.default_rng(0)
        flags = list(rng.random(30) < 0.4)
        if not any(flags):
            flags[0] = True
        points = precision_recall_curve(flags, sum(flags))
        recalls = [p.recall for p in points]
        assert recalls == sorted(recalls)

    def test_inconsistent_total(self):
        with pytest.raises(ValueError, match="expected"):
            precision_recall_curve([True, False], 2)


class TestAveragePrecision:
    def test_alternating_example(self):
        assert average_precision([True, False, True, False], 2) == (1 + 2 / 3) / 2

    def test_perfect_ranking(self):
        assert average_precision([True] * 5 + [False] * 5, 5) == 1.0

    def test_single_relevant_at_last_rank(self):
        n = 7
        flags = [False] * (n - 1) + [True]
        assert average_precision(flags, 1) == 1 / n

    def test_zero_total_rejected(self):
        with pytest.raises(ValueError):
            average_precision([], 0)

    def test_matches_prefix_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 13))
            flags = list(rng.random(n) < 0.5)
            if not any(flags):
                flags[int(rng.integers(n))] = True
            x = sum(flags)
            oracle = 0.0
            hits = 0
            for rank, flag in enumerate(flags, start=1):
                if flag:
                    hits += 1
                    oracle += hits / rank
            oracle /= x
            assert abs(average_precision(flags, x) - oracle) <= 1e-12

    def test_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            flags = list(rng.random(20) < 0.3)
            if not any(flags):
                flags[0] = True
            ap = average_precision(flags, sum(flags))
            assert 0 < ap <= 1

    def test_consistent_with_curve(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            flags = list(rng.random(15) < 0.4)
            if not any(flags):
                flags[3] = True
            x = sum(flags)
            points = precision_recall_curve(flags, x)
            from_curve = (
                sum(p.precision for p, f in zip(points, flags) if f) / x
            )
            assert from_curve == average_precision(flags, x)


def _make_plan(tmp_path, sizes, n_folds=3, seed=0):
    rng = np.random.default_rng(99)
    write_dataset(
        tmp_path,
        {
            cat: {f"{cat}{i:02d}": rng.random((4, 4, 3)) for i in range(n)}
            for cat, n in sizes.items()
        },
    )
    manifest = load_manifest(tmp_path)
    return manifest, split_folds(manifest, n_folds, seed)


def _orthogonal_features(manifest, dim=12):
    """Category-constant one-hot vectors: perfectly separable."""
    categories = list(manifest.categories)
    vectors = {}
    for entry in manifest.entries:
        v = np.zeros(dim)
        v[categories.index(entry.category)] = 1.0
        vectors[entry.image_id] = v
    return {"synthetic": vectors}


class TestRunBenchmark:
    def test_perfect_separation(self, tmp_path):
        manifest, plan = _make_plan(tmp_path, {"a": 12, "b": 12, "c": 12})
        report = run_benchmark(plan, _orthogonal_features(manifest), ["synthetic"])
        assert all(v == 1.0 for v in report.category_map["synthetic"].values())
        assert report.accuracy["synthetic"] == 1.0

    def test_accuracy_is_mean_of_category_maps(self, tmp_path):
        manifest, plan = _make_plan(tmp_path, {"a": 10, "b": 14, "c": 11})
        rng = np.random.default_rng(5)
        vectors = {e.image_id: rng.random(6) for e in manifest.entries}
        report = run_benchmark(plan, {"x": vectors}, ["x"])
        maps = [report.category_map["x"][c] for c in report.categories]
        assert abs(report.accuracy["x"] - np.mean(maps)) <= 1e-12

    def test_indistinguishable_categories_near_random_baseline(self, tmp_path):
        # two categories share one constant vector; ranking degenerates to the
        # (randomly assigned) id order, so AP should sit near the expectation
        # for a uniformly random interleaving. A manifest file assigns ids with
        # no category prefix so the tie order really interleaves.
        rng = np.random.default_rng(11)
        names = [f"{rng.integers(1e9):09d}" for _ in range(40)]
        images = {
            "a": {names[i]: rng.random((4, 4, 3)) for i in range(20)},
            "b": {names[20 + i]: rng.random((4, 4, 3)) for i in range(20)},
        }
        write_dataset(tmp_path, images)
        lines = [
            f"{name}\t{cat}/{name}.png\t{cat}"
            for cat, files in images.items()
            for name in files
        ]
        (tmp_path / "manifest.tsv").write_text("\n".join(lines) + "\n")
        manifest = load_manifest(tmp_path)
        plan = split_folds(manifest, 4, seed=1)
        constant = np.ones(5)
        vectors = {e.image_id: constant for e in manifest.entries}
        report = run_benchmark(plan, {"flat": vectors}, ["flat"])

        x, y = 15, 15  # per-fold database: 15 relevant, 15 other
        sim_rng = np.random.default_rng(2)
        samples = []
        for _ in range(2000):
            flags = np.zeros(x + y, dtype=bool)
            flags[sim_rng.choice(x + y, size=x, replace=False)] = True
            samples.append(average_precision(list(flags), x))
        lo = np.mean(samples) - 4 * np.std(samples)
        hi = np.mean(samples) + 4 * np.std(samples)
        for category in ("a", "b"):
            assert lo <= report.category_map["flat"][category] <= hi

    def test_missing_vector_raises(self, tmp_path):
        manifest, plan = _make_plan(tmp_path, {"a": 10, "b": 10})
        features = _orthogonal_features(manifest)
        victim = manifest.entries[0].image_id
        del features["synthetic"][victim]
        with pytest.raises(DataError, match=victim):
            run_benchmark(plan, features, ["synthetic"])

    def test_missing_store_raises(self, tmp_path):
        _, plan = _make_plan(tmp_path, {"a": 10, "b": 10})
        with pytest.raises(DataError, match="nope"):
            run_benchmark(plan, {}, ["nope"])

    def test_mixed_dimension_store_raises_data_error(self, tmp_path):
        manifest, plan = _make_plan(tmp_path, {"a": 10, "b": 10})
        rng = np.random.default_rng(4)
        vectors = {e.image_id: rng.random(6) for e in manifest.entries}
        victim = manifest.entries[3].image_id
        vectors[victim] = rng.random(9)
        with pytest.raises(DataError, match="approach 'mixed'"):
            run_benchmark(plan, {"mixed": vectors}, ["mixed"])

    def test_fold_map_recorded(self, tmp_path):
        manifest, plan = _make_plan(tmp_path, {"a": 12, "b": 12})
        report = run_benchmark(plan, _orthogonal_features(manifest), ["synthetic"])
        assert set(report.fold_map["synthetic"]) == {0, 1, 2}
        for per_category in report.fold_map["synthetic"].values():
            assert set(per_category) == {"a", "b"}

    def test_curves_shape(self, tmp_path):
        manifest, plan = _make_plan(tmp_path, {"a": 12, "b": 12})
        report = run_benchmark(plan, _orthogonal_features(manifest), ["synthetic"])
        for category in report.categories:
            points = report.curves["synthetic"][category]
            # database size is 16 for every fold of this layout
            assert len(points) == 16
            recalls = [r for r, _ in points]
            assert recalls == sorted(recalls)
        assert len(report.mean_curves["synthetic"]) == 16


class TestExport:
    def _report(self, tmp_path, n_approaches=2):
        manifest, plan = _make_plan(tmp_path, {"a": 10, "b": 12, "c": 10})
        rng = np.random.default_rng(0)
        features = {}
        for i in range(n_approaches):
            features[f"ap{i}"] = {
                e.image_id: rng.random(4) for e in manifest.entries
            }
        return run_benchmark(plan, features, sorted(features))

    def test_map_table_shape(self, tmp_path):
        report = self._report(tmp_path)
        lines = format_map_table(report).splitlines()
        assert lines[0] == "approach\ta\tb\tc\taccuracy"
        assert len(lines) == 1 + 2
        for line in lines[1:]:
            fields = line.split("\t")
            assert len(fields) == 5
            for value in fields[1:]:
                assert len(value.split(".")[1]) == 4

    def test_fifteen_rows_seven_numeric_columns(self, tmp_path):
        sizes = {c: 10 for c in ("c1", "c2", "c3", "c4", "c5", "c6")}
        manifest, plan = _make_plan(tmp_path, sizes, n_folds=2)
        rng = np.random.default_rng(1)
        names = ["cov"] + [f"a{i:02d}" for i in range(14)]
        features = {
            name: {e.image_id: rng.random(3) for e in manifest.entries}
            for name in names
        }
        report = run_benchmark(plan, features, names)
        lines = format_map_table(report).splitlines()
        assert len(lines) == 1 + 15
        for line in lines[1:]:
            assert len(line.split("\t")) == 1 + 6 + 1

    def test_export_files_and_determinism(self, tmp_path):
        report = self._report(tmp_path / "data")
        out = tmp_path / "report"
        paths = export_report(report, out)
        blobs = {p: p.read_bytes() for p in paths}
        paths_again = export_report(report, out)
        assert paths == paths_again
        for p, blob in blobs.items():
            assert p.read_bytes() == blob
        assert (out / "map_table.tsv").exists()
        assert (out / "report.json").exists()
        assert (out / "pr" / "ap0__a.tsv").exists()
        assert (out / "pr" / "ap0.tsv").exists()

    def test_report_json_roundtrip(self, tmp_path):
        report = self._report(tmp_path)
        loaded = EvalReport.from_json(report.to_json())
        assert loaded.approaches == report.approaches
        assert loaded.categories == report.categories
        assert loaded.accuracy == report.accuracy
        assert loaded.category_map == report.category_map
        assert loaded.curves == report.curves
        assert loaded.to_json() == report.to_json()

    def test_empty_report_rejected(self, tmp_path):
        report = EvalReport(
            approaches=(),
            categories=(),
            category_map={},
            accuracy={},
            fold_map={},
            curves={},
            mean_curves={},
        )
        with pytest.raises(ValueError, match="no approaches"):
            export_report(report, tmp_path)

    def test_benchmark_requires_approaches(self, tmp_path):
        _, plan = _make_plan(tmp_path, {"a": 10, "b": 10})
        with pytest.raises(ValueError, match="no approaches"):
            run_benchmark(plan, {}, [])
