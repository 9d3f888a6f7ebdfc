"""Item parsing, frame angle, DTW against path enumeration, ABX against
brute-force triple enumeration."""

import math

import numpy as np
import pytest

from cpclab import ItemRecord, abx_score, dtw_distance, frame_angle, load_items
from cpclab.abx import _angle_matrix, score_item_file, write_report_csv, write_report_json
from cpclab.errors import AbxError, ItemFileError

from oracles import brute_force_abx_error, enumerate_dtw


class TestLoadItems:
    def test_parses_valid_lines(self, tmp_path):
        path = tmp_path / "dev.item"
        path.write_text(
            "#file onset offset #phone prev-phone next-phone speaker\n"
            "utt1 0.25 0.61 e b t spk1\n"
            "utt1 1.10 1.45 i b t spk1\n"
            "utt2 0.05 0.40 e b t spk2\n"
        )
        records = load_items(path)
        assert len(records) == 3
        assert records[0] == ItemRecord("utt1", 0.25, 0.61, "e", "b", "t", "spk1")

    def test_onset_after_offset(self, tmp_path):
        path = tmp_path / "bad.item"
        path.write_text("#header\nutt1 2.0 1.5 e b t spk1\n")
        with pytest.raises(ItemFileError, match="bad.item:2"):
            load_items(path)

    def test_wrong_field_count(self, tmp_path):
        path = tmp_path / "short.item"
        path.write_text("#header\nutt1 0.0 1.0 e b\n")
        with pytest.raises(ItemFileError, match="expected 7 fields"):
            load_items(path)

    def test_empty_after_header(self, tmp_path):
        path = tmp_path / "empty.item"
        path.write_text("#file onset offset #phone prev-phone next-phone speaker\n")
        assert load_items(path) == []


class TestFrameAngle:
    def test_identical_vectors(self):
        v = np.array([1.0, 2.0, 3.0])
        assert frame_angle(v, v) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self):
        assert frame_angle(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(
            math.pi / 2
        )

    def test_opposite(self):
        v = np.array([0.5, -0.25])
        assert frame_angle(v, -v) == pytest.approx(math.pi)

    def test_zero_vector_convention(self):
        assert frame_angle(np.zeros(3), np.array([1.0, 0.0, 0.0])) == math.pi / 2


def random_features(rng, t=None, d=4):
    t = t if t is not None else int(rng.integers(1, 7))
    return rng.standard_normal((t, d))


class TestDtw:
    def test_self_distance_zero(self):
        rng = np.random.default_rng(0)
        x = random_features(rng, 5)
        assert dtw_distance(x, x) == 0.0

    def test_single_frames_reduce_to_angle(self):
        u = np.array([1.0, 0.0, 0.5])
        v = np.array([0.2, -0.7, 0.1])
        assert dtw_distance(u[None], v[None]) == pytest.approx(frame_angle(u, v))

    def test_matches_path_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = random_features(rng)
            y = random_features(rng)
            cost, length = enumerate_dtw(_angle_matrix(x, y))
            assert dtw_distance(x, y) == pytest.approx(cost / length, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = random_features(rng)
            y = random_features(rng)
            assert dtw_distance(x, y) == pytest.approx(dtw_distance(y, x), abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            d = dtw_distance(random_features(rng), random_features(rng))
            assert 0.0 <= d <= math.pi

    def test_max_len_normalization(self):
        rng = np.random.default_rng(4)
        x = random_features(rng, 3)
        y = random_features(rng, 5)
        cost, length = enumerate_dtw(_angle_matrix(x, y))
        assert dtw_distance(x, y, normalize="max_len") == pytest.approx(cost / 5)

    def test_empty_rejected(self):
        with pytest.raises(AbxError):
            dtw_distance(np.zeros((0, 3)), np.zeros((2, 3)))


def synthetic_item_set(seed=0, n_extra=0):
    """12 segments: 2 speakers x centers (e x2, i x1, o x2, u x1), one context."""
    rng = np.random.default_rng(seed)
    records, feats = [], []
    for spk in ("s1", "s2"):
        for center, copies in (("e", 2), ("i", 1), ("o", 2), ("u", 1)):
            for i in range(copies):
                records.append(ItemRecord(f"{spk}_{center}{i}", 0.0, 1.0, center, "b", "t", spk))
                feats.append(rng.standard_normal((int(rng.integers(2, 6)), 4)))
    for j in range(n_extra):
        spk = f"s{1 + j % 3}"
        center = "eiou"[j % 4]
        ctx = ("b", "t") if j % 2 == 0 else ("d", "k")
        records.append(ItemRecord(f"x{j}", 0.0, 1.0, center, ctx[0], ctx[1], spk))
        feats.append(rng.standard_normal((int(rng.integers(2, 6)), 4)))
    return feats, records


class TestAbxScore:
    def test_perfect_separation(self):
        # same-center segments identical, different centers orthogonal
        basis = np.eye(4)
        feats, records = [], []
        for spk in ("s1", "s2"):
            for ci, center in enumerate(("e", "i")):
                for copy in range(2):
                    records.append(
                        ItemRecord(f"{spk}{center}{copy}", 0.0, 1.0, center, "b", "t", spk)
                    )
                    feats.append(np.tile(basis[ci], (3, 1)))
        for mode in ("within", "across"):
            report = abx_score(feats, records, mode)
            assert report.error_rate == pytest.approx(0.0, abs=1e-12)

    def test_all_identical_gives_chance(self):
        frames = np.ones((4, 3))
        feats, records = [], []
        for spk in ("s1", "s2"):
            for center in ("e", "i"):
                for copy in range(2):
                    records.append(
                        ItemRecord(f"{spk}{center}{copy}", 0.0, 1.0, center, "b", "t", spk)
                    )
                    feats.append(frames.copy())
        for mode in ("within", "across"):
            report = abx_score(feats, records, mode)
            assert report.error_rate == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("mode", ["within", "across"])
    def test_matches_brute_force_12_segments(self, mode):
        feats, records = synthetic_item_set(seed=5)
        report = abx_score(feats, records, mode)
        cache = {}

        def distance(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                cache[key] = dtw_distance(feats[i], feats[j])
            return cache[key]

        expected = brute_force_abx_error(records, distance, mode)
        assert report.error_rate == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("mode", ["within", "across"])
    def test_matches_brute_force_larger_set(self, mode):
        feats, records = synthetic_item_set(seed=6, n_extra=30)
        report = abx_score(feats, records, mode)
        cache = {}

        def distance(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                cache[key] = dtw_distance(feats[i], feats[j])
            return cache[key]

        expected = brute_force_abx_error(records, distance, mode)
        assert report.error_rate == pytest.approx(expected, abs=1e-12)

    def test_rotation_invariance(self):
        feats, records = synthetic_item_set(seed=7)
        rng = np.random.default_rng(8)
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        rotated = [f @ q.T for f in feats]
        for mode in ("within", "across"):
            base = abx_score(feats, records, mode)
            turned = abx_score(rotated, records, mode)
            assert turned.error_rate == pytest.approx(base.error_rate, abs=1e-9)

    def test_scale_invariance(self):
        feats, records = synthetic_item_set(seed=9)
        scaled = [3.7 * f for f in feats]
        for mode in ("within", "across"):
            assert abx_score(scaled, records, mode).error_rate == pytest.approx(
                abx_score(feats, records, mode).error_rate, abs=1e-12
            )

    def test_threads_do_not_change_result(self):
        feats, records = synthetic_item_set(seed=10, n_extra=10)
        serial = abx_score(feats, records, "across", threads=1)
        threaded = abx_score(feats, records, "across", threads=4)
        assert serial.error_rate == threaded.error_rate
        assert serial.cells == threaded.cells

    def test_error_recomputable_from_breakdown(self):
        feats, records = synthetic_item_set(seed=11, n_extra=8)
        report = abx_score(feats, records, "within")
        by_pair_spk = {}
        for cell in report.cells:
            by_pair_spk.setdefault((cell.phone_pair, cell.speakers), []).append(cell.score)
        by_pair = {}
        for (pair, _spk), scores in by_pair_spk.items():
            by_pair.setdefault(pair, []).append(sum(scores) / len(scores))
        pair_scores = [sum(s) / len(s) for s in by_pair.values()]
        assert 1.0 - sum(pair_scores) / len(pair_scores) == pytest.approx(
            report.error_rate, abs=1e-12
        )

    def test_no_valid_triples(self):
        records = [ItemRecord("u", 0.0, 1.0, "e", "b", "t", "s1")]
        with pytest.raises(AbxError):
            abx_score([np.ones((2, 3))], records, "within")


class TestItemFileScoring:
    def test_end_to_end_with_feature_files(self, tmp_path):
        from cpclab.featio import write_features
        from cpclab.model import FeatureSequence
        from cpclab.synth import write_item_file

        feats, records = synthetic_item_set(seed=12)
        for rec, f in zip(records, feats):
            # frame_rate = T so the [0.0, 1.0) item span covers every frame
            write_features(
                tmp_path / "feats", rec.file_id, FeatureSequence(f, float(len(f)), "c")
            )
        items_path = tmp_path / "dev.item"
        write_item_file(items_path, records)
        direct = abx_score([f.astype(np.float32) for f in feats], records, "within")
        from_files = score_item_file(tmp_path / "feats", items_path, "within")
        assert from_files.error_rate == pytest.approx(direct.error_rate, abs=1e-9)

    def test_missing_features(self, tmp_path):
        from cpclab.synth import write_item_file

        _feats, records = synthetic_item_set(seed=13)
        items_path = tmp_path / "dev.item"
        write_item_file(items_path, records)
        (tmp_path / "feats").mkdir()
        with pytest.raises(AbxError, match="no features"):
            score_item_file(tmp_path / "feats", items_path, "within")

    def test_report_writers(self, tmp_path):
        import csv as csv_mod
        import json

        feats, records = synthetic_item_set(seed=14)
        report = abx_score(feats, records, "within")
        write_report_json(report, tmp_path / "r.json")
        write_report_csv(report, tmp_path / "r.csv")
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["error_rate"] == report.error_rate
        assert len(doc["cells"]) == len(report.cells)
        with open(tmp_path / "r.csv") as fh:
            rows = list(csv_mod.reader(fh))
        assert rows[0][0] == "phone_a"
        assert rows[-1][0] == "TOTAL"
