"""
Tests for AUC computation, the per-machine report and the t-SNE plot.
"""

import logging

import numpy as np
import pandas as pd
import pytest

from evaluation.metrics import anomaly_labels, compute_auc
from evaluation.report import REPORT_COLUMNS, build_report
from evaluation.visualize import TsneConfig, effective_perplexity, embed_2d, emit_tsne_plot
from signal_frontend.audio import MachineCondition
from signal_frontend.manifest import DatasetManifest, ManifestEntry, Split
from utils.errors import EvaluationError


def pairwise_auc(scores, anomalous):
    """O(n^2) pair-counting oracle."""
    scores = np.asarray(scores, dtype=float)
    anomalous = np.asarray(anomalous, dtype=bool)
    diff = scores[anomalous][:, None] - scores[~anomalous][None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size


class TestComputeAuc:
    """Tests for compute_auc."""

    def test_perfect_separation(self):
        assert compute_auc([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1]) == 1.0

    def test_all_equal(self):
        assert compute_auc([0.3] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_hand_counted_pairs(self):
        assert compute_auc([0.1, 0.4, 0.35, 0.8], ["normal", "normal", "anomalous", "anomalous"]) == 0.75

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 201))
            scores = rng.integers(0, 8, n).astype(float)
            labels = rng.integers(0, 2, n)
            if labels.all() or not labels.any():
                continue
            assert compute_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_invariant_under_monotone_map(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal(50)
        labels = rng.integers(0, 2, 50)
        assert compute_auc(np.exp(scores), labels) == pytest.approx(compute_auc(scores, labels))

    def test_negation_complements(self):
        rng = np.random.default_rng(2)
        scores = np.round(rng.standard_normal(40), 1)
        labels = rng.integers(0, 2, 40)
        assert compute_auc(scores, labels) + compute_auc(-scores, labels) == pytest.approx(1.0)

    def test_single_class(self):
        with pytest.raises(EvaluationError, match="both classes"):
            compute_auc([0.1, 0.2], [0, 0])

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError):
            compute_auc([0.1, 0.2, 0.3], [0, 1])

    def test_non_finite_scores(self):
        with pytest.raises(EvaluationError, match="finite"):
            compute_auc([0.1, np.nan], [0, 1])

    def test_label_forms(self):
        assert anomaly_labels([True, 0, "Normal", MachineCondition.ANOMALOUS]).tolist() == [True, False, False, True]
        with pytest.raises(EvaluationError, match="Unknown label"):
            anomaly_labels(["broken"])


def _report_inputs(snr_tag=None):
    """
    Two fan IDs over five normals each. ID 0 wins 9 of 10 pairs on a_maha and
    ID 1 wins 7 of 10; ID 2 has normal test clips only.
    """
    normals = [0.0, 1.0, 2.0, 3.0, 4.0]
    anomalies = {0: [5.0, 3.5], 1: [5.0, 1.5]}
    entries, rows = [], []
    for machine_id in (0, 1):
        for k, value in enumerate(normals):
            path = f"fan/id_{machine_id:02d}/normal_{k}.wav"
            entries.append(ManifestEntry(path, "fan", machine_id, MachineCondition.NORMAL, Split.TEST, snr_tag))
            rows.append({"path": path, "machine_type": "fan", "machine_id": machine_id, "a_maha": value})
        for k, value in enumerate(anomalies[machine_id]):
            path = f"fan/id_{machine_id:02d}/anomaly_{k}.wav"
            entries.append(ManifestEntry(path, "fan", machine_id, MachineCondition.ANOMALOUS, Split.TEST, snr_tag))
            rows.append({"path": path, "machine_type": "fan", "machine_id": machine_id, "a_maha": value})
    entries.append(ManifestEntry("fan/id_02/normal_0.wav", "fan", 2, MachineCondition.NORMAL, Split.TEST, snr_tag))
    rows.append({"path": "fan/id_02/normal_0.wav", "machine_type": "fan", "machine_id": 2, "a_maha": 0.0})
    entries.append(ManifestEntry("fan/id_00/train.wav", "fan", 0, MachineCondition.NORMAL, Split.TRAIN, snr_tag))
    return DatasetManifest(entries=entries), pd.DataFrame(rows)


class TestReport:
    """Tests for build_report and EvalReport."""

    def test_per_id_and_type_mean(self):
        manifest, scores = _report_inputs()
        report = build_report(scores, manifest)
        assert report.auc("fan", 0, "maha") == pytest.approx(0.9)
        assert report.auc("fan", 1, "maha") == pytest.approx(0.7)
        means = report.type_means()
        assert means.loc[means["kind"] == "maha", "auc"].iloc[0] == pytest.approx(0.8)
        assert report.overall()["auc"].iloc[0] == pytest.approx(0.8)

    def test_absent_kinds_are_not_zero(self):
        manifest, scores = _report_inputs()
        report = build_report(scores, manifest)
        assert report.kinds == ("maha",)
        assert set(report.per_id["kind"]) == {"maha"}
        text = report.render()
        assert "80.00" in text
        assert "-" in text
        assert "0.00" not in text.replace("80.00", "").replace("90.00", "").replace("70.00", "")

    def test_single_class_id_skipped(self):
        manifest, scores = _report_inputs()
        report = build_report(scores, manifest)
        assert report.skipped == [("fan", 2)]
        assert 2 not in set(report.per_id["machine_id"])

    def test_matches_oracle_on_all_columns(self):
        manifest, scores = _report_inputs()
        rng = np.random.default_rng(3)
        for column in ("a_out", "a_arc", "combined"):
            scores[column] = rng.integers(0, 4, len(scores)).astype(float)
        report = build_report(scores, manifest)
        assert report.kinds == ("out", "arc", "maha", "combined")
        labels = {e.path: e.is_anomalous for e in manifest.entries}
        for machine_id in (0, 1):
            subset = scores[scores["machine_id"] == machine_id]
            anomalous = subset["path"].map(labels).to_numpy()
            for kind, column in (("out", "a_out"), ("arc", "a_arc"), ("combined", "combined")):
                expected = pairwise_auc(subset[column], anomalous)
                assert report.auc("fan", machine_id, kind) == pytest.approx(expected)

    def test_unscored_clip_named(self):
        manifest, scores = _report_inputs()
        scores = scores[scores["path"] != "fan/id_01/anomaly_1.wav"]
        with pytest.raises(EvaluationError, match="fan/id_01/anomaly_1.wav"):
            build_report(scores, manifest)

    def test_reads_csv(self, tmp_path):
        manifest, scores = _report_inputs()
        path = tmp_path / "scores.csv"
        scores.to_csv(path, index=False)
        assert build_report(path, manifest).auc("fan", 0, "maha") == pytest.approx(0.9)

    def test_missing_csv(self, tmp_path):
        manifest, _ = _report_inputs()
        with pytest.raises(EvaluationError, match="not found"):
            build_report(tmp_path / "absent.csv", manifest)

    def test_to_csv_columns(self, tmp_path):
        manifest, scores = _report_inputs()
        out = build_report(scores, manifest).to_csv(tmp_path / "report" / "auc.csv")
        assert list(pd.read_csv(out).columns) == REPORT_COLUMNS

    def test_snr_breakdown(self):
        manifest, scores = _report_inputs(snr_tag="6dB")
        report = build_report(scores, manifest)
        assert report.has_snr
        assert report.auc("fan", 0, "maha", snr_tag="6dB") == pytest.approx(0.9)
        assert "6dB" in report.render()


@pytest.fixture
def clustered_embeddings():
    """Two machine types with two well-separated ID clusters each."""
    rng = np.random.default_rng(4)
    embeddings, types, ids, anomalous = [], [], [], []
    for t_index, machine_type in enumerate(("fan", "pump")):
        for machine_id in (0, 2):
            center = np.zeros(8)
            center[machine_id + t_index] = 20.0
            embeddings.append(center + rng.standard_normal((15, 8)))
            types += [machine_type] * 15
            ids += [machine_id] * 15
            anomalous += [False] * 12 + [True] * 3
    return np.concatenate(embeddings), types, ids, anomalous


class TestTsnePlot:
    """Tests for emit_tsne_plot."""

    CFG = TsneConfig(perplexity=5.0, max_iter=250, seed=0, dpi=50)

    def test_writes_png(self, tmp_path, clustered_embeddings):
        result = emit_tsne_plot(*clustered_embeddings, tmp_path / "plots" / "tsne.png", self.CFG)
        assert result.path.exists()
        assert result.path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert set(result.coordinates) == {"fan", "pump"}
        assert result.coordinates["fan"].shape == (30, 2)

    def test_same_seed_same_coordinates(self, tmp_path, clustered_embeddings):
        first = emit_tsne_plot(*clustered_embeddings, tmp_path / "a.png", self.CFG)
        second = emit_tsne_plot(*clustered_embeddings, tmp_path / "b.png", self.CFG)
        for machine_type in first.coordinates:
            assert np.allclose(first.coordinates[machine_type], second.coordinates[machine_type])

    def test_id_clusters_stay_apart(self, tmp_path, clustered_embeddings):
        result = emit_tsne_plot(*clustered_embeddings, tmp_path / "tsne.png", self.CFG)
        coords = result.coordinates["fan"]
        a, b = coords[:15], coords[15:]
        spread = max(np.linalg.norm(a - a.mean(0), axis=1).mean(), np.linalg.norm(b - b.mean(0), axis=1).mean())
        assert np.linalg.norm(a.mean(0) - b.mean(0)) > spread

    def test_perplexity_reduced_for_small_panels(self, tmp_path, clustered_embeddings):
        embeddings, types, ids, anomalous = clustered_embeddings
        result = emit_tsne_plot(embeddings, types, ids, anomalous, tmp_path / "tsne.png",
                                self.CFG.model_copy(update={"perplexity": 30.0}))
        assert result.perplexity["fan"] == pytest.approx(29 / 3)

    def test_effective_perplexity(self):
        assert effective_perplexity(100, 30.0) == 30.0
        assert effective_perplexity(10, 30.0) == 3.0
        assert effective_perplexity(3, 30.0) == 1.0

    def test_single_id_rejected(self, tmp_path):
        with pytest.raises(EvaluationError, match="two machine IDs"):
            emit_tsne_plot(np.zeros((5, 4)), ["fan"] * 5, [0] * 5, [False] * 5, tmp_path / "x.png", self.CFG)

    def test_length_mismatch(self, tmp_path):
        with pytest.raises(EvaluationError, match="length"):
            emit_tsne_plot(np.zeros((5, 4)), ["fan"] * 4, [0, 1, 0, 1], [False] * 4, tmp_path / "x.png", self.CFG)

    def test_tiny_panels_are_plotted_with_a_warning(self, tmp_path, caplog):
        rng = np.random.default_rng(3)
        embeddings = rng.standard_normal((3, 4))
        with caplog.at_level(logging.WARNING, logger="evaluation.visualize"):
            result = emit_tsne_plot(embeddings, ["fan", "fan", "pump"], [0, 1, 2], [False, True, False],
                                    tmp_path / "tiny.png", self.CFG)
        assert result.path.exists()
        assert result.coordinates["fan"].shape == (2, 2)
        assert np.all(np.isfinite(result.coordinates["fan"]))
        assert np.array_equal(result.coordinates["pump"], np.zeros((1, 2)))
        assert result.perplexity["fan"] < 2
        assert "single point" in caplog.text

    def test_embed_needs_a_point(self):
        with pytest.raises(EvaluationError, match="at least one point"):
            embed_2d(np.zeros((0, 4)), self.CFG)
