import numpy as np
import pytest

from peerlearn.dataset import GlobalClassRegistry
from peerlearn.errors import CountMismatch, TaskNeverLearned, ZeroNormEmbedding
from peerlearn.evaluate import (
    Checkpoint,
    RunHistory,
    corrective_accuracy,
    line_zero_crossing,
    mapper_accuracy_curve,
    normalized_accuracy,
    plain_accuracy,
    read_lbl1,
    similarity_from_embeddings,
    similarity_matrix,
    write_lbl1,
)


def vec_for(names_to_angles):
    """Embeddings on the unit circle at given angles (degrees)."""
    out = []
    for angle in names_to_angles:
        rad = np.deg2rad(angle)
        out.append([np.cos(rad), np.sin(rad)])
    return np.array(out)


class TestSimilarity:
    def test_identical_embeddings(self):
        sims = similarity_from_embeddings(np.array([[1.0, 0.0], [1.0, 0.0]]))
        assert sims.similarity(0, 1) == pytest.approx(1.0)

    def test_orthogonal(self):
        sims = similarity_from_embeddings(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert sims.similarity(0, 1) == pytest.approx(0.0, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(ZeroNormEmbedding):
            similarity_from_embeddings(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(0)
        sims = similarity_from_embeddings(rng.normal(size=(6, 4)))
        m = sims.matrix
        np.testing.assert_allclose(m, m.T)
        np.testing.assert_allclose(np.diag(m), 1.0)
        assert m.min() >= -1.0 and m.max() <= 1.0

    def test_lbl1_roundtrip_and_registry_alignment(self, tmp_path):
        registry = GlobalClassRegistry()
        registry.add_task(0, ["bike", "car"])
        registry.add_task(1, ["bicycle"])
        # bike and bicycle nearly parallel -> similarity above 0.90
        names = ["bike", "car", "bicycle"]
        emb = vec_for([0.0, 90.0, 10.0])
        path = tmp_path / "labels.lbl1"
        write_lbl1(path, names, emb)
        back_names, back_emb = read_lbl1(path)
        assert back_names == names
        np.testing.assert_allclose(back_emb, emb, atol=1e-7)
        sims = similarity_matrix(path, registry)
        gi = registry.global_index(0, 0)  # bike
        gj = registry.global_index(1, 0)  # bicycle
        assert sims.similarity(gi, gj) > 0.90
        assert sims.similarity(gi, registry.global_index(0, 1)) < 0.1

    def test_missing_class_embedding(self, tmp_path):
        registry = GlobalClassRegistry()
        registry.add_task(0, ["a", "b"])
        path = tmp_path / "labels.lbl1"
        write_lbl1(path, ["a"], np.array([[1.0, 0.0]]))
        with pytest.raises(CountMismatch):
            similarity_matrix(path, registry)


class TestCorrective:
    def _setup(self):
        registry = GlobalClassRegistry()
        registry.add_task(0, ["kitchen", "garage"])
        registry.add_task(1, ["Kitchen"])
        emb = vec_for([0.0, 90.0, 2.0])  # kitchen ~ Kitchen at cos(2deg) ~ 0.9994
        sims = similarity_from_embeddings(emb)
        return registry, sims

    def test_theta_one_distinct_names_is_plain(self):
        registry, sims = self._setup()
        preds = [(0, 0), (0, 1)]
        truth = [(0, 0), (0, 0)]
        assert corrective_accuracy(preds, truth, sims, 1.0, registry) == plain_accuracy(
            preds, truth
        )

    def test_wrong_task_equivalent_name_counts(self):
        registry, sims = self._setup()
        preds = [(1, 0)]  # predicted "Kitchen" from the other task
        truth = [(0, 0)]  # true class "kitchen"
        assert plain_accuracy(preds, truth) == 0.0
        assert corrective_accuracy(preds, truth, sims, 0.95, registry) == 1.0

    def test_corrective_never_below_plain(self):
        registry, sims = self._setup()
        rng = np.random.default_rng(1)
        classes = registry.entries()
        preds = [classes[rng.integers(0, 3)][:2] for _ in range(50)]
        truth = [classes[rng.integers(0, 3)][:2] for _ in range(50)]
        for theta in (0.5, 0.9, 0.95, 1.0):
            assert corrective_accuracy(preds, truth, sims, theta, registry) >= plain_accuracy(
                preds, truth
            )

    def test_monotone_in_theta(self):
        registry, sims = self._setup()
        preds = [(1, 0), (0, 1), (0, 0)]
        truth = [(0, 0), (0, 0), (0, 0)]
        accs = [
            corrective_accuracy(preds, truth, sims, theta, registry)
            for theta in (1.0, 0.95, 0.5, 0.0)
        ]
        assert all(a <= b for a, b in zip(accs, accs[1:]))


def history_of(per_task_rows, mapper=None):
    """per_task_rows: list per checkpoint of {task: (acc, forced)}."""
    h = RunHistory()
    for i, row in enumerate(per_task_rows):
        h.add(
            Checkpoint(
                i + 1,
                sorted(row),
                {t: v[0] for t, v in row.items()},
                {t: v[1] for t, v in row.items()},
                1.0 if mapper is None else mapper[i],
            )
        )
    return h


class TestNormalizedAccuracy:
    def test_starts_at_one(self):
        h = history_of([
            {0: (0.8, 0.8)},
            {0: (0.6, 0.8), 1: (0.9, 0.9)},
        ])
        assert normalized_accuracy(h, 0)[0] == 1.0
        assert normalized_accuracy(h, 1) == [1.0]

    def test_values_are_ratios(self):
        h = history_of([
            {0: (0.8, 0.8)},
            {0: (0.4, 0.8), 1: (0.9, 0.9)},
        ])
        np.testing.assert_allclose(normalized_accuracy(h, 0), [1.0, 0.5])

    def test_forced_mapper_flat_curve(self):
        h = history_of([
            {0: (0.8, 0.75)},
            {0: (0.5, 0.75), 1: (0.9, 0.9)},
            {0: (0.4, 0.75), 1: (0.7, 0.9), 2: (1.0, 1.0)},
        ])
        np.testing.assert_allclose(normalized_accuracy(h, 0, forced=True), [1.0, 1.0, 1.0])

    def test_never_learned(self):
        h = history_of([{0: (1.0, 1.0)}])
        with pytest.raises(TaskNeverLearned):
            normalized_accuracy(h, 3)


class TestMapperCurve:
    def test_constant_curve_no_crossing(self):
        h = history_of([{0: (1, 1)}, {0: (1, 1), 1: (1, 1)}], mapper=[0.9, 0.9])
        curve = mapper_accuracy_curve(h)
        assert curve.slope == pytest.approx(0.0, abs=1e-12)
        assert curve.zero_crossing is None

    def test_two_points_hand_ols(self):
        h = history_of([{0: (1, 1)}, {0: (1, 1), 1: (1, 1)}], mapper=[1.0, 0.9])
        curve = mapper_accuracy_curve(h)
        assert curve.slope == pytest.approx(-0.1, abs=1e-12)
        assert curve.intercept == pytest.approx(1.1, abs=1e-12)
        assert curve.zero_crossing == pytest.approx(11.0, abs=1e-9)

    def test_reference_line_parameters(self):
        # fitted decline of -0.0012/task from 0.952 crosses zero near 793,
        # not at the often-quoted 800; both belong in the report
        crossing = line_zero_crossing(-0.0012, 0.952)
        assert crossing == pytest.approx(793.333, abs=0.01)
        assert round(crossing) != 800
