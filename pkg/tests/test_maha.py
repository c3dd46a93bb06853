import numpy as np
import pytest

from peerlearn.dataset import Split, SynthSpec, synth_task
from peerlearn.errors import DuplicateTask, EmptyClass, NotFinalized
from peerlearn.maha import (
    MahaBank,
    MahaTeacherShare,
    class_means,
    fit_tied_covariance,
    map_task_maha,
    sample_shared,
    share_from_bytes,
    share_to_bytes,
    share_wire_size,
)


def share_of(task_id, means, exemplars, m=None):
    names = [f"t{task_id}c{i}" for i in range(len(means))]
    m = m if m is not None else max(len(e) for e in exemplars)
    return MahaTeacherShare(
        task_id, names, np.asarray(means, dtype=np.float64),
        [np.asarray(e, dtype=np.float64) for e in exemplars], m,
    )


class TestClassMeans:
    def test_single_sample_classes(self):
        split = Split(np.array([0, 1]), np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(class_means(split, 2), [[1, 2], [3, 4]])

    def test_hand_mean(self):
        split = Split(np.array([0, 0]), np.array([[0.0, 0.0], [2.0, 4.0]]))
        np.testing.assert_array_equal(class_means(split, 1), [[1.0, 2.0]])

    def test_missing_class(self):
        split = Split(np.array([0, 0]), np.zeros((2, 2)))
        with pytest.raises(EmptyClass):
            class_means(split, 2)


class TestSampleShared:
    def _dataset(self, n_per=8, seed=0):
        return synth_task(SynthSpec(3, 4, n_per, 1, 1, separation=4.0, std=1.0, seed=seed))

    def test_m_larger_than_class_takes_all(self):
        ds = self._dataset(n_per=3)
        share = sample_shared(ds, m=10, seed=1)
        for c in range(3):
            assert share.exemplars[c].shape[0] == 3

    def test_default_m_is_five(self):
        ds = self._dataset(n_per=8)
        share = sample_shared(ds, seed=0)
        assert share.m == 5
        assert all(e.shape[0] == 5 for e in share.exemplars)

    def test_deterministic(self):
        ds = self._dataset()
        a = sample_shared(ds, m=4, seed=3)
        b = sample_shared(ds, m=4, seed=3)
        for ea, eb in zip(a.exemplars, b.exemplars):
            assert ea.tobytes() == eb.tobytes()

    def test_exemplars_drawn_without_replacement(self):
        ds = self._dataset(n_per=6)
        share = sample_shared(ds, m=6, seed=2)
        for e in share.exemplars:
            assert len({row.tobytes() for row in e}) == 6

    def test_means_are_full_split_means(self):
        ds = self._dataset()
        share = sample_shared(ds, m=2, seed=0)
        np.testing.assert_allclose(
            share.means, class_means(ds.split("train"), 3)
        )


class TestTiedCovariance:
    def test_single_exemplar_classes_ridge_only(self):
        share = share_of(0, [[0.0, 0.0], [5.0, 5.0]], [[[0.0, 0.0]], [[5.0, 5.0]]])
        bank = fit_tied_covariance([share])
        assert bank.epsilon == pytest.approx(1e-6)
        np.testing.assert_allclose(bank.covariance, np.zeros((2, 2)))

    def test_hand_1d_scatter(self):
        share = share_of(
            0,
            [[0.0], [3.0]],
            [[[-1.0], [1.0]], [[2.0], [4.0]]],
        )
        bank = fit_tied_covariance([share], epsilon=0.0)
        assert bank.covariance[0, 0] == pytest.approx(1.0)

    def test_duplicating_exemplars_leaves_covariance_unchanged(self):
        rng = np.random.default_rng(0)
        ex = [rng.normal(size=(4, 3)), rng.normal(size=(4, 3)) + 2.0]
        means = [e.mean(axis=0) for e in ex]
        bank1 = fit_tied_covariance([share_of(0, means, ex)], epsilon=0.0)
        doubled = [np.concatenate([e, e]) for e in ex]
        bank2 = fit_tied_covariance([share_of(0, means, doubled)], epsilon=0.0)
        np.testing.assert_allclose(bank1.covariance, bank2.covariance, atol=1e-12)

    def test_arrival_order_invariant(self):
        rng = np.random.default_rng(1)
        shares = [
            share_of(t, [rng.normal(size=3) * 3.0], [rng.normal(size=(5, 3))])
            for t in range(4)
        ]
        b1 = fit_tied_covariance(list(shares))
        b2 = fit_tied_covariance(list(reversed(shares)))
        np.testing.assert_array_equal(b1.covariance, b2.covariance)
        q = rng.normal(size=(10, 3))
        np.testing.assert_array_equal(b1.map_tasks(q), b2.map_tasks(q))

    def test_duplicate_task_rejected(self):
        share = share_of(0, [[0.0]], [[[0.0]]])
        bank = MahaBank()
        bank.add_share(share)
        with pytest.raises(DuplicateTask):
            bank.add_share(share)

    def test_not_finalized(self):
        bank = MahaBank()
        bank.add_share(share_of(0, [[0.0]], [[[0.0]]]))
        with pytest.raises(NotFinalized):
            bank.map_task(np.array([0.0]))


class TestMapTask:
    def test_identity_covariance_is_nearest_mean(self):
        means = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        owners = [(0, 0), (1, 0), (2, 0)]
        bank = MahaBank.from_parameters(owners, means, np.eye(2))
        rng = np.random.default_rng(5)
        for _ in range(200):
            x = rng.normal(size=2) * 4.0
            got_task, _ = map_task_maha(bank, x)
            oracle = int(np.argmin(((means - x) ** 2).sum(axis=1)))
            assert got_task == owners[oracle][0]

    def test_query_at_mean_returns_it(self):
        means = np.array([[1.0, 2.0], [3.0, -1.0]])
        bank = MahaBank.from_parameters([(0, 0), (0, 1)], means, np.eye(2))
        assert bank.map_task(means[1]) == (0, 1)
        assert bank.distances(means[1])[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_anisotropic_quadratic_form_oracle(self):
        # covariance diag(1, 100): the y-direction barely counts
        means = np.array([[1.0, 0.0], [0.0, 3.0]])
        cov = np.diag([1.0, 100.0])
        bank = MahaBank.from_parameters([(0, 0), (1, 0)], means, cov)
        x = np.array([0.9, 1.0])
        d_manual = [
            (x - m) @ np.linalg.inv(cov) @ (x - m) for m in means
        ]
        assert d_manual[0] == pytest.approx(0.01 + 0.01)
        assert d_manual[1] == pytest.approx(0.81 + 0.04)
        assert bank.map_task(x)[0] == 0
        np.testing.assert_allclose(bank.distances(x)[0], d_manual, rtol=1e-10)

    def test_affine_invariance(self):
        rng = np.random.default_rng(7)
        d = 4
        means = rng.normal(size=(3, d)) * 2.0
        m = rng.normal(size=(d, d))
        cov = m @ m.T + np.eye(d)
        owners = [(0, 0), (0, 1), (1, 0)]
        bank = MahaBank.from_parameters(owners, means, cov)
        a = rng.normal(size=(d, d)) + 2 * np.eye(d)  # invertible w.p. 1
        b = rng.normal(size=d)
        bank_t = MahaBank.from_parameters(
            owners, means @ a.T + b, a @ cov @ a.T
        )
        for _ in range(50):
            x = rng.normal(size=d) * 3.0
            d0 = bank.distances(x)[0]
            d1 = bank_t.distances(a @ x + b)[0]
            np.testing.assert_allclose(d0, d1, rtol=1e-8)

    def test_tie_breaks_canonical(self):
        means = np.array([[-1.0], [1.0]])
        bank = MahaBank.from_parameters([(3, 0), (5, 0)], means, np.eye(1))
        assert bank.map_task(np.array([0.0])) == (3, 0)


class TestWire:
    def test_roundtrip(self):
        ds = synth_task(SynthSpec(2, 3, 6, 1, 1, separation=3.0, std=1.0, seed=8), task_id=2)
        share = sample_shared(ds, m=4, seed=1)
        buf = share_to_bytes(share)
        assert len(buf) == share_wire_size(2, 3, 4)
        back = share_from_bytes(buf, share.class_names)
        assert back.task_id == 2 and back.m == 4
        np.testing.assert_allclose(back.means, share.means, atol=1e-6)
        for ea, eb in zip(back.exemplars, share.exemplars):
            np.testing.assert_allclose(ea, eb, atol=1e-6)

    def test_ragged_share_not_serializable(self):
        share = share_of(0, [[0.0], [1.0]], [[[0.0]], [[1.0], [2.0]]], m=2)
        with pytest.raises(ValueError):
            share_to_bytes(share)


class TestSingular:
    def test_zero_scatter_with_zero_ridge_rejected(self):
        from peerlearn.errors import SingularAfterRegularization

        share = share_of(0, [[0.0, 0.0]], [[[0.0, 0.0]]])
        with pytest.raises(SingularAfterRegularization):
            fit_tied_covariance([share], epsilon=0.0)
