import numpy as np
import pytest

from peerlearn.backbone import (
    BbTrainConfig,
    BeneficialBias,
    ConvLayer,
    FcLayer,
    ToyBackbone,
    bb_loss_and_grads,
    forward,
    forward_batch,
    h2t_accuracy,
    h2t_features,
    head2toe_select,
    load_backbone,
    make_backbone,
    save_backbone,
    train_bb,
    train_head2toe,
)
from peerlearn.dataset import Split, SynthSpec, TaskDataset, synth_task
from peerlearn.errors import EmptySelection, ShapeMismatch
from peerlearn.heads import TrainConfig, accuracy, train_head
from peerlearn.numkit import RngStream


def small_backbone(seed=0):
    return make_backbone((1, 6, 6), conv_channels=(3, 4), fc_widths=(16, 8), seed=seed)


def raw_task(num_classes=3, dim=36, seed=0, train=30, test=20, sep=6.0):
    spec = SynthSpec(num_classes, dim, train, 2, test, separation=sep, std=1.0, seed=seed)
    return synth_task(spec)


class TestForward:
    def test_zero_bias_equals_frozen_output(self):
        bk = small_backbone()
        x = RngStream(1).normals(36)
        e_none, acts_none = forward(bk, None, x)
        e_zero, acts_zero = forward(bk, BeneficialBias.zeros(bk), x)
        np.testing.assert_array_equal(e_none, e_zero)
        for a, b in zip(acts_none, acts_zero):
            np.testing.assert_array_equal(a, b)

    def test_single_fc_identity_bias_shift(self):
        bk = ToyBackbone((4, 1, 1), [FcLayer(np.eye(4), np.zeros(4))])
        bb = BeneficialBias([np.ones(4)])
        embed, _ = forward(bk, bb, np.zeros(4))
        np.testing.assert_array_equal(embed, np.ones(4))

    def test_conv_shift_by_hand(self):
        # hand-convolution oracle on a 4x4 input, one 3x3 kernel
        rng = np.random.default_rng(0)
        kernel = rng.normal(size=(1, 1, 3, 3))
        img = rng.normal(size=(1, 4, 4))
        bk = ToyBackbone((1, 4, 4), [ConvLayer(kernel, np.zeros(1))])
        manual = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                manual[i, j] = np.sum(kernel[0, 0] * img[0, i : i + 3, j : j + 3])
        base, _ = forward(bk, None, img.ravel())
        shifted, _ = forward(bk, BeneficialBias([np.array([0.5])]), img.ravel())
        # single layer == final layer, so no ReLU is applied
        np.testing.assert_allclose(base.reshape(2, 2), manual, atol=1e-12)
        np.testing.assert_allclose(shifted - base, 0.5, atol=1e-12)

    def test_shape_mismatch(self):
        bk = small_backbone()
        with pytest.raises(ShapeMismatch):
            forward(bk, None, np.zeros(7))

    def test_output_affine_in_bias_unit_slope(self):
        # one linear layer: output must be frozen term plus B, slope one
        rng = np.random.default_rng(3)
        bk = ToyBackbone((5, 1, 1), [FcLayer(rng.normal(size=(4, 5)), rng.normal(size=4))])
        x = rng.normal(size=5)
        base, _ = forward(bk, BeneficialBias.zeros(bk), x)
        for trial in range(5):
            b = rng.normal(size=4)
            out, _ = forward(bk, BeneficialBias([b]), x)
            np.testing.assert_allclose(out, base + b, atol=1e-12)

    def test_bias_count_much_smaller_than_weights(self):
        bk = make_backbone()
        assert bk.bias_count == 8 + 16 + 128 + 64
        assert bk.bias_count < bk.weight_count / 10


class TestTrainBb:
    def test_lr_zero_leaves_bias_at_zero(self):
        bk = small_backbone()
        ds = raw_task()
        # momentum 0 so velocity stays zero too
        bb, _ = train_bb(bk, ds, BbTrainConfig(epochs=2, lr=0.0, momentum=0.0, seed=1))
        assert all(np.all(v == 0.0) for v in bb.per_layer)

    def test_frozen_weights_unchanged(self):
        bk = small_backbone()
        before = bk.weights_checksum()
        train_bb(bk, raw_task(), BbTrainConfig(epochs=3, seed=0))
        assert bk.weights_checksum() == before

    def test_gradients_match_finite_differences(self):
        # central-difference oracle over every beneficial bias coordinate
        rng = np.random.default_rng(11)
        for trial in range(3):
            bk = make_backbone((1, 5, 5), (2,), (6,), seed=trial)
            n, c = 6, 3
            x = rng.normal(size=(n, 25))
            y = rng.integers(0, c, n).astype(np.int64)
            head_w = rng.normal(size=(c, bk.embed_dim))
            head_b = rng.normal(size=c)
            flat = rng.normal(size=bk.bias_count) * 0.3
            bb = BeneficialBias.from_flat(bk, flat.copy())
            _, d_bias, _, _ = bb_loss_and_grads(bk, bb, head_w, head_b, x, y)
            analytic = np.concatenate(d_bias)
            step = 1e-5
            numeric = np.zeros_like(flat)
            for i in range(len(flat)):
                fp = flat.copy()
                fp[i] += step
                lp, _, _, _ = bb_loss_and_grads(
                    bk, BeneficialBias.from_flat(bk, fp), head_w, head_b, x, y
                )
                fm = flat.copy()
                fm[i] -= step
                lm, _, _, _ = bb_loss_and_grads(
                    bk, BeneficialBias.from_flat(bk, fm), head_w, head_b, x, y
                )
                numeric[i] = (lp - lm) / (2 * step)
            denom = max(np.linalg.norm(numeric), 1e-12)
            assert np.linalg.norm(analytic - numeric) / denom < 1e-4

    def test_bias_training_beats_head_only_on_shifted_inputs(self):
        # paired-run oracle: same task, same seeds, with and without biases
        bk = small_backbone(seed=2)
        base = raw_task(num_classes=3, seed=4, train=40, test=30, sep=6.0)
        shift = -2.0  # constant input shift; exactly correctable by conv biases

        def shifted(split):
            return Split(split.labels, split.x + shift)

        ds = TaskDataset(
            0,
            base.name,
            base.dim,
            list(base.classes),
            {name: shifted(base.split(name)) for name in ("train", "val", "test")},
        )
        feats_train, _, _ = forward_batch(bk, None, ds.split("train").x)
        feats_test, _, _ = forward_batch(bk, None, ds.split("test").x)
        plain = train_head(
            Split(ds.split("train").labels, feats_train),
            TrainConfig(epochs=20, seed=0),
            num_classes=3,
        )
        plain_acc = accuracy(plain, feats_test, ds.split("test").labels)

        bb, head = train_bb(bk, ds, BbTrainConfig(epochs=20, seed=0))
        emb_test, _, _ = forward_batch(bk, bb, ds.split("test").x)
        bb_acc = accuracy(head, emb_test, ds.split("test").labels)
        assert bb_acc >= plain_acc


class TestHead2Toe:
    def test_fraction_one_selects_all(self):
        bb = BeneficialBias([np.array([0.5, -1.0]), np.array([2.0])])
        assert head2toe_select(bb, 1.0) == [0, 1, 2]

    def test_paper_scale_count(self):
        # 17,472 biases at 1% -> ceil(174.72) = 175 indices
        bb = BeneficialBias([np.arange(17472, dtype=np.float64)])
        assert len(head2toe_select(bb, 0.01)) == 175

    def test_all_zero_ties_take_lowest_indices(self):
        bb = BeneficialBias([np.zeros(10)])
        assert head2toe_select(bb, 0.25) == [0, 1, 2]

    def test_largest_magnitude_wins(self):
        bb = BeneficialBias([np.array([0.1, -5.0, 2.0, 0.0])])
        assert head2toe_select(bb, 0.5) == [1, 2]

    def test_empty_selection_rejected(self):
        bk = small_backbone()
        bb = BeneficialBias.zeros(bk)
        with pytest.raises(EmptySelection):
            train_head2toe(bk, bb, [], raw_task())

    def test_loss_decreases_over_first_adam_steps(self):
        bk = small_backbone(seed=1)
        ds = raw_task(seed=6)
        bb, _ = train_bb(bk, ds, BbTrainConfig(epochs=3, seed=0))
        trace = []
        train_head2toe(
            bk, bb, head2toe_select(bb, 1.0), ds, epochs=2, batch_size=1000,
            loss_trace=trace,
        )
        assert trace[1] < trace[0]
        # overall downward trend over the first steps
        assert min(trace[1:4]) < trace[0]

    def test_full_selection_at_least_head_accuracy(self):
        bk = small_backbone(seed=3)
        ds = raw_task(num_classes=3, seed=9, train=40, test=30)
        bb, _ = train_bb(bk, ds, BbTrainConfig(epochs=10, seed=0))
        feats_train, _, _ = forward_batch(bk, bb, ds.split("train").x)
        feats_test, _, _ = forward_batch(bk, bb, ds.split("test").x)
        head = train_head(
            Split(ds.split("train").labels, feats_train),
            TrainConfig(epochs=30, seed=0),
            num_classes=3,
        )
        head_acc = accuracy(head, feats_test, ds.split("test").labels)
        h2t = train_head2toe(bk, bb, head2toe_select(bb, 1.0), ds, epochs=100)
        acc = h2t_accuracy(bk, bb, h2t, ds.split("test").x, ds.split("test").labels)
        assert acc >= head_acc - 0.01

    def test_h2t_feature_layout(self):
        bk = small_backbone()
        bb = BeneficialBias.zeros(bk)
        selected = [0, 5, 10]
        feats = h2t_features(bk, bb, selected, RngStream(0).normals(36))
        assert feats.shape == (1, len(selected) + bk.embed_dim)


class TestWire:
    def test_backbone_roundtrip(self, tmp_path):
        bk = small_backbone(seed=5)
        x = RngStream(3).normals(36)
        save_backbone(bk, tmp_path / "bk.tbb")
        back = load_backbone(tmp_path / "bk.tbb")
        e1, _ = forward(bk, None, x)
        e2, _ = forward(back, None, x)
        np.testing.assert_allclose(e1, e2, atol=1e-6)

    def test_bb_bytes_length(self):
        bk = small_backbone()
        bb = BeneficialBias.zeros(bk)
        assert len(bb.to_bytes()) == 4 * bk.bias_count
