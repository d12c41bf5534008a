"""Classifier transfer, probes, sweeps, and unit visualization."""

import json

import numpy as np
import pytest

from tinyvidgan.checkpoint import checkpoint_from_networks, save_checkpoint
from tinyvidgan.datasets import action_dataset
from tinyvidgan.engine import ConvSpec, SplitMix64, Tensor, conv3d, dropout
from tinyvidgan.nets import Discriminator, NetConfig
from tinyvidgan.replearn import (
    ClipClassifier,
    FinetuneConfig,
    LabeledClipSet,
    SweepCell,
    SweepResult,
    accuracy,
    check_disjoint,
    data_fraction_sweep,
    finetune,
    fit_logistic,
    linear_probe,
    load_pretrained_discriminator,
    penultimate_features,
    predict_logistic,
    receptive_field_box,
    save_unit_report,
    stratified_indices,
    visualize_unit,
)
from tinyvidgan.training import parameter_digest


@pytest.fixture(scope="module")
def toy_task():
    clips, labels = action_dataset(24, seed=5)
    train = LabeledClipSet(clips[:64], labels[:64], "train",
                           ids=np.arange(64))
    test = LabeledClipSet(clips[64:], labels[64:], "test",
                          ids=np.arange(64, 96))
    return train, test


class TestLabeledClipSet:
    def test_shape_validated(self):
        with pytest.raises(ValueError):
            LabeledClipSet(np.zeros((2, 1, 8, 16, 16), np.float32),
                           np.zeros(2, np.int64))

    def test_label_count_mismatch(self):
        with pytest.raises(ValueError):
            LabeledClipSet(np.zeros((2, 3, 8, 16, 16), np.float32),
                           np.zeros(3, np.int64))

    def test_negative_labels_rejected(self):
        with pytest.raises(ValueError):
            LabeledClipSet(np.zeros((2, 3, 8, 16, 16), np.float32),
                           np.array([0, -1]))

    def test_split_tag_validated(self):
        with pytest.raises(ValueError):
            LabeledClipSet(np.zeros((1, 3, 8, 16, 16), np.float32),
                           np.zeros(1, np.int64), split="val")

    def test_overlapping_ids_rejected(self):
        clips = np.zeros((2, 3, 8, 16, 16), np.float32)
        labels = np.zeros(2, np.int64)
        a = LabeledClipSet(clips, labels, "train", ids=np.array([0, 1]))
        b = LabeledClipSet(clips, labels, "test", ids=np.array([1, 2]))
        with pytest.raises(ValueError):
            check_disjoint(a, b)


class TestFinetune:
    def test_random_init_learns_toy_task(self, toy_task):
        train, test = toy_task
        res = finetune(None, train, test, 4,
                       config=FinetuneConfig(steps=80, seed=0))
        assert res.accuracy > 0.9
        assert res.losses[-1] < res.losses[0]

    def test_chance_level_with_uniform_logits(self, toy_task):
        _, test = toy_task
        clf = ClipClassifier(NetConfig(scale_factor=0.25), 4, seed=1)
        clf.layers[-1].w.data[:] = 0.0
        clf.layers[-1].b.data[:] = 0.0
        assert abs(accuracy(clf, test) - 0.25) <= 0.05

    def test_eval_predictions_deterministic(self, toy_task):
        train, test = toy_task
        clf = ClipClassifier(NetConfig(scale_factor=0.25), 4, seed=2)
        assert np.array_equal(clf.predict(test.clips), clf.predict(test.clips))

    def test_dropout_active_in_train_mode_only(self):
        clf = ClipClassifier(NetConfig(scale_factor=0.25), 4, seed=3,
                             dropout_rate=0.5)
        x = Tensor(np.random.default_rng(0).uniform(
            -1, 1, (2, 3, 8, 16, 16)).astype(np.float32))
        a = clf.forward(x, "train").data
        b = clf.forward(x, "train").data
        assert not np.array_equal(a, b)
        c = clf.forward(x, "eval").data
        d = clf.forward(x, "eval").data
        assert np.array_equal(c, d)

    def test_label_out_of_range(self, toy_task):
        train, test = toy_task
        bad = LabeledClipSet(train.clips[:4], np.array([0, 1, 2, 7]),
                             "train", ids=train.ids[:4])
        with pytest.raises(ValueError):
            finetune(None, bad, test, 4)

    def test_empty_split(self, toy_task):
        train, _ = toy_task
        empty = LabeledClipSet(np.zeros((0, 3, 8, 16, 16), np.float32),
                               np.zeros(0, np.int64), "test",
                               ids=np.zeros(0, np.int64))
        with pytest.raises(ValueError):
            finetune(None, train, empty, 4)

    def test_pretrained_checkpoint_loads_backbone(self, toy_task, tmp_path):
        train, test = toy_task
        cfg = NetConfig(scale_factor=0.25)
        disc = Discriminator(cfg, seed=9)
        path = tmp_path / "d.tvg"
        save_checkpoint(path, checkpoint_from_networks(
            cfg, {"discriminator": disc}))
        clf = ClipClassifier(cfg, 4, seed=0)
        clf.load_backbone(load_pretrained_discriminator(path))
        for mine, theirs in zip(clf.layers[:-1], disc.layers[:-1]):
            assert np.array_equal(mine.w.data, theirs.w.data)
        assert clf.layers[-1].w.shape[0] == 4

    def test_scale_mismatch_rejected(self):
        clf = ClipClassifier(NetConfig(scale_factor=0.25), 4)
        with pytest.raises(ValueError):
            clf.load_backbone(Discriminator(NetConfig(scale_factor=0.5)))


class TestLinearProbe:
    def test_separable_features_reach_perfect_accuracy(self):
        rng = np.random.default_rng(0)
        labels = np.repeat(np.arange(3), 20)
        features = np.eye(3, dtype=np.float32)[labels] * 4.0
        features += rng.normal(scale=0.05, size=features.shape)
        w, b, _ = fit_logistic(features.astype(np.float32), labels, 3)
        assert (predict_logistic(w, b, features) == labels).mean() == 1.0

    def test_backbone_frozen(self, toy_task):
        train, test = toy_task
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=4)
        before = parameter_digest(disc)
        linear_probe(disc, train, test, 4, steps=50)
        assert parameter_digest(disc) == before

    def test_probe_not_above_finetune(self, toy_task):
        train, test = toy_task
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=4)
        probe = linear_probe(disc, train, test, 4, steps=100)
        tuned = finetune(disc, train, test, 4,
                         config=FinetuneConfig(steps=80, seed=0))
        assert probe.accuracy <= tuned.accuracy + 1e-9


class TestSweepMechanics:
    def test_fraction_one_includes_everything(self):
        labels = np.repeat(np.arange(4), 10)
        idx = stratified_indices(labels, 1.0, SplitMix64(0))
        assert np.array_equal(idx, np.arange(40))

    def test_stratified_counts(self):
        labels = np.repeat(np.arange(4), 16)
        idx = stratified_indices(labels, 0.5, SplitMix64(1))
        sub = labels[idx]
        assert all((sub == c).sum() == 8 for c in range(4))

    def test_fraction_too_small(self):
        labels = np.repeat(np.arange(4), 10)
        with pytest.raises(ValueError):
            stratified_indices(labels, 0.01, SplitMix64(0))

    def test_relative_gain_arithmetic(self):
        cells = [SweepCell(0.125, "pretrained", 0, 0.48),
                 SweepCell(0.125, "random", 0, 0.40)]
        assert SweepResult(cells).relative_gain(0.125) == pytest.approx(1.2)

    def test_csv_format(self, tmp_path):
        cells = [SweepCell(0.5, "pretrained", 1, 0.75),
                 SweepCell(0.5, "random", 1, 0.5)]
        path = tmp_path / "sweep.csv"
        SweepResult(cells).to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "fraction,init,seed,accuracy"
        assert lines[1] == "0.5,pretrained,1,0.75"
        assert len(lines) == 3


class TestVisualizeUnit:
    def _stripe_clips(self, n=6):
        clips = np.full((n, 3, 8, 16, 16), -1.0, np.float32)
        for i in range(n):
            clips[i, :, :, :, 3 + i * 2] = 1.0
        return clips

    def test_zero_weights_flag_degenerate_tie(self):
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=0)
        disc.layers[0].w.data[:] = 0.0
        disc.layers[0].b.data[:] = 0.0
        report = visualize_unit(disc, "d1", 0, self._stripe_clips(), k=3)
        assert report.degenerate_tie
        assert len({e.activation for e in report.entries}) == 1

    def test_k_exceeding_dataset_returns_all(self):
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=1)
        clips = self._stripe_clips(4)
        report = visualize_unit(disc, "d1", 0, clips, k=50)
        assert len(report.entries) == 4

    def test_boxes_within_bounds(self):
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=2)
        clips = self._stripe_clips()
        for layer in ("d1", "d2", "d3"):
            report = visualize_unit(disc, layer, 0, clips, k=3)
            for e in report.entries:
                (t0, t1), (y0, y1), (x0, x1) = e.box
                assert 0 <= t0 <= t1 <= 7
                assert 0 <= y0 <= y1 <= 15
                assert 0 <= x0 <= x1 <= 15

    def test_edge_unit_localizes_stripe(self):
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=3)
        layer = disc.layers[0]
        layer.w.data[:] = 0.0
        layer.b.data[:] = 0.0
        mid = layer.spec.kernel[2] // 2
        layer.w.data[0, :, :, :, mid] = 1.0
        clips = np.full((3, 3, 8, 16, 16), -1.0, np.float32)
        stripe_x = 10
        clips[0, :, :, :, stripe_x] = 1.0
        report = visualize_unit(disc, "d1", 0, clips, k=1)
        entry = report.entries[0]
        assert entry.clip_id == 0
        (x0, x1) = entry.box[2]
        slack = layer.spec.kernel[2]
        assert x0 - slack <= stripe_x <= x1 + slack

    def test_invalid_layer_and_unit(self):
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=0)
        with pytest.raises(ValueError):
            visualize_unit(disc, "d9", 0, self._stripe_clips())
        with pytest.raises(ValueError):
            visualize_unit(disc, "d1", 10_000, self._stripe_clips())

    def test_entries_sorted_descending(self):
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=4)
        report = visualize_unit(disc, "d2", 1, self._stripe_clips(), k=6)
        acts = [e.activation for e in report.entries]
        assert acts == sorted(acts, reverse=True)

    def test_report_saved_with_crops(self, tmp_path):
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=5)
        clips = self._stripe_clips(4)
        report = visualize_unit(disc, "d1", 2, clips, k=2)
        out = save_unit_report(report, clips, tmp_path)
        data = json.loads((out / "report.json").read_text())
        assert data["layer"] == "d1" and data["unit"] == 2
        assert len(list(out.glob("*.ppm"))) == 2


class TestDropoutProperty:
    def test_train_expectation_matches_eval(self):
        x = Tensor(np.ones(100_000, np.float32))
        out = dropout(x, 0.5, SplitMix64(0), "train")
        assert abs(out.data.mean() - 1.0) <= 0.01

    def test_eval_mode_identity(self):
        x = Tensor(np.arange(8, dtype=np.float32))
        assert dropout(x, 0.5, SplitMix64(0), "eval") is x


class TestReceptiveField:
    def test_delta_activates_exactly_covered_units(self):
        spec = ConvSpec(kernel=(3, 3, 3), stride=(1, 1, 1), padding=(0, 0, 0),
                        in_channels=1, out_channels=1)
        x = np.zeros((1, 1, 5, 9, 9), np.float32)
        delta = (2, 4, 4)
        x[(0, 0) + delta] = 1.0
        w = Tensor(np.ones((1, 1, 3, 3, 3), np.float32))
        b = Tensor(np.zeros(1, np.float32))
        out = conv3d(Tensor(x), spec, w, b).data[0, 0]
        for t in range(out.shape[0]):
            for y in range(out.shape[1]):
                for xx in range(out.shape[2]):
                    box = receptive_field_box([spec], ((t, t), (y, y), (xx, xx)))
                    covered = all(lo <= d <= hi
                                  for (lo, hi), d in zip(box, delta))
                    assert (out[t, y, xx] != 0) == covered

    def test_strided_padded_chain(self):
        s1 = ConvSpec(kernel=(4, 4, 4), stride=(2, 2, 2), padding=(1, 1, 1),
                      in_channels=1, out_channels=1)
        s2 = ConvSpec(kernel=(3, 3, 3), stride=(2, 2, 2), padding=(0, 0, 0),
                      in_channels=1, out_channels=1)
        box = receptive_field_box([s1, s2], ((1, 1), (0, 2), (1, 1)))
        # s2: t 1->(2,4), y (0,2)->(0,6); s1: 2*s-1 .. h*2-1+3
        assert box[0] == (3, 10)
        assert box[1] == (-1, 14)
        assert box[2] == (3, 10)


class TestSweepSmall:
    def test_sweep_rows_and_ordering(self, toy_task):
        train, test = toy_task
        disc = Discriminator(NetConfig(scale_factor=0.25), seed=11)
        res = data_fraction_sweep(
            disc, train, test, 4, fractions=(0.5, 1.0), seeds=(0,),
            config=FinetuneConfig(steps=12, seed=0))
        assert len(res.cells) == 4
        inits = {c.init for c in res.cells}
        assert inits == {"pretrained", "random"}
        assert res.relative_gain(1.0) > 0
