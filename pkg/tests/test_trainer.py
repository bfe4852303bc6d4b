"""Data pipeline, recipe schedule, and desk-scale training behavior."""

import numpy as np
import pytest

from resnetkit import engine
from resnetkit.engine import Tensor
from resnetkit.trainer import (
    DataFormatError,
    Dataset,
    LabeledBatch,
    TrainConfig,
    TrainHistory,
    TrainingDiverged,
    augment,
    evaluate,
    hflip,
    load_cifar,
    lr_at,
    sample_crop_offsets,
    synthetic_dataset,
    train,
)

TINY = dict(
    variant="iresnet",
    depth=20,
    classes=10,
    batch_size=32,
    dataset="synthetic",
    train_subset=96,
    val_subset=64,
    lr_milestones=(),
)


class TestSyntheticData:
    def test_deterministic(self):
        a = synthetic_dataset(10, 64, seed=3)
        b = synthetic_dataset(10, 64, seed=3)
        assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)

    def test_balanced_labels(self):
        data = synthetic_dataset(10, 105, seed=0)
        counts = np.bincount(data.labels, minlength=10)
        assert counts.max() - counts.min() <= 1

    def test_linear_probe_separates_two_classes(self):
        data = synthetic_dataset(2, 200, seed=1)
        x = data.images.reshape(len(data), -1)
        y = 2.0 * data.labels - 1.0
        w, *_ = np.linalg.lstsq(x, y, rcond=None)
        acc = ((x @ w > 0) == (y > 0)).mean()
        assert acc > 0.9

    def test_argument_validation(self):
        with pytest.raises(ValueError, match="classes"):
            synthetic_dataset(1, 10)
        with pytest.raises(ValueError, match="n >= classes"):
            synthetic_dataset(10, 5)


class TestAugment:
    def test_flags_off_is_identity(self, rng):
        batch = LabeledBatch(rng.standard_normal((4, 3, 32, 32)).astype(np.float32), np.arange(4))
        out = augment(batch, rng, crop=False, flip=False)
        assert out is batch

    def test_flip_is_involution(self, rng):
        images = rng.standard_normal((4, 3, 32, 32)).astype(np.float32)
        assert np.array_equal(hflip(hflip(images)), images)

    def test_crop_offsets_within_pad_box(self, rng):
        offsets = sample_crop_offsets(rng, 500, pad=4)
        assert offsets.min() >= 0 and offsets.max() <= 8

    def test_shape_preserved_and_deterministic(self):
        images = np.random.default_rng(0).standard_normal((8, 3, 32, 32)).astype(np.float32)
        batch = LabeledBatch(images, np.arange(8))
        a = augment(batch, np.random.default_rng(42))
        b = augment(batch, np.random.default_rng(42))
        assert a.images.shape == images.shape
        assert np.array_equal(a.images, b.images)


def write_fake_cifar10(root, records_per_file=4):
    rng = np.random.default_rng(0)
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        rows = []
        for _ in range(records_per_file):
            label = rng.integers(0, 10)
            pixels = rng.integers(0, 256, 3072)
            rows.append(np.concatenate([[label], pixels]).astype(np.uint8).tobytes())
        (root / name).write_bytes(b"".join(rows))


class TestCifarLoader:
    def test_parses_standard_layout(self, tmp_path):
        write_fake_cifar10(tmp_path)
        train_set, test_set = load_cifar(tmp_path, 10)
        assert len(train_set) == 20 and len(test_set) == 4
        assert train_set.images.shape == (20, 3, 32, 32)
        assert train_set.labels.min() >= 0 and train_set.labels.max() < 10

    def test_pixel_decoding_oracle(self, tmp_path):
        # one record: label 7, first channel all 255, rest 0
        record = bytes([7]) + b"\xff" * 1024 + b"\x00" * 2048
        for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
            (tmp_path / name).write_bytes(record)
        train_set, _ = load_cifar(tmp_path, 10)
        assert train_set.labels[0] == 7
        from resnetkit.trainer import CIFAR10_MEAN, CIFAR10_STD
        want_r = (1.0 - CIFAR10_MEAN[0]) / CIFAR10_STD[0]
        want_g = (0.0 - CIFAR10_MEAN[1]) / CIFAR10_STD[1]
        np.testing.assert_allclose(train_set.images[0, 0], want_r, rtol=1e-5)
        np.testing.assert_allclose(train_set.images[0, 1], want_g, rtol=1e-5)

    def test_deterministic_reload(self, tmp_path):
        write_fake_cifar10(tmp_path)
        a, _ = load_cifar(tmp_path, 10)
        b, _ = load_cifar(tmp_path, 10)
        assert np.array_equal(a.images, b.images)

    def test_truncation_reports_byte_offset(self, tmp_path):
        write_fake_cifar10(tmp_path)
        path = tmp_path / "data_batch_3.bin"
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(DataFormatError, match="truncated at byte"):
            load_cifar(tmp_path, 10)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFormatError, match="missing"):
            load_cifar(tmp_path, 10)

    @pytest.mark.skipif(
        not __import__("pathlib").Path(
            __import__("os").environ.get("RESNETKIT_CIFAR10_DIR", "data/cifar-10-batches-bin"),
            "data_batch_1.bin",
        ).exists(),
        reason="real 10-class binary dataset not present",
    )
    def test_real_dataset_sizes(self):
        import os

        train_set, test_set = load_cifar(
            os.environ.get("RESNETKIT_CIFAR10_DIR", "data/cifar-10-batches-bin"), 10
        )
        assert len(train_set) == 50000
        assert len(test_set) == 10000
        assert train_set.labels.min() >= 0 and train_set.labels.max() < 10

    def test_cifar100_fine_labels(self, tmp_path):
        # coarse label 3, fine label 42
        record = bytes([3, 42]) + bytes(3072)
        (tmp_path / "train.bin").write_bytes(record * 2)
        (tmp_path / "test.bin").write_bytes(record)
        train_set, test_set = load_cifar(tmp_path, 100)
        assert list(train_set.labels) == [42, 42]
        assert test_set.classes == 100


class TestSchedule:
    def test_standard_cifar_recipe(self):
        config = TrainConfig(epochs=164, lr_milestones=(81, 122), train_subset=100)
        assert lr_at(config, 0) == pytest.approx(0.1)
        assert lr_at(config, 80) == pytest.approx(0.1)
        assert lr_at(config, 81) == pytest.approx(0.01)
        assert lr_at(config, 122) == pytest.approx(0.001)
        assert lr_at(config, 163) == pytest.approx(0.001)

    def test_epoch_range_checked(self):
        config = TrainConfig(epochs=10, lr_milestones=(5,))
        with pytest.raises(ValueError, match="outside"):
            lr_at(config, 10)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError, match="milestones"):
            TrainConfig(epochs=30, lr_milestones=(20, 10))
        with pytest.raises(ValueError, match="below epochs"):
            TrainConfig(epochs=10, lr_milestones=(10,))
        with pytest.raises(ValueError, match="dataset"):
            TrainConfig(dataset="imagenet64")

    def test_config_json_round_trip(self):
        config = TrainConfig(epochs=5, lr_milestones=(2, 4), seed=9)
        again = TrainConfig.from_json(config.to_json())
        assert again == config

    def test_config_overrides(self):
        config = TrainConfig.from_json(TrainConfig(epochs=5, lr_milestones=()).to_json(), epochs=2, seed=77)
        assert config.epochs == 2 and config.seed == 77

    def test_unknown_config_key(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            TrainConfig.from_json('{"optimizer": "adam"}')


class TestTraining:
    def test_zero_epochs(self, tmp_path):
        config = TrainConfig(epochs=0, **TINY)
        result = train(config, out_dir=tmp_path)
        assert result.history.records == []
        assert (tmp_path / "last.irnf").exists()
        assert (tmp_path / "history.csv").read_text().strip() == "epoch,lr,train_loss,train_top1,val_top1,val_top5,seconds"

    def test_deterministic_reruns(self, tmp_path):
        config = TrainConfig(epochs=2, seed=5, **TINY)
        a = train(config, out_dir=tmp_path / "a")
        b = train(config, out_dir=tmp_path / "b")
        csv_a = (tmp_path / "a" / "history.csv").read_bytes()
        csv_b = (tmp_path / "b" / "history.csv").read_bytes()
        assert csv_a == csv_b
        assert (tmp_path / "a" / "last.irnf").read_bytes() == (tmp_path / "b" / "last.irnf").read_bytes()

    def test_lr_column_matches_schedule(self):
        config = TrainConfig(epochs=3, seed=1, **{**TINY, "lr_milestones": (1, 2)})
        result = train(config)
        assert [r.lr for r in result.history.records] == [lr_at(config, e) for e in range(3)]

    def test_smoke_parity_both_variants_learn(self):
        for variant in ("iresnet", "baseline"):
            config = TrainConfig(epochs=2, seed=3, **{**TINY, "variant": variant})
            result = train(config)
            records = result.history.records
            assert records[-1].train_loss < records[0].train_loss * 1.05

    def test_divergence_aborts_with_diagnostics(self):
        engine.set_debug_checks(False)
        try:
            config = TrainConfig(epochs=3, lr=1e6, seed=0, zero_gamma=False, **TINY)
            with np.errstate(over="ignore", invalid="ignore"):
                with pytest.raises(TrainingDiverged, match="iteration"):
                    train(config)
        finally:
            engine.set_debug_checks(True)

    def test_history_csv_round_trip(self):
        config = TrainConfig(epochs=2, seed=5, **TINY)
        hist = train(config).history
        again = TrainHistory.from_csv(hist.to_csv())
        assert again.to_csv() == hist.to_csv()
        assert [r.epoch for r in again.records] == [0, 1]

    def test_bn_decay_switch_touches_only_bn_params_in_one_step(self, rng):
        # a single update step: flipping the switch moves normalization
        # parameters differently but leaves every conv/linear update intact
        from resnetkit.networks import InitPolicy, build_cifar, lower_to_executable

        x = rng.standard_normal((8, 3, 32, 32)).astype(np.float32)
        labels = rng.integers(0, 10, 8)
        results = {}
        for decay_bn in (True, False):
            model = lower_to_executable(build_cifar("iresnet", 20, 10), InitPolicy(seed=6))
            if not decay_bn:
                for state in model.bn_states.values():
                    state.gamma.decayable = False
                    state.beta.decayable = False
            tape = engine.Tape()
            logits = model.forward(x, tape)
            loss = engine.softmax_cross_entropy(tape, logits, labels)
            model.zero_grads()
            engine.backward(tape, loss)
            engine.sgd_step(model.parameters(), lr=0.1, momentum=0.9, weight_decay=1e-2)
            results[decay_bn] = {p.id: p.data.copy() for p in model.parameters()}
        bn_diff = conv_diff = 0
        for pid in results[True]:
            same = np.array_equal(results[True][pid], results[False][pid])
            if pid.endswith((".gamma", ".beta")):
                bn_diff += 0 if same else 1
            else:
                conv_diff += 0 if same else 1
        assert conv_diff == 0
        assert bn_diff > 0


class _StubModel:
    """Duck-typed stand-in whose logits come from a fixed function."""

    def __init__(self, fn):
        self.fn = fn

    def eval(self):
        return self

    def forward(self, x, tape=None):
        return Tensor(self.fn(x))


class TestEvaluate:
    def test_perfect_predictor(self):
        data = synthetic_dataset(4, 40, seed=0)
        labels = data.labels.copy()
        state = {"i": 0}

        def oracle(x):
            n = len(x)
            logits = np.zeros((n, 4), dtype=np.float32)
            logits[np.arange(n), labels[state["i"] : state["i"] + n]] = 10.0
            state["i"] += n
            return logits

        top1, top5 = evaluate(_StubModel(oracle), data)
        assert top1 == 0.0
        assert top5 is None  # 4 classes: no top-5 figure

    def test_uniform_random_predictor(self):
        data = synthetic_dataset(10, 1200, seed=0)
        r = np.random.default_rng(0)
        top1, top5 = evaluate(_StubModel(lambda x: r.standard_normal((len(x), 10))), data)
        assert abs(top1 - 0.9) < 0.05
        assert top5 <= top1

    def test_empty_dataset_rejected(self):
        empty = Dataset(np.zeros((0, 3, 32, 32), np.float32), np.zeros(0, np.int64), 10)
        with pytest.raises(ValueError, match="empty"):
            evaluate(_StubModel(lambda x: x), empty)
