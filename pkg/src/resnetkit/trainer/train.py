"""Desk-scale supervised training with the momentum-SGD recipe.

One epoch = shuffle, augment, forward, loss, backward, step. Runs are
bitwise deterministic for a fixed config and seed in single-threaded
execution; wall-clock logging is off by default so that rerun histories
compare byte-for-byte.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .. import engine
from ..networks import ExecutableModel, InitPolicy, build_cifar, lower_to_executable
from .data import Dataset, LabeledBatch, augment, load_cifar, synthetic_dataset


class TrainingDiverged(RuntimeError):
    """Loss became NaN; carries the iteration and learning rate."""


@dataclass(frozen=True)
class TrainConfig:
    """Architecture, optimizer recipe, and data selection for one run.

    The learning rate starts at ``lr`` and is multiplied by ``lr_factor``
    at each milestone epoch. ``decay_bn`` controls whether normalization
    scale/shift parameters participate in weight decay (they do by
    default). ``log_timing`` writes real wall-clock seconds per epoch and
    therefore breaks bitwise rerun identity; leave it off for comparisons.
    """

    family: str = "cifar"
    variant: str = "iresnet"
    depth: int = 20
    classes: int = 10
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_milestones: Tuple[int, ...] = (15, 22)
    lr_factor: float = 0.1
    zero_gamma: bool = True
    decay_bn: bool = True
    seed: int = 0
    dataset: str = "synthetic"  # synthetic | cifar10 | cifar100
    data_dir: Optional[str] = None
    train_subset: Optional[int] = None
    val_subset: Optional[int] = None
    augment_crop: bool = True
    augment_flip: bool = True
    log_timing: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 for batch norm, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        ms = tuple(self.lr_milestones)
        if list(ms) != sorted(set(ms)):
            raise ValueError(f"lr milestones must be strictly increasing, got {ms}")
        if ms and self.epochs and ms[-1] >= self.epochs:
            raise ValueError(f"lr milestones {ms} must lie below epochs {self.epochs}")
        if self.dataset not in ("synthetic", "cifar10", "cifar100"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.family != "cifar":
            raise ValueError(f"desk-scale training supports the cifar family, got {self.family!r}")
        object.__setattr__(self, "lr_milestones", ms)

    def to_json(self) -> str:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["lr_milestones"] = list(self.lr_milestones)
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str, **overrides) -> "TrainConfig":
        doc = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        if "lr_milestones" in doc:
            doc["lr_milestones"] = tuple(doc["lr_milestones"])
        return cls(**doc)


def lr_at(config: TrainConfig, epoch: int) -> float:
    """base * factor^(milestones passed); valid for 0 <= epoch < epochs."""
    if epoch < 0 or (config.epochs and epoch >= config.epochs):
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    passed = sum(1 for m in config.lr_milestones if epoch >= m)
    return config.lr * config.lr_factor**passed


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_top1: float  # accuracy fraction
    val_top1: float  # accuracy fraction
    val_top5: Optional[float]
    seconds: float

    def csv_line(self) -> str:
        top5 = f"{self.val_top5:.6f}" if self.val_top5 is not None else ""
        return (
            f"{self.epoch},{self.lr:.6f},{self.train_loss:.6f},{self.train_top1:.6f},"
            f"{self.val_top1:.6f},{top5},{self.seconds:.3f}"
        )


CSV_HEADER = "epoch,lr,train_loss,train_top1,val_top1,val_top5,seconds"


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv_line() for r in self.records]) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        lines = [ln for ln in text.strip().splitlines() if ln]
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError("not a training history CSV")
        records = []
        for ln in lines[1:]:
            e, lr, tl, tt, vt, v5, sec = ln.split(",")
            records.append(
                EpochRecord(int(e), float(lr), float(tl), float(tt), float(vt),
                            float(v5) if v5 else None, float(sec))
            )
        return cls(records)


@dataclass
class TrainResult:
    history: TrainHistory
    model: ExecutableModel
    out_dir: Optional[Path]


def _load_datasets(config: TrainConfig, seed: int) -> Tuple[Dataset, Dataset]:
    if config.dataset == "synthetic":
        n_train = config.train_subset or 2000
        n_val = config.val_subset or max(200, n_train // 4)
        full = synthetic_dataset(config.classes, n_train + n_val, seed=seed)
        train = Dataset(full.images[:n_train], full.labels[:n_train], config.classes)
        val = Dataset(full.images[n_train:], full.labels[n_train:], config.classes)
        return train, val
    which = 10 if config.dataset == "cifar10" else 100
    if config.classes != which:
        raise ValueError(f"dataset {config.dataset} has {which} classes, config says {config.classes}")
    if not config.data_dir:
        raise ValueError(f"dataset {config.dataset} needs data_dir")
    train, val = load_cifar(config.data_dir, which)
    if config.train_subset:
        train = train.subset(config.train_subset)
    if config.val_subset:
        val = val.subset(config.val_subset)
    return train, val


def evaluate(model, dataset: Dataset, batch_size: int = 256) -> Tuple[float, Optional[float]]:
    """Top-1 and top-5 error fractions under eval-mode normalization.

    Top-5 is reported only when the label space has at least 5 classes.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    model.eval()
    top1_wrong = 0
    top5_wrong = 0
    want_top5 = dataset.classes >= 5
    for start in range(0, len(dataset), batch_size):
        images = dataset.images[start : start + batch_size]
        labels = dataset.labels[start : start + batch_size]
        logits = model.forward(images, tape=None).data
        pred = logits.argmax(axis=1)
        top1_wrong += int((pred != labels).sum())
        if want_top5:
            top5 = np.argsort(-logits, axis=1)[:, :5]
            top5_wrong += int((top5 != labels[:, None]).all(axis=1).sum())
    n = len(dataset)
    return top1_wrong / n, (top5_wrong / n) if want_top5 else None


def train(config: TrainConfig, out_dir=None, *, timer=time.perf_counter) -> TrainResult:
    """Run the full recipe; returns history and writes CSV + checkpoints.

    Checkpoints: ``last.irnf`` at the end of the run (or at init for a
    zero-epoch run) and ``best.irnf`` whenever validation top-1 improves.
    """
    engine.configure_allocator()
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_seed = int(seeds[0].generate_state(1)[0])
    data_seed = int(seeds[1].generate_state(1)[0])
    loop_rng = np.random.default_rng(seeds[2])

    train_set, val_set = _load_datasets(config, data_seed)
    graph = build_cifar(config.variant, config.depth, config.classes)
    model = lower_to_executable(graph, InitPolicy(seed=init_seed, zero_gamma=config.zero_gamma))
    if not config.decay_bn:
        for state in model.bn_states.values():
            state.gamma.decayable = False
            state.beta.decayable = False

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "config.json").write_text(config.to_json())

    history = TrainHistory()
    params = model.parameters()
    best_val = -1.0
    iteration = 0
    for epoch in range(config.epochs):
        t0 = timer() if config.log_timing else 0.0
        lr = lr_at(config, epoch)
        model.train()
        order = loop_rng.permutation(len(train_set))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(train_set), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = LabeledBatch(train_set.images[idx], train_set.labels[idx])
            batch = augment(batch, loop_rng, crop=config.augment_crop, flip=config.augment_flip)
            tape = engine.Tape()
            logits = model.forward(batch.images, tape)
            loss = engine.softmax_cross_entropy(tape, logits, batch.labels)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss at iteration {iteration} (epoch {epoch}, lr {lr:g})"
                )
            model.zero_grads()
            engine.backward(tape, loss)
            engine.sgd_step(params, lr, config.momentum, config.weight_decay)
            loss_sum += loss_value * len(idx)
            correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
            iteration += 1
        val_err, val_err5 = evaluate(model, val_set, batch_size=config.batch_size * 4)
        seconds = (timer() - t0) if config.log_timing else 0.0
        record = EpochRecord(
            epoch=epoch,
            lr=lr,
            train_loss=loss_sum / len(train_set),
            train_top1=correct / len(train_set),
            val_top1=1.0 - val_err,
            val_top5=(1.0 - val_err5) if val_err5 is not None else None,
            seconds=seconds,
        )
        history.records.append(record)
        if out_path is not None and record.val_top1 > best_val:
            best_val = record.val_top1
            model.save(out_path / "best.irnf")

    if out_path is not None:
        model.save(out_path / "last.irnf")
        history.write_csv(out_path / "history.csv")
    return TrainResult(history=history, model=model, out_dir=out_path)
