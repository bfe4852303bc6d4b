#!/usr/bin/env python3
"""Desk-scale training demo: a small stage-ordered model on 32x32 data.

Defaults mirror the acceptance run: depth-20, 500-image subset, 30 epochs,
step decays at epochs 15 and 22.
"""

import argparse
import time

from resnetkit.trainer import TrainConfig, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--variant", default="iresnet")
    p.add_argument("--depth", type=int, default=20)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--subset", type=int, default=500)
    p.add_argument("--seed", type=int, default=1905)
    p.add_argument("--dataset", choices=("synthetic", "cifar10", "cifar100"), default="synthetic")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out-dir", default="runs/desk")
    args = p.parse_args()

    milestones = (args.epochs // 2, (args.epochs * 3) // 4) if args.epochs >= 4 else ()
    config = TrainConfig(
        variant=args.variant,
        depth=args.depth,
        classes=100 if args.dataset == "cifar100" else 10,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr_milestones=milestones,
        zero_gamma=True,
        seed=args.seed,
        dataset=args.dataset,
        data_dir=args.data_dir,
        train_subset=args.subset,
        val_subset=max(100, args.subset // 4),
        log_timing=True,
    )
    t0 = time.perf_counter()
    result = train(config, out_dir=args.out_dir)
    for r in result.history.records:
        print(
            f"epoch {r.epoch:3d}  lr {r.lr:7.4f}  loss {r.train_loss:7.4f}  "
            f"train@1 {r.train_top1:6.3f}  val@1 {r.val_top1:6.3f}  {r.seconds:6.1f}s"
        )
    print(f"done in {time.perf_counter() - t0:.0f}s; artifacts in {result.out_dir}")


if __name__ == "__main__":
    main()
