"""Assembly of complete architectures for every family, depth, and variant."""

from __future__ import annotations

from typing import Tuple

from ..blocks import (
    BASELINE,
    PREACT,
    RESSTAGE_END,
    RESSTAGE_MIDDLE,
    RESSTAGE_START,
    BlockSpec,
    ProjectionKind,
    build_bottleneck_baseline,
    build_bottleneck_preact,
    build_resstage_block,
)
from ..graph import ArchGraph, GraphBuilder, stage_tag
from .plans import VARIANT_TRAITS, StagePlan, stage_plan


def _ones(nd: int) -> Tuple[int, ...]:
    return (1,) * nd


def _stem(g: GraphBuilder, family: str, stem_pool: bool) -> Tuple[str, int]:
    """Entry layers before the main stages; returns (node id, channels)."""
    with g.scope("stem"):
        if family == "imagenet":
            cur = g.add(
                "conv", [g.input_id], name="conv",
                in_ch=3, out_ch=64, kernel=(7, 7), stride=(2, 2), padding=(3, 3), groups=1,
            )
            cur = g.add("bn", [cur], name="bn", ch=64)
            cur = g.add("relu", [cur], name="relu")
            if stem_pool:
                cur = g.add("maxpool", [cur], name="pool", kernel=(3, 3), stride=(2, 2), padding=(1, 1))
            return cur, 64
        if family == "cifar":
            cur = g.add(
                "conv", [g.input_id], name="conv",
                in_ch=3, out_ch=16, kernel=(3, 3), stride=(1, 1), padding=(1, 1), groups=1,
            )
            cur = g.add("bn", [cur], name="bn", ch=16)
            cur = g.add("relu", [cur], name="relu")
            return cur, 16
        cur = g.add(
            "conv", [g.input_id], name="conv",
            in_ch=3, out_ch=64, kernel=(5, 7, 7), stride=(1, 2, 2), padding=(2, 3, 3), groups=1,
        )
        cur = g.add("bn", [cur], name="bn", ch=64)
        cur = g.add("relu", [cur], name="relu")
        if stem_pool:
            cur = g.add("maxpool", [cur], name="pool", kernel=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1))
        return cur, 64


def _build_stage(
    g: GraphBuilder,
    cur: str,
    ordering: str,
    projection: ProjectionKind,
    index: int,
    n_blocks: int,
    in_ch: int,
    mid: int,
    out: int,
    groups: int,
    stride,
    nd: int,
) -> str:
    tags = frozenset({stage_tag(index)})
    identity_stride = _ones(nd) if nd > 1 and isinstance(stride, tuple) else 1

    def spec(variant, block_in, block_stride, with_proj, drop_bn=False):
        return BlockSpec(
            variant=variant,
            in_ch=block_in,
            mid_ch=mid,
            out_ch=out,
            stride=block_stride,
            groups=groups,
            projection=projection if with_proj else None,
            drop_first_bn=drop_bn,
        )

    with g.scope(f"stage{index}"):
        if ordering == "stage":
            if n_blocks < 2:
                raise ValueError(
                    f"stage {index}: stage-ordered variants need >= 2 blocks per stage, got {n_blocks}"
                )
            with g.scope("block1"):
                cur = build_resstage_block(g, cur, spec(RESSTAGE_START, in_ch, stride, True), tags=tags)
            for i in range(2, n_blocks):
                with g.scope(f"block{i}"):
                    cur = build_resstage_block(
                        g, cur,
                        spec(RESSTAGE_MIDDLE, out, identity_stride, False, drop_bn=(i == 2)),
                        tags=tags,
                    )
            with g.scope(f"block{n_blocks}"):
                cur = build_resstage_block(g, cur, spec(RESSTAGE_END, out, identity_stride, False), tags=tags)
            return cur

        builder = build_bottleneck_baseline if ordering == "baseline" else build_bottleneck_preact
        variant = BASELINE if ordering == "baseline" else PREACT
        for i in range(1, n_blocks + 1):
            first = i == 1
            block_tags = tags | ({"start-block"} if first else frozenset())
            with g.scope(f"block{i}"):
                cur = builder(
                    g, cur,
                    spec(variant, in_ch if first else out, stride if first else identity_stride, first),
                    tags=block_tags,
                )
        return cur


def _assemble(family: str, variant: str, depth: int, classes: int, input_shape) -> ArchGraph:
    plan: StagePlan = stage_plan(family, depth, variant)
    traits = VARIANT_TRAITS[variant]
    stem_pool = family != "cifar" and traits.projection is not ProjectionKind.MAXPOOL_THEN_CONV
    nd = len(input_shape) - 1
    g = GraphBuilder(
        input_shape,
        classes=classes,
        meta={
            "family": family,
            "variant": variant,
            "depth": depth,
            "executable": family != "video3d",
        },
    )
    cur, in_ch = _stem(g, family, stem_pool)
    for k in range(len(plan.blocks_per_stage)):
        cur = _build_stage(
            g, cur, traits.ordering, traits.projection,
            k + 1, plan.blocks_per_stage[k], in_ch,
            plan.mid_channels[k], plan.out_channels[k], plan.groups[k], plan.strides[k], nd,
        )
        in_ch = plan.out_channels[k]
    with g.scope("head"):
        cur = g.add("globalavgpool", [cur], name="pool")
        cur = g.add("linear", [cur], name="fc", in_dim=in_ch, out_dim=classes)
    return g.finish(cur)


def build_imagenet(variant: str, depth: int, classes: int = 1000) -> ArchGraph:
    """Stem (7x7/2 conv [+ 3x3/2 max pool]), four main stages, pool, classifier."""
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    return _assemble("imagenet", variant, depth, classes, (3, 224, 224))


def build_cifar(variant: str, depth: int, classes: int = 10) -> ArchGraph:
    """3x3/1 stem, three main stages with downsampling at stages 2 and 3."""
    if classes not in (10, 100):
        raise ValueError(f"cifar classes must be 10 or 100, got {classes}")
    return _assemble("cifar", variant, depth, classes, (3, 32, 32))


def build_video3d(variant: str, depth: int = 50, classes: int = 400) -> ArchGraph:
    """Symbolic 3-D variant for counting only; lowering it is an error."""
    if classes not in (400, 174):
        raise ValueError(f"video3d classes must be 400 or 174, got {classes}")
    return _assemble("video3d", variant, depth, classes, (3, 16, 224, 224))


def build(family: str, variant: str, depth: int, classes: int | None = None) -> ArchGraph:
    """Family-dispatching convenience used by the command-line front end."""
    if family == "imagenet":
        return build_imagenet(variant, depth, classes if classes is not None else 1000)
    if family == "cifar":
        return build_cifar(variant, depth, classes if classes is not None else 10)
    if family == "video3d":
        return build_video3d(variant, depth, classes if classes is not None else 400)
    raise ValueError(f"unknown family {family!r}")
