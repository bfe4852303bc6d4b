"""Per-family stage plans: block counts, channel plans, groups, strides."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

from ..blocks import ProjectionKind

VARIANTS = (
    "baseline",
    "preact",
    "resstage",
    "iresnet",
    "resmax",
    "resnext",
    "resgroup",
    "resgroupfix",
    "iresgroup",
    "iresgroupfix",
    "avgproj-comparison",
)

FAMILIES = ("imagenet", "cifar", "video3d")

IMAGENET_BLOCKS = {
    50: (3, 4, 6, 3),
    101: (3, 4, 23, 3),
    152: (3, 8, 36, 3),
    200: (3, 24, 36, 3),
    302: (4, 34, 58, 4),
    404: (4, 46, 80, 4),
}

CIFAR_BLOCKS = {
    164: (18, 18, 18),
    1001: (111, 111, 111),
    2000: (222, 222, 222),
    3002: (333, 334, 333),
}

VIDEO_BLOCKS = {50: (3, 4, 6, 3)}


@dataclass(frozen=True)
class VariantTraits:
    """How a variant wires its blocks."""

    ordering: str  # "baseline" | "preact" | "stage"
    projection: ProjectionKind
    channel_plan: str  # "bottleneck" | "resnext" | "widegroup"


VARIANT_TRAITS = {
    "baseline": VariantTraits("baseline", ProjectionKind.STRIDED_CONV, "bottleneck"),
    "preact": VariantTraits("preact", ProjectionKind.STRIDED_CONV, "bottleneck"),
    "resstage": VariantTraits("stage", ProjectionKind.STRIDED_CONV, "bottleneck"),
    "iresnet": VariantTraits("stage", ProjectionKind.MAXPOOL_THEN_CONV, "bottleneck"),
    "resmax": VariantTraits("baseline", ProjectionKind.MAXPOOL_THEN_CONV, "bottleneck"),
    "avgproj-comparison": VariantTraits("baseline", ProjectionKind.AVGPOOL_THEN_CONV, "bottleneck"),
    "resnext": VariantTraits("baseline", ProjectionKind.STRIDED_CONV, "resnext"),
    "resgroup": VariantTraits("baseline", ProjectionKind.STRIDED_CONV, "widegroup"),
    "resgroupfix": VariantTraits("baseline", ProjectionKind.STRIDED_CONV, "widegroup"),
    "iresgroup": VariantTraits("stage", ProjectionKind.MAXPOOL_THEN_CONV, "widegroup"),
    "iresgroupfix": VariantTraits("stage", ProjectionKind.MAXPOOL_THEN_CONV, "widegroup"),
}

# imagenet channel plans: (mid per stage, out per stage, groups per stage)
_IMAGENET_CHANNELS = {
    "bottleneck": ((64, 128, 256, 512), (256, 512, 1024, 2048), (1, 1, 1, 1)),
    "resnext": ((128, 256, 512, 1024), (256, 512, 1024, 2048), (32, 32, 32, 32)),
    "widegroup": ((256, 512, 1024, 2048), (128, 256, 512, 1024), None),
}
# the widegroup family fixes groups at 64 everywhere or scales them so every
# stage runs 32 channels per group
_WIDEGROUP_GROUPS = {
    "resgroupfix": (64, 64, 64, 64),
    "iresgroupfix": (64, 64, 64, 64),
    "resgroup": (8, 16, 32, 64),
    "iresgroup": (8, 16, 32, 64),
}

_CIFAR_CHANNELS = ((16, 32, 64), (64, 128, 256), (1, 1, 1))


@dataclass(frozen=True)
class StagePlan:
    """Blueprint of the main stages for one (family, depth, variant)."""

    family: str
    depth: int
    blocks_per_stage: Tuple[int, ...]
    mid_channels: Tuple[int, ...]
    out_channels: Tuple[int, ...]
    groups: Tuple[int, ...]
    strides: Tuple  # per stage; ints for 2-D, tuples for 3-D

    def __post_init__(self):
        n = len(self.blocks_per_stage)
        if not (len(self.mid_channels) == len(self.out_channels) == len(self.groups) == len(self.strides) == n):
            raise ValueError("stage plan fields must cover the same number of stages")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ValueError("every stage needs at least one block")
        if self.family in ("imagenet", "cifar"):
            if 3 * sum(self.blocks_per_stage) + 2 != self.depth:
                raise ValueError(
                    f"depth accounting broken: 3*{sum(self.blocks_per_stage)}+2 != {self.depth}"
                )


def _check_variant(family: str, variant: str) -> VariantTraits:
    if variant not in VARIANT_TRAITS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    traits = VARIANT_TRAITS[variant]
    if family == "cifar" and traits.channel_plan != "bottleneck":
        raise ValueError(f"variant {variant!r} has no cifar channel plan")
    if family == "video3d" and variant not in ("baseline", "iresnet"):
        raise ValueError(f"video3d supports variants 'baseline' and 'iresnet', not {variant!r}")
    return traits


def _cifar_blocks(depth: int) -> Tuple[int, ...]:
    if depth in CIFAR_BLOCKS:
        return CIFAR_BLOCKS[depth]
    if depth >= 11 and (depth - 2) % 9 == 0:
        n = (depth - 2) // 9
        return (n, n, n)
    raise ValueError(f"unsupported cifar depth {depth}: needs 9n+2 or one of {sorted(CIFAR_BLOCKS)}")


def stage_plan(family: str, depth: int, variant: str = "baseline") -> StagePlan:
    """Exact per-stage block counts and channel plan for a supported depth."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    traits = _check_variant(family, variant)
    improved = traits.projection is ProjectionKind.MAXPOOL_THEN_CONV

    if family == "imagenet":
        if depth not in IMAGENET_BLOCKS:
            raise ValueError(f"unsupported imagenet depth {depth}: one of {sorted(IMAGENET_BLOCKS)}")
        blocks = IMAGENET_BLOCKS[depth]
        mid, out, groups = _IMAGENET_CHANNELS[traits.channel_plan]
        if groups is None:
            groups = _WIDEGROUP_GROUPS[variant]
        # with the pooling projection the stem max pool moves into the first
        # stage's start block, which then carries the stride-2 reduction
        strides = (2, 2, 2, 2) if improved else (1, 2, 2, 2)
        return StagePlan(family, depth, blocks, mid, out, groups, strides)

    if family == "cifar":
        blocks = _cifar_blocks(depth)
        mid, out, groups = _CIFAR_CHANNELS
        return StagePlan(family, depth, blocks, mid, out, groups, (1, 2, 2))

    if depth not in VIDEO_BLOCKS:
        raise ValueError(f"unsupported video3d depth {depth}: one of {sorted(VIDEO_BLOCKS)}")
    blocks = VIDEO_BLOCKS[depth]
    mid, out, groups = _IMAGENET_CHANNELS["bottleneck"]
    first = (1, 2, 2) if improved else (1, 1, 1)
    strides = (first, (1, 2, 2), (2, 2, 2), (2, 2, 2))
    return StagePlan(family, depth, blocks, mid, out, groups, strides)
