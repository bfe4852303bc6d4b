"""Constructors for residual building blocks and projection shortcuts.

Each builder appends a block subgraph to a :class:`GraphBuilder` and
returns the id of the block's output node. Three orderings exist:

* ``baseline``      conv-bn-relu twice, conv-bn, add, relu on the trunk;
* ``preact``        bn-relu-conv three times, bare add;
* stage roles       a stage opens with a ``resstage-start`` block
                    (baseline-ordered branch, no trunk activation), runs
                    pre-activation ``resstage-middle`` blocks, and closes
                    with a ``resstage-end`` block that re-normalizes and
                    re-activates the full signal.

The wide grouped block keeps its 3x3 convolution at twice the output
width, so the spatial filter bank sees the largest channel count in the
block; ordering is delegated to the builders above.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

from .graph import (
    GraphBuilder,
    TAG_END_BLOCK,
    TAG_MAIN_PATH,
    TAG_MIDDLE_BLOCK,
    TAG_PROJECTION,
    TAG_RESIDUAL_BRANCH,
    TAG_START_BLOCK,
)

Stride = Union[int, Tuple[int, ...]]

BASELINE = "baseline"
PREACT = "preact"
RESSTAGE_START = "resstage-start"
RESSTAGE_MIDDLE = "resstage-middle"
RESSTAGE_END = "resstage-end"

_VARIANTS = (BASELINE, PREACT, RESSTAGE_START, RESSTAGE_MIDDLE, RESSTAGE_END)

_ROLE_TAGS = {
    RESSTAGE_START: TAG_START_BLOCK,
    RESSTAGE_MIDDLE: TAG_MIDDLE_BLOCK,
    RESSTAGE_END: TAG_END_BLOCK,
}


class ProjectionKind(str, Enum):
    """Shortcut mapping used when block input and output sizes differ."""

    STRIDED_CONV = "conv1x1-stride"
    MAXPOOL_THEN_CONV = "maxpool3x3-then-conv1x1"
    AVGPOOL_THEN_CONV = "avgpool2x2-then-conv1x1"


def _strides(stride: Stride, ndim: int = 2) -> Tuple[int, ...]:
    if isinstance(stride, (tuple, list)):
        return tuple(int(s) for s in stride)
    return (int(stride),) * ndim


@dataclass(frozen=True)
class BlockSpec:
    """Channel plan and wiring of one residual block.

    ``stride`` may be an int (2-D blocks) or a per-axis tuple (3-D blocks).
    ``projection`` must be present exactly when the block changes channel
    count or spatial size; ``drop_first_bn`` is only legal on a middle
    block, whose incoming signal a preceding start block already normalized.
    """

    variant: str
    in_ch: int
    mid_ch: int
    out_ch: int
    stride: Stride = 1
    groups: int = 1
    projection: ProjectionKind | None = None
    drop_first_bn: bool = False

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown block variant {self.variant!r}")
        for name in ("in_ch", "mid_ch", "out_ch", "groups"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.mid_ch % self.groups:
            raise ValueError(f"mid_ch {self.mid_ch} not divisible by groups {self.groups}")
        if self.drop_first_bn and self.variant != RESSTAGE_MIDDLE:
            raise ValueError("drop_first_bn is only legal on a resstage-middle block")
        needs = self.needs_projection
        if needs and self.projection is None:
            raise ValueError(
                f"{self.variant} block with in_ch={self.in_ch}, out_ch={self.out_ch}, "
                f"stride={self.stride} requires a projection shortcut"
            )
        if not needs and self.projection is not None:
            raise ValueError("identity-sized block must not carry a projection")
        if self.variant == RESSTAGE_START and self.projection is None:
            raise ValueError("resstage-start block requires a projection shortcut")
        if self.variant in (RESSTAGE_MIDDLE, RESSTAGE_END) and needs:
            raise ValueError(f"{self.variant} block must have an identity shortcut")

    @property
    def strides(self) -> Tuple[int, ...]:
        return _strides(self.stride)

    @property
    def ndim(self) -> int:
        return len(self.strides)

    @property
    def needs_projection(self) -> bool:
        return self.in_ch != self.out_ch or any(s != 1 for s in self.strides)


def build_projection(
    g: GraphBuilder,
    x: str,
    kind: ProjectionKind,
    in_ch: int,
    out_ch: int,
    stride: Stride,
    *,
    tags: frozenset = frozenset(),
    name: str = "proj",
) -> str:
    """Shortcut mapping of ``x`` to ``out_ch`` channels at the strided size.

    The strided-conv kind folds spatial and channel projection into one
    1x1 conv. The pooling kinds disentangle them: a parameter-free pool
    performs the spatial reduction (kernel 3 matching the block's middle
    conv for max, kernel 2 for the avg comparison), then a stride-1 1x1
    conv maps channels. Without spatial reduction no pool is inserted.
    """
    if out_ch < 1:
        raise ValueError(f"projection out_ch must be positive, got {out_ch}")
    if not isinstance(kind, ProjectionKind):
        raise ValueError(f"unknown projection kind {kind!r}")
    strides = _strides(stride)
    nd = len(strides)
    ptags = tags | {TAG_PROJECTION}
    ones = (1,) * nd
    with g.scope(name):
        cur = x
        conv_stride = strides
        if any(s != 1 for s in strides):
            if kind is ProjectionKind.MAXPOOL_THEN_CONV:
                cur = g.add(
                    "maxpool", [cur], name="pool", tags=ptags,
                    kernel=(3,) * nd, stride=strides, padding=ones,
                )
                conv_stride = ones
            elif kind is ProjectionKind.AVGPOOL_THEN_CONV:
                cur = g.add(
                    "avgpool", [cur], name="pool", tags=ptags,
                    kernel=(2,) * nd, stride=strides, padding=(0,) * nd,
                )
                conv_stride = ones
        cur = g.add(
            "conv", [cur], name="conv", tags=ptags,
            in_ch=in_ch, out_ch=out_ch, kernel=ones, stride=conv_stride,
            padding=(0,) * nd, groups=1,
        )
        cur = g.add("bn", [cur], name="bn", tags=ptags, ch=out_ch)
    return cur


def _branch_conv(g, cur, name, in_ch, out_ch, kernel, stride, groups, tags):
    nd = len(kernel)
    padding = tuple(k // 2 for k in kernel)
    return g.add(
        "conv", [cur], name=name, tags=tags,
        in_ch=in_ch, out_ch=out_ch, kernel=kernel, stride=stride,
        padding=padding, groups=groups,
    )


def _shortcut(g, x, spec: BlockSpec, tags) -> str:
    if spec.projection is None:
        return x
    return build_projection(
        g, x, spec.projection, spec.in_ch, spec.out_ch, spec.strides, tags=tags
    )


def build_bottleneck_baseline(g: GraphBuilder, x: str, spec: BlockSpec, *, tags: frozenset = frozenset()) -> str:
    """conv1-bn-relu, conv3(stride,groups)-bn-relu, conv1-bn; add; trunk relu."""
    if spec.variant != BASELINE:
        raise ValueError(f"expected a baseline spec, got {spec.variant!r}")
    nd = spec.ndim
    ones, threes = (1,) * nd, (3,) * nd
    bt = tags | {TAG_RESIDUAL_BRANCH}
    cur = _branch_conv(g, x, "conv1", spec.in_ch, spec.mid_ch, ones, ones, 1, bt)
    cur = g.add("bn", [cur], name="bn1", tags=bt, ch=spec.mid_ch)
    cur = g.add("relu", [cur], name="relu1", tags=bt)
    cur = _branch_conv(g, cur, "conv2", spec.mid_ch, spec.mid_ch, threes, spec.strides, spec.groups, bt)
    cur = g.add("bn", [cur], name="bn2", tags=bt, ch=spec.mid_ch)
    cur = g.add("relu", [cur], name="relu2", tags=bt)
    cur = _branch_conv(g, cur, "conv3", spec.mid_ch, spec.out_ch, ones, ones, 1, bt)
    cur = g.add("bn", [cur], name="bn3", tags=bt, ch=spec.out_ch)
    shortcut = _shortcut(g, x, spec, tags)
    cur = g.add("add", [cur, shortcut], name="add", tags=tags)
    return g.add("relu", [cur], name="relu_out", tags=tags | {TAG_MAIN_PATH})


def build_bottleneck_preact(g: GraphBuilder, x: str, spec: BlockSpec, *, tags: frozenset = frozenset()) -> str:
    """bn-relu-conv1, bn-relu-conv3(stride,groups), bn-relu-conv1; bare add."""
    if spec.variant != PREACT:
        raise ValueError(f"expected a preact spec, got {spec.variant!r}")
    nd = spec.ndim
    ones, threes = (1,) * nd, (3,) * nd
    bt = tags | {TAG_RESIDUAL_BRANCH}
    cur = g.add("bn", [x], name="bn1", tags=bt, ch=spec.in_ch)
    cur = g.add("relu", [cur], name="relu1", tags=bt)
    cur = _branch_conv(g, cur, "conv1", spec.in_ch, spec.mid_ch, ones, ones, 1, bt)
    cur = g.add("bn", [cur], name="bn2", tags=bt, ch=spec.mid_ch)
    cur = g.add("relu", [cur], name="relu2", tags=bt)
    cur = _branch_conv(g, cur, "conv2", spec.mid_ch, spec.mid_ch, threes, spec.strides, spec.groups, bt)
    cur = g.add("bn", [cur], name="bn3", tags=bt, ch=spec.mid_ch)
    cur = g.add("relu", [cur], name="relu3", tags=bt)
    cur = _branch_conv(g, cur, "conv3", spec.mid_ch, spec.out_ch, ones, ones, 1, bt)
    shortcut = _shortcut(g, x, spec, tags)
    return g.add("add", [cur, shortcut], name="add", tags=tags)


def build_resstage_block(g: GraphBuilder, x: str, spec: BlockSpec, *, tags: frozenset = frozenset()) -> str:
    """One stage-role block: start, middle, or end.

    start:  baseline-ordered branch ending in bn, projection shortcut, add,
            no trunk activation;
    middle: pre-activation branch (first bn optional), identity add;
    end:    middle wiring, then bn-relu applied to the full signal.
    """
    role = spec.variant
    if role not in (RESSTAGE_START, RESSTAGE_MIDDLE, RESSTAGE_END):
        raise ValueError(f"expected a resstage-* spec, got {role!r}")
    nd = spec.ndim
    ones, threes = (1,) * nd, (3,) * nd
    rtag = _ROLE_TAGS[role]
    tags = tags | {rtag}
    bt = tags | {TAG_RESIDUAL_BRANCH}

    if role == RESSTAGE_START:
        cur = _branch_conv(g, x, "conv1", spec.in_ch, spec.mid_ch, ones, ones, 1, bt)
        cur = g.add("bn", [cur], name="bn1", tags=bt, ch=spec.mid_ch)
        cur = g.add("relu", [cur], name="relu1", tags=bt)
        cur = _branch_conv(g, cur, "conv2", spec.mid_ch, spec.mid_ch, threes, spec.strides, spec.groups, bt)
        cur = g.add("bn", [cur], name="bn2", tags=bt, ch=spec.mid_ch)
        cur = g.add("relu", [cur], name="relu2", tags=bt)
        cur = _branch_conv(g, cur, "conv3", spec.mid_ch, spec.out_ch, ones, ones, 1, bt)
        cur = g.add("bn", [cur], name="bn3", tags=bt, ch=spec.out_ch)
        shortcut = _shortcut(g, x, spec, tags)
        return g.add("add", [cur, shortcut], name="add", tags=tags)

    cur = x
    if not spec.drop_first_bn:
        cur = g.add("bn", [cur], name="bn1", tags=bt, ch=spec.in_ch)
    cur = g.add("relu", [cur], name="relu1", tags=bt)
    cur = _branch_conv(g, cur, "conv1", spec.in_ch, spec.mid_ch, ones, ones, 1, bt)
    cur = g.add("bn", [cur], name="bn2", tags=bt, ch=spec.mid_ch)
    cur = g.add("relu", [cur], name="relu2", tags=bt)
    cur = _branch_conv(g, cur, "conv2", spec.mid_ch, spec.mid_ch, threes, spec.strides, spec.groups, bt)
    cur = g.add("bn", [cur], name="bn3", tags=bt, ch=spec.mid_ch)
    cur = g.add("relu", [cur], name="relu3", tags=bt)
    cur = _branch_conv(g, cur, "conv3", spec.mid_ch, spec.out_ch, ones, ones, 1, bt)
    cur = g.add("add", [cur, x], name="add", tags=tags)
    if role == RESSTAGE_END:
        cur = g.add("bn", [cur], name="post_bn", tags=tags | {TAG_MAIN_PATH}, ch=spec.out_ch)
        cur = g.add("relu", [cur], name="post_relu", tags=tags | {TAG_MAIN_PATH})
    return cur


def build_resgroup_block(g: GraphBuilder, x: str, spec: BlockSpec, order: str = "baseline", *, tags: frozenset = frozenset()) -> str:
    """Wide grouped block: 1x1 up to mid, grouped 3x3 at mid, 1x1 down to out.

    Requires mid_ch == 2 * out_ch so the 3x3 conv is the widest point of
    the block. ``order`` selects the wiring: "baseline" or "resstage"
    (role taken from ``spec.variant``).
    """
    if spec.mid_ch != 2 * spec.out_ch:
        raise ValueError(
            f"wide grouped block needs mid_ch == 2*out_ch, got mid_ch={spec.mid_ch}, out_ch={spec.out_ch}"
        )
    if spec.mid_ch % spec.groups:
        raise ValueError(f"mid_ch {spec.mid_ch} not divisible by groups {spec.groups}")
    if order == "baseline":
        return build_bottleneck_baseline(g, x, spec, tags=tags)
    if order == "resstage":
        return build_resstage_block(g, x, spec, tags=tags)
    raise ValueError(f"unknown block order {order!r}")
