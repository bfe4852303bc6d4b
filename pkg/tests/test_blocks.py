"""Block constructors: censuses, projections, tags, identity behavior."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from resnetkit.blocks import (
    BlockSpec,
    ProjectionKind,
    build_bottleneck_baseline,
    build_bottleneck_preact,
    build_projection,
    build_resgroup_block,
    build_resstage_block,
)
from resnetkit.graph import GraphBuilder, propagate_shapes, trunk_path
from resnetkit.networks import InitPolicy, lower_to_executable


def block_graph(spec, builder_fn, input_shape):
    g = GraphBuilder(input_shape, classes=0, meta={"executable": True})
    out = builder_fn(g, g.input_id, spec, tags=frozenset({"stage-1"}))
    return g.finish(out)


def census(graph):
    counts = {}
    for node in graph.nodes.values():
        if node.kind in ("input", "output"):
            continue
        counts[node.kind] = counts.get(node.kind, 0) + 1
    return counts


def node_params(graph):
    total = 0
    for node in graph.nodes.values():
        if node.kind == "conv":
            a = node.attrs
            total += (a["in_ch"] // a["groups"]) * a["out_ch"] * a["kernel"][0] * a["kernel"][1]
        elif node.kind == "bn":
            total += 2 * node.attrs["ch"]
    return total


class TestBaselineBlock:
    def test_first_block_of_deep_stage(self):
        # 64 -> 64 -> 256 with a projection: three branch convs plus one projection conv
        spec = BlockSpec("baseline", 64, 64, 256, stride=1, projection=ProjectionKind.STRIDED_CONV)
        graph = block_graph(spec, build_bottleneck_baseline, (64, 56, 56))
        c = census(graph)
        assert c["conv"] == 4
        assert c["bn"] == 4
        assert c["relu"] == 3
        shapes = propagate_shapes(graph)
        assert shapes[graph.output_id()] == (256, 56, 56)

    def test_identity_block_has_no_projection(self):
        spec = BlockSpec("baseline", 256, 64, 256, stride=1)
        graph = block_graph(spec, build_bottleneck_baseline, (256, 56, 56))
        assert not any("projection" in n.tags for n in graph.nodes.values())
        assert census(graph) == {"conv": 3, "bn": 3, "relu": 3, "add": 1}

    def test_projection_census(self):
        spec = BlockSpec("baseline", 256, 128, 512, stride=2, projection=ProjectionKind.STRIDED_CONV)
        graph = block_graph(spec, build_bottleneck_baseline, (256, 56, 56))
        assert census(graph) == {"conv": 4, "bn": 4, "relu": 3, "add": 1}
        shapes = propagate_shapes(graph)
        assert shapes[graph.output_id()] == (512, 28, 28)

    def test_spec_rejects_missing_projection(self):
        with pytest.raises(ValueError, match="requires a projection"):
            BlockSpec("baseline", 64, 64, 256, stride=1)

    def test_spec_rejects_spurious_projection(self):
        with pytest.raises(ValueError, match="identity-sized"):
            BlockSpec("baseline", 256, 64, 256, stride=1, projection=ProjectionKind.STRIDED_CONV)


class TestPreactBlock:
    def test_no_trunk_relu(self):
        spec = BlockSpec("preact", 64, 64, 256, projection=ProjectionKind.STRIDED_CONV)
        graph = block_graph(spec, build_bottleneck_preact, (64, 56, 56))
        trunk = trunk_path(graph)
        assert not any(graph.nodes[nid].kind == "relu" for nid in trunk)

    def test_census_matches_baseline(self):
        base = block_graph(
            BlockSpec("baseline", 64, 64, 256, projection=ProjectionKind.STRIDED_CONV),
            build_bottleneck_baseline,
            (64, 56, 56),
        )
        pre = block_graph(
            BlockSpec("preact", 64, 64, 256, projection=ProjectionKind.STRIDED_CONV),
            build_bottleneck_preact,
            (64, 56, 56),
        )
        # the trunk relu moves to the branch front: same component counts
        assert census(base) == census(pre)

    def test_projection_placement_unchanged(self):
        spec = BlockSpec("preact", 64, 64, 256, projection=ProjectionKind.STRIDED_CONV)
        graph = block_graph(spec, build_bottleneck_preact, (64, 56, 56))
        proj = [n for n in graph.nodes.values() if "projection" in n.tags]
        conv = [n for n in proj if n.kind == "conv"][0]
        # projection maps the raw block input, as in the baseline wiring
        assert conv.inputs[0] == graph.input_id() or graph.nodes[conv.inputs[0]].kind != "relu"
        assert {n.kind for n in proj} == {"conv", "bn"}


class TestResstageBlocks:
    def test_stage_contributes_one_trunk_relu(self):
        g = GraphBuilder((64, 56, 56), meta={"executable": True})
        tags = frozenset({"stage-1"})
        with g.scope("block1"):
            cur = build_resstage_block(
                g, g.input_id,
                BlockSpec("resstage-start", 64, 64, 256, projection=ProjectionKind.STRIDED_CONV),
                tags=tags,
            )
        with g.scope("block2"):
            cur = build_resstage_block(
                g, cur, BlockSpec("resstage-middle", 256, 64, 256, drop_first_bn=True), tags=tags
            )
        with g.scope("block3"):
            cur = build_resstage_block(g, cur, BlockSpec("resstage-end", 256, 64, 256), tags=tags)
        graph = g.finish(cur)
        trunk_relus = [
            nid for nid in trunk_path(graph) if graph.nodes[nid].kind == "relu"
        ]
        assert len(trunk_relus) == 1
        assert "end-block" in graph.nodes[trunk_relus[0]].tags

    def test_middle_bn_census_with_and_without_drop(self):
        dropped = block_graph(
            BlockSpec("resstage-middle", 256, 64, 256, drop_first_bn=True),
            build_resstage_block,
            (256, 56, 56),
        )
        kept = block_graph(
            BlockSpec("resstage-middle", 256, 64, 256), build_resstage_block, (256, 56, 56)
        )
        assert census(dropped)["bn"] == 2
        assert census(kept)["bn"] == 3

    def test_role_constraints(self):
        with pytest.raises(ValueError, match="requires a projection"):
            BlockSpec("resstage-start", 256, 64, 256, stride=1)
        with pytest.raises(ValueError, match="identity shortcut"):
            BlockSpec("resstage-end", 128, 64, 256, projection=ProjectionKind.STRIDED_CONV)
        with pytest.raises(ValueError, match="drop_first_bn"):
            BlockSpec("baseline", 256, 64, 256, drop_first_bn=True)

    def test_start_has_no_trunk_activation(self):
        graph = block_graph(
            BlockSpec("resstage-start", 64, 64, 256, projection=ProjectionKind.MAXPOOL_THEN_CONV, stride=2),
            build_resstage_block,
            (64, 112, 112),
        )
        add_id = [n.id for n in graph.nodes.values() if n.kind == "add"][0]
        assert graph.nodes[graph.output_id()].inputs[0] == add_id

    def test_zero_gamma_middle_block_is_identity(self, rng):
        graph = block_graph(
            BlockSpec("resstage-middle", 32, 8, 32), build_resstage_block, (32, 6, 6)
        )
        model = lower_to_executable(graph, InitPolicy(seed=3, zero_gamma=True))
        model.eval()
        x = rng.standard_normal((2, 32, 6, 6)).astype(np.float32)
        out = model.forward(x).data
        assert np.array_equal(out, x)

    def test_zero_gamma_baseline_block_is_relu(self, rng):
        graph = block_graph(
            BlockSpec("baseline", 32, 8, 32), build_bottleneck_baseline, (32, 6, 6)
        )
        model = lower_to_executable(graph, InitPolicy(seed=3, zero_gamma=True))
        model.eval()
        x = rng.standard_normal((2, 32, 6, 6)).astype(np.float32)
        out = model.forward(x).data
        assert np.array_equal(out, np.maximum(x, 0))


class TestProjection:
    def test_improved_downsampling_shape(self):
        g = GraphBuilder((256, 56, 56), meta={"executable": True})
        out = build_projection(g, g.input_id, ProjectionKind.MAXPOOL_THEN_CONV, 256, 512, 2)
        graph = g.finish(out)
        shapes = propagate_shapes(graph)
        assert shapes[graph.output_id()] == (512, 28, 28)
        pools = [n for n in graph.nodes.values() if n.kind == "maxpool"]
        assert len(pools) == 1
        assert pools[0].attrs["kernel"] == (3, 3)
        assert pools[0].attrs["stride"] == (2, 2)
        assert pools[0].attrs["padding"] == (1, 1)

    def test_improved_stride1_has_no_pool(self):
        g = GraphBuilder((64, 56, 56), meta={"executable": True})
        out = build_projection(g, g.input_id, ProjectionKind.MAXPOOL_THEN_CONV, 64, 256, 1)
        graph = g.finish(out)
        assert not any(n.kind == "maxpool" for n in graph.nodes.values())

    def test_avg_comparison_uses_2x2(self):
        g = GraphBuilder((256, 56, 56), meta={"executable": True})
        out = build_projection(g, g.input_id, ProjectionKind.AVGPOOL_THEN_CONV, 256, 512, 2)
        graph = g.finish(out)
        pools = [n for n in graph.nodes.values() if n.kind == "avgpool"]
        assert len(pools) == 1
        assert pools[0].attrs["kernel"] == (2, 2)
        assert pools[0].attrs["padding"] == (0, 0)

    def test_projection_swap_preserves_params(self):
        for stride in (1, 2):
            specs = [
                BlockSpec("baseline", 64, 64, 256, stride=stride, projection=kind)
                for kind in ProjectionKind
            ]
            graphs = [block_graph(s, build_bottleneck_baseline, (64, 56, 56)) for s in specs]
            params = {node_params(g) for g in graphs}
            assert len(params) == 1

    def test_pool_kernel_matches_middle_conv_kernel(self):
        spec = BlockSpec(
            "baseline", 64, 64, 256, stride=2, projection=ProjectionKind.MAXPOOL_THEN_CONV
        )
        graph = block_graph(spec, build_bottleneck_baseline, (64, 112, 112))
        pool = [n for n in graph.nodes.values() if n.kind == "maxpool"][0]
        mid_conv = [
            n for n in graph.nodes.values() if n.kind == "conv" and n.attrs["kernel"] == (3, 3)
        ][0]
        assert pool.attrs["kernel"] == mid_conv.attrs["kernel"]

    def test_unknown_kind_rejected(self):
        g = GraphBuilder((8, 8, 8))
        with pytest.raises(ValueError, match="projection"):
            build_projection(g, g.input_id, "nearest", 8, 16, 2)


class TestResgroupBlock:
    def test_stage1_shape(self):
        # widest point at the 3x3: 1x1 to 256, grouped 3x3 at 256, 1x1 down to 128
        spec = BlockSpec(
            "baseline", 64, 256, 128, stride=1, groups=64, projection=ProjectionKind.STRIDED_CONV
        )
        g = GraphBuilder((64, 56, 56), meta={"executable": True})
        out = build_resgroup_block(g, g.input_id, spec, order="baseline")
        graph = g.finish(out)
        convs = [n for n in graph.nodes.values() if n.kind == "conv" and "projection" not in n.tags]
        widths = [(c.attrs["in_ch"], c.attrs["out_ch"], c.attrs["groups"]) for c in convs]
        assert widths == [(64, 256, 1), (256, 256, 64), (256, 128, 1)]

    def test_spatial_conv_is_widest(self):
        spec = BlockSpec(
            "baseline", 64, 256, 128, groups=8, projection=ProjectionKind.STRIDED_CONV
        )
        g = GraphBuilder((64, 56, 56))
        build_resgroup_block(g, g.input_id, spec, order="baseline")
        # mid == 2*out: the 3x3 sees 4x the channels of a same-depth bottleneck
        assert spec.mid_ch == 2 * spec.out_ch == 4 * 64

    def test_rejects_narrow_middle(self):
        spec = BlockSpec("baseline", 64, 64, 256, projection=ProjectionKind.STRIDED_CONV)
        g = GraphBuilder((64, 56, 56))
        with pytest.raises(ValueError, match="mid_ch == 2"):
            build_resgroup_block(g, g.input_id, spec, order="baseline")

    def test_resstage_order_delegates(self):
        spec = BlockSpec(
            "resstage-start", 64, 256, 128, groups=64, projection=ProjectionKind.MAXPOOL_THEN_CONV, stride=2
        )
        g = GraphBuilder((64, 112, 112), meta={"executable": True})
        out = build_resgroup_block(g, g.input_id, spec, order="resstage")
        graph = g.finish(out)
        assert any("start-block" in n.tags for n in graph.nodes.values())

    def test_unknown_order(self):
        spec = BlockSpec("baseline", 64, 256, 128, projection=ProjectionKind.STRIDED_CONV)
        g = GraphBuilder((64, 56, 56))
        with pytest.raises(ValueError, match="order"):
            build_resgroup_block(g, g.input_id, spec, order="zigzag")


@given(
    variant=st.sampled_from(["baseline", "preact"]),
    in_ch=st.sampled_from([16, 32, 64]),
    mid_ch=st.sampled_from([8, 16, 32]),
    out_mult=st.sampled_from([1, 2, 4]),
    stride=st.sampled_from([1, 2]),
    kind=st.sampled_from(list(ProjectionKind)),
)
def test_block_add_inputs_always_match(variant, in_ch, mid_ch, out_mult, stride, kind):
    """Residual add joins identically shaped operands for every legal spec."""
    out_ch = mid_ch * out_mult
    needs = in_ch != out_ch or stride != 1
    spec = BlockSpec(
        variant, in_ch, mid_ch, out_ch, stride=stride, projection=kind if needs else None
    )
    builder = build_bottleneck_baseline if variant == "baseline" else build_bottleneck_preact
    graph = block_graph(spec, builder, (in_ch, 16, 16))
    shapes = propagate_shapes(graph)
    adds = [n for n in graph.nodes.values() if n.kind == "add"]
    assert len(adds) == 1
    left, right = adds[0].inputs
    assert shapes[left] == shapes[right]
    has_proj = any("projection" in n.tags for n in graph.nodes.values())
    assert has_proj == needs
