"""Symbolic layer graphs: nodes, builder, shape propagation, trunk walk.

An :class:`ArchGraph` is a DAG of primitive layer nodes; node insertion
order is topological by construction, which keeps serialization stable and
analysis single-pass. Shapes carry no batch dimension: (C, H, W) for image
networks, (C, T, H, W) for video ones.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Tuple

LAYER_KINDS = (
    "input",
    "conv",
    "bn",
    "relu",
    "maxpool",
    "avgpool",
    "globalavgpool",
    "linear",
    "add",
    "output",
)

TAG_MAIN_PATH = "main-path"
TAG_RESIDUAL_BRANCH = "residual-branch"
TAG_PROJECTION = "projection"
TAG_START_BLOCK = "start-block"
TAG_MIDDLE_BLOCK = "middle-block"
TAG_END_BLOCK = "end-block"


def stage_tag(index: int) -> str:
    return f"stage-{index}"


class GraphError(ValueError):
    """Structural or shape violation in a layer graph."""


_ARITY = {
    "input": 0,
    "conv": 1,
    "bn": 1,
    "relu": 1,
    "maxpool": 1,
    "avgpool": 1,
    "globalavgpool": 1,
    "linear": 1,
    "add": 2,
    "output": 1,
}

# attrs that hold per-axis integer tuples, normalized on construction
_TUPLE_ATTRS = ("kernel", "stride", "padding", "shape")


def _as_int_tuple(v) -> Tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        return tuple(int(e) for e in v)
    return (int(v),)


@dataclass(frozen=True)
class LayerNode:
    """One primitive layer with its full hyperparameters and labels."""

    id: str
    kind: str
    inputs: Tuple[str, ...]
    attrs: Dict[str, Any] = field(default_factory=dict)
    tags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise GraphError(f"node {self.id!r}: unknown kind {self.kind!r}")
        if len(self.inputs) != _ARITY[self.kind]:
            raise GraphError(
                f"node {self.id!r}: kind {self.kind!r} takes {_ARITY[self.kind]} inputs, "
                f"got {len(self.inputs)}"
            )
        attrs = dict(self.attrs)
        for key in _TUPLE_ATTRS:
            if key in attrs:
                attrs[key] = _as_int_tuple(attrs[key])
        object.__setattr__(self, "attrs", attrs)
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "tags", frozenset(self.tags))
        if self.kind == "conv":
            self._validate_conv()

    def _validate_conv(self):
        a = self.attrs
        for key in ("in_ch", "out_ch", "kernel", "stride", "padding", "groups"):
            if key not in a:
                raise GraphError(f"conv node {self.id!r}: missing attr {key!r}")
        g = a["groups"]
        if g < 1:
            raise GraphError(f"conv node {self.id!r}: groups {g} < 1")
        if a["in_ch"] % g:
            raise GraphError(f"conv node {self.id!r}: in_ch {a['in_ch']} not divisible by groups {g}")
        if a["out_ch"] % g:
            raise GraphError(f"conv node {self.id!r}: out_ch {a['out_ch']} not divisible by groups {g}")
        if not (len(a["kernel"]) == len(a["stride"]) == len(a["padding"])):
            raise GraphError(f"conv node {self.id!r}: kernel/stride/padding rank mismatch")


@dataclass
class ArchGraph:
    """A complete architecture: nodes in topological order plus metadata."""

    nodes: Dict[str, LayerNode]
    input_shape: Tuple[int, ...]
    classes: int
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def executable(self) -> bool:
        return bool(self.meta.get("executable", True))

    def input_id(self) -> str:
        return self._only("input")

    def output_id(self) -> str:
        return self._only("output")

    def _only(self, kind: str) -> str:
        found = [n.id for n in self.nodes.values() if n.kind == kind]
        if len(found) != 1:
            raise GraphError(f"graph must have exactly one {kind} node, found {len(found)}")
        return found[0]

    def edges(self) -> List[Tuple[str, str]]:
        return [(src, node.id) for node in self.nodes.values() for src in node.inputs]

    def validate(self) -> None:
        self.input_id()
        self.output_id()
        seen: set = set()
        for node in self.nodes.values():
            for src in node.inputs:
                if src not in self.nodes:
                    raise GraphError(f"node {node.id!r}: unknown input {src!r}")
                if src not in seen:
                    raise GraphError(f"node {node.id!r}: input {src!r} does not precede it")
            seen.add(node.id)
        # reachability: forward from input, backward from output
        consumers: Dict[str, List[str]] = {nid: [] for nid in self.nodes}
        for src, dst in self.edges():
            consumers[src].append(dst)
        reached = {self.input_id()}
        frontier = [self.input_id()]
        while frontier:
            cur = frontier.pop()
            for nxt in consumers[cur]:
                if nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
        unreachable = set(self.nodes) - reached
        if unreachable:
            raise GraphError(f"nodes unreachable from input: {sorted(unreachable)[:5]}")
        feeds = {self.output_id()}
        for node in reversed(list(self.nodes.values())):
            if node.id in feeds:
                feeds.update(node.inputs)
        dangling = set(self.nodes) - feeds
        if dangling:
            raise GraphError(f"nodes that never reach the output: {sorted(dangling)[:5]}")


class GraphBuilder:
    """Incremental ArchGraph construction with scoped, human-readable ids."""

    def __init__(self, input_shape, classes: int = 0, meta: Dict[str, Any] | None = None):
        self._nodes: Dict[str, LayerNode] = {}
        self._scopes: List[str] = []
        self.input_shape = tuple(int(d) for d in input_shape)
        self.classes = int(classes)
        self.meta = dict(meta or {})
        self._input_id = self.add("input", [], name="input", shape=self.input_shape)

    @property
    def input_id(self) -> str:
        return self._input_id

    @contextmanager
    def scope(self, label: str):
        self._scopes.append(label)
        try:
            yield self
        finally:
            self._scopes.pop()

    def add(self, kind: str, inputs: Iterable[str], *, name: str, tags=frozenset(), **attrs) -> str:
        node_id = ".".join(self._scopes + [name])
        if node_id in self._nodes:
            raise GraphError(f"duplicate node id {node_id!r}")
        node = LayerNode(id=node_id, kind=kind, inputs=tuple(inputs), attrs=attrs, tags=tags)
        self._nodes[node_id] = node
        return node_id

    def finish(self, last: str, *, output_name: str = "output") -> ArchGraph:
        self.add("output", [last], name=output_name)
        graph = ArchGraph(
            nodes=self._nodes,
            input_shape=self.input_shape,
            classes=self.classes,
            meta=self.meta,
        )
        graph.validate()
        propagate_shapes(graph)
        return graph


def _window_dims(node: LayerNode, spatial: Tuple[int, ...]) -> Tuple[int, ...]:
    a = node.attrs
    kernel, stride, padding = a["kernel"], a["stride"], a["padding"]
    if len(kernel) != len(spatial):
        raise GraphError(
            f"node {node.id!r}: kernel rank {len(kernel)} does not match spatial rank {len(spatial)}"
        )
    out = []
    for axis, (size, k, s, p) in enumerate(zip(spatial, kernel, stride, padding)):
        o = (size + 2 * p - k) // s + 1
        if o < 1:
            raise GraphError(f"node {node.id!r}: output axis {axis} degenerates to {o}")
        out.append(o)
    return tuple(out)


def propagate_shapes(graph: ArchGraph) -> Dict[str, Tuple[int, ...]]:
    """Symbolic output shape of every node, batch dimension excluded."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    for node in graph.nodes.values():
        kind = node.kind
        if kind == "input":
            shapes[node.id] = tuple(node.attrs["shape"])
            continue
        src = shapes[node.inputs[0]]
        if kind == "conv":
            if node.attrs["in_ch"] != src[0]:
                raise GraphError(
                    f"node {node.id!r}: expects {node.attrs['in_ch']} input channels, gets {src[0]}"
                )
            shapes[node.id] = (node.attrs["out_ch"],) + _window_dims(node, src[1:])
        elif kind == "bn":
            if node.attrs["ch"] != src[0]:
                raise GraphError(f"node {node.id!r}: bn over {node.attrs['ch']} channels, input has {src[0]}")
            shapes[node.id] = src
        elif kind in ("relu", "output"):
            shapes[node.id] = src
        elif kind in ("maxpool", "avgpool"):
            shapes[node.id] = (src[0],) + _window_dims(node, src[1:])
        elif kind == "globalavgpool":
            shapes[node.id] = (src[0],)
        elif kind == "linear":
            expect = node.attrs["in_dim"]
            got = 1
            for d in src:
                got *= d
            if expect != got:
                raise GraphError(f"node {node.id!r}: linear expects {expect} features, gets {got}")
            shapes[node.id] = (node.attrs["out_dim"],)
        elif kind == "add":
            other = shapes[node.inputs[1]]
            if src != other:
                raise GraphError(f"node {node.id!r}: add of mismatched shapes {src} vs {other}")
            shapes[node.id] = src
        else:  # pragma: no cover
            raise GraphError(f"node {node.id!r}: unhandled kind {kind!r}")
    return shapes


def trunk_path(graph: ArchGraph) -> List[str]:
    """The main information path from input to output.

    Walks upstream from the output; at every add it follows the shortcut
    side, i.e. the one input not tagged as residual branch. Requires the
    builder-applied tags.
    """
    path = []
    cur = graph.nodes[graph.output_id()]
    while True:
        path.append(cur.id)
        if cur.kind == "input":
            break
        if cur.kind == "add":
            shortcut = [src for src in cur.inputs if TAG_RESIDUAL_BRANCH not in graph.nodes[src].tags]
            if len(shortcut) != 1:
                raise GraphError(
                    f"node {cur.id!r}: cannot identify the shortcut side "
                    f"({len(shortcut)} untagged inputs); graph is missing builder tags"
                )
            cur = graph.nodes[shortcut[0]]
        else:
            cur = graph.nodes[cur.inputs[0]]
    path.reverse()
    return path
