"""Canonical on-disk text format for architecture graphs (.arch.json).

The document is JSON with a fixed key order, nodes listed topologically,
and tags sorted, so serialized graphs diff cleanly and round-trip
node-for-node.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..graph import ArchGraph, GraphError, LayerNode

FORMAT_NAME = "resnetkit-arch"
FORMAT_VERSION = 1


class ArchFormatError(ValueError):
    """Malformed architecture document."""


def _node_doc(node: LayerNode) -> dict:
    return {
        "id": node.id,
        "kind": node.kind,
        "inputs": list(node.inputs),
        "tags": sorted(node.tags),
        "attrs": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(node.attrs.items())},
    }


def serialize(graph: ArchGraph) -> str:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": {k: graph.meta[k] for k in sorted(graph.meta)},
        "classes": graph.classes,
        "input_shape": list(graph.input_shape),
        "nodes": [_node_doc(n) for n in graph.nodes.values()],
    }
    return json.dumps(doc, indent=2) + "\n"


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise ArchFormatError(f"{context}: missing key {key!r}")
    return doc[key]


def deserialize(text: str) -> ArchGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArchFormatError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise ArchFormatError("document root must be an object")
    if _require(doc, "format", "document") != FORMAT_NAME:
        raise ArchFormatError(f"unknown format {doc.get('format')!r}, expected {FORMAT_NAME!r}")
    if _require(doc, "version", "document") != FORMAT_VERSION:
        raise ArchFormatError(f"unsupported version {doc.get('version')!r}")
    nodes_doc = _require(doc, "nodes", "document")
    if not isinstance(nodes_doc, list) or not nodes_doc:
        raise ArchFormatError("document needs a non-empty 'nodes' list")
    nodes = {}
    for i, nd in enumerate(nodes_doc):
        ctx = f"nodes[{i}]"
        if not isinstance(nd, dict):
            raise ArchFormatError(f"{ctx}: must be an object")
        node_id = _require(nd, "id", ctx)
        try:
            node = LayerNode(
                id=node_id,
                kind=_require(nd, "kind", ctx),
                inputs=tuple(_require(nd, "inputs", ctx)),
                attrs=dict(_require(nd, "attrs", ctx)),
                tags=frozenset(_require(nd, "tags", ctx)),
            )
        except GraphError as e:
            raise ArchFormatError(f"{ctx}: {e}") from e
        if node.id in nodes:
            raise ArchFormatError(f"{ctx}: duplicate node id {node.id!r}")
        nodes[node.id] = node
    graph = ArchGraph(
        nodes=nodes,
        input_shape=tuple(_require(doc, "input_shape", "document")),
        classes=int(_require(doc, "classes", "document")),
        meta=dict(_require(doc, "meta", "document")),
    )
    try:
        graph.validate()
    except GraphError as e:
        raise ArchFormatError(str(e)) from e
    return graph


def save_arch(graph: ArchGraph, path) -> None:
    Path(path).write_text(serialize(graph))


def load_arch(path) -> ArchGraph:
    p = Path(path)
    if not p.exists():
        raise ArchFormatError(f"no such architecture file: {p}")
    return deserialize(p.read_text())
