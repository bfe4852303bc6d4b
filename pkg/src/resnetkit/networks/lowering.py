"""Lowering a symbolic graph to an executable model over the engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .. import engine
from ..engine import BatchNormState, Parameter, Tape, Tensor
from ..graph import ArchGraph, GraphError, TAG_RESIDUAL_BRANCH


class NotExecutableError(RuntimeError):
    """The graph was built for counting only and cannot run."""


@dataclass(frozen=True)
class InitPolicy:
    """Weight initialization recipe for lowering.

    Convolutions get fan-out-scaled normal draws (kaiming); batch norms get
    unit gamma and zero beta, except that ``zero_gamma`` zeroes the final
    normalization of every residual branch so each identity-shortcut block
    starts as a no-op.
    """

    seed: int = 0
    zero_gamma: bool = False
    dtype: str = "float32"


def branch_final_bn_ids(graph: ArchGraph) -> List[str]:
    """The last normalization on each residual branch, nearest its add."""
    found = []
    for node in graph.nodes.values():
        if node.kind != "add":
            continue
        branch = [s for s in node.inputs if TAG_RESIDUAL_BRANCH in graph.nodes[s].tags]
        if len(branch) != 1:
            raise GraphError(f"node {node.id!r}: expected one residual-branch input, got {len(branch)}")
        cur = graph.nodes[branch[0]]
        while cur.kind != "bn":
            if TAG_RESIDUAL_BRANCH not in cur.tags or not cur.inputs:
                raise GraphError(f"node {node.id!r}: no normalization found on its residual branch")
            cur = graph.nodes[cur.inputs[0]]
        found.append(cur.id)
    return found


class ExecutableModel:
    """Forward/backward-runnable instantiation of an ArchGraph."""

    def __init__(self, graph: ArchGraph, params: Dict[str, Parameter], bn_states: Dict[str, BatchNormState], dtype):
        self.graph = graph
        self.params = params
        self.bn_states = bn_states
        self.dtype = dtype

    # -- mode ---------------------------------------------------------------
    def train(self) -> "ExecutableModel":
        for st in self.bn_states.values():
            st.training = True
        return self

    def eval(self) -> "ExecutableModel":
        for st in self.bn_states.values():
            st.training = False
        return self

    @property
    def training(self) -> bool:
        return any(st.training for st in self.bn_states.values())

    # -- parameters ----------------------------------------------------------
    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def num_param_elements(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self) -> None:
        engine.zero_grads(self.params.values())

    # -- execution -----------------------------------------------------------
    def forward(
        self,
        x: np.ndarray,
        tape: Tape | None = None,
        *,
        update_stats: bool = True,
        capture: Dict[str, Tensor] | None = None,
    ) -> Tensor:
        """Run the graph on a [N, C, H, W] batch and return the logits."""
        xd = np.asarray(x, dtype=self.dtype)
        expect = self.graph.input_shape
        if xd.ndim != len(expect) + 1 or xd.shape[1:] != expect:
            raise ValueError(f"input batch shape {xd.shape} does not match (N, {expect})")
        vals: Dict[str, Tensor] = {}
        out = None
        for node in self.graph.nodes.values():
            kind = node.kind
            if kind == "input":
                vals[node.id] = Tensor(xd)
                continue
            src = vals[node.inputs[0]]
            if kind == "conv":
                a = node.attrs
                vals[node.id] = engine.conv2d(
                    tape, src, self.params[f"{node.id}.weight"],
                    stride=a["stride"], padding=a["padding"], groups=a["groups"],
                )
            elif kind == "bn":
                vals[node.id] = engine.batch_norm(tape, src, self.bn_states[node.id], update_running=update_stats)
            elif kind == "relu":
                vals[node.id] = engine.relu(tape, src)
            elif kind == "maxpool":
                a = node.attrs
                vals[node.id] = engine.max_pool2d(tape, src, kernel=a["kernel"], stride=a["stride"], padding=a["padding"])
            elif kind == "avgpool":
                a = node.attrs
                vals[node.id] = engine.avg_pool2d(tape, src, kernel=a["kernel"], stride=a["stride"], padding=a["padding"])
            elif kind == "globalavgpool":
                vals[node.id] = engine.global_avg_pool(tape, src)
            elif kind == "linear":
                vals[node.id] = engine.linear(
                    tape, src, self.params[f"{node.id}.weight"], self.params[f"{node.id}.bias"]
                )
            elif kind == "add":
                vals[node.id] = engine.add(tape, src, vals[node.inputs[1]])
            elif kind == "output":
                out = src
                vals[node.id] = src
            else:  # pragma: no cover
                raise NotExecutableError(f"node {node.id!r}: kind {kind!r} is not executable")
        if capture is not None:
            capture.update(vals)
        assert out is not None
        return out

    # -- persistence -----------------------------------------------------------
    def save(self, path) -> None:
        engine.save_checkpoint(path, self.parameters())

    def load(self, path) -> None:
        stored = engine.load_checkpoint(path)
        missing = [pid for pid in self.params if pid not in stored]
        if missing:
            raise engine.CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
        for pid, p in self.params.items():
            arr = stored[pid]
            if arr.shape != p.data.shape:
                raise engine.CheckpointError(
                    f"parameter {pid!r}: checkpoint shape {arr.shape} != model shape {p.data.shape}"
                )
            p.data = arr.astype(self.dtype)


def lower_to_executable(graph: ArchGraph, init: InitPolicy = InitPolicy()) -> ExecutableModel:
    """Allocate parameters for every weighted node and wire up execution.

    Conv weights: normal with std sqrt(2 / fan_out), fan_out = out_ch/groups
    * prod(kernel). Classifier: normal std 0.01, zero bias. Batch norm:
    gamma 1 (or 0 on each branch-final normalization under zero_gamma),
    beta 0, running stats (0, 1).
    """
    if not graph.executable:
        raise NotExecutableError(
            f"{graph.meta.get('family', 'graph')} graphs are built for counting only and cannot execute"
        )
    if len(graph.input_shape) != 3:
        raise NotExecutableError(f"execution supports 2-D networks, input shape {graph.input_shape}")
    dtype = np.dtype(init.dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"dtype must be float32 or float64, got {init.dtype}")
    rng = np.random.default_rng(init.seed)
    params: Dict[str, Parameter] = {}
    bn_states: Dict[str, BatchNormState] = {}
    for node in graph.nodes.values():
        if node.kind == "conv":
            a = node.attrs
            shape = (a["out_ch"], a["in_ch"] // a["groups"]) + tuple(a["kernel"])
            fan_out = (a["out_ch"] // a["groups"]) * int(np.prod(a["kernel"]))
            w = rng.normal(0.0, np.sqrt(2.0 / fan_out), size=shape).astype(dtype)
            params[f"{node.id}.weight"] = Parameter(f"{node.id}.weight", w)
        elif node.kind == "bn":
            st = BatchNormState.create(node.id, node.attrs["ch"], dtype=dtype)
            bn_states[node.id] = st
            params[st.gamma.id] = st.gamma
            params[st.beta.id] = st.beta
        elif node.kind == "linear":
            a = node.attrs
            w = rng.normal(0.0, 0.01, size=(a["out_dim"], a["in_dim"])).astype(dtype)
            params[f"{node.id}.weight"] = Parameter(f"{node.id}.weight", w)
            params[f"{node.id}.bias"] = Parameter(f"{node.id}.bias", np.zeros(a["out_dim"], dtype=dtype))
    if init.zero_gamma:
        for bn_id in branch_final_bn_ids(graph):
            gamma = bn_states[bn_id].gamma
            gamma.data = np.zeros_like(gamma.data)
    return ExecutableModel(graph, params, bn_states, dtype)
