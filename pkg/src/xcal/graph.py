"""Model IR: a DAG of typed nodes plus a named weight table.

A model lives on disk as two files in one directory: ``model.json`` (topology,
metadata, weight index) and ``weights.bin`` (little-endian tensor payloads at
64-byte aligned offsets).
"""

from __future__ import annotations

import copy
import heapq
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import ops
from .errors import DataError, GraphError, ShapeError
from .xten import DTYPE_NAMES, dtype_name

FORMAT_VERSION = 1
BLOB_NAME = "weights.bin"
MANIFEST_NAME = "model.json"
ALIGN = 64

OP_KINDS = (
    "Input",
    "Output",
    "Conv2D",
    "Linear",
    "BatchNorm2D",
    "ReLU",
    "MaxPool2D",
    "GlobalAvgPool",
    "Add",
    "Flatten",
)

# number of inputs and parameter tensors each op accepts
_ARITY = {
    "Input": 0, "Output": 1, "Conv2D": 1, "Linear": 1, "BatchNorm2D": 1,
    "ReLU": 1, "MaxPool2D": 1, "GlobalAvgPool": 1, "Add": 2, "Flatten": 1,
}
_NPARAMS = {
    "Conv2D": (1, 2), "Linear": (1, 2), "BatchNorm2D": (4, 4),
}

# BatchNorm2D params are ordered: gamma, beta, running mean, running var
BN_GAMMA, BN_BETA, BN_MEAN, BN_VAR = range(4)


@dataclass
class Node:
    id: str
    op: str
    inputs: list[str] = field(default_factory=list)
    params: list[str] = field(default_factory=list)
    attrs: dict = field(default_factory=dict)


@dataclass
class Graph:
    nodes: list[Node]
    weights: dict[str, np.ndarray]
    input_shape: tuple[int, int, int, int]
    normalization: dict | None = None

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        validate(self)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise GraphError(f"unknown node id {node_id!r}")

    @property
    def input_id(self) -> str:
        return next(n.id for n in self.nodes if n.op == "Input")

    @property
    def output_id(self) -> str:
        return next(n.id for n in self.nodes if n.op == "Output")

    def consumers(self, node_id: str) -> list[Node]:
        return [n for n in self.nodes if node_id in n.inputs]

    def nodes_of(self, *kinds: str) -> list[Node]:
        return [n for n in self.nodes if n.op in kinds]

    def copy(self) -> "Graph":
        """Structural copy; weight arrays are shared and must not be mutated in place."""
        return Graph(
            nodes=copy.deepcopy(self.nodes),
            weights=dict(self.weights),
            input_shape=self.input_shape,
            normalization=copy.deepcopy(self.normalization),
        )


def validate(graph: Graph) -> None:
    ids = [n.id for n in graph.nodes]
    if len(set(ids)) != len(ids):
        raise GraphError("duplicate node ids")
    by_id = {n.id: n for n in graph.nodes}
    for kind in ("Input", "Output"):
        count = sum(n.op == kind for n in graph.nodes)
        if count != 1:
            raise GraphError(f"graph must have exactly one {kind} node, found {count}")
    if len(graph.input_shape) != 4 or any(d < 1 for d in graph.input_shape):
        raise GraphError(f"input_shape must be positive NCHW, got {graph.input_shape}")
    for n in graph.nodes:
        if n.op not in OP_KINDS:
            raise GraphError(f"node {n.id!r}: unknown op {n.op!r}")
        if len(n.inputs) != _ARITY[n.op]:
            raise GraphError(f"node {n.id!r}: {n.op} takes {_ARITY[n.op]} inputs, got {len(n.inputs)}")
        for src in n.inputs:
            if src not in by_id:
                raise GraphError(f"node {n.id!r}: dangling input reference {src!r}")
        lo, hi = _NPARAMS.get(n.op, (0, 0))
        if not lo <= len(n.params) <= hi:
            raise GraphError(f"node {n.id!r}: {n.op} takes {lo}..{hi} params, got {len(n.params)}")
        for p in n.params:
            if p not in graph.weights:
                raise GraphError(f"node {n.id!r}: dangling weight reference {p!r}")
        if n.op == "BatchNorm2D":
            pred = by_id[n.inputs[0]]
            if pred.op not in ("Conv2D", "Linear"):
                raise GraphError(
                    f"BatchNorm2D {n.id!r} must follow Conv2D or Linear, follows {pred.op}"
                )
    topo_order(graph)


def topo_order(graph: Graph) -> list[str]:
    """Kahn's algorithm; among ready nodes the earliest-declared goes first."""
    index = {n.id: i for i, n in enumerate(graph.nodes)}
    pending = {n.id: len(set(n.inputs)) for n in graph.nodes}
    users: dict[str, list[str]] = {n.id: [] for n in graph.nodes}
    for n in graph.nodes:
        for src in set(n.inputs):
            users[src].append(n.id)
    ready = [index[nid] for nid, k in pending.items() if k == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        node = graph.nodes[heapq.heappop(ready)]
        order.append(node.id)
        for u in users[node.id]:
            pending[u] -= 1
            if pending[u] == 0:
                heapq.heappush(ready, index[u])
    if len(order) != len(graph.nodes):
        stuck = sorted(nid for nid, k in pending.items() if k > 0)
        raise GraphError(f"cycle detected among nodes {stuck}")
    return order


def _pair_attr(attrs: dict, key: str, default):
    v = attrs.get(key, default)
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    return tuple(int(a) for a in v)


def eval_node(node: Node, args: list[np.ndarray], weights: dict[str, np.ndarray]) -> np.ndarray:
    """Apply one node's kernel to already-computed input values."""
    p = [weights[name] for name in node.params]
    op = node.op
    if op == "Conv2D":
        return ops.conv2d(
            args[0], p[0], p[1] if len(p) > 1 else None,
            stride=_pair_attr(node.attrs, "stride", 1),
            padding=_pair_attr(node.attrs, "padding", 0),
        )
    if op == "Linear":
        return ops.linear(args[0], p[0], p[1] if len(p) > 1 else None)
    if op == "BatchNorm2D":
        return ops.batchnorm_apply(
            args[0], p[BN_MEAN], p[BN_VAR], p[BN_GAMMA], p[BN_BETA],
            node.attrs.get("eps", 1e-5),
        )
    if op == "ReLU":
        return ops.relu(args[0])
    if op == "MaxPool2D":
        kernel = _pair_attr(node.attrs, "kernel", 2)
        return ops.maxpool2d(args[0], kernel, _pair_attr(node.attrs, "stride", kernel))
    if op == "GlobalAvgPool":
        return ops.global_avgpool(args[0])
    if op == "Add":
        return ops.add(args[0], args[1])
    if op == "Flatten":
        return ops.flatten(args[0])
    if op == "Output":
        return args[0]
    raise GraphError(f"cannot evaluate op {op!r}")


Hook = Callable[[Node, np.ndarray], np.ndarray]


def run(
    graph: Graph,
    x: np.ndarray,
    taps: Iterable[str] = (),
    hook: Hook | None = None,
    weights: dict[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Execute the graph on a batch and return (output, {tap id: activation}).

    ``hook`` sees every node's output right after it is computed and may
    replace it; ``weights`` overrides the graph's weight table.
    """
    x = np.asarray(x, dtype=np.float32)
    _, c, h, w = graph.input_shape
    if x.ndim != 4 or x.shape[1:] != (c, h, w):
        raise ShapeError(f"input shape {x.shape} does not match model input (N, {c}, {h}, {w})")
    taps = set(taps)
    known = {n.id for n in graph.nodes}
    missing = taps - known
    if missing:
        raise GraphError(f"unknown tap ids {sorted(missing)}")
    weights = graph.weights if weights is None else weights
    by_id = {n.id: n for n in graph.nodes}
    order = topo_order(graph)
    # free intermediate values once their last consumer has run
    last_use = {}
    for step, nid in enumerate(order):
        for src in by_id[nid].inputs:
            last_use[src] = step
    values: dict[str, np.ndarray] = {}
    tapped: dict[str, np.ndarray] = {}
    for step, nid in enumerate(order):
        node = by_id[nid]
        if node.op == "Input":
            out = x
        else:
            try:
                out = eval_node(node, [values[s] for s in node.inputs], weights)
            except ShapeError as exc:
                raise ShapeError(f"node {nid!r} ({node.op}): {exc}") from exc
        if hook is not None:
            out = hook(node, out)
        values[nid] = out
        if nid in taps:
            tapped[nid] = out
        for src in node.inputs:
            if last_use.get(src) == step and src not in taps:
                values.pop(src, None)
    return values[graph.output_id], tapped


# -- serialization ---------------------------------------------------------


def _manifest_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() or path.suffix != ".json" else path


def save_model(graph: Graph, manifest_path: str | os.PathLike) -> None:
    """Write ``model.json`` and ``weights.bin``; output bytes depend only on the graph."""
    manifest_path = _manifest_path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, arr in graph.weights.items():
        arr = np.ascontiguousarray(arr)
        dt = dtype_name(arr.dtype)
        payload = arr.astype(DTYPE_NAMES[dt], copy=False).tobytes()
        pad = (-offset) % ALIGN
        if pad:
            chunks.append(b"\0" * pad)
            offset += pad
        entries.append(
            {"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset, "nbytes": len(payload)}
        )
        chunks.append(payload)
        offset += len(payload)
    manifest = {
        "version": FORMAT_VERSION,
        "input_shape": list(graph.input_shape),
        "normalization": graph.normalization,
        "nodes": [
            {"id": n.id, "op": n.op, "attrs": n.attrs, "inputs": n.inputs, "params": n.params}
            for n in graph.nodes
        ],
        "weights": entries,
    }
    try:
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        (manifest_path.parent / BLOB_NAME).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise DataError(f"cannot write model to {manifest_path.parent}: {exc}") from exc


def load_model(manifest_path: str | os.PathLike) -> Graph:
    manifest_path = _manifest_path(manifest_path)
    blob_path = manifest_path.parent / BLOB_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON: {exc}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise DataError(f"{manifest_path}: unsupported manifest version {manifest.get('version')}")
    weights: dict[str, np.ndarray] = {}
    for e in manifest["weights"]:
        name = e["name"]
        if e["dtype"] not in DTYPE_NAMES:
            raise DataError(f"weight {name!r}: unknown dtype {e['dtype']!r}")
        dt = DTYPE_NAMES[e["dtype"]]
        shape = tuple(int(d) for d in e["shape"])
        off, nbytes = int(e["offset"]), int(e["nbytes"])
        expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if nbytes != expected:
            raise DataError(f"weight {name!r}: nbytes {nbytes} != {expected} implied by shape")
        if off < 0 or off % ALIGN or off + nbytes > len(blob):
            raise DataError(f"weight {name!r}: offset/length {off}+{nbytes} outside blob of {len(blob)} bytes")
        if name in weights:
            raise DataError(f"duplicate weight name {name!r}")
        weights[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
    nodes = [
        Node(
            id=d["id"], op=d["op"], inputs=list(d.get("inputs", [])),
            params=list(d.get("params", [])), attrs=dict(d.get("attrs", {})),
        )
        for d in manifest["nodes"]
    ]
    return Graph(
        nodes=nodes,
        weights=weights,
        input_shape=tuple(manifest["input_shape"]),
        normalization=manifest.get("normalization"),
    )
