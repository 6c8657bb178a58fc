"""BatchNorm folding and BatchNorm-adjusted calibration.

``bn_adjust_calibrate`` re-estimates every BatchNorm layer's running
statistics on the calibration domain before activation ranges are measured:
reset the statistics, accumulate them on the calibration data, fold, derive
weight parameters, then run the calibration data again for activation
parameters.
"""

from __future__ import annotations

import numpy as np

from .data import batch_iter
from .errors import GraphError
from .graph import BN_BETA, BN_GAMMA, BN_MEAN, BN_VAR, Graph, Node, run, topo_order
from .parallel import ordered_map
from .quant import DEFAULT_NBINS, QuantParams, calibrate_activations, calibrate_weights
from .stats import ChannelMoments


def _bn_nodes(graph: Graph) -> list[Node]:
    by_id = {n.id: n for n in graph.nodes}
    return [by_id[nid] for nid in topo_order(graph) if by_id[nid].op == "BatchNorm2D"]


def fold_bn(graph: Graph) -> Graph:
    """Absorb each BatchNorm into its producer: ``W' = W g/sqrt(v+eps)``, ``b' = (b-m) g/sqrt(v+eps) + beta``."""
    g = graph.copy()
    by_id = {n.id: n for n in g.nodes}
    removed = set()
    for bn in _bn_nodes(g):
        prod = by_id[bn.inputs[0]]
        users = g.consumers(prod.id)
        if len(users) != 1:
            raise GraphError(f"cannot fold {bn.id!r}: {prod.id!r} has {len(users)} consumers")
        gamma, beta, mean, var = (
            g.weights[bn.params[k]].astype(np.float64) for k in (BN_GAMMA, BN_BETA, BN_MEAN, BN_VAR)
        )
        eps = float(bn.attrs.get("eps", 1e-5))
        factor = gamma / np.sqrt(var + eps)
        w = g.weights[prod.params[0]].astype(np.float64)
        if len(prod.params) > 1:
            b = g.weights[prod.params[1]].astype(np.float64)
            bias_name = prod.params[1]
        else:
            b = np.zeros(w.shape[0])
            bias_name = f"{prod.id}.bias"
            if bias_name in g.weights:
                raise GraphError(f"cannot fold {bn.id!r}: weight name {bias_name!r} taken")
            prod.params.append(bias_name)
        shape = (-1,) + (1,) * (w.ndim - 1)
        g.weights[prod.params[0]] = (w * factor.reshape(shape)).astype(np.float32)
        g.weights[bias_name] = ((b - mean) * factor + beta).astype(np.float32)
        for n in g.nodes:
            n.inputs = [prod.id if s == bn.id else s for s in n.inputs]
        removed.add(bn.id)
    g.nodes = [n for n in g.nodes if n.id not in removed]
    used = {p for n in g.nodes for p in n.params}
    g.weights = {k: v for k, v in g.weights.items() if k in used}
    return Graph(g.nodes, g.weights, g.input_shape, g.normalization)


def reset_bn(graph: Graph) -> Graph:
    """Running mean to 0, running variance to 1, sample count to 0."""
    g = graph.copy()
    for bn in g.nodes_of("BatchNorm2D"):
        c = g.weights[bn.params[BN_MEAN]].shape[0]
        g.weights[bn.params[BN_MEAN]] = np.zeros(c, dtype=np.float32)
        g.weights[bn.params[BN_VAR]] = np.ones(c, dtype=np.float32)
        bn.attrs["count"] = 0
    return g


def accumulate_bn(graph: Graph, data, batch_size: int = 64, threads: int | None = None) -> Graph:
    """Replace running statistics with exact statistics of each BN's input on ``data``.

    BatchNorm layers are visited in topological order; when a layer's input is
    measured, every upstream BatchNorm already normalizes with its own
    whole-dataset statistics (training-mode semantics with the full calibration
    set as one batch). The learned affine gamma/beta are kept.
    """
    batches = list(batch_iter(data, batch_size))
    if not batches:
        raise ValueError("cannot accumulate BatchNorm statistics on an empty dataset")
    g = graph.copy()
    for bn in _bn_nodes(g):
        src = bn.inputs[0]
        moments = ChannelMoments()
        for tapped in ordered_map(lambda x: run(g, x, taps=[src])[1][src], batches, threads):
            moments.add(tapped)
        count, mean, var = moments.finalize()
        g.weights[bn.params[BN_MEAN]] = mean.astype(np.float32)
        g.weights[bn.params[BN_VAR]] = var.astype(np.float32)
        bn.attrs["count"] = count
    return g


def bn_stats(graph: Graph) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """{BN node id: (running mean, running var)}."""
    return {
        bn.id: (graph.weights[bn.params[BN_MEAN]], graph.weights[bn.params[BN_VAR]])
        for bn in graph.nodes_of("BatchNorm2D")
    }


def naive_calibrate(
    graph: Graph,
    data,
    bits: int,
    nbins: int = DEFAULT_NBINS,
    batch_size: int = 64,
    threads: int | None = None,
) -> tuple[Graph, dict[str, QuantParams]]:
    """Fold the stored statistics as-is and calibrate directly on ``data``."""
    folded = fold_bn(graph)
    qparams = calibrate_weights(folded, bits)
    qparams.update(
        calibrate_activations(folded, batch_iter(data, batch_size), bits, nbins, threads)
    )
    return folded, qparams


def bn_adjust_calibrate(
    graph: Graph,
    data,
    bits: int,
    nbins: int = DEFAULT_NBINS,
    batch_size: int = 64,
    threads: int | None = None,
    deploy: str = "source",
) -> tuple[Graph, dict[str, QuantParams]]:
    """Calibrate through a copy whose BatchNorm statistics were re-estimated on ``data``.

    Activation ranges are measured on the adjusted model. ``deploy`` picks
    the returned model: ``"source"`` folds the original statistics (the model
    that serves the source domain), ``"adapted"`` folds the adjusted ones.
    Weight parameters always describe the returned model's weights.
    """
    if deploy not in ("source", "adapted"):
        raise ValueError(f"deploy must be 'source' or 'adapted', got {deploy!r}")
    adapted = fold_bn(accumulate_bn(reset_bn(graph), data, batch_size, threads))
    folded = fold_bn(graph) if deploy == "source" else adapted
    qparams = calibrate_weights(folded, bits)
    qparams.update(
        calibrate_activations(adapted, batch_iter(data, batch_size), bits, nbins, threads)
    )
    return folded, qparams
