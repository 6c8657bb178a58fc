"""Layer-wise uniform quantization: parameters, histogram calibration, simulation.

Weights use a symmetric min-max scheme (zero point 0, signed range).
Activations use an affine scheme whose clipping range is chosen by an
exhaustive search over histogram bin boundaries minimizing expected L2
error (clipping error outside the range, uniform rounding noise inside).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError, GraphError, NumericError
from .graph import Graph, Node, run, topo_order

SUPPORTED_BITS = (4, 6, 8)
DEFAULT_NBINS = 2048
# relative tolerance under which two clipping candidates count as tied
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    qmin: int
    qmax: int
    bits: int
    kind: str = "activation"

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise NumericError(f"scale must be positive and finite, got {self.scale}")
        if self.qmin >= self.qmax or self.qmax - self.qmin != 2**self.bits - 1:
            raise ValueError(f"invalid clip bounds [{self.qmin}, {self.qmax}] for {self.bits} bits")
        if self.kind not in ("weight", "activation"):
            raise ValueError(f"kind must be 'weight' or 'activation', got {self.kind!r}")
        if not self.qmin <= self.zero_point <= self.qmax:
            raise ValueError(f"zero point {self.zero_point} outside [{self.qmin}, {self.qmax}]")

    @property
    def lo(self) -> float:
        """Smallest representable real value."""
        return self.scale * (self.qmin - self.zero_point)

    @property
    def hi(self) -> float:
        return self.scale * (self.qmax - self.zero_point)


@dataclass
class QuantizedTensor:
    data: np.ndarray  # int32
    qparams: QuantParams


def _check_bits(bits: int) -> int:
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"bits must be one of {SUPPORTED_BITS}, got {bits}")
    return int(bits)


def weight_qparams(w: np.ndarray, bits: int) -> QuantParams:
    """Symmetric min-max parameters: ``s = max(|w_min|, |w_max|) / 2**(k-1)``."""
    bits = _check_bits(bits)
    w = np.asarray(w)
    if w.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(w)):
        raise NumericError("weight tensor contains NaN or Inf")
    peak = max(abs(float(w.min())), abs(float(w.max())))
    half = 2 ** (bits - 1)
    scale = peak / half if peak > 0 else 1.0
    return QuantParams(scale, 0, -half, half - 1, bits, "weight")


def activation_qparams(a_l: float, a_h: float, bits: int) -> QuantParams:
    """Affine parameters for the clipping range [a_l, a_h] (which must contain 0)."""
    bits = _check_bits(bits)
    if not a_l <= 0 <= a_h:
        raise ValueError(f"activation range [{a_l}, {a_h}] must contain 0")
    levels = 2**bits - 1
    if a_h == a_l:
        return QuantParams(1.0, 0, 0, levels, bits, "activation")
    scale = (a_h - a_l) / levels
    zero_point = int(np.clip(np.rint(-a_l / scale), 0, levels))
    return QuantParams(scale, zero_point, 0, levels, bits, "activation")


def quantize(x: np.ndarray, qp: QuantParams) -> QuantizedTensor:
    """``clip(round_half_even(x / s) + z, c_l, c_h)``."""
    q = np.rint(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return QuantizedTensor(np.clip(q, qp.qmin, qp.qmax).astype(np.int32), qp)


def dequantize(xq: QuantizedTensor) -> np.ndarray:
    qp = xq.qparams
    return ((xq.data.astype(np.float64) - qp.zero_point) * qp.scale).astype(np.float32)


def fake_quantize(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    return dequantize(quantize(x, qp))


# -- histogram observation ------------------------------------------------


class HistogramObserver:
    """Two-pass histogram of one activation tensor.

    Pass 1 tracks the global range (always widened to include 0). Pass 2,
    run after the range is frozen, fills ``nbins`` equal-width bins with
    integer counts. Both passes merge associatively and commutatively.
    """

    def __init__(self, nbins: int = DEFAULT_NBINS):
        if nbins < 1:
            raise ValueError("nbins must be >= 1")
        self.nbins = int(nbins)
        self.range_lo = 0.0
        self.range_hi = 0.0
        self.counts = np.zeros(self.nbins, dtype=np.float64)
        self.frozen = False

    @property
    def total_mass(self) -> float:
        return float(self.counts.sum())

    @property
    def bin_width(self) -> float:
        return (self.range_hi - self.range_lo) / self.nbins

    def edges(self) -> np.ndarray:
        return bin_edges(self.range_lo, self.range_hi, self.nbins)

    def observe_pass1(self, x: np.ndarray) -> "HistogramObserver":
        if self.frozen:
            raise RuntimeError("range is frozen; pass 1 is over")
        x = np.asarray(x)
        if x.size:
            if not np.all(np.isfinite(x)):
                raise NumericError("activation contains NaN or Inf")
            self.range_lo = min(self.range_lo, float(x.min()))
            self.range_hi = max(self.range_hi, float(x.max()))
        return self

    def freeze(self) -> "HistogramObserver":
        self.frozen = True
        return self

    def observe_pass2(self, x: np.ndarray) -> "HistogramObserver":
        self.frozen = True
        v = np.asarray(x, dtype=np.float64).ravel()
        if v.size == 0:
            return self
        if v.min() < self.range_lo or v.max() > self.range_hi:
            raise ValueError(
                f"value outside frozen range [{self.range_lo}, {self.range_hi}]; "
                "pass 1 must see every calibration batch first"
            )
        width = self.bin_width
        if width == 0:
            idx = np.zeros(v.size, dtype=np.intp)
        else:
            idx = np.minimum(((v - self.range_lo) / width).astype(np.intp), self.nbins - 1)
        self.counts += np.bincount(idx, minlength=self.nbins)
        return self

    def merge(self, other: "HistogramObserver") -> "HistogramObserver":
        """Combine another worker's observer into this one (same pass, same nbins)."""
        if other.nbins != self.nbins:
            raise ValueError("cannot merge observers with different nbins")
        if self.frozen or other.frozen:
            if (self.range_lo, self.range_hi) != (other.range_lo, other.range_hi):
                raise ValueError("pass-2 observers must share the frozen range")
            self.counts = self.counts + other.counts
            self.frozen = True
        else:
            self.range_lo = min(self.range_lo, other.range_lo)
            self.range_hi = max(self.range_hi, other.range_hi)
        return self


def bin_edges(lo: float, hi: float, nbins: int) -> np.ndarray:
    return lo + (hi - lo) * (np.arange(nbins + 1, dtype=np.float64) / nbins)


def _clip_costs(m: np.ndarray):
    """Clipping costs in units of squared bin width.

    ``left[i] = sum_{b<i} m_b (i - b - 1/2)^2`` and
    ``right[j] = sum_{b>=j} m_b (b + 1/2 - j)^2``, built from running sums of
    non-negative terms only, so no cancellation occurs.
    """
    n = len(m)
    left = np.zeros(n + 1)
    right = np.zeros(n + 1)
    p = d = 0.0
    for i in range(n):
        left[i + 1] = left[i] + 2.0 * d + p + 0.25 * m[i]
        d += p + 0.5 * m[i]
        p += m[i]
    p = d = 0.0
    for j in range(n - 1, -1, -1):
        right[j] = right[j + 1] + 2.0 * d + p + 0.25 * m[j]
        d += p + 0.5 * m[j]
        p += m[j]
    return left, right


def search_bins(counts: np.ndarray, lo: float, hi: float, bits: int) -> tuple[int, int]:
    """Boundary indices (i, j) of the error-minimizing clipping range.

    Candidates are pairs ``0 <= i < j <= nbins`` whose boundaries bracket 0.
    Costs within ``TIE_RTOL`` of the minimum are ties, resolved by smallest
    ``i`` and then largest ``j``.
    """
    m = np.asarray(counts, dtype=np.float64)
    n = len(m)
    if m.sum() <= 0:
        raise ValueError("histogram is empty")
    edges = bin_edges(lo, hi, n)
    left, right = _clip_costs(m)
    mass = np.concatenate([[0.0], np.cumsum(m)])
    levels = 2**bits - 1
    ii = np.flatnonzero(edges <= 0)
    jj = np.flatnonzero(edges >= 0)
    i = ii[:, None]
    j = jj[None, :]
    inside = np.maximum(mass[j] - mass[i], 0.0)
    steps = (j - i).astype(np.float64) / levels
    cost = left[i] + right[j] + inside * steps * steps / 12.0
    cost = np.where(j > i, cost, np.inf)
    best = cost.min()
    if not np.isfinite(best):
        raise ValueError("no clipping range brackets zero")
    ti, tj = np.nonzero(cost <= best + TIE_RTOL * best)
    k = np.lexsort((-jj[tj], ii[ti]))[0]
    return int(ii[ti[k]]), int(jj[tj[k]])


def histogram_search(obs: HistogramObserver, bits: int) -> tuple[float, float, QuantParams]:
    """Optimal clipping thresholds (a_l, a_h) and the matching activation params."""
    bits = _check_bits(bits)
    if obs.total_mass <= 0:
        raise ValueError("histogram is empty")
    if obs.range_hi == obs.range_lo:
        # everything observed was exactly zero
        return 0.0, 0.0, activation_qparams(0.0, 0.0, bits)
    i, j = search_bins(obs.counts, obs.range_lo, obs.range_hi, bits)
    edges = obs.edges()
    a_l, a_h = float(edges[i]), float(edges[j])
    return a_l, a_h, activation_qparams(a_l, a_h, bits)


# -- graph-level calibration and simulation --------------------------------


def weight_names(graph: Graph) -> list[str]:
    """Multiplicative kernels of Conv2D / Linear nodes (biases stay float)."""
    return [n.params[0] for n in graph.nodes_of("Conv2D", "Linear")]


def activation_points(graph: Graph) -> list[str]:
    """Node ids whose outputs are quantized: the input and every Conv2D/Linear/Add."""
    by_id = {n.id: n for n in graph.nodes}
    return [nid for nid in topo_order(graph) if by_id[nid].op in ("Input", "Conv2D", "Linear", "Add")]


def calibrate_weights(graph: Graph, bits: int) -> dict[str, QuantParams]:
    return {name: weight_qparams(graph.weights[name], bits) for name in weight_names(graph)}


def calibrate_activations(
    graph: Graph,
    batches: Iterable[np.ndarray],
    bits: int,
    nbins: int = DEFAULT_NBINS,
    threads: int | None = None,
) -> dict[str, QuantParams]:
    """Two passes over ``batches`` (re-iterable): range, then histogram fill."""
    from .parallel import ordered_map

    bits = _check_bits(bits)
    points = activation_points(graph)
    batches = list(batches)
    if not batches:
        raise ValueError("calibration data is empty")
    observers = {p: HistogramObserver(nbins) for p in points}

    def taps(x):
        return run(graph, x, taps=points)[1]

    for tapped in ordered_map(taps, batches, threads):
        for p in points:
            observers[p].observe_pass1(tapped[p])
    for obs in observers.values():
        obs.freeze()
    for tapped in ordered_map(taps, batches, threads):
        for p in points:
            observers[p].observe_pass2(tapped[p])
    return {p: histogram_search(observers[p], bits)[2] for p in points}


def fake_quant_run(graph: Graph, qparams: dict[str, QuantParams] | None, x: np.ndarray) -> np.ndarray:
    """Simulated integer inference: every covered tensor goes through quantize/dequantize.

    ``qparams=None`` runs the plain float graph.
    """
    if qparams is None:
        return run(graph, x)[0]
    if graph.nodes_of("BatchNorm2D"):
        raise GraphError("fake_quant_run needs a BN-folded graph")
    points = activation_points(graph)
    missing = [n for n in weight_names(graph) + points if n not in qparams]
    if missing:
        raise KeyError(f"missing qparams for {missing}")
    weights = dict(graph.weights)
    for name in weight_names(graph):
        weights[name] = fake_quantize(weights[name], qparams[name])
    covered = set(points)

    def hook(node: Node, value: np.ndarray) -> np.ndarray:
        return fake_quantize(value, qparams[node.id]) if node.id in covered else value

    return run(graph, x, hook=hook, weights=weights)[0]


# -- qparams.json -----------------------------------------------------------


def _fmt_scale(v: float) -> str:
    return f"{v:.17e}"


def dumps_qparams(qparams: dict[str, QuantParams], bits: int) -> str:
    lines = []
    for name, qp in qparams.items():
        lines.append(
            "    {"
            f'"name": {json.dumps(name)}, "kind": "{qp.kind}", '
            f'"scale": {_fmt_scale(qp.scale)}, "zero_point": {qp.zero_point}, '
            f'"qmin": {qp.qmin}, "qmax": {qp.qmax}'
            "}"
        )
    body = ",\n".join(lines)
    return f'{{\n  "version": 1,\n  "bits": {int(bits)},\n  "entries": [\n{body}\n  ]\n}}\n'


def save_qparams(path: str | os.PathLike, qparams: dict[str, QuantParams], bits: int) -> None:
    Path(path).write_text(dumps_qparams(qparams, bits), encoding="utf-8")


def load_qparams(path: str | os.PathLike) -> tuple[dict[str, QuantParams], int]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read qparams from {path}: {exc}") from exc
    if doc.get("version") != 1:
        raise DataError(f"{path}: unsupported qparams version {doc.get('version')}")
    bits = int(doc["bits"])
    out = {}
    for e in doc["entries"]:
        out[e["name"]] = QuantParams(
            float(e["scale"]), int(e["zero_point"]), int(e["qmin"]), int(e["qmax"]), bits, e["kind"]
        )
    return out, bits
