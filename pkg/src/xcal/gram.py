"""Gram-matrix domain summaries and the discrepancy used to rank calibration sets.

A domain is summarized at a tapped layer by the mean over its samples of
``F F^T``, where ``F`` is the sample's channels x positions embedding after
per-channel standardization with statistics of the whole domain. Two
domains are compared by the mean squared elementwise difference of their
summaries.
"""

from __future__ import annotations

import csv
import io
import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import xten
from .data import batch_iter
from .errors import DataError, GraphError, ShapeError
from .graph import Graph, run
from .parallel import ordered_map
from .stats import ChannelMoments

DEFAULT_EPS = 1e-8


@dataclass(frozen=True)
class ChannelNormStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = DEFAULT_EPS


@dataclass
class GramSummary:
    layer: str
    gram: np.ndarray  # N x N
    count: int
    source: str = ""

    @property
    def channels(self) -> int:
        return self.gram.shape[0]


class PoolEntrySkipped(UserWarning):
    """A candidate calibration set could not be compared with the source."""


def extract_embeddings(
    graph: Graph, layer_id: str, data, batch_size: int = 64, threads: int | None = None
) -> Iterator[np.ndarray]:
    """Yield one channels x positions matrix per sample, tapped at ``layer_id``."""
    if layer_id not in {n.id for n in graph.nodes}:
        raise GraphError(f"unknown layer id {layer_id!r}")

    def tap(x):
        return run(graph, x, taps=[layer_id])[1][layer_id]

    for act in ordered_map(tap, batch_iter(data, batch_size), threads):
        act = np.asarray(act)
        for sample in act.reshape(act.shape[0], act.shape[1], -1):
            yield sample


def channel_norm_stats(embeddings: Iterable[np.ndarray], eps: float = DEFAULT_EPS) -> ChannelNormStats:
    """Per-channel mean and std over every sample and position of a domain."""
    moments = ChannelMoments()
    for f in embeddings:
        moments.add(np.asarray(f)[None])
    if moments.empty:
        raise ValueError("cannot compute statistics of an empty domain")
    _, mean, var = moments.finalize()
    return ChannelNormStats(mean, np.sqrt(var), eps)


def gram(f: np.ndarray, stats: ChannelNormStats) -> np.ndarray:
    """Gram matrix of one standardized embedding: ``F~ F~^T``."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError(f"embedding must be channels x positions, got {f.shape}")
    if f.shape[0] != stats.mean.shape[0]:
        raise ShapeError(f"embedding has {f.shape[0]} channels, statistics {stats.mean.shape[0]}")
    z = (f - stats.mean[:, None]) / (stats.std[:, None] + stats.eps)
    return z @ z.T


def mean_gram(
    graph: Graph,
    layer_id: str,
    data,
    batch_size: int = 64,
    threads: int | None = None,
    source: str = "",
) -> GramSummary:
    """Average per-sample Gram matrix of a domain at one layer (two passes over ``data``)."""
    stats = channel_norm_stats(extract_embeddings(graph, layer_id, data, batch_size, threads))
    total = None
    count = 0
    for f in extract_embeddings(graph, layer_id, data, batch_size, threads):
        g = gram(f, stats)
        total = g if total is None else total + g
        count += 1
    g = total / count
    return GramSummary(layer_id, 0.5 * (g + g.T), count, source)


def discrepancy(a: GramSummary, b: GramSummary) -> float:
    """``(1/N^2) sum_ij (A_ij - B_ij)^2``."""
    if a.layer != b.layer:
        raise ShapeError(f"layer mismatch: {a.layer!r} vs {b.layer!r}")
    if a.gram.shape != b.gram.shape:
        raise ShapeError(f"Gram size mismatch: {a.gram.shape} vs {b.gram.shape}")
    diff = np.asarray(a.gram, dtype=np.float64) - np.asarray(b.gram, dtype=np.float64)
    return float(np.mean(diff * diff))


def multiscale_discrepancy(pairs: Sequence[tuple[GramSummary, GramSummary]]) -> float:
    """Mean of the per-layer discrepancies."""
    if not pairs:
        raise ValueError("need at least one pair of summaries")
    return float(np.mean([discrepancy(a, b) for a, b in pairs]))


def _as_list(s) -> list[GramSummary]:
    return [s] if isinstance(s, GramSummary) else list(s)


def summary_discrepancy(source, candidate) -> float:
    """Discrepancy between two (possibly multi-layer) summaries matched by layer id."""
    src = {s.layer: s for s in _as_list(source)}
    cand = {s.layer: s for s in _as_list(candidate)}
    if set(src) != set(cand):
        raise ShapeError(f"layer sets differ: {sorted(src)} vs {sorted(cand)}")
    return multiscale_discrepancy([(src[k], cand[k]) for k in sorted(src)])


def rank_pool(source, pool: Mapping[str, object], skipped: list | None = None) -> list[tuple[str, float]]:
    """Candidates sorted by ascending discrepancy to ``source``, ties by name.

    Entries that cannot be compared are left out; each one raises a
    ``PoolEntrySkipped`` warning and is appended to ``skipped`` as (name, reason).
    """
    rows = []
    for name in sorted(pool):
        try:
            rows.append((name, summary_discrepancy(source, pool[name])))
        except ShapeError as exc:
            warnings.warn(f"pool entry {name!r} skipped: {exc}", PoolEntrySkipped, stacklevel=2)
            if skipped is not None:
                skipped.append((name, str(exc)))
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows


def format_ranking(rows: Iterable[tuple[str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "discrepancy"])
    for name, d in rows:
        writer.writerow([name, repr(float(d))])
    return buf.getvalue()


# -- persistence --------------------------------------------------------------

GRAM_TENSOR = "gram.xten"
GRAM_SIDECAR = "gram.json"


def _save_one(summary: GramSummary, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    xten.save(out_dir / GRAM_TENSOR, summary.gram.astype(np.float32))
    sidecar = {
        "layer": summary.layer,
        "count": summary.count,
        "channels": summary.channels,
        "source_dataset": summary.source,
    }
    (out_dir / GRAM_SIDECAR).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def save_gram(summaries, out_dir: str | os.PathLike) -> None:
    """One summary goes straight into ``out_dir``; several go to one subdirectory per layer."""
    summaries = _as_list(summaries)
    out_dir = Path(out_dir)
    if len(summaries) == 1:
        _save_one(summaries[0], out_dir)
    else:
        for s in summaries:
            _save_one(s, out_dir / s.layer)


def _load_one(d: Path) -> GramSummary:
    try:
        meta = json.loads((d / GRAM_SIDECAR).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {d / GRAM_SIDECAR}: {exc}") from exc
    g = xten.load(d / GRAM_TENSOR).astype(np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] != int(meta["channels"]):
        raise DataError(f"{d}: Gram tensor shape {g.shape} disagrees with sidecar")
    return GramSummary(meta["layer"], g, int(meta["count"]), meta.get("source_dataset", ""))


def load_gram(path: str | os.PathLike) -> list[GramSummary]:
    path = Path(path)
    if (path / GRAM_SIDECAR).exists():
        return [_load_one(path)]
    subdirs = sorted(p for p in path.iterdir() if (p / GRAM_SIDECAR).exists()) if path.is_dir() else []
    if not subdirs:
        raise DataError(f"no Gram summary found at {path}")
    return [_load_one(p) for p in subdirs]
