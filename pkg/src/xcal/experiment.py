"""Desk-scale cross-domain calibration experiments on the shipped fixture.

Domain A (stripe orientations) is what ``tinycnn-a`` was trained on.
Calibration candidates range from fresh draws of A to near-noiseless blob
images, which share A's pixel dynamic range but not its content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .bn import bn_adjust_calibrate, fold_bn, naive_calibrate
from .data import DomainSpec, normalize, synthesize
from .fixtures import domain_a, load_fixture
from .graph import Graph
from .gram import discrepancy, mean_gram
from .metrics import top1_accuracy
from .quant import fake_quant_run

EXTRACTOR_TAP = "relu3"
N_EVAL = 1000
N_CALIB = 256
LADDER_NOISE = (0.3, 0.2, 0.1, 0.05, 0.02, 0.0)


def severe_domain(seed: int = 42) -> DomainSpec:
    """Smooth blob images with almost no sensor noise."""
    return DomainSpec(seed=seed + 2, family="blobs", contrast=1.0, noise=0.02)


def shift_ladder(seed: int = 42) -> list[DomainSpec]:
    """Domain A, then blob domains with less and less noise masking the content gap."""
    return [domain_a(seed + 10)] + [
        DomainSpec(seed=seed + 11 + k, family="blobs", contrast=1.0, noise=n)
        for k, n in enumerate(LADDER_NOISE)
    ]


def draw(spec: DomainSpec, n: int, graph: Graph) -> np.ndarray:
    return normalize(synthesize(spec, n)[0], graph.normalization)


def evaluate(graph: Graph, qparams, x: np.ndarray, labels: np.ndarray, batch_size: int = 250) -> float:
    logits = np.concatenate(
        [fake_quant_run(graph, qparams, x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    )
    return top1_accuracy(logits, labels)


@dataclass
class CrossDomainResult:
    bits: int
    fp32: float
    in_domain: float
    naive_cross: float
    bn_adjusted_cross: float

    def rows(self):
        return [
            ("fp32", self.fp32),
            ("in_domain", self.in_domain),
            ("naive_cross", self.naive_cross),
            ("bn_adjusted_cross", self.bn_adjusted_cross),
        ]


def cross_domain_experiment(bits: int = 8, seed: int = 42, graph: Graph | None = None) -> CrossDomainResult:
    """FP32 vs in-domain, naive cross-domain and BN-adjusted cross-domain calibration."""
    graph = load_fixture() if graph is None else graph
    spec_a = domain_a(seed)
    x_eval, y_eval = synthesize(spec_a, N_EVAL)
    x_eval = normalize(x_eval, graph.normalization)
    folded = fold_bn(graph)
    in_domain = draw(domain_a(seed + 1), N_CALIB, graph)
    severe = draw(severe_domain(seed), N_CALIB, graph)
    _, q_in = naive_calibrate(graph, in_domain, bits)
    _, q_naive = naive_calibrate(graph, severe, bits)
    adjusted, q_bn = bn_adjust_calibrate(graph, severe, bits)
    return CrossDomainResult(
        bits=bits,
        fp32=evaluate(folded, None, x_eval, y_eval),
        in_domain=evaluate(folded, q_in, x_eval, y_eval),
        naive_cross=evaluate(folded, q_naive, x_eval, y_eval),
        bn_adjusted_cross=evaluate(adjusted, q_bn, x_eval, y_eval),
    )


@dataclass
class CorrelationResult:
    names: list[str]
    discrepancies: list[float]
    accuracies: list[float]

    @property
    def spearman(self) -> float:
        return float(spearmanr(self.discrepancies, self.accuracies).correlation)


def correlation_experiment(
    bits: int = 8, seed: int = 42, tap: str = EXTRACTOR_TAP, graph: Graph | None = None
) -> CorrelationResult:
    """Gram discrepancy to domain A versus naive-calibration accuracy along the shift ladder."""
    graph = load_fixture() if graph is None else graph
    x_eval, y_eval = synthesize(domain_a(seed), N_EVAL)
    x_eval = normalize(x_eval, graph.normalization)
    folded = fold_bn(graph)
    source = mean_gram(graph, tap, draw(domain_a(seed + 1), N_CALIB, graph))
    names, ds, accs = [], [], []
    for spec in shift_ladder(seed):
        x = draw(spec, N_CALIB, graph)
        _, q = naive_calibrate(graph, x, bits)
        names.append(f"{spec.family}-n{spec.noise:g}-s{spec.seed}")
        ds.append(discrepancy(source, mean_gram(graph, tap, x)))
        accs.append(evaluate(folded, q, x_eval, y_eval))
    return CorrelationResult(names, ds, accs)
