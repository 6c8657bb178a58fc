"""Fixed candidate pool for the ranking regression test."""

from xcal.data import DomainSpec
from xcal.experiment import EXTRACTOR_TAP, draw
from xcal.fixtures import domain_a
from xcal.gram import mean_gram

N = 64
POOL = {
    "a-fresh": domain_a(60),
    "a-mild-shift": DomainSpec(seed=61, family="stripes", noise=0.05, shift=(0.1, -0.1, 0.05)),
    "a-severe-shift": DomainSpec(seed=62, family="stripes", noise=0.05, shift=(0.6, -0.6, 0.3)),
    "blobs": DomainSpec(seed=63, family="blobs", noise=0.02),
    "checker": DomainSpec(seed=64, family="checker", noise=0.02),
}


def summaries(graph):
    source = mean_gram(graph, EXTRACTOR_TAP, draw(domain_a(59), N, graph), source="a-source")
    pool = {name: mean_gram(graph, EXTRACTOR_TAP, draw(spec, N, graph), source=name) for name, spec in POOL.items()}
    return source, pool
