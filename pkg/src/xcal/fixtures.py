"""Fixture model architecture and the shipped ``tinycnn-a`` checkpoint.

``tinycnn-a`` classifies the eight stripe orientations of the synthetic
``stripes`` family. It was trained offline on domain A (see
``tools/train_fixture.py``) and is frozen here so experiments need no
training.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .data import DomainSpec
from .graph import Graph, Node, load_model

# Training / evaluation domain of the shipped classifier.
DOMAIN_A = DomainSpec(seed=42, family="stripes", noise=0.05)
TRAIN_SEED = 1042
TEST_SEED = 2042


def domain_a(seed: int = 42) -> DomainSpec:
    return DomainSpec(seed=seed, family=DOMAIN_A.family, noise=DOMAIN_A.noise)


def tinycnn(
    num_classes: int = 8,
    channels: int = 3,
    size: int = 32,
    widths: tuple[int, int, int] = (8, 16, 16),
    rng: np.random.Generator | None = None,
) -> Graph:
    """Conv-BN-ReLU classifier with one residual block and a BN-normalized head; random weights."""
    rng = np.random.default_rng(0) if rng is None else rng
    w1, w2, w3 = widths
    weights: dict[str, np.ndarray] = {}

    def conv(name, cin, cout):
        weights[f"{name}.weight"] = (rng.standard_normal((cout, cin, 3, 3)) / np.sqrt(9 * cin)).astype(np.float32)
        weights[f"{name}.bias"] = np.zeros(cout, dtype=np.float32)
        return [f"{name}.weight", f"{name}.bias"]

    def bn(name, c):
        weights[f"{name}.gamma"] = rng.uniform(0.5, 1.5, c).astype(np.float32)
        weights[f"{name}.beta"] = rng.uniform(-0.2, 0.2, c).astype(np.float32)
        weights[f"{name}.mean"] = rng.uniform(-0.5, 0.5, c).astype(np.float32)
        weights[f"{name}.var"] = rng.uniform(0.5, 2.0, c).astype(np.float32)
        return [f"{name}.{k}" for k in ("gamma", "beta", "mean", "var")]

    conv_attrs = {"stride": [1, 1], "padding": [1, 1]}
    pool_attrs = {"kernel": [2, 2], "stride": [2, 2]}
    nodes = [
        Node("input", "Input"),
        Node("conv1", "Conv2D", ["input"], conv("conv1", channels, w1), dict(conv_attrs)),
        Node("bn1", "BatchNorm2D", ["conv1"], bn("bn1", w1), {"eps": 1e-5}),
        Node("relu1", "ReLU", ["bn1"]),
        Node("pool1", "MaxPool2D", ["relu1"], attrs=dict(pool_attrs)),
        Node("conv2", "Conv2D", ["pool1"], conv("conv2", w1, w2), dict(conv_attrs)),
        Node("bn2", "BatchNorm2D", ["conv2"], bn("bn2", w2), {"eps": 1e-5}),
        Node("relu2", "ReLU", ["bn2"]),
        Node("pool2", "MaxPool2D", ["relu2"], attrs=dict(pool_attrs)),
        Node("conv3", "Conv2D", ["pool2"], conv("conv3", w2, w3), dict(conv_attrs)),
        Node("bn3", "BatchNorm2D", ["conv3"], bn("bn3", w3), {"eps": 1e-5}),
        Node("add3", "Add", ["pool2", "bn3"]),
        Node("relu3", "ReLU", ["add3"]),
        Node("gap", "GlobalAvgPool", ["relu3"]),
        Node("flatten", "Flatten", ["gap"]),
        Node("fc", "Linear", ["flatten"], [], {}),
        Node("bn4", "BatchNorm2D", ["fc"], [], {"eps": 1e-5}),
        Node("output", "Output", ["bn4"]),
    ]
    weights["fc.weight"] = (rng.standard_normal((num_classes, w3)) / np.sqrt(w3)).astype(np.float32)
    weights["fc.bias"] = np.zeros(num_classes, dtype=np.float32)
    nodes[-3].params = ["fc.weight", "fc.bias"]
    nodes[-2].params = bn("bn4", num_classes)
    return Graph(nodes, weights, (1, channels, size, size), {"mean": [0.0] * channels, "std": [1.0] * channels})


def fixture_path(name: str = "tinycnn-a") -> Path:
    return Path(str(resources.files("xcal") / "fixture_models" / name / "model.json"))


def load_fixture(name: str = "tinycnn-a") -> Graph:
    return load_model(fixture_path(name))
