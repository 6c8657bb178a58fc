"""Train the ``tinycnn-a`` fixture on synthetic domain A and export it to the model IR.

Offline tool; needs torch. Usage::

    python tools/train_fixture.py [--out src/xcal/fixture_models/tinycnn-a] [--epochs 12]
"""

import argparse

import numpy as np
import torch
from torch import nn

from xcal import save_model
from xcal.data import synthesize
from xcal.fixtures import TEST_SEED, TRAIN_SEED, domain_a, tinycnn


class TinyCNN(nn.Module):
    def __init__(self, widths=(8, 16, 16), num_classes=8):
        super().__init__()
        w1, w2, w3 = widths
        self.conv1, self.bn1 = nn.Conv2d(3, w1, 3, padding=1), nn.BatchNorm2d(w1)
        self.conv2, self.bn2 = nn.Conv2d(w1, w2, 3, padding=1), nn.BatchNorm2d(w2)
        self.conv3, self.bn3 = nn.Conv2d(w2, w3, 3, padding=1), nn.BatchNorm2d(w3)
        self.fc = nn.Linear(w3, num_classes)
        self.bn4 = nn.BatchNorm1d(num_classes)

    def forward(self, x):
        x = nn.functional.max_pool2d(torch.relu(self.bn1(self.conv1(x))), 2)
        x = nn.functional.max_pool2d(torch.relu(self.bn2(self.conv2(x))), 2)
        x = torch.relu(x + self.bn3(self.conv3(x)))
        return self.bn4(self.fc(x.mean(dim=(2, 3))))


def export(model: TinyCNN, normalization):
    graph = tinycnn()
    sd = {k: v.detach().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    for name in ("conv1", "conv2", "conv3", "fc"):
        graph.weights[f"{name}.weight"] = sd[f"{name}.weight"]
        graph.weights[f"{name}.bias"] = sd[f"{name}.bias"]
    for name in ("bn1", "bn2", "bn3", "bn4"):
        graph.weights[f"{name}.gamma"] = sd[f"{name}.weight"]
        graph.weights[f"{name}.beta"] = sd[f"{name}.bias"]
        graph.weights[f"{name}.mean"] = sd[f"{name}.running_mean"]
        graph.weights[f"{name}.var"] = sd[f"{name}.running_var"]
    graph.normalization = normalization
    return graph


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="src/xcal/fixture_models/tinycnn-a")
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--n-train", type=int, default=6000)
    args = ap.parse_args()

    torch.manual_seed(0)
    x, y = synthesize(domain_a(TRAIN_SEED), args.n_train)
    xt, yt = synthesize(domain_a(TEST_SEED), 1000)
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    norm = {"mean": [float(v) for v in mean], "std": [float(v) for v in std]}
    x = (x - mean[:, None, None]) / std[:, None, None]
    xt = (xt - mean[:, None, None]) / std[:, None, None]
    x, y = torch.tensor(x), torch.tensor(y)
    xt, yt = torch.tensor(xt), torch.tensor(yt)

    model = TinyCNN()
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, args.epochs)
    for epoch in range(args.epochs):
        model.train()
        perm = torch.randperm(len(x))
        for start in range(0, len(x), 64):
            idx = perm[start:start + 64]
            loss = nn.functional.cross_entropy(model(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
        model.eval()
        with torch.no_grad():
            acc = (model(xt).argmax(1) == yt).float().mean().item()
        print(f"epoch {epoch + 1}: loss {loss.item():.4f} held-out acc {acc:.4f}")
    save_model(export(model, norm), args.out)
    print(f"saved {args.out}")


if __name__ == "__main__":
    main()
