"""Pick a calibration set without ever seeing the training images.

The model owner publishes one mean Gram matrix of the training domain at
a single layer. Each candidate dataset is summarized the same way, and
the candidate closest to the published summary is used for calibration.
The script writes and reads the same files the ``xcal gram`` and
``xcal select`` commands use.
"""

import tempfile
from pathlib import Path

from xcal import DomainSpec, bn_adjust_calibrate, fold_bn, naive_calibrate
from xcal.data import normalize, synthesize
from xcal.experiment import EXTRACTOR_TAP, draw, evaluate
from xcal.fixtures import domain_a, load_fixture
from xcal.gram import format_ranking, load_gram, mean_gram, rank_pool, save_gram

model = load_fixture()
work = Path(tempfile.mkdtemp(prefix="xcal-demo-"))

# owner side: summary of the private training domain
save_gram(mean_gram(model, EXTRACTOR_TAP, draw(domain_a(7), 256, model), source="private"), work / "source")

candidates = {
    "stripes-shifted": DomainSpec(seed=71, family="stripes", noise=0.05, shift=(0.2, -0.2, 0.1)),
    "checker": DomainSpec(seed=72, family="checker", noise=0.02),
    "blobs-noisy": DomainSpec(seed=73, family="blobs", noise=0.2),
    "blobs-clean": DomainSpec(seed=74, family="blobs", noise=0.0),
}
data = {name: draw(spec, 256, model) for name, spec in candidates.items()}
for name, x in data.items():
    save_gram(mean_gram(model, EXTRACTOR_TAP, x, source=name), work / "pool" / name)

# user side: only Gram files are compared
source = load_gram(work / "source")
pool = {name: load_gram(work / "pool" / name) for name in candidates}
ranking = rank_pool(source, pool)
print(format_ranking(ranking), end="")

x_eval, y_eval = synthesize(domain_a(42), 1000)
x_eval = normalize(x_eval, model.normalization)
print(f"\nfp32 top-1 {evaluate(fold_bn(model), None, x_eval, y_eval):.3f}")
for name, d in ranking:
    folded, q = naive_calibrate(model, data[name], 8)
    adj, qa = bn_adjust_calibrate(model, data[name], 8)
    print(f"{name:16s} D={d:8.2f}  naive {evaluate(folded, q, x_eval, y_eval):.3f}"
          f"  bn-adjusted {evaluate(adj, qa, x_eval, y_eval):.3f}")
print(f"\nfiles under {work}")
