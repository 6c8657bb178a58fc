"""Quantize the shipped classifier with calibration data from its own domain.

The fixture ``tinycnn-a`` tells apart eight stripe orientations. We fold
its BatchNorm layers, calibrate 8-bit activation ranges on fresh stripe
images and compare quantized accuracy against the float model.
"""

from xcal import fold_bn, naive_calibrate
from xcal.experiment import draw, evaluate
from xcal.fixtures import domain_a, load_fixture
from xcal.data import normalize, synthesize

model = load_fixture()
print(f"{len(model.nodes)} nodes, input {model.input_shape}")

x_eval, y_eval = synthesize(domain_a(42), 1000)
x_eval = normalize(x_eval, model.normalization)

# 256 unlabeled images from the training domain are enough to set the ranges
calib = draw(domain_a(43), 256, model)
folded, qparams = naive_calibrate(model, calib, bits=8)

fp32 = evaluate(fold_bn(model), None, x_eval, y_eval)
int8 = evaluate(folded, qparams, x_eval, y_eval)
print(f"fp32 top-1 {fp32:.3f}")
print(f"int8 top-1 {int8:.3f}")

for name in ("input", "conv1", "add3", "fc"):
    qp = qparams[name]
    print(f"  {name:6s} range [{qp.lo:+.3f}, {qp.hi:+.3f}]  scale {qp.scale:.5f}  zero point {qp.zero_point}")
