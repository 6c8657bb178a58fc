import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xcal.bn import fold_bn
from xcal.errors import GraphError, NumericError
from xcal.fixtures import load_fixture
from xcal.graph import Graph, Node, run
from xcal.quant import (
    HistogramObserver,
    QuantParams,
    activation_points,
    activation_qparams,
    calibrate_activations,
    dequantize,
    dumps_qparams,
    fake_quant_run,
    fake_quantize,
    histogram_search,
    load_qparams,
    quantize,
    save_qparams,
    search_bins,
    weight_names,
    weight_qparams,
)

from oracles import brute_force_search

bits_st = st.sampled_from([4, 6, 8])


def test_weight_params_are_symmetric_min_max():
    qp = weight_qparams(np.array([-3.0, 1.0, 2.5]), 8)
    assert (qp.scale, qp.zero_point, qp.qmin, qp.qmax) == (3.0 / 128, 0, -128, 127)
    assert weight_qparams(np.zeros(4), 4).scale == 1.0
    with pytest.raises(NumericError):
        weight_qparams(np.array([np.nan]), 8)
    with pytest.raises(ValueError):
        weight_qparams(np.ones(3), 7)


def test_activation_params_are_affine():
    qp = activation_qparams(-1.0, 3.0, 4)
    assert qp.scale == 4.0 / 15 and qp.zero_point == 4 and (qp.qmin, qp.qmax) == (0, 15)
    assert activation_qparams(0.0, 2.0, 8).zero_point == 0
    assert activation_qparams(-2.0, 0.0, 8).zero_point == 255
    with pytest.raises(ValueError):
        activation_qparams(0.5, 1.0, 8)


def test_rounding_is_half_to_even():
    qp = QuantParams(1.0, 0, -8, 7, 4, "weight")
    assert quantize(np.array([0.5, 1.5, 2.5, -0.5, -1.5]), qp).data.tolist() == [0, 2, 2, 0, -2]


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 0), st.floats(0, 50), bits_st, st.integers(0, 2**31))
def test_quantize_stays_in_range_and_round_trips_within_half_step(a_l, a_h, bits, seed):
    if a_h - a_l < 1e-3:
        a_h = a_l + 1.0
    qp = activation_qparams(a_l, a_h, bits)
    x = np.random.default_rng(seed).uniform(2 * a_l - 1, 2 * a_h + 1, 500).astype(np.float32)
    q = quantize(x, qp).data
    assert q.min() >= qp.qmin and q.max() <= qp.qmax
    inside = (x >= qp.lo) & (x <= qp.hi)
    err = np.abs(dequantize(quantize(x, qp)).astype(np.float64) - x)[inside]
    assert np.all(err <= qp.scale / 2 + 1e-6)
    assert fake_quantize(np.zeros(3, np.float32), qp).tolist() == [0, 0, 0]


def test_more_bits_never_increase_total_error_on_fixed_range():
    x = np.random.default_rng(0).normal(size=4000)
    errs = [np.abs(fake_quantize(x, activation_qparams(-2.0, 3.0, k)) - x).sum() for k in (4, 6, 8)]
    assert errs[0] >= errs[1] >= errs[2]


def test_hand_computed_search():
    # 4 bins over [-1, 3]: edges -1, 0, 1, 2, 3; a lone outlier in the last bin
    counts = np.array([0.0, 100.0, 100.0, 1.0])
    assert search_bins(counts, -1.0, 3.0, 4) == brute_force_search(counts.tolist(), -1.0, 3.0, 4)
    # symmetric mass: clipping either side costs the same, smallest i wins
    tied = np.array([1.0, 0.0, 0.0, 1.0])
    assert search_bins(tied, -2.0, 2.0, 8) == brute_force_search(tied.tolist(), -2.0, 2.0, 8) == (0, 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 24), bits_st, st.integers(0, 2**31))
def test_search_matches_brute_force(nbins, bits, seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 5, nbins) * (rng.random(nbins) < 0.6)
    if counts.sum() == 0:
        counts[rng.integers(nbins)] = 1
    lo = -float(rng.choice([0.0, rng.uniform(0.1, 3)]))
    hi = float(rng.uniform(0.1, 3))
    got = search_bins(counts.astype(float), lo, hi, bits)
    assert got == brute_force_search(counts.tolist(), lo, hi, bits)


def test_observer_passes_and_merge():
    rng = np.random.default_rng(1)
    chunks = [rng.normal(size=100) for _ in range(4)]
    a, b = HistogramObserver(32), HistogramObserver(32)
    for c in chunks[:2]:
        a.observe_pass1(c)
    for c in chunks[2:]:
        b.observe_pass1(c)
    whole = HistogramObserver(32)
    for c in chunks:
        whole.observe_pass1(c)
    a.merge(b)
    assert (a.range_lo, a.range_hi) == (whole.range_lo, whole.range_hi)
    parts = [HistogramObserver(32) for _ in chunks]
    for p, c in zip(parts, chunks):
        p.range_lo, p.range_hi = whole.range_lo, whole.range_hi
        p.freeze().observe_pass2(c)
    for c in chunks:
        whole.observe_pass2(c)
    merged = parts[3].merge(parts[1]).merge(parts[0]).merge(parts[2])
    np.testing.assert_array_equal(merged.counts, whole.counts)
    assert whole.total_mass == 400
    with pytest.raises(ValueError):
        whole.observe_pass2(np.array([whole.range_hi + 1]))
    with pytest.raises(RuntimeError):
        whole.observe_pass1(np.zeros(1))


def test_range_always_contains_zero_and_all_zero_is_degenerate():
    obs = HistogramObserver(8).observe_pass1(np.array([2.0, 3.0])).freeze().observe_pass2(np.array([2.0, 3.0]))
    assert obs.range_lo == 0.0
    a_l, a_h, qp = histogram_search(obs, 8)
    assert a_l == 0.0 and a_h > 0 and qp.zero_point == 0
    zero = HistogramObserver(8).observe_pass1(np.zeros(5)).freeze().observe_pass2(np.zeros(5))
    assert histogram_search(zero, 8)[:2] == (0.0, 0.0)
    assert histogram_search(zero, 8)[2].scale == 1.0


def _tiny_linear(w):
    nodes = [Node("in", "Input"), Node("flat", "Flatten", ["in"]), Node("fc", "Linear", ["flat"], ["fc.w"]),
             Node("out", "Output", ["fc"])]
    return Graph(nodes, {"fc.w": np.asarray(w, np.float32)}, (1, 2, 1, 1))


def test_grid_exact_linear_has_zero_quantization_error():
    g = _tiny_linear([[0.25, -0.125], [1.0, 0.5]])
    qp = {
        "fc.w": QuantParams(1 / 8, 0, -128, 127, 8, "weight"),
        "in": QuantParams(1 / 16, 0, 0, 255, 8, "activation"),
        "fc": QuantParams(1 / 128, 128, 0, 255, 8, "activation"),
    }
    assert set(qp) == set(weight_names(g)) | set(activation_points(g))
    x = (np.random.default_rng(2).integers(0, 5, (20, 2, 1, 1)) / 16).astype(np.float32)
    np.testing.assert_array_equal(fake_quant_run(g, qp, x), run(g, x)[0])


def test_fake_quant_run_contracts():
    g = load_fixture()
    x = np.random.default_rng(3).normal(size=(4, 3, 32, 32)).astype(np.float32)
    folded = fold_bn(g)
    assert fake_quant_run(folded, None, x).tobytes() == run(folded, x)[0].tobytes()
    with pytest.raises(GraphError):
        fake_quant_run(g, {}, x)
    with pytest.raises(KeyError):
        fake_quant_run(folded, {}, x)


def test_calibration_is_batch_order_independent():
    folded = fold_bn(load_fixture())
    x = np.random.default_rng(4).normal(size=(24, 3, 32, 32)).astype(np.float32)
    batches = [x[i:i + 8] for i in range(0, 24, 8)]
    a = calibrate_activations(folded, batches, 8, nbins=256)
    b = calibrate_activations(folded, batches[::-1], 8, nbins=256, threads=3)
    assert dumps_qparams(a, 8) == dumps_qparams(b, 8)


def test_qparams_json_round_trip(tmp_path):
    qp = {"w": weight_qparams(np.array([0.1, -0.7]), 6), "a": activation_qparams(-0.3, 1.1, 6)}
    save_qparams(tmp_path / "q.json", qp, 6)
    doc = json.loads((tmp_path / "q.json").read_text())
    assert doc["version"] == 1 and doc["bits"] == 6
    assert [e["kind"] for e in doc["entries"]] == ["weight", "activation"]
    loaded, bits = load_qparams(tmp_path / "q.json")
    assert bits == 6 and loaded == qp
    raw = (tmp_path / "q.json").read_text()
    mantissa = raw.split('"scale": ')[1].split("e")[0]
    assert len(mantissa.replace(".", "").lstrip("-")) >= 9
