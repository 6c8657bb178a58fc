import json
from pathlib import Path

import numpy as np
import pytest

from xcal.errors import DataError
from xcal.metrics import confusion_matrix, dice, format_report, miou, top1_accuracy

from oracles import iou_by_hand

CASES = json.loads((Path(__file__).parent / "data" / "metric_fixtures.json").read_text())


@pytest.mark.parametrize("case", CASES["top1"])
def test_top1_fixture(case):
    assert top1_accuracy(np.array(case["logits"]), np.array(case["labels"])) == case["expected"]


@pytest.mark.parametrize("case", CASES["dice"])
def test_dice_fixture(case):
    assert dice(np.array(case["p"]), np.array(case["g"])) == case["expected"]


@pytest.mark.parametrize("case", CASES["miou"])
def test_miou_fixture(case):
    pred, gt = np.array(case["pred"]), np.array(case["gt"])
    k, ignore = case["num_classes"], case["ignore_index"]
    np.testing.assert_array_equal(confusion_matrix(pred, gt, k, ignore), case["confusion"])
    assert miou(pred, gt, k, ignore) == case["expected"]
    assert iou_by_hand(pred, gt, k, ignore) == case["expected"]


def test_miou_matches_oracle_on_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(20):
        k = int(rng.integers(2, 6))
        pred, gt = rng.integers(0, k, (2, 5, 6))
        gt[rng.random(gt.shape) < 0.1] = 255
        assert miou(pred, gt, k, 255) == pytest.approx(iou_by_hand(pred, gt, k, 255), abs=1e-12)


def test_metric_errors():
    with pytest.raises(DataError):
        top1_accuracy(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(DataError):
        dice(np.array([0, 2]), np.array([0, 1]))
    with pytest.raises(DataError, match="ignored"):
        miou(np.array([1, 1]), np.array([255, 255]), 2, 255)


def test_report_format():
    assert format_report([("fp32", 0.5), ("gap", 1 / 3)]) == "metric,value\nfp32,0.500000\ngap,0.333333\n"
