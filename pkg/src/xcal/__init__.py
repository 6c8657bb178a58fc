"""Cross-domain calibration for post-training quantization."""

from .bn import accumulate_bn, bn_adjust_calibrate, fold_bn, naive_calibrate, reset_bn
from .data import Dataset, DomainSpec, batch_iter, generate_domain, load_dataset, synthesize
from .errors import DataError, GraphError, NumericError, ShapeError, XcalError
from .graph import Graph, Node, load_model, run, save_model, topo_order
from .gram import GramSummary, discrepancy, mean_gram, multiscale_discrepancy, rank_pool
from .metrics import dice, miou, top1_accuracy
from .quant import (
    HistogramObserver,
    QuantParams,
    dequantize,
    fake_quant_run,
    histogram_search,
    quantize,
    weight_qparams,
)

__version__ = "0.1.0"
