"""Fault-injection simulator for binary neural networks executed as XNOR
operations on logic-in-memory memristive crossbars."""

from .bitpack import BinaryTensor, pack, unpack, xnor, xnor_popcount_dot
from .crossbar import CrossbarConfig, GateCoord, schedule_conv_product, schedule_dense_product
from .engine import (
    BinaryConv2D,
    BinaryDense,
    Flatten,
    InputBinarize,
    MaxPool2D,
    ModelGraph,
    Threshold,
    infer_batch,
)
from .faultgen import (
    FaultMask,
    gen_bitflip_mask,
    gen_dynamic_mask,
    gen_line_fault_mask,
    gen_stuckat_mask,
    read_fault_file,
    write_fault_file,
)
from .dataio import LabeledDataset, read_idx, read_model, write_model
from .injector import InjectionSession, run_with_faults
from .harness import ExperimentConfig, benchmark, run_dynamic_sweep, run_line_fault_sweep, run_sweep

__version__ = "0.1.0"

__all__ = [
    "BinaryTensor",
    "pack",
    "unpack",
    "xnor",
    "xnor_popcount_dot",
    "CrossbarConfig",
    "GateCoord",
    "schedule_conv_product",
    "schedule_dense_product",
    "BinaryConv2D",
    "BinaryDense",
    "Flatten",
    "InputBinarize",
    "MaxPool2D",
    "ModelGraph",
    "Threshold",
    "infer_batch",
    "FaultMask",
    "gen_bitflip_mask",
    "gen_dynamic_mask",
    "gen_line_fault_mask",
    "gen_stuckat_mask",
    "read_fault_file",
    "write_fault_file",
    "LabeledDataset",
    "read_idx",
    "read_model",
    "write_model",
    "InjectionSession",
    "run_with_faults",
    "ExperimentConfig",
    "benchmark",
    "run_dynamic_sweep",
    "run_line_fault_sweep",
    "run_sweep",
]
