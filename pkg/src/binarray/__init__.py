"""Toolkit for the BinArray binary-weight CNN accelerator.

Submodules:

    binapprox   multi-level binary weight approximation and compression
    fxp         fixed-point formats and datapath arithmetic
    network     layer/network descriptions and the reference network
    weights     weight banks (real, approximated, quantized) and persistence
    refnet      golden-reference inference (real and bit-exact fixed mode)
    isa         instruction encoding, assembler/disassembler, compiler
    arraysim    functional + cycle-counting simulation of the array
    perfmodel   analytical throughput model and FPS estimation
    containers  tensor and approximation file containers
    cli         command-line front end
"""

from .binapprox import (BinaryApprox, CompressionReport, approximate,
                        approximate_alg1, approximate_alg2, codebook,
                        compression_factor, greedy_binarize,
                        network_compression, reconstruct, solve_scaling)
from .config import SimConfig, parse_config
from .fxp import (ACC28, ACT8, ConfigError, FxFlags, FxValue, QFormat,
                  dequantize, fx_mul_add, quantize, requantize)
from .network import LayerSpec, NetworkSpec, cnn_a, cnn_a_convs, load_network, save_network
from .isa import Program, assemble, compile_network, disassemble
from .arraysim import CycleReport, run_program
from .perfmodel import cpu_fps, estimate_network, network_macs
from .refnet import infer_ref

__version__ = "0.1.0"
