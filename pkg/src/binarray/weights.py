"""Weight banks: real-valued, binary-approximated, and datapath-quantized.

A bank holds one entry per layer.  Real entries carry a (D, N_c) coefficient
matrix (canonical filter order: channel plane, kernel row, kernel column)
plus a bias per output channel.  Approximated entries carry one BinaryApprox
per output channel.  Fixed entries carry the raw integers the datapath sees:
8-bit scale words, 28-bit-domain bias words and the +-1 planes, together
with the per-layer binary points and the requantize shift.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import binapprox, containers
from .binapprox import BinaryApprox
from .fxp import ACC28, ConfigError, MULW, QFormat, round_half_away, saturate
from .network import KIND_DENSE, NetworkSpec


@dataclass
class RealLayerWeights:
    weights: np.ndarray  # (D, N_c) float64
    bias: np.ndarray     # (D,) float64

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (D, N_c) with one bias per row")


@dataclass
class ApproxLayerWeights:
    filters: list[BinaryApprox]  # one per output channel, bias attached

    @property
    def d_out(self) -> int:
        return len(self.filters)

    @property
    def m_levels(self) -> int:
        return self.filters[0].m_levels

    @property
    def n_c(self) -> int:
        return self.filters[0].n_c

    def bitplane_array(self) -> np.ndarray:
        """Stacked planes, shape (D, M, N_c) int8."""
        return np.stack([f.bitplanes for f in self.filters])

    def alpha_array(self) -> np.ndarray:
        return np.stack([f.alphas for f in self.filters])

    def bias_array(self) -> np.ndarray:
        return np.asarray([0.0 if f.bias is None else f.bias for f in self.filters])


@dataclass
class FixedLayerWeights:
    """Quantized form of one layer's approximation.

    bitplanes  (D, M, N_c) int8, entries +-1
    alpha_raw  (D, M) integers in 8-bit range, scale 2**-alpha_frac
    bias_raw   (D,) integers in the 28-bit accumulator domain, scale
               2**-(x_frac + alpha_frac)
    shift      requantize shift: x_frac + alpha_frac - out_frac
    """

    bitplanes: np.ndarray
    alpha_raw: np.ndarray
    bias_raw: np.ndarray
    alpha_frac: int
    x_frac: int
    out_frac: int

    @property
    def shift(self) -> int:
        return self.x_frac + self.alpha_frac - self.out_frac

    @property
    def d_out(self) -> int:
        return self.bitplanes.shape[0]

    @property
    def m_levels(self) -> int:
        return self.bitplanes.shape[1]

    @property
    def n_c(self) -> int:
        return self.bitplanes.shape[2]


def layer_weight_shape(layer) -> tuple[int, int]:
    """(filters, coefficients per filter) as stored in a bank entry."""
    if layer.kind == "depthwise":
        return layer.c_in, layer.w_k * layer.h_k
    if layer.kind == KIND_DENSE:
        return layer.d_out, layer.n_inputs
    return layer.d_out, layer.n_c


def random_real_bank(net: NetworkSpec, rng: np.random.Generator,
                     scale: float = 0.25) -> list[RealLayerWeights]:
    """Gaussian weights and biases, one entry per layer."""
    bank = []
    for layer in net.layers:
        d, n_c = layer_weight_shape(layer)
        w = rng.normal(0.0, scale, size=(d, n_c))
        b = rng.normal(0.0, scale, size=d)
        bank.append(RealLayerWeights(w, b))
    return bank


def approximate_bank(real: list[RealLayerWeights], net: NetworkSpec,
                     m_levels=None, algorithm: int = 2,
                     max_iters: int = binapprox.DEFAULT_REFINE_ITERS,
                     ) -> list[ApproxLayerWeights]:
    """Approximate every filter of every layer."""
    if m_levels is None:
        ms = [l.m_levels for l in net.layers]
    elif isinstance(m_levels, int):
        ms = [m_levels] * len(net.layers)
    else:
        ms = list(m_levels)
    if len(real) != len(net.layers) or len(ms) != len(net.layers):
        raise ValueError("bank, network and level counts must align")
    bank = []
    for layer, entry, m in zip(net.layers, real, ms):
        filters = [
            binapprox.approximate(entry.weights[d], m, algorithm, max_iters,
                                  bias=float(entry.bias[d]))
            for d in range(entry.weights.shape[0])
        ]
        bank.append(ApproxLayerWeights(filters))
    return bank


def choose_alpha_frac(alphas: np.ndarray, x_frac: int, out_frac: int) -> int:
    """Largest binary point such that every scale fits its 8-bit word and
    the resulting requantize shift stays within the accumulator width."""
    peak = float(np.max(np.abs(alphas))) if alphas.size else 0.0
    frac = min(15, MULW - 1 - x_frac + out_frac)
    while frac > -16:
        if peak * 2.0 ** frac <= 127.49 and x_frac + frac - out_frac >= 0:
            return frac
        frac -= 1
    raise ConfigError("no 8-bit binary point fits the scale factors")


def quantize_layer(approx: ApproxLayerWeights, layer) -> FixedLayerWeights:
    alphas = approx.alpha_array()
    frac = layer.alpha_frac
    if frac is None:
        frac = choose_alpha_frac(alphas, layer.x_frac, layer.out_frac)
    shift = layer.x_frac + frac - layer.out_frac
    if not 0 <= shift < MULW:
        raise ConfigError(
            f"requantize shift {shift} outside [0, {MULW - 1}] "
            f"(x_frac={layer.x_frac}, alpha_frac={frac}, out_frac={layer.out_frac})")
    a_fmt = QFormat(8, frac)
    alpha_raw = np.vectorize(lambda a: saturate(round_half_away(a * 2.0 ** frac), a_fmt),
                             otypes=[np.int64])(alphas)
    bias_scale = 2.0 ** (layer.x_frac + frac)
    bias_raw = np.vectorize(lambda b: saturate(round_half_away(b * bias_scale), ACC28),
                            otypes=[np.int64])(approx.bias_array())
    return FixedLayerWeights(approx.bitplane_array(), alpha_raw, bias_raw,
                             frac, layer.x_frac, layer.out_frac)


def quantize_bank(approx: list[ApproxLayerWeights],
                  net: NetworkSpec) -> list[FixedLayerWeights]:
    if len(approx) != len(net.layers):
        raise ValueError("bank and network must align")
    return [quantize_layer(a, l) for a, l in zip(approx, net.layers)]


# Bank persistence.  An approximation bank is a directory with a manifest
# and one approximation container per filter.

def save_approx_bank(dirpath, bank: list[ApproxLayerWeights],
                     net: NetworkSpec | None = None) -> None:
    os.makedirs(dirpath, exist_ok=True)
    manifest = {"layers": []}
    if net is not None:
        manifest["network"] = net.name
    for i, entry in enumerate(bank):
        files = []
        for d, f in enumerate(entry.filters):
            name = f"layer{i:02d}_f{d:03d}.ba"
            containers.save_binary_approx(os.path.join(dirpath, name), f)
            files.append(name)
        manifest["layers"].append({
            "index": i, "d": entry.d_out, "m": entry.m_levels,
            "n_c": entry.n_c, "files": files,
        })
    with open(os.path.join(dirpath, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_approx_bank(dirpath) -> list[ApproxLayerWeights]:
    with open(os.path.join(dirpath, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    bank = []
    for layer in manifest["layers"]:
        filters = [containers.load_binary_approx(os.path.join(dirpath, name))
                   for name in layer["files"]]
        bank.append(ApproxLayerWeights(filters))
    return bank


def save_real_bank(dirpath, bank: list[RealLayerWeights]) -> None:
    os.makedirs(dirpath, exist_ok=True)
    manifest = {"layers": []}
    for i, entry in enumerate(bank):
        wname, bname = f"layer{i:02d}_w.tns", f"layer{i:02d}_b.tns"
        containers.save_tensor(os.path.join(dirpath, wname), entry.weights)
        containers.save_tensor(os.path.join(dirpath, bname), entry.bias)
        manifest["layers"].append({"index": i, "weights": wname, "bias": bname})
    with open(os.path.join(dirpath, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_real_bank(dirpath) -> list[RealLayerWeights]:
    with open(os.path.join(dirpath, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    bank = []
    for layer in manifest["layers"]:
        w = containers.load_tensor(os.path.join(dirpath, layer["weights"]))
        b = containers.load_tensor(os.path.join(dirpath, layer["bias"]))
        bank.append(RealLayerWeights(w, b))
    return bank
