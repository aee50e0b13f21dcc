"""Plain CNN inference used as the golden reference for the array simulator.

Feature maps are (C, H, W) arrays.  ``mode="real"`` computes in float64.
``mode="fixed"`` mirrors the datapath exactly: activations are 8-bit raw
integers, scale factors 8-bit raw, the multiply-add chain saturates at 28
bits, and results requantize with the per-layer barrel shift before the
fused ReLU/max-pool stage.  Outputs of fixed mode are bit-stable integers.
"""

from __future__ import annotations

import numpy as np

from . import binapprox
from .fxp import FxFlags, QFormat, mul_add_sat_array, quantize_array, requantize_array
from .network import KIND_DENSE, KIND_DEPTHWISE, NetworkSpec
from .weights import (ApproxLayerWeights, FixedLayerWeights, RealLayerWeights,
                      quantize_layer)


def _conv_windows(x: np.ndarray, w_k: int, h_k: int, stride: int, pad: int) -> np.ndarray:
    """All sliding windows of x as a (V*U, C*h_k*w_k) matrix.

    Rows enumerate output positions row-major; columns use the canonical
    (channel, kernel row, kernel column) coefficient order.  Padding value
    is zero.
    """
    c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    u = (w - w_k + 2 * pad) // stride + 1
    v = (h - h_k + 2 * pad) // stride + 1
    cols = np.empty((c, h_k, w_k, v, u), dtype=x.dtype)
    for ky in range(h_k):
        for kx in range(w_k):
            cols[:, ky, kx] = x[:, ky:ky + stride * (v - 1) + 1:stride,
                                kx:kx + stride * (u - 1) + 1:stride]
    return cols.reshape(c * h_k * w_k, v * u).T


def _kernel_matrix(weights: np.ndarray, c_in: int, h_k: int, w_k: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 4:
        w = w.reshape(w.shape[0], -1)
    if w.shape[1] != c_in * h_k * w_k:
        raise ValueError(f"kernel matrix has {w.shape[1]} coefficients, "
                         f"expected {c_in * h_k * w_k}")
    return w


def conv2d_ref(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, layer) -> np.ndarray:
    """Direct convolution in real arithmetic with the layer's stride and zero padding."""
    if x.shape != (layer.c_in, layer.h_in, layer.w_in):
        raise ValueError(f"input shape {x.shape} does not match layer "
                         f"({layer.c_in}, {layer.h_in}, {layer.w_in})")
    w = _kernel_matrix(weights, layer.c_in, layer.h_k, layer.w_k)
    windows = _conv_windows(np.asarray(x, dtype=np.float64),
                            layer.w_k, layer.h_k, layer.stride, layer.pad)
    out = windows @ w.T + np.asarray(bias, dtype=np.float64)
    return out.reshape(layer.conv_h, layer.conv_w, -1).transpose(2, 0, 1)


def depthwise_conv2d_ref(x: np.ndarray, weights: np.ndarray,
                         bias: np.ndarray, layer) -> np.ndarray:
    """Channel-wise convolution: output plane c uses input plane c only."""
    w = np.asarray(weights, dtype=np.float64).reshape(layer.c_in, -1)
    out = np.empty((layer.c_in, layer.conv_h, layer.conv_w))
    for ch in range(layer.c_in):
        windows = _conv_windows(np.asarray(x[ch:ch + 1], dtype=np.float64),
                                layer.w_k, layer.h_k, layer.stride, layer.pad)
        out[ch] = (windows @ w[ch] + float(bias[ch])).reshape(layer.conv_h, layer.conv_w)
    return out


def binary_conv2d_ref(x: np.ndarray, approx: ApproxLayerWeights, layer,
                      m_limit: int | None = None) -> np.ndarray:
    """Convolution through the binary decomposition, real scale factors.

    Per output position: sum_m alpha_m * (window . plane_m) + bias.  Equal
    to ``conv2d_ref`` on the reconstructed kernels up to float rounding.
    """
    m_eff = approx.m_levels if m_limit is None else min(m_limit, approx.m_levels)
    planes = approx.bitplane_array()[:, :m_eff].astype(np.float64)
    alphas = approx.alpha_array()[:, :m_eff]
    bias = approx.bias_array()
    if layer.kind == KIND_DEPTHWISE:
        out = np.empty((layer.c_in, layer.conv_h, layer.conv_w))
        for ch in range(layer.c_in):
            windows = _conv_windows(np.asarray(x[ch:ch + 1], dtype=np.float64),
                                    layer.w_k, layer.h_k, layer.stride, layer.pad)
            acc = (windows @ planes[ch].T) @ alphas[ch] + bias[ch]
            out[ch] = acc.reshape(layer.conv_h, layer.conv_w)
        return out
    windows = _conv_windows(np.asarray(x, dtype=np.float64),
                            layer.w_k, layer.h_k, layer.stride, layer.pad)
    partial = np.einsum("pn,dmn->pdm", windows, planes)
    out = (partial * alphas).sum(axis=2) + bias
    return out.reshape(layer.conv_h, layer.conv_w, -1).transpose(2, 0, 1)


def maxpool_relu_ref(x: np.ndarray, pool_w: int, pool_h: int) -> np.ndarray:
    """Fused stage: per pooling window, max(0, max of window)."""
    c, h, w = x.shape
    if h % pool_h or w % pool_w:
        raise ValueError(f"pooling {pool_w}x{pool_h} does not divide {w}x{h}")
    blocks = x.reshape(c, h // pool_h, pool_h, w // pool_w, pool_w)
    pooled = blocks.max(axis=(2, 4))
    return np.maximum(pooled, 0)


def dense_ref(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    return w @ np.asarray(x, dtype=np.float64).reshape(-1) + np.asarray(bias, dtype=np.float64)


def quantize_image(image: np.ndarray, frac: int) -> np.ndarray:
    """Quantize a frame onto the 8-bit activation grid (integers pass through)."""
    return quantize_array(image, QFormat(8, frac))


def _fixed_layer(x_raw: np.ndarray, fw: FixedLayerWeights, layer,
                 flags: FxFlags) -> np.ndarray:
    """One layer in datapath arithmetic; input and output are raw ints."""
    m_eff = fw.m_levels
    if layer.kind == KIND_DENSE:
        vec = x_raw.reshape(-1)
        p = fw.bitplanes.astype(np.int64) @ vec          # (D, M)
        acc = fw.bias_raw.copy()
        for m in range(m_eff):
            acc = mul_add_sat_array(p[:, m], fw.alpha_raw[:, m], acc, flags)
        y = requantize_array(acc, fw.shift)
        if layer.activation == "relu":
            y = np.maximum(y, 0)
        return y.reshape(layer.d_out, 1, 1)

    if layer.kind == KIND_DEPTHWISE:
        conv = np.empty((layer.c_in, layer.conv_h, layer.conv_w), dtype=np.int64)
        for ch in range(layer.c_in):
            windows = _conv_windows(x_raw[ch:ch + 1], layer.w_k, layer.h_k,
                                    layer.stride, layer.pad)
            p = windows @ fw.bitplanes[ch].astype(np.int64).T   # (P, M)
            acc = np.full(p.shape[0], fw.bias_raw[ch], dtype=np.int64)
            for m in range(m_eff):
                acc = mul_add_sat_array(p[:, m], fw.alpha_raw[ch, m], acc, flags)
            conv[ch] = requantize_array(acc, fw.shift).reshape(layer.conv_h, layer.conv_w)
    else:
        windows = _conv_windows(x_raw, layer.w_k, layer.h_k, layer.stride, layer.pad)
        p = np.einsum("pn,dmn->pdm", windows, fw.bitplanes.astype(np.int64))
        acc = np.broadcast_to(fw.bias_raw, p.shape[:2]).copy()  # (P, D)
        for m in range(m_eff):
            acc = mul_add_sat_array(p[:, :, m], fw.alpha_raw[:, m], acc, flags)
        conv = requantize_array(acc, fw.shift) \
            .reshape(layer.conv_h, layer.conv_w, -1).transpose(2, 0, 1)
    return maxpool_relu_ref(conv, layer.pool_w, layer.pool_h)


def _truncate_fixed(fw: FixedLayerWeights, m_eff: int) -> FixedLayerWeights:
    if m_eff >= fw.m_levels:
        return fw
    return FixedLayerWeights(fw.bitplanes[:, :m_eff], fw.alpha_raw[:, :m_eff],
                             fw.bias_raw, fw.alpha_frac, fw.x_frac, fw.out_frac)


def _per_layer_limits(net: NetworkSpec, m_limit) -> list[int | None]:
    if m_limit is None or isinstance(m_limit, int):
        return [m_limit] * len(net.layers)
    limits = list(m_limit)
    if len(limits) != len(net.layers):
        raise ValueError("one m limit per layer required")
    return limits


def infer_ref(net: NetworkSpec, bank: list, image: np.ndarray, mode: str = "real",
              m_limit=None, flags: FxFlags | None = None, collect: bool = False):
    """Run a whole network; ``bank`` entries may be real, approximated or fixed.

    In fixed mode approximated entries are quantized on the fly.  ``m_limit``
    caps the bit-planes evaluated per layer (int or per-layer list), matching
    the simulator's throughput-mode truncation.
    """
    if mode not in ("real", "fixed"):
        raise ValueError(f"mode must be 'real' or 'fixed', got {mode!r}")
    if len(bank) != len(net.layers):
        raise ValueError("bank and network must align")
    limits = _per_layer_limits(net, m_limit)
    outputs = []

    if mode == "fixed":
        fixed = []
        for layer, entry in zip(net.layers, bank):
            if isinstance(entry, FixedLayerWeights):
                fixed.append(entry)
            elif isinstance(entry, ApproxLayerWeights):
                fixed.append(quantize_layer(entry, layer))
            else:
                raise ValueError("fixed mode needs approximated or quantized weights")
        x = quantize_image(image, net.input_frac)
        x = x.reshape(net.input_c, net.input_h, net.input_w)
        for layer, fw, lim in zip(net.layers, fixed, limits):
            if lim is not None:
                fw = _truncate_fixed(fw, lim)
            x = _fixed_layer(x, fw, layer, flags if flags is not None else FxFlags())
            outputs.append(x)
        return outputs if collect else x

    x = np.asarray(image, dtype=np.float64)
    if np.issubdtype(np.asarray(image).dtype, np.integer):
        x = x * 2.0 ** (-net.input_frac)
    x = x.reshape(net.input_c, net.input_h, net.input_w)
    for layer, entry, lim in zip(net.layers, bank, limits):
        if isinstance(entry, FixedLayerWeights):
            raise ValueError("real mode needs real or approximated weights")
        if layer.kind == KIND_DENSE:
            if isinstance(entry, RealLayerWeights):
                y = dense_ref(x, entry.weights, entry.bias)
            else:
                m_eff = entry.m_levels if lim is None else min(lim, entry.m_levels)
                planes = entry.bitplane_array()[:, :m_eff].astype(np.float64)
                alphas = entry.alpha_array()[:, :m_eff]
                y = np.einsum("dmn,n->dm", planes, x.reshape(-1))
                y = (y * alphas).sum(axis=1) + entry.bias_array()
            x = np.maximum(y, 0) if layer.activation == "relu" else y
            x = x.reshape(layer.d_out, 1, 1)
        else:
            if isinstance(entry, RealLayerWeights):
                if layer.kind == KIND_DEPTHWISE:
                    conv = depthwise_conv2d_ref(x, entry.weights, entry.bias, layer)
                else:
                    conv = conv2d_ref(x, entry.weights, entry.bias, layer)
            else:
                conv = binary_conv2d_ref(x, entry, layer, lim)
            x = maxpool_relu_ref(conv, layer.pool_w, layer.pool_h)
        outputs.append(x)
    return outputs if collect else x


def reconstructed_bank(approx: list[ApproxLayerWeights]) -> list[RealLayerWeights]:
    """Real bank rebuilt from an approximation (for identity checks)."""
    bank = []
    for entry in approx:
        w = np.stack([binapprox.reconstruct(f) for f in entry.filters])
        b = entry.bias_array()
        bank.append(RealLayerWeights(w, b))
    return bank
