"""Shared test helpers: independent oracles and fixture generators.

Oracles here deliberately re-derive results through a different route than
the package (explicit loops, big-integer arithmetic, plain enumeration) so
that agreement is meaningful.
"""

from __future__ import annotations

import numpy as np

from binarray import network, weights
from binarray.config import SimConfig


def conv2d_loops(x, kernels, bias, stride=1, pad=0):
    """Plain nested-loop convolution; x is (C, H, W), kernels (D, C, KH, KW)."""
    c, h, w = x.shape
    d, c2, kh, kw = kernels.shape
    assert c == c2
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    xp[:, pad:pad + h, pad:pad + w] = x
    v = (h - kh + 2 * pad) // stride + 1
    u = (w - kw + 2 * pad) // stride + 1
    out = np.zeros((d, v, u))
    for od in range(d):
        for y in range(v):
            for xx in range(u):
                acc = 0.0
                for ch in range(c):
                    for ky in range(kh):
                        for kx in range(kw):
                            acc += xp[ch, y * stride + ky, xx * stride + kx] \
                                * kernels[od, ch, ky, kx]
                out[od, y, xx] = acc + bias[od]
    return out


def requant_oracle(value: int, shift: int) -> int:
    """Divide by 2**shift with round-half-away, clamp to 8 bits; big ints only."""
    if shift == 0:
        q = value
    else:
        den = 1 << shift
        q, r = divmod(abs(value), den)
        if 2 * r >= den:
            q += 1
        if value < 0:
            q = -q
    return max(-128, min(127, q))


def anchor_oracle(w_i, h_i, w_k, h_k, w_p, h_p) -> list[int]:
    """Anchor order by enumeration: pooling windows row-major, columns first."""
    u, v = w_i - w_k + 1, h_i - h_k + 1
    order = []
    for pv in range(v // h_p):
        for pu in range(u // w_p):
            for ph in range(h_p):
                for pw in range(w_p):
                    order.append((pv * h_p + ph) * w_i + pu * w_p + pw)
    return order


def random_small_net(rng, max_dim=16, max_d=8, max_layers=3) -> network.NetworkSpec:
    """A random 1-3 layer network within the small-geometry envelope."""
    w = int(rng.integers(5, max_dim + 1))
    h = int(rng.integers(5, max_dim + 1))
    c = int(rng.integers(1, 4))
    layers = []
    cur = (w, h, c)
    n_layers = int(rng.integers(1, max_layers + 1))
    for li in range(n_layers):
        flat = cur[0] * cur[1] * cur[2]
        if li == n_layers - 1 and rng.random() < 0.35:
            layers.append(network.LayerSpec(
                "dense", 1, 1, flat, d_out=int(rng.integers(2, max_d + 1)),
                m_levels=int(rng.integers(1, 5)),
                activation="none" if rng.random() < 0.5 else "relu"))
            break
        kind = "depthwise" if (cur[2] > 1 and rng.random() < 0.25) else "conv"
        k = int(rng.integers(1, min(4, cur[0], cur[1]) + 1))
        u, v = cur[0] - k + 1, cur[1] - k + 1
        pw = int(rng.choice([p for p in (1, 2, 3) if u % p == 0]))
        ph = int(rng.choice([p for p in (1, 2, 3) if v % p == 0]))
        d = cur[2] if kind == "depthwise" else int(rng.integers(1, max_d + 1))
        layers.append(network.LayerSpec(
            kind, cur[0], cur[1], cur[2], w_k=k, h_k=k, d_out=d,
            pool_w=pw, pool_h=ph, m_levels=int(rng.integers(1, 5))))
        cur = (layers[-1].out_w, layers[-1].out_h, d)
        if cur[0] < 2 or cur[1] < 2:
            break
    return network.NetworkSpec("random", w, h, c, layers)


def fixed_bank_for(net, rng, algorithm=1):
    real = weights.random_real_bank(net, rng)
    approx = weights.approximate_bank(real, net, algorithm=algorithm)
    return weights.quantize_bank(approx, net)


def small_config(rng, mode="high_throughput") -> SimConfig:
    return SimConfig(n_sa=1, d_arch=int(rng.choice([2, 4, 8])),
                     m_arch=int(rng.choice([1, 2])), mode=mode)
