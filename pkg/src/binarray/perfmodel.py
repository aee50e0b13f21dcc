"""Analytical throughput model of the array and FPS reporting.

Closed-form cycle counts per layer:

    U = (W_I - W_B + 2P)/S + 1          output width (V analogous with heights)
    N_LSA = N_SA / ceil(M / M_arch)     logical arrays, kept as exact rational
    N_T = floor(N_LSA / ceil(D / D_arch))  input tiles, >= 1, W_I/N_T > 1
    N_pass = ceil(max(1, D / (D_arch * N_LSA)))
    N_cc = W_I * H_I * C_I * W_B * H_B * N_pass / N_T   (stride-1 sweep)

Depthwise layers assume one channel per pass (D_arch = 1 in N_pass, one
input plane per sweep); dense layers map to a 1x1 sweep over their input
vector.  The "literal" formula variant substitutes the pooling height in V
and the input height in N_cc; it exists only for comparison with
externally published figures and is off by default.  Layers with stride
above one substitute U*V*S^2 for the W_I*H_I sweep term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .config import SimConfig
from .network import KIND_DENSE, KIND_DEPTHWISE, NetworkSpec

VARIANTS = ("corrected", "literal")


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def output_dims(layer, variant: str = "corrected") -> tuple[int, int, int]:
    """Output feature dims (U, V, D) of one layer before pooling."""
    _check_variant(variant)
    if layer.kind == KIND_DENSE:
        return 1, 1, layer.d_out
    num_w = layer.w_in - layer.w_k + 2 * layer.pad
    h_term = layer.h_k if variant == "corrected" else layer.pool_h
    num_h = layer.h_in - h_term + 2 * layer.pad
    if num_w < 0 or num_h < 0:
        raise ValueError("kernel larger than padded input")
    if num_w % layer.stride or num_h % layer.stride:
        raise ValueError(
            f"stride {layer.stride} does not divide sliding ranges {num_w}/{num_h}")
    return num_w // layer.stride + 1, num_h // layer.stride + 1, layer.d_out


def logical_arrays(config: SimConfig, m_levels: int) -> Fraction:
    """Arrays left for throughput after spending columns on extra planes."""
    if m_levels < 1:
        raise ValueError("m_levels must be >= 1")
    return Fraction(config.n_sa, math.ceil(m_levels / config.m_arch))


def _d_arch_eff(config: SimConfig, layer) -> int:
    return 1 if layer.kind == KIND_DEPTHWISE else config.d_arch


def tiles(config: SimConfig, layer, n_lsa: Fraction) -> int:
    """Spatial input tiles: spare arrays split width/height, never depth."""
    need = math.ceil(layer.d_out / _d_arch_eff(config, layer))
    t = max(1, math.floor(n_lsa / need))
    if layer.kind != KIND_DENSE:
        t = min(t, max(1, layer.w_in - 1), max(1, layer.h_in - 1))
    else:
        t = 1
    return t


def passes(config: SimConfig, layer, n_lsa: Fraction) -> int:
    """Sequential array passes needed to cover all output channels."""
    ratio = Fraction(layer.d_out) / (_d_arch_eff(config, layer) * n_lsa)
    return math.ceil(max(Fraction(1), ratio))


@dataclass
class LayerCost:
    layer_id: int
    kind: str
    u: int
    v: int
    d: int
    n_lsa: Fraction
    n_tiles: int
    n_pass: int
    cycles: int
    macs: int
    utilization: float

    def to_json(self) -> dict:
        return {
            "layer": self.layer_id, "kind": self.kind,
            "u": self.u, "v": self.v, "d": self.d,
            "n_lsa": [self.n_lsa.numerator, self.n_lsa.denominator],
            "n_tiles": self.n_tiles, "n_pass": self.n_pass,
            "cycles": self.cycles, "macs": self.macs,
            "utilization": self.utilization,
        }


def layer_macs(layer) -> int:
    u, v, d = output_dims(layer)
    if layer.kind == KIND_DENSE:
        return d * layer.n_inputs
    if layer.kind == KIND_DEPTHWISE:
        return u * v * d * layer.w_k * layer.h_k
    return u * v * d * layer.w_k * layer.h_k * layer.c_in


def layer_cycles(config: SimConfig, layer, m_levels: int | None = None,
                 variant: str = "corrected") -> int:
    return layer_cost(config, layer, 0, m_levels, variant).cycles


def layer_cost(config: SimConfig, layer, layer_id: int = 0,
               m_levels: int | None = None,
               variant: str = "corrected") -> LayerCost:
    _check_variant(variant)
    m = layer.m_levels if m_levels is None else m_levels
    u, v, d = output_dims(layer, variant)
    n_lsa = logical_arrays(config, m)
    n_t = tiles(config, layer, n_lsa)
    n_pass = passes(config, layer, n_lsa)
    if layer.kind == KIND_DENSE:
        work = layer.n_inputs * n_pass
    else:
        c_eff = 1 if layer.kind == KIND_DEPTHWISE else layer.c_in
        if layer.stride == 1:
            spatial = layer.w_in * layer.h_in
        else:
            spatial = u * v * layer.stride * layer.stride
        h_term = layer.h_k if variant == "corrected" else layer.h_in
        work = spatial * c_eff * layer.w_k * h_term * n_pass
    cycles = math.ceil(Fraction(work, n_t))
    util = utilization_of(config, layer)
    return LayerCost(layer_id, layer.kind, u, v, d, n_lsa, n_t, n_pass,
                     cycles, layer_macs(layer), util)


def utilization_of(config: SimConfig, layer) -> float:
    """Active-PE share: min(D_remaining, D_arch)/D_arch averaged over passes."""
    d_eff = _d_arch_eff(config, layer)
    ch_passes = math.ceil(layer.d_out / d_eff)
    total = 0.0
    remaining = layer.d_out
    for _ in range(ch_passes):
        total += min(remaining, d_eff) / config.d_arch
        remaining -= d_eff
    return total / ch_passes


def utilization(net: NetworkSpec, config: SimConfig) -> list[float]:
    return [utilization_of(config, layer) for layer in net.layers]


@dataclass
class NetworkEstimate:
    name: str
    config_label: str
    clock_hz: float
    layers: list[LayerCost] = field(default_factory=list)
    offload_final_dense: bool = False

    @property
    def total_cycles(self) -> int:
        return sum(l.cycles for l in self.active_layers)

    @property
    def active_layers(self) -> list[LayerCost]:
        if not self.offload_final_dense:
            return self.layers
        keep = list(self.layers)
        while keep and keep[-1].kind == KIND_DENSE:
            keep.pop()
        return keep

    @property
    def fps(self) -> float:
        cyc = self.total_cycles
        return self.clock_hz / cyc if cyc else float("inf")

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    def to_json(self) -> dict:
        return {
            "network": self.name,
            "config": self.config_label,
            "clock_hz": self.clock_hz,
            "offload_final_dense": self.offload_final_dense,
            "layers": [l.to_json() for l in self.layers],
            "total_cycles": self.total_cycles,
            "fps": self.fps,
            "total_macs": self.total_macs,
        }


def estimate_network(net: NetworkSpec, config: SimConfig,
                     clock_hz: float | None = None, m_levels=None,
                     variant: str = "corrected",
                     offload_final_dense: bool = False) -> NetworkEstimate:
    if m_levels is None:
        ms = [l.m_levels for l in net.layers]
    elif isinstance(m_levels, int):
        ms = [m_levels] * len(net.layers)
    else:
        ms = list(m_levels)
    clock = config.clock_hz if clock_hz is None else clock_hz
    est = NetworkEstimate(net.name, config.label(), clock,
                          offload_final_dense=offload_final_dense)
    for i, (layer, m) in enumerate(zip(net.layers, ms)):
        est.layers.append(layer_cost(config, layer, i, m, variant))
    return est


def network_macs(net: NetworkSpec) -> int:
    return sum(layer_macs(layer) for layer in net.layers)


def cpu_fps(total_macs: int, gops: float = 1e9) -> float:
    """Frames per second of a scalar unit doing one MAC per cycle."""
    if total_macs <= 0:
        raise ValueError("total_macs must be positive")
    return gops / total_macs


def sweep(net: NetworkSpec, configs, clock_hz: float | None = None,
          m_levels=None, variant: str = "corrected",
          offload_final_dense: bool = False) -> list[NetworkEstimate]:
    return [estimate_network(net, cfg, clock_hz, m_levels, variant,
                             offload_final_dense) for cfg in configs]


def format_sweep(estimates: list[NetworkEstimate], cpu_gops: float = 1e9,
                 net: NetworkSpec | None = None) -> str:
    lines = [f"{'config':<12} {'cycles':>14} {'fps':>10} {'util% (first conv)':>20}"]
    for est in estimates:
        util = est.layers[0].utilization if est.layers else 0.0
        lines.append(f"{est.config_label:<12} {est.total_cycles:>14} "
                     f"{est.fps:>10.1f} {100 * util:>20.1f}")
    if net is not None:
        macs = network_macs(net)
        lines.append(f"cpu @ {cpu_gops / 1e9:.0f} GOPS: {cpu_fps(macs, cpu_gops):.1f} fps "
                     f"({macs} MACs)")
    return "\n".join(lines)
