"""Functional and cycle-counting simulation of the systolic array.

Building blocks mirror the hardware: PEs accumulate sign-conditioned
activations, one array column per bit-plane; a time-shared multiply-add
scales and chains the column outputs; the fused activation/max-pool unit
(AMU) reduces the channel-first output stream; the address generator (AGU)
walks convolution anchors grouped by pooling window; the output data
gatherer (ODG) maps channel-first arrivals to planar row-major addresses.

Functional results are bit-exact against the fixed-mode reference network.
Cycle accounting follows the hardware stream schedule: every pass charges a
full input-plane sweep (window positions whose kernel exceeds the input
consume stream slots without emitting), one cycle per executed instruction,
plus a small constant pipeline latency per layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .fxp import (ACC28, ACT8, ConfigError, FxFlags, FxValue, QFormat,
                  fx_mul_add, mul_add_sat_array, quantize_array,
                  requantize_array)
from .isa import KIND_NAMES, OP_BRA, OP_CONV, OP_HLT, OP_STI, PARAM_CODES, Program
from .network import KIND_DENSE, KIND_DEPTHWISE
from .weights import FixedLayerWeights

PIPELINE_LATENCY_BASE = 8  # register stages outside the PE/PA counts


class SimulationError(RuntimeError):
    """The control unit hit a state it cannot process."""


# ---------------------------------------------------------------------------
# Processing element


@dataclass
class PEState:
    """Accumulator with conditional sign change; one step per clock cycle."""

    acc: int = 0
    out_reg: int = 0
    bit_index: int = 0


def pe_step(state: PEState, x: int, b: int) -> PEState:
    """Accumulate +x or -x depending on the binary weight bit."""
    state.acc += x if b > 0 else -x
    state.bit_index += 1
    return state


def pe_emit(state: PEState) -> int:
    """Window boundary: latch the partial result and clear the accumulator."""
    state.out_reg = state.acc
    state.acc = 0
    state.bit_index = 0
    return state.out_reg


# ---------------------------------------------------------------------------
# Processing-array output stage


def pa_output(p_values, alphas, bias_or_prev, flags: FxFlags | None = None) -> list[int]:
    """Serial multiply-add over one column's partial results.

    Channel d gets p_values[d] * alphas[d] + bias_or_prev[d], saturated in
    the 28-bit accumulator domain.  One channel per cycle on the shared
    multiplier.
    """
    if not (len(p_values) == len(alphas) == len(bias_or_prev)):
        raise ValueError("pa_output operands must have equal channel counts")
    out = []
    for p, a, o in zip(p_values, alphas, bias_or_prev):
        out.append(fx_mul_add(FxValue(int(p), ACC28), FxValue(int(a), ACT8),
                              FxValue(int(o), ACC28), flags).raw)
    return out


# ---------------------------------------------------------------------------
# Activation / max-pooling unit


@dataclass
class AMUState:
    """Running per-channel maxima over one pooling window.

    Registers start at zero, which fuses ReLU into the pooling reduction:
    the emitted value is max(0, window maximum).
    """

    regs: list[int]
    slot: int = 0
    sample: int = 0

    @classmethod
    def create(cls, d_arch: int) -> "AMUState":
        return cls(regs=[0] * d_arch)


def amu_step(state: AMUState, value: int, n_p: int, d_arch: int):
    """Consume one channel-first value; emit d_arch maxima every n_p samples."""
    if value > state.regs[state.slot]:
        state.regs[state.slot] = value
    state.slot += 1
    if state.slot < d_arch:
        return None
    state.slot = 0
    state.sample += 1
    if state.sample < n_p:
        return None
    out = list(state.regs)
    state.regs = [0] * d_arch
    state.sample = 0
    return out


# ---------------------------------------------------------------------------
# Address generation


@dataclass(frozen=True)
class ConvGeometry:
    """Layer geometry as seen by the address units (stride 1, no padding)."""

    w_i: int
    h_i: int
    c_i: int
    w_k: int
    h_k: int
    w_p: int
    h_p: int
    d: int

    def __post_init__(self):
        if self.w_k > self.w_i or self.h_k > self.h_i:
            raise ConfigError("kernel larger than input")
        if self.u % self.w_p or self.v % self.h_p:
            raise ConfigError(
                f"pooling {self.w_p}x{self.h_p} does not divide conv output "
                f"{self.u}x{self.v} (downsampling only)")

    @property
    def u(self) -> int:
        return self.w_i - self.w_k + 1

    @property
    def v(self) -> int:
        return self.h_i - self.h_k + 1

    @property
    def u_p(self) -> int:
        return self.u // self.w_p

    @property
    def v_p(self) -> int:
        return self.v // self.h_p


@dataclass
class AGUState:
    a_cv: int = 0
    a_po: int = 0
    a_cl: int = 0
    i_cl: int = 0
    p_w: int = 0
    p_h: int = 0


def agu_next(state: AGUState, geom: ConvGeometry) -> int:
    """Advance to the next convolution anchor (absolute buffer address).

    Anchors walk all positions of one pooling window first (columns, then
    rows), then the pooling window moves right along the row, then down.
    """
    if state.p_w < geom.w_p - 1:                               # conv right
        state.a_cv += 1
        state.p_w += 1
    elif state.p_h < geom.h_p - 1:                             # conv next row
        state.a_cl += geom.w_i
        state.a_cv = state.a_cl
        state.p_h += 1
        state.p_w = 0
    elif state.i_cl < geom.w_i - geom.w_k - geom.w_p + 1:      # pool right
        state.a_po += geom.w_p
        state.a_cv = state.a_cl = state.a_po
        state.i_cl += geom.w_p
        state.p_w = state.p_h = 0
    else:                                                      # pool down
        state.a_po = state.a_po + geom.h_p * geom.w_i - state.i_cl
        state.a_cv = state.a_cl = state.a_po
        state.p_w = state.p_h = state.i_cl = 0
    return state.a_cv


def iter_conv_anchors(geom: ConvGeometry):
    """All U*V anchors of one pass, in AGU order."""
    state = AGUState()
    yield state.a_cv
    for _ in range(geom.u * geom.v - 1):
        yield agu_next(state, geom)


def odg_address(emission_index: int, channel: int, geom: ConvGeometry) -> int:
    """Planar row-major buffer address for a channel-first AMU arrival."""
    x = emission_index % geom.u_p
    y = emission_index // geom.u_p
    return channel * (geom.u_p * geom.v_p) + y * geom.u_p + x


# ---------------------------------------------------------------------------
# Cycle accounting


@dataclass
class LayerCycles:
    layer_id: int
    kind: str
    u: int
    v: int
    d: int
    n_c: int
    groups: int
    ch_passes: int
    tiles: int
    charged: int
    active_pe: int
    pa_ops: int
    latency: int
    utilization: float
    local_resident: bool
    weight_bits_per_pa: int

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "layer_id", "kind", "u", "v", "d", "n_c", "groups", "ch_passes",
            "tiles", "charged", "active_pe", "pa_ops", "latency",
            "utilization", "local_resident", "weight_bits_per_pa")}


@dataclass
class CycleReport:
    layers: list[LayerCycles] = field(default_factory=list)
    instr_cycles: int = 0
    clock_hz: float = 400e6
    overflow_count: int = 0

    @property
    def layer_cycles(self) -> int:
        return sum(l.charged for l in self.layers)

    @property
    def total_cycles(self) -> int:
        return self.layer_cycles + self.instr_cycles

    @property
    def fps(self) -> float:
        return self.clock_hz / self.total_cycles if self.total_cycles else float("inf")

    def to_json(self) -> dict:
        return {
            "layers": [l.to_json() for l in self.layers],
            "instr_cycles": self.instr_cycles,
            "layer_cycles": self.layer_cycles,
            "total_cycles": self.total_cycles,
            "clock_hz": self.clock_hz,
            "fps": self.fps,
            "overflow_count": self.overflow_count,
        }

    def format_text(self) -> str:
        lines = [f"{'layer':>5} {'kind':<9} {'out':>12} {'passes':>6} "
                 f"{'tiles':>5} {'cycles':>12} {'util%':>6}"]
        for l in self.layers:
            out = f"{l.d}x{l.v}x{l.u}" if l.kind != KIND_DENSE else f"{l.d}"
            lines.append(f"{l.layer_id:>5} {l.kind:<9} {out:>12} "
                         f"{l.groups * l.ch_passes:>6} {l.tiles:>5} "
                         f"{l.charged:>12} {100 * l.utilization:>6.1f}")
        lines.append(f"instruction cycles: {self.instr_cycles}")
        lines.append(f"total cycles: {self.total_cycles}  "
                     f"fps @ {self.clock_hz / 1e6:.0f} MHz: {self.fps:.1f}")
        if self.overflow_count:
            lines.append(f"accumulator saturations: {self.overflow_count}")
        return "\n".join(lines)


@dataclass(frozen=True)
class _Schedule:
    groups: int
    serial_groups: int
    ch_passes: int
    tiles: int
    d_slot: int
    arrays_per_tile: int

    @property
    def total_passes(self) -> int:
        return self.serial_groups * self.ch_passes


def _schedule(config: SimConfig, kind: str, w_i: int, h_i: int, d: int,
              m_eff: int) -> _Schedule:
    groups = math.ceil(m_eff / config.m_arch)
    d_slot = 1 if kind == KIND_DEPTHWISE else config.d_arch
    if config.n_sa == 1:
        return _Schedule(groups, groups, math.ceil(d / d_slot), 1, d_slot, 1)
    if config.n_sa % groups:
        raise ConfigError(
            f"n_sa={config.n_sa} must be a multiple of the bit-plane group "
            f"count {groups} (cascaded arrays)")
    logical = config.n_sa // groups
    need = math.ceil(d / d_slot)
    tiles = max(1, logical // need)
    tiles = min(tiles, max(1, w_i - 1), max(1, h_i - 1))
    arrays_per_tile = max(1, logical // tiles)
    ch_passes = math.ceil(d / (d_slot * arrays_per_tile))
    return _Schedule(groups, 1, ch_passes, tiles, d_slot, arrays_per_tile)


# ---------------------------------------------------------------------------
# Program execution


class _Tracer:
    def __init__(self, sink):
        self.sink = sink

    def __call__(self, line: str) -> None:
        if self.sink is not None:
            self.sink.append(line)


def _check_weights(lw: FixedLayerWeights, kind: str, regs: dict, layer_id: int) -> None:
    if kind == KIND_DENSE:
        n_c = regs["C_I"]
    elif kind == KIND_DEPTHWISE:
        n_c = regs["W_B"] * regs["H_B"]
    else:
        n_c = regs["W_B"] * regs["H_B"] * regs["C_I"]
    if lw.n_c != n_c:
        raise SimulationError(
            f"layer {layer_id}: weight planes have {lw.n_c} coefficients, "
            f"geometry needs {n_c}")
    if lw.d_out != regs["D"]:
        raise SimulationError(
            f"layer {layer_id}: weights cover {lw.d_out} channels, "
            f"geometry needs {regs['D']}")
    if lw.m_levels != regs["M"]:
        raise SimulationError(
            f"layer {layer_id}: weights carry {lw.m_levels} planes, "
            f"program configured M={regs['M']}")


def _run_conv_layer(fbuf, regs, lw, config, flags, trace, layer_id):
    kind = KIND_NAMES[regs["KIND"]]
    geom = ConvGeometry(regs["W_I"], regs["H_I"], regs["C_I"],
                        regs["W_B"], regs["H_B"], regs["W_P"], regs["H_P"],
                        regs["D"])
    if kind == KIND_DEPTHWISE and geom.d != geom.c_i:
        raise SimulationError(f"layer {layer_id}: depthwise needs D == C_I")
    shift = regs["QSHIFT"]
    m_eff = config.effective_levels(regs["M"])
    sched = _schedule(config, kind, geom.w_i, geom.h_i, geom.d, m_eff)

    in_base, out_base = regs["IN_BASE"], regs["OUT_BASE"]
    plane = geom.w_i * geom.h_i
    out_elems = geom.d * geom.u_p * geom.v_p
    if in_base + geom.c_i * plane > fbuf.size or out_base + out_elems > fbuf.size:
        raise SimulationError(f"layer {layer_id}: feature buffer overrun")

    planes = lw.bitplanes[:, :m_eff].astype(np.int64)
    alphas = lw.alpha_raw[:, :m_eff].astype(np.int64)
    biases = lw.bias_raw.astype(np.int64)
    n_p = geom.w_p * geom.h_p

    if kind == KIND_DEPTHWISE:
        pattern = (np.arange(geom.h_k)[:, None] * geom.w_i +
                   np.arange(geom.w_k)[None, :]).reshape(-1)
    else:
        pattern = (np.arange(geom.c_i)[:, None, None] * plane +
                   np.arange(geom.h_k)[None, :, None] * geom.w_i +
                   np.arange(geom.w_k)[None, None, :]).reshape(-1)

    pa_ops = 0
    ovf_before = flags.overflow_count
    tracing = trace.sink is not None
    # Functional channel grouping is per array column (d_slot wide) and
    # covers every channel; tiling/extra arrays only change the schedule.
    func_passes = math.ceil(geom.d / sched.d_slot)
    for pass_idx in range(func_passes):
        d0 = pass_idx * sched.d_slot
        dd = np.arange(d0, min(d0 + sched.d_slot, geom.d))
        win_base = in_base + (d0 * plane if kind == KIND_DEPTHWISE else 0)
        bp = planes[dd]
        al = alphas[dd]
        bias = biases[dd]
        nd = len(dd)
        amu = AMUState.create(nd)
        emit_idx = 0
        for k, a_cv in enumerate(iter_conv_anchors(geom)):
            win = fbuf[win_base + a_cv + pattern]
            p = bp @ win                                     # (nd, m_eff)
            o = bias.copy()
            for m in range(m_eff):
                o = mul_add_sat_array(p[:, m], al[:, m], o, flags)
            pa_ops += nd * m_eff
            y = requantize_array(o, shift)
            if tracing:
                trace(f"ANCHOR layer={layer_id} pass={pass_idx} idx={k} a_cv={a_cv}")
            emitted = None
            for s in range(nd):
                emitted = amu_step(amu, int(y[s]), n_p, nd)
            if emitted is not None:
                for s, val in enumerate(emitted):
                    addr = odg_address(emit_idx, int(dd[s]), geom)
                    fbuf[out_base + addr] = val
                    if tracing:
                        trace(f"EMIT layer={layer_id} pass={pass_idx} "
                              f"window={emit_idx} d={int(dd[s])} addr={addr} value={val}")
                emit_idx += 1
        if emit_idx != geom.u_p * geom.v_p:
            raise SimulationError(
                f"layer {layer_id}: pass emitted {emit_idx} windows, "
                f"expected {geom.u_p * geom.v_p}")

    ovf = flags.overflow_count - ovf_before
    if ovf:
        trace(f"OVF layer={layer_id} count={ovf}")

    c_eff = 1 if kind == KIND_DEPTHWISE else geom.c_i
    sweep = geom.w_i * geom.h_i * c_eff * geom.w_k * geom.h_k
    latency = config.d_arch + config.m_arch + PIPELINE_LATENCY_BASE
    charged = math.ceil(sched.total_passes * sweep / sched.tiles) + latency
    active = sched.groups * sched.ch_passes * geom.u * geom.v * lw.n_c
    util = geom.d / (sched.ch_passes * sched.arrays_per_tile * sched.d_slot) \
        * (sched.d_slot / config.d_arch)
    resident = (geom.c_i * plane + out_elems) <= config.local_fbuf_words
    report = LayerCycles(
        layer_id, kind, geom.u, geom.v, geom.d, lw.n_c,
        sched.groups, sched.ch_passes, sched.tiles, charged, active, pa_ops,
        latency, util, resident, lw.n_c * config.d_arch)
    out = fbuf[out_base:out_base + out_elems].reshape(geom.d, geom.v_p, geom.u_p)
    return out.copy(), report


def _run_dense_layer(fbuf, regs, lw, config, flags, trace, layer_id):
    n_in = regs["C_I"]
    d = regs["D"]
    shift = regs["QSHIFT"]
    relu = bool(regs["ACT"])
    m_eff = config.effective_levels(regs["M"])
    sched = _schedule(config, KIND_DENSE, 1, 1, d, m_eff)
    in_base, out_base = regs["IN_BASE"], regs["OUT_BASE"]
    if in_base + n_in > fbuf.size or out_base + d > fbuf.size:
        raise SimulationError(f"layer {layer_id}: feature buffer overrun")

    planes = lw.bitplanes[:, :m_eff].astype(np.int64)
    alphas = lw.alpha_raw[:, :m_eff].astype(np.int64)
    x = fbuf[in_base:in_base + n_in]
    pa_ops = 0
    ovf_before = flags.overflow_count
    func_passes = math.ceil(d / config.d_arch)
    for pass_idx in range(func_passes):
        d0 = pass_idx * config.d_arch
        dd = np.arange(d0, min(d0 + config.d_arch, d))
        nd = len(dd)
        p = planes[dd] @ x
        o = lw.bias_raw[dd].astype(np.int64)
        for m in range(m_eff):
            o = mul_add_sat_array(p[:, m], alphas[dd][:, m], o, flags)
        pa_ops += nd * m_eff
        y = requantize_array(o, shift)
        if relu:
            amu = AMUState.create(nd)
            emitted = None
            for s in range(nd):
                emitted = amu_step(amu, int(y[s]), 1, nd)
            y = np.asarray(emitted, dtype=np.int64)
        for s in range(nd):
            fbuf[out_base + int(dd[s])] = y[s]
            trace(f"EMIT layer={layer_id} pass={pass_idx} window=0 "
                  f"d={int(dd[s])} addr={int(dd[s])} value={int(y[s])}")
    ovf = flags.overflow_count - ovf_before
    if ovf:
        trace(f"OVF layer={layer_id} count={ovf}")

    latency = config.d_arch + config.m_arch + PIPELINE_LATENCY_BASE
    charged = sched.total_passes * n_in + latency
    active = sched.groups * sched.ch_passes * n_in
    util = d / (sched.ch_passes * sched.arrays_per_tile * config.d_arch)
    resident = (n_in + d) <= config.local_fbuf_words
    report = LayerCycles(layer_id, KIND_DENSE, 1, 1, d, n_in,
                         sched.groups, sched.ch_passes, 1, charged, active,
                         pa_ops, latency, util, resident, n_in * config.d_arch)
    return fbuf[out_base:out_base + d].reshape(d, 1, 1).copy(), report


def run_program(program: Program, bank: list[FixedLayerWeights], image,
                config: SimConfig, trace: list | None = None,
                input_frac: int = 7):
    """Execute a processing program on one input frame.

    Returns the final-layer raw output tensor (channel, row, column) and a
    CycleReport.  The first HLT loads the frame at the configured input
    base; the run completes when a HLT finds no frame pending.  Float
    frames are quantized with ``input_frac`` (the CPU-side preparation
    step); integer frames are raw activations already.
    """
    program.validate()
    emit = _Tracer(trace)
    regs = {name: 0 for name in PARAM_CODES}
    write_seq: dict[str, int] = {}
    seq = 0
    fbuf = np.zeros(config.fbuf_words, dtype=np.int64)
    flags = FxFlags()
    report = CycleReport(clock_hz=config.clock_hz)
    pending = [np.asarray(image)]
    final_out = None
    executed = 0
    limit = 10_000 + 100 * len(program)
    pc = 0
    while True:
        if pc >= len(program):
            raise SimulationError(f"control unit ran off the program end at pc={pc}")
        executed += 1
        if executed > limit:
            raise SimulationError("program did not reach an idle HLT (missing BRA loop?)")
        ins = program.instructions[pc]
        report.instr_cycles += 1
        if ins.op == OP_STI:
            seq += 1
            regs[ins.param] = ins.imm
            write_seq[ins.param] = seq
            emit(f"STI seq={seq} pc={pc} {ins.param}={ins.imm}")
            pc += 1
        elif ins.op == OP_HLT:
            if pending:
                frame = pending.pop(0)
                loaded = _load_frame(frame, regs, fbuf, input_frac)
                emit(f"HLT pc={pc} loaded={loaded} base={regs['IN_BASE']}")
                pc += 1
            else:
                emit(f"HLT pc={pc} idle")
                break
        elif ins.op == OP_BRA:
            emit(f"BRA pc={pc} target={ins.target}")
            pc = ins.target
        elif ins.op == OP_CONV:
            if ins.layer >= len(bank):
                raise SimulationError(f"CONV {ins.layer}: no weights for this layer")
            kind_code = regs["KIND"]
            if kind_code not in KIND_NAMES:
                raise SimulationError(
                    f"CONV {ins.layer}: unsupported layer kind code {kind_code} "
                    f"(offload point)")
            if regs["S"] != 1 or regs["P"] != 0:
                raise SimulationError(
                    f"CONV {ins.layer}: stride {regs['S']} / padding {regs['P']} "
                    f"not supported by the address generator (offload point)")
            if not 0 <= regs["QSHIFT"] <= 27:
                raise SimulationError(
                    f"CONV {ins.layer}: requantize shift {regs['QSHIFT']} outside [0, 27]")
            for name in PARAM_CODES:
                emit(f"REGREAD layer={ins.layer} {name}={regs[name]} "
                     f"wseq={write_seq.get(name, 0)}")
            kind = KIND_NAMES[kind_code]
            _check_weights(bank[ins.layer], kind, regs, ins.layer)
            if kind == KIND_DENSE:
                out, layer_rpt = _run_dense_layer(fbuf, regs, bank[ins.layer],
                                                  config, flags, emit, ins.layer)
            else:
                out, layer_rpt = _run_conv_layer(fbuf, regs, bank[ins.layer],
                                                 config, flags, emit, ins.layer)
            report.layers.append(layer_rpt)
            if ins.last:
                final_out = out
            pc += 1
        else:
            raise SimulationError(f"unknown opcode {ins.op} at pc={pc}")

    report.overflow_count = flags.overflow_count
    if final_out is None:
        raise SimulationError("program completed without a last-layer CONV")
    return final_out, report


def _load_frame(frame: np.ndarray, regs: dict, fbuf: np.ndarray,
                input_frac: int) -> int:
    expect = regs["W_I"] * regs["H_I"] * regs["C_I"]
    raw = quantize_array(frame, QFormat(8, input_frac))
    flat = raw.reshape(-1)
    if flat.size != expect:
        raise SimulationError(
            f"frame has {flat.size} values, layer geometry needs {expect}")
    base = regs["IN_BASE"]
    if base + expect > fbuf.size:
        raise SimulationError("frame does not fit the feature buffer")
    fbuf[base:base + expect] = flat
    return expect
