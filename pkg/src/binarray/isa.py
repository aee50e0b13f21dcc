"""32-bit instruction set of the control unit: assembler, disassembler, compiler.

Word encoding (repo-defined ABI, version 1):

    bits[31:28]  opcode      STI=0x1  HLT=0x2  CONV=0x3  BRA=0x4
    STI          bits[27:24] register file id, bits[23:16] parameter code,
                 bits[15:0] immediate (unsigned)
    CONV         bits[15:8] layer id, bit[0] last-layer flag
    BRA          bits[15:0] absolute instruction index
    HLT          no operands (word 0x20000000)

Assembly text: one instruction per line, ';' starts a comment, labels end
with ':'.  Examples:

    STI r0 W_I=48   ; input width
    HLT             ; wait for frame trigger
    CONV 0
    CONV 1 LAST
    BRA 0

Binary program files carry the magic "BARR", one version byte, three pad
bytes, then little-endian 32-bit words.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .config import SimConfig
from .network import KIND_CONV, KIND_DENSE, KIND_DEPTHWISE, NetworkSpec

OP_STI, OP_HLT, OP_CONV, OP_BRA = 0x1, 0x2, 0x3, 0x4
_OP_NAMES = {OP_STI: "STI", OP_HLT: "HLT", OP_CONV: "CONV", OP_BRA: "BRA"}

# Configuration-register catalog, version 1.  The code doubles as the
# register file id in compiler output.
PARAM_CODES = {
    "W_I": 0x00, "W_B": 0x01, "H_I": 0x02, "H_B": 0x03,
    "C_I": 0x04, "D": 0x05, "W_P": 0x06, "H_P": 0x07,
    "S": 0x08, "P": 0x09, "M": 0x0A, "KIND": 0x0B,
    "ACT": 0x0C, "QSHIFT": 0x0D, "IN_BASE": 0x0E, "OUT_BASE": 0x0F,
}
PARAM_NAMES = {v: k for k, v in PARAM_CODES.items()}

KIND_CODES = {KIND_CONV: 0, KIND_DENSE: 1, KIND_DEPTHWISE: 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
ACT_CODES = {"none": 0, "relu": 1}
ACT_NAMES = {v: k for k, v in ACT_CODES.items()}

MAGIC = b"BARR"
VERSION = 1


class AssemblyError(ValueError):
    """Syntax or range error in assembly text; carries the line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DisassemblyError(ValueError):
    """Undecodable word; carries the word index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"word {index}: {message}")
        self.index = index


class CompileError(ValueError):
    """A network cannot be lowered to a processing program."""


@dataclass(frozen=True)
class Instruction:
    op: int
    reg: int = 0
    param: str = ""
    imm: int = 0
    layer: int = 0
    last: bool = False
    target: int = 0

    def encode(self) -> int:
        if self.op == OP_STI:
            code = PARAM_CODES[self.param]
            return (OP_STI << 28) | (self.reg << 24) | (code << 16) | self.imm
        if self.op == OP_HLT:
            return OP_HLT << 28
        if self.op == OP_CONV:
            return (OP_CONV << 28) | (self.layer << 8) | int(self.last)
        if self.op == OP_BRA:
            return (OP_BRA << 28) | self.target
        raise ValueError(f"unknown opcode {self.op}")

    def text(self) -> str:
        if self.op == OP_STI:
            return f"STI r{self.reg} {self.param}={self.imm}"
        if self.op == OP_HLT:
            return "HLT"
        if self.op == OP_CONV:
            return f"CONV {self.layer} LAST" if self.last else f"CONV {self.layer}"
        return f"BRA {self.target}"


def sti(param: str, value: int, reg: int | None = None) -> Instruction:
    if param not in PARAM_CODES:
        raise ValueError(f"unknown parameter {param!r}")
    if not 0 <= value <= 0xFFFF:
        raise ValueError(f"{param}={value} does not fit a 16-bit immediate")
    r = PARAM_CODES[param] if reg is None else reg
    return Instruction(OP_STI, reg=r, param=param, imm=value)


def decode(word: int, index: int = 0) -> Instruction:
    op = (word >> 28) & 0xF
    if op == OP_STI:
        code = (word >> 16) & 0xFF
        if code not in PARAM_NAMES:
            raise DisassemblyError(index, f"unknown parameter code 0x{code:02x}")
        return Instruction(OP_STI, reg=(word >> 24) & 0xF,
                           param=PARAM_NAMES[code], imm=word & 0xFFFF)
    if op == OP_HLT:
        return Instruction(OP_HLT)
    if op == OP_CONV:
        return Instruction(OP_CONV, layer=(word >> 8) & 0xFF, last=bool(word & 1))
    if op == OP_BRA:
        return Instruction(OP_BRA, target=word & 0xFFFF)
    raise DisassemblyError(index, f"unknown opcode 0x{op:x} in word 0x{word:08x}")


@dataclass
class Program:
    instructions: list[Instruction] = field(default_factory=list)
    symbols: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.instructions)

    def words(self) -> list[int]:
        return [i.encode() for i in self.instructions]

    def text(self) -> str:
        return "\n".join(i.text() for i in self.instructions) + ("\n" if self.instructions else "")

    def validate(self) -> None:
        n = len(self.instructions)
        for idx, ins in enumerate(self.instructions):
            if ins.op == OP_BRA and not 0 <= ins.target < n:
                raise ValueError(f"instruction {idx}: branch target {ins.target} "
                                 f"outside program of {n} words")
        if not any(i.op in (OP_CONV, OP_HLT) for i in self.instructions):
            raise ValueError("program must contain at least one CONV or HLT")

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC + bytes([VERSION, 0, 0, 0]))
            for w in self.words():
                fh.write(struct.pack("<I", w))

    @classmethod
    def load(cls, path) -> "Program":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != MAGIC:
            raise ValueError(f"{path}: not a program file (magic {blob[:4]!r})")
        if blob[4] != VERSION:
            raise ValueError(f"{path}: unsupported program version {blob[4]}")
        body = blob[8:]
        if len(body) % 4:
            raise ValueError(f"{path}: truncated instruction stream")
        words = [w for (w,) in struct.iter_unpack("<I", body)]
        prog = cls([decode(w, i) for i, w in enumerate(words)])
        prog.validate()
        return prog


def _parse_int(token: str, line: int, what: str) -> int:
    try:
        return int(token, 0)
    except ValueError:
        raise AssemblyError(line, f"bad {what} {token!r}") from None


def assemble(text: str) -> Program:
    """Two-pass assembly: collect labels, then encode instructions."""
    stripped: list[tuple[int, str]] = []
    symbols: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        while line.split(maxsplit=1) and line.split(maxsplit=1)[0].endswith(":"):
            label, _, rest = line.partition(":")
            label = label.strip()
            if not label.isidentifier():
                raise AssemblyError(lineno, f"bad label {label!r}")
            if label in symbols:
                raise AssemblyError(lineno, f"duplicate label {label!r}")
            symbols[label] = len(stripped)
            line = rest.strip()
        if line:
            stripped.append((lineno, line))

    instructions: list[Instruction] = []
    for lineno, line in stripped:
        tokens = line.split()
        mnemonic = tokens[0].upper()
        if mnemonic == "HLT":
            if len(tokens) != 1:
                raise AssemblyError(lineno, "HLT takes no operands")
            instructions.append(Instruction(OP_HLT))
        elif mnemonic == "STI":
            if len(tokens) != 3 or not tokens[1].lower().startswith("r"):
                raise AssemblyError(lineno, "expected: STI r<N> PARAM=value")
            reg = _parse_int(tokens[1][1:], lineno, "register")
            if not 0 <= reg <= 15:
                raise AssemblyError(lineno, f"register r{reg} outside r0..r15")
            name, eq, value = tokens[2].partition("=")
            if not eq:
                raise AssemblyError(lineno, "expected PARAM=value")
            if name not in PARAM_CODES:
                raise AssemblyError(lineno, f"unknown parameter {name!r}")
            imm = _parse_int(value, lineno, "immediate")
            if not 0 <= imm <= 0xFFFF:
                raise AssemblyError(lineno, f"immediate {imm} does not fit 16 bits")
            instructions.append(Instruction(OP_STI, reg=reg, param=name, imm=imm))
        elif mnemonic == "CONV":
            if len(tokens) not in (2, 3):
                raise AssemblyError(lineno, "expected: CONV <layer> [LAST]")
            layer = _parse_int(tokens[1], lineno, "layer id")
            if not 0 <= layer <= 0xFF:
                raise AssemblyError(lineno, f"layer id {layer} does not fit 8 bits")
            last = False
            if len(tokens) == 3:
                if tokens[2].upper() != "LAST":
                    raise AssemblyError(lineno, f"unexpected operand {tokens[2]!r}")
                last = True
            instructions.append(Instruction(OP_CONV, layer=layer, last=last))
        elif mnemonic == "BRA":
            if len(tokens) != 2:
                raise AssemblyError(lineno, "expected: BRA <target>")
            if tokens[1] in symbols:
                target = symbols[tokens[1]]
            elif tokens[1].isidentifier():
                raise AssemblyError(lineno, f"undefined label {tokens[1]!r}")
            else:
                target = _parse_int(tokens[1], lineno, "branch target")
            if not 0 <= target <= 0xFFFF:
                raise AssemblyError(lineno, f"target {target} does not fit 16 bits")
            instructions.append(Instruction(OP_BRA, target=target))
        else:
            raise AssemblyError(lineno, f"unknown mnemonic {tokens[0]!r}")

    prog = Program(instructions, symbols)
    prog.validate()
    return prog


def disassemble(words) -> str:
    """Canonical text for a word sequence; assembling it reproduces the words."""
    lines = [decode(w, i).text() for i, w in enumerate(words)]
    return "\n".join(lines) + ("\n" if lines else "")


# Parameters written per layer, in burst order.  The first two mirror the
# canonical program shape (input width, kernel width, ...).
_BURST = ["W_I", "W_B", "H_I", "H_B", "C_I", "D", "W_P", "H_P",
          "S", "P", "M", "KIND", "ACT", "QSHIFT", "IN_BASE", "OUT_BASE"]


def layer_params(layer, in_base: int, out_base: int, shift: int) -> dict[str, int]:
    return {
        "W_I": layer.w_in, "W_B": layer.w_k, "H_I": layer.h_in, "H_B": layer.h_k,
        "C_I": layer.c_in, "D": layer.d_out, "W_P": layer.pool_w, "H_P": layer.pool_h,
        "S": layer.stride, "P": layer.pad, "M": layer.m_levels,
        "KIND": KIND_CODES[layer.kind], "ACT": ACT_CODES[layer.activation],
        "QSHIFT": shift, "IN_BASE": in_base, "OUT_BASE": out_base,
    }


def compile_network(net: NetworkSpec, config: SimConfig,
                    quant: list | None = None) -> Program:
    """Lower a network to a processing program.

    Emits one STI burst per layer, a HLT after the first burst (frame
    trigger wait), one CONV per layer with the last-layer flag on the final
    one, and a terminal BRA back to the program start.  ``quant`` supplies
    per-layer requantize shifts (a quantized bank); without it every layer
    must carry an explicit alpha binary point.
    """
    if not net.layers:
        raise CompileError("network has no layers")
    if config.mode == "high_accuracy":
        for i, layer in enumerate(net.layers):
            if layer.m_levels > 2 * config.m_arch:
                raise CompileError(
                    f"layer {i}: M={layer.m_levels} exceeds 2*M_arch={2 * config.m_arch} "
                    f"supported in high_accuracy mode")

    # Ping-pong buffer layout: the largest tensor on either side fixes the
    # second base address.
    elems = [net.layers[0].n_inputs] + [l.out_elems for l in net.layers]
    half = max(elems)
    if 2 * half > config.fbuf_words:
        raise CompileError(
            f"feature tensors need 2x{half} words, buffer holds {config.fbuf_words}")
    bases = (0, half)
    if half > 0xFFFF:
        raise CompileError(f"buffer base {half} does not fit a 16-bit immediate")

    instructions: list[Instruction] = []
    for i, layer in enumerate(net.layers):
        if layer.kind not in KIND_CODES:
            raise CompileError(f"layer {i}: unsupported kind {layer.kind!r}")
        if layer.kind != KIND_DENSE and (layer.stride != 1 or layer.pad != 0):
            raise CompileError(
                f"layer {i} ({layer.kind}): the address generator supports "
                f"stride 1 and no padding only")
        if quant is not None:
            shift = quant[i].shift
        elif layer.requant_shift is not None:
            shift = layer.requant_shift
        else:
            raise CompileError(
                f"layer {i}: requantize shift unknown; pass a quantized bank "
                f"or set the layer's alpha binary point")
        if not 0 <= shift <= 27:
            raise CompileError(f"layer {i}: requantize shift {shift} outside [0, 27]")
        params = layer_params(layer, bases[i % 2], bases[(i + 1) % 2], shift)
        for pos, name in enumerate(_BURST):
            try:
                instructions.append(sti(name, params[name], reg=pos % 16))
            except ValueError as exc:
                raise CompileError(f"layer {i}: {exc}") from None
        if i == 0:
            instructions.append(Instruction(OP_HLT))
        instructions.append(Instruction(OP_CONV, layer=i, last=(i == len(net.layers) - 1)))
    instructions.append(Instruction(OP_BRA, target=0))
    prog = Program(instructions)
    prog.validate()
    return prog
