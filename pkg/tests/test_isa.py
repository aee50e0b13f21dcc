import pytest

from binarray import isa
from binarray.config import SimConfig
from binarray.isa import (AssemblyError, CompileError, DisassemblyError,
                          Instruction, OP_BRA, OP_CONV, OP_HLT, OP_STI,
                          Program, assemble, compile_network, disassemble, sti)
from binarray.network import LayerSpec, NetworkSpec, cnn_a

from support import fixed_bank_for  # noqa: F401


def test_hlt_word():
    assert assemble("HLT").words() == [0x20000000]


def test_bra_encoding():
    prog = assemble("HLT\nBRA 1")
    word = prog.words()[1]
    assert word >> 28 == OP_BRA
    assert word & 0xFFFF == 1
    assert word == 0x40000001


def test_sti_encoding():
    prog = assemble("STI r0 W_I=48\nHLT")
    ins = prog.instructions[0]
    assert (ins.reg, ins.param, ins.imm) == (0, "W_I", 48)
    word = prog.words()[0]
    assert word >> 28 == OP_STI
    assert (word >> 24) & 0xF == 0
    assert (word >> 16) & 0xFF == isa.PARAM_CODES["W_I"]
    assert word & 0xFFFF == 48


def test_conv_last_flag():
    prog = assemble("CONV 3\nCONV 4 LAST")
    assert [(i.layer, i.last) for i in prog.instructions] == [(3, False), (4, True)]
    back = assemble(disassemble(prog.words()))
    assert back.words() == prog.words()


def test_labels_resolve():
    prog = assemble("start:\nSTI r1 D=5\nHLT\nBRA start")
    assert prog.instructions[-1].target == 0
    assert prog.symbols == {"start": 0}


def test_assembler_errors_carry_line_numbers():
    with pytest.raises(AssemblyError, match="line 2"):
        assemble("HLT\nNOP")
    with pytest.raises(AssemblyError, match="line 1.*immediate"):
        assemble("STI r0 W_I=70000")
    with pytest.raises(AssemblyError, match="line 3.*undefined label"):
        assemble("HLT\nHLT\nBRA nowhere")
    with pytest.raises(AssemblyError, match="unknown parameter"):
        assemble("STI r0 BOGUS=1")
    with pytest.raises(AssemblyError, match="register"):
        assemble("STI r77 W_I=1")


def test_comments_and_whitespace_ignored():
    text = "  HLT   ; wait here\n\n; full comment line\nBRA 0 ; loop\n"
    prog = assemble(text)
    assert len(prog) == 2


def test_disassemble_empty_and_unknown():
    assert disassemble([]) == ""
    with pytest.raises(DisassemblyError, match="word 1"):
        disassemble([0x20000000, 0xF0000000])


def test_roundtrip_random_programs(rng):
    params = list(isa.PARAM_CODES)
    for _ in range(40):
        n = int(rng.integers(2, 30))
        ins = []
        for _ in range(n):
            pick = rng.integers(0, 4)
            if pick == 0:
                ins.append(sti(params[int(rng.integers(len(params)))],
                               int(rng.integers(0, 1 << 16)),
                               reg=int(rng.integers(0, 16))))
            elif pick == 1:
                ins.append(Instruction(OP_HLT))
            elif pick == 2:
                ins.append(Instruction(OP_CONV, layer=int(rng.integers(256)),
                                       last=bool(rng.integers(2))))
            else:
                ins.append(Instruction(OP_BRA, target=int(rng.integers(n))))
        ins.append(Instruction(OP_HLT))
        prog = Program(ins)
        words = prog.words()
        assert assemble(disassemble(words)).words() == words
        # canonical text is a fixed point of disassemble(assemble(.))
        canonical = prog.text()
        assert disassemble(assemble(canonical).words()) == canonical


def test_program_validation():
    with pytest.raises(ValueError, match="branch target"):
        Program([Instruction(OP_HLT), Instruction(OP_BRA, target=9)]).validate()
    with pytest.raises(ValueError, match="CONV or HLT"):
        Program([Instruction(OP_BRA, target=0)]).validate()


def test_program_file_roundtrip(tmp_path):
    prog = assemble("STI r0 W_I=5\nHLT\nCONV 0 LAST\nBRA 0")
    path = tmp_path / "prog.bin"
    prog.save(path)
    blob = path.read_bytes()
    assert blob[:4] == b"BARR" and blob[4] == 1
    back = Program.load(path)
    assert back.words() == prog.words()
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError, match="magic"):
        Program.load(tmp_path / "bad.bin")


def test_compile_reference_network_shape(rng):
    net = cnn_a()
    bank = fixed_bank_for(net, rng)
    prog = compile_network(net, SimConfig(d_arch=32, m_arch=2), quant=bank)
    text = prog.text().splitlines()
    # opening burst mirrors the canonical program: input width then kernel width
    assert text[0] == "STI r0 W_I=48"
    assert text[1] == "STI r1 W_B=7"
    # one HLT between the first burst and the first CONV
    assert text.index("HLT") == 16
    assert text[17] == "CONV 0"
    # second burst re-configures the geometry for the next stage
    assert text[18] == "STI r0 W_I=21"
    assert text[19] == "STI r1 W_B=4"
    # exactly one CONV per layer, last one flagged, terminal loop
    convs = [l for l in text if l.startswith("CONV")]
    assert len(convs) == 5
    assert convs[-1] == "CONV 4 LAST"
    assert text[-1] == "BRA 0"
    assert sum(1 for l in text if l == "HLT") == 1


def test_compile_single_layer_minimal_shape(rng):
    net = NetworkSpec("one", 6, 6, 1, [
        LayerSpec("conv", 6, 6, 1, w_k=3, h_k=3, d_out=2, pool_w=2, pool_h=2)])
    bank = fixed_bank_for(net, rng)
    prog = compile_network(net, SimConfig(d_arch=4, m_arch=2), quant=bank)
    ops = [i.op for i in prog.instructions]
    assert ops == [OP_STI] * 16 + [OP_HLT, OP_CONV, OP_BRA]
    assert prog.instructions[-2].last


def test_compile_deterministic(rng):
    net = cnn_a()
    bank = fixed_bank_for(net, rng)
    cfg = SimConfig(d_arch=8, m_arch=2)
    a = compile_network(net, cfg, quant=bank).words()
    b = compile_network(net, cfg, quant=bank).words()
    assert a == b


def test_compile_rejects_unsupported_geometry(rng):
    net = NetworkSpec("strided", 9, 9, 1, [
        LayerSpec("conv", 9, 9, 1, w_k=3, h_k=3, d_out=2, stride=2)])
    bank = fixed_bank_for(net, rng)
    with pytest.raises(CompileError, match="layer 0"):
        compile_network(net, SimConfig(), quant=bank)


def test_compile_mode_level_budget(rng):
    net = NetworkSpec("deep", 4, 4, 1, [
        LayerSpec("conv", 4, 4, 1, w_k=2, h_k=2, d_out=2, m_levels=6)])
    bank = fixed_bank_for(net, rng)
    with pytest.raises(CompileError, match="high_accuracy"):
        compile_network(net, SimConfig(m_arch=2, mode="high_accuracy"), quant=bank)
    # throughput mode compiles; the simulator truncates at run time
    compile_network(net, SimConfig(m_arch=2), quant=bank)


def test_compile_needs_shift_source():
    net = NetworkSpec("one", 4, 4, 1, [
        LayerSpec("conv", 4, 4, 1, w_k=2, h_k=2, d_out=1)])
    with pytest.raises(CompileError, match="shift"):
        compile_network(net, SimConfig())
    net2 = NetworkSpec("one", 4, 4, 1, [
        LayerSpec("conv", 4, 4, 1, w_k=2, h_k=2, d_out=1, alpha_frac=8)])
    prog = compile_network(net2, SimConfig())
    shifts = [i.imm for i in prog.instructions if i.op == OP_STI and i.param == "QSHIFT"]
    assert shifts == [8]  # 7 + 8 - 7
