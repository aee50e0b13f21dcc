import json

import numpy as np
import pytest

from binarray import cli, containers, network
from binarray.network import LayerSpec, NetworkSpec


@pytest.fixture
def demo(tmp_path):
    net = NetworkSpec("demo", 8, 8, 2, [
        LayerSpec("conv", 8, 8, 2, w_k=3, h_k=3, d_out=4, pool_w=2, pool_h=2,
                  m_levels=2),
        LayerSpec("dense", 1, 1, 36, d_out=5, m_levels=2, activation="none"),
    ])
    net_path = tmp_path / "net.json"
    network.save_network(net, net_path)
    rng = np.random.default_rng(11)
    img_path = tmp_path / "image.tns"
    containers.save_tensor(img_path, rng.normal(0, 0.4, size=(2, 8, 8)))
    return tmp_path, net_path, img_path


def test_approximate_then_compile_then_simulate(demo, capsys):
    tmp, net_path, img_path = demo
    bank = tmp / "bank"
    rc = cli.main(["approximate", "--network", str(net_path), "--out", str(bank),
                   "--seed", "1", "--json", str(tmp / "approx.json")])
    assert rc == 0
    assert (bank / "manifest.json").exists()
    payload = json.loads((tmp / "approx.json").read_text())
    assert payload["compression"]["factor"] > 1

    prog = tmp / "prog.bin"
    rc = cli.main(["compile", "--network", str(net_path), "--config", "1x4x2",
                   "--weights", str(bank), "--out", str(prog),
                   "--asm", str(tmp / "prog.s")])
    assert rc == 0
    first = prog.read_bytes()
    rc = cli.main(["compile", "--network", str(net_path), "--config", "1x4x2",
                   "--weights", str(bank), "--out", str(prog)])
    assert rc == 0
    assert prog.read_bytes() == first  # deterministic output bytes

    outdir = tmp / "run"
    rc = cli.main(["simulate", "--network", str(net_path), "--weights", str(bank),
                   "--image", str(img_path), "--config", "1x4x2",
                   "--out", str(outdir), "--trace",
                   "--json", str(tmp / "sim.json")])
    assert rc == 0
    out = containers.load_tensor(outdir / "output.tns")
    report = json.loads((outdir / "report.json").read_text())
    sim = json.loads((tmp / "sim.json").read_text())
    assert sim["output"] == out.reshape(-1).tolist()
    assert report["total_cycles"] == sim["report"]["total_cycles"]
    assert (outdir / "trace.txt").exists()
    capsys.readouterr()


def test_simulate_manifest_and_mode_switch(demo, capsys):
    tmp, net_path, img_path = demo
    bank = tmp / "bank"
    cli.main(["approximate", "--network", str(net_path), "--out", str(bank),
              "--seed", "1"])
    manifest = {"network": str(net_path), "weights": str(bank),
                "image": str(img_path), "config": "1x4x2",
                "mode": "high_throughput"}
    mpath = tmp / "run.json"
    mpath.write_text(json.dumps(manifest))
    rc = cli.main(["simulate", "--manifest", str(mpath),
                   "--json", str(tmp / "ht.json")])
    assert rc == 0
    manifest["mode"] = "high_accuracy"
    mpath.write_text(json.dumps(manifest))
    rc = cli.main(["simulate", "--manifest", str(mpath),
                   "--json", str(tmp / "ha.json")])
    assert rc == 0
    ht = json.loads((tmp / "ht.json").read_text())["report"]
    ha = json.loads((tmp / "ha.json").read_text())["report"]
    # same program, more cycles in the accuracy mode only if M exceeds m_arch;
    # here M == m_arch so both modes agree
    assert ht["total_cycles"] == ha["total_cycles"]
    capsys.readouterr()


def test_estimate_text_and_json_agree(demo, tmp_path, capsys):
    _, net_path, _ = demo
    out = tmp_path / "est.json"
    rc = cli.main(["estimate", "--network", str(net_path),
                   "--configs", "1x8x2,1x32x2", "--json", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    payload = json.loads(out.read_text())
    assert len(payload["estimates"]) == 2
    for est in payload["estimates"]:
        assert f"{est['fps']:.1f}" in text
    assert f"{payload['cpu']['fps']:.1f}" in text


def test_estimate_sweep_file_emits_row_per_config(demo, tmp_path, capsys):
    _, net_path, _ = demo
    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps([[1, 8, 2], [1, 32, 2], "4x32x4", [16, 32, 4]]))
    out = tmp_path / "est.json"
    rc = cli.main(["estimate", "--network", str(net_path),
                   "--configs", str(sweep), "--json", str(out)])
    assert rc == 0
    capsys.readouterr()
    payload = json.loads(out.read_text())
    labels = [e["config"] for e in payload["estimates"]]
    assert labels == ["[1,8,2]", "[1,32,2]", "[4,32,4]", "[16,32,4]"]


def test_approximate_reference_network_factor(tmp_path, capsys):
    net_path = tmp_path / "cnn_a.json"
    network.save_network(network.cnn_a(), net_path)
    out = tmp_path / "report.json"
    rc = cli.main(["approximate", "--network", str(net_path),
                   "--out", str(tmp_path / "bank"), "--seed", "0",
                   "--alg", "1", "--levels", "2", "--json", str(out)])
    capsys.readouterr()
    assert rc == 0
    factor = json.loads(out.read_text())["compression"]["factor"]
    assert abs(factor - 15.8) < 0.3


def test_approximate_per_layer_levels(demo, capsys):
    tmp, net_path, _ = demo
    out = tmp / "report.json"
    rc = cli.main(["approximate", "--network", str(net_path),
                   "--out", str(tmp / "bank2"), "--seed", "0",
                   "--levels", "3,1", "--json", str(out)])
    capsys.readouterr()
    assert rc == 0
    per_layer = json.loads(out.read_text())["compression"]["per_layer"]
    assert [e["m"] for e in per_layer] == [3, 1]
    # defaults match the documented refinement settings
    parser = cli.build_parser()
    ns = parser.parse_args(["approximate", "--network", "x", "--out", "y"])
    assert (ns.alg, ns.iters) == (2, 100)


def test_mode_changes_cycles_not_program(tmp_path, capsys):
    net = NetworkSpec("m4", 8, 8, 2, [
        LayerSpec("conv", 8, 8, 2, w_k=3, h_k=3, d_out=4, pool_w=2, pool_h=2,
                  m_levels=4)])
    net_path = tmp_path / "net.json"
    network.save_network(net, net_path)
    rng = np.random.default_rng(2)
    containers.save_tensor(tmp_path / "img.tns", rng.normal(0, 0.3, size=(2, 8, 8)))
    bank = tmp_path / "bank"
    cli.main(["approximate", "--network", str(net_path), "--out", str(bank),
              "--seed", "2"])
    progs = {}
    reports = {}
    for mode in ("high_throughput", "high_accuracy"):
        prog = tmp_path / f"{mode}.bin"
        cli.main(["compile", "--network", str(net_path), "--config", "1x4x2",
                  "--mode", mode, "--weights", str(bank), "--out", str(prog)])
        progs[mode] = prog.read_bytes()
        out = tmp_path / f"{mode}.json"
        cli.main(["simulate", "--network", str(net_path), "--weights", str(bank),
                  "--image", str(tmp_path / "img.tns"), "--config", "1x4x2",
                  "--mode", mode, "--json", str(out)])
        reports[mode] = json.loads(out.read_text())["report"]
    capsys.readouterr()
    assert progs["high_throughput"] == progs["high_accuracy"]
    assert reports["high_accuracy"]["total_cycles"] > \
        reports["high_throughput"]["total_cycles"]


def test_compile_reports_bad_layer(tmp_path, capsys):
    net = NetworkSpec("strided", 9, 9, 1, [
        LayerSpec("conv", 9, 9, 1, w_k=3, h_k=3, d_out=2, stride=2,
                  alpha_frac=8)])
    net_path = tmp_path / "net.json"
    network.save_network(net, net_path)
    rc = cli.main(["compile", "--network", str(net_path), "--config", "1x8x2"])
    assert rc == 1
    assert "layer 0" in capsys.readouterr().err


def test_verify_quick_passes(capsys):
    rc = cli.main(["verify", "--quick", "--seed", "3"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count("PASS") >= 5 and "FAIL" not in out


def test_verify_detects_corrupt_weights(demo, capsys):
    tmp, net_path, img_path = demo
    bank = tmp / "bank"
    cli.main(["approximate", "--network", str(net_path), "--out", str(bank),
              "--seed", "1"])
    victim = sorted(bank.glob("*.ba"))[0]
    victim.write_bytes(victim.read_bytes()[:-6])
    manifest = {"network": str(net_path), "weights": str(bank),
                "image": str(img_path), "config": "1x4x2"}
    mpath = tmp / "run.json"
    mpath.write_text(json.dumps(manifest))
    rc = cli.main(["verify", "--quick", "--manifest", str(mpath)])
    out = capsys.readouterr().out
    assert rc == 1
    line = [l for l in out.splitlines() if "manifest" in l and l.startswith("FAIL")]
    assert line and victim.name in line[0] and "offset" in line[0]


def test_simulate_missing_path_errors(demo, capsys):
    _, net_path, img_path = demo
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--network", str(net_path),
                  "--weights", "/nonexistent", "--image", str(img_path),
                  "--config", "1x4x2"])
