"""Command-line front end: approximate, compile, simulate, estimate, verify."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import (arraysim, binapprox, containers, isa, network, perfmodel,
               refnet, weights)
from .config import MODES, SimConfig, parse_config
from .fxp import shift_round


def _parse_levels(text: str, n_layers: int):
    parts = [p for p in text.split(",") if p]
    if len(parts) == 1:
        return int(parts[0])
    if len(parts) != n_layers:
        raise SystemExit(f"error: {len(parts)} level counts for {n_layers} layers")
    return [int(p) for p in parts]


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def cmd_approximate(args) -> int:
    net = network.load_network(args.network)
    if args.levels:
        net = net.with_levels(_parse_levels(args.levels, len(net.layers)))
    if args.real_weights:
        real = weights.load_real_bank(args.real_weights)
    else:
        rng = np.random.default_rng(args.seed)
        real = weights.random_real_bank(net, rng)
        print(f"generated Gaussian weights (seed {args.seed})")
    approx = weights.approximate_bank(real, net, algorithm=args.alg,
                                      max_iters=args.iters)
    weights.save_approx_bank(args.out, approx, net)
    report = binapprox.network_compression(net, bits_w=args.bits_w,
                                           bits_alpha=args.bits_alpha)
    total_residual = sum(f.residual for e in approx for f in e.filters)
    print(f"approximated {sum(e.d_out for e in approx)} filters "
          f"(algorithm {args.alg}, K={args.iters})")
    print(f"total squared error: {total_residual:.6g}")
    for lid, n_c, m, f in report.per_layer:
        print(f"  layer {lid}: N_c={n_c} M={m} factor={f:.2f}")
    print(f"compression factor: {report.factor:.2f} "
          f"({report.original_bits} -> {report.compressed_bits} bits)")
    if args.json:
        _write_json(args.json, {"compression": report.to_json(),
                                "total_residual": total_residual})
    return 0


def cmd_compile(args) -> int:
    net = network.load_network(args.network)
    cfg = parse_config(args.config, mode=args.mode)
    quant = None
    if args.weights:
        approx = weights.load_approx_bank(args.weights)
        quant = weights.quantize_bank(approx, net)
    try:
        prog = isa.compile_network(net, cfg, quant=quant)
    except (isa.CompileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.out:
        prog.save(args.out)
        print(f"wrote {len(prog)} instructions to {args.out}")
    if args.asm:
        with open(args.asm, "w", encoding="utf-8") as fh:
            fh.write(prog.text())
        print(f"wrote assembly to {args.asm}")
    if not args.out and not args.asm:
        print(prog.text(), end="")
    return 0


def _load_manifest(args) -> dict:
    if args.manifest:
        with open(args.manifest, encoding="utf-8") as fh:
            manifest = json.load(fh)
    else:
        manifest = {}
    for key in ("network", "weights", "image", "config", "mode", "out", "trace"):
        value = getattr(args, key, None)
        if value is not None:
            manifest[key] = value
    for key in ("network", "weights", "image", "config"):
        if not manifest.get(key):
            raise SystemExit(f"error: simulate needs --{key} (or a manifest entry)")
    for key in ("network", "weights", "image"):
        if not os.path.exists(manifest[key]):
            raise SystemExit(f"error: {key} path {manifest[key]!r} does not exist")
    manifest.setdefault("mode", "high_throughput")
    return manifest


def cmd_simulate(args) -> int:
    manifest = _load_manifest(args)
    net = network.load_network(manifest["network"])
    approx = weights.load_approx_bank(manifest["weights"])
    fixed = weights.quantize_bank(approx, net)
    image = containers.load_tensor(manifest["image"])
    spec = manifest["config"]
    if isinstance(spec, (list, tuple)):
        n_sa, d_arch, m_arch = (int(v) for v in spec)
        cfg = SimConfig(n_sa=n_sa, d_arch=d_arch, m_arch=m_arch,
                        mode=manifest["mode"])
    else:
        cfg = parse_config(spec, mode=manifest["mode"])
    prog = isa.compile_network(net, cfg, quant=fixed)
    trace: list | None = [] if manifest.get("trace") else None
    out, report = arraysim.run_program(prog, fixed, image, cfg, trace=trace,
                                       input_frac=net.input_frac)
    print(report.format_text())
    outdir = manifest.get("out")
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        containers.save_tensor(os.path.join(outdir, "output.tns"),
                               out.astype(np.int32))
        _write_json(os.path.join(outdir, "report.json"), report.to_json())
        with open(os.path.join(outdir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.format_text() + "\n")
        if trace is not None:
            with open(os.path.join(outdir, "trace.txt"), "w", encoding="utf-8") as fh:
                fh.write("\n".join(trace) + "\n")
        print(f"wrote output tensor and reports to {outdir}")
    if args.json:
        _write_json(args.json, {"report": report.to_json(),
                                "output": out.reshape(-1).tolist()})
    return 0


def _parse_configs(text: str) -> list[SimConfig]:
    """Comma list of NxDxM labels, or a JSON file of [N, D, M] triples."""
    if not os.path.exists(text):
        return [parse_config(c) for c in text.split(",") if c]
    with open(text, encoding="utf-8") as fh:
        entries = json.load(fh)
    configs = []
    for entry in entries:
        if isinstance(entry, str):
            configs.append(parse_config(entry))
        else:
            n_sa, d_arch, m_arch = (int(v) for v in entry)
            configs.append(SimConfig(n_sa=n_sa, d_arch=d_arch, m_arch=m_arch))
    return configs


def cmd_estimate(args) -> int:
    net = network.load_network(args.network)
    if args.levels:
        net = net.with_levels(_parse_levels(args.levels, len(net.layers)))
    configs = _parse_configs(args.configs)
    if not configs:
        raise SystemExit("error: no configurations given")
    estimates = perfmodel.sweep(net, configs, clock_hz=args.clock,
                                variant=args.variant,
                                offload_final_dense=args.offload_final_dense)
    print(perfmodel.format_sweep(estimates, cpu_gops=args.gops, net=net))
    if args.offload_final_dense:
        both = perfmodel.sweep(net, configs, clock_hz=args.clock,
                               variant=args.variant, offload_final_dense=False)
        print("without offload:")
        print(perfmodel.format_sweep(both, cpu_gops=args.gops))
    if args.json:
        payload = {
            "estimates": [e.to_json() for e in estimates],
            "cpu": {"gops": args.gops,
                    "fps": perfmodel.cpu_fps(perfmodel.network_macs(net), args.gops),
                    "macs": perfmodel.network_macs(net)},
        }
        _write_json(args.json, payload)
    return 0


# ---------------------------------------------------------------------------
# verify: self-contained cross-checks with independent oracles


def _requant_oracle(value: int, shift: int) -> int:
    """Big-integer reference for requantize: divide, round half away, clamp."""
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


def _anchor_oracle(w_i: int, h_i: int, w_k: int, h_k: int,
                   w_p: int, h_p: int) -> list[int]:
    """Enumerated anchor order: pooling windows row-major, columns first."""
    u, v = w_i - w_k + 1, h_i - h_k + 1
    out = []
    for pv in range(v // h_p):
        for pu in range(u // w_p):
            for ph in range(h_p):
                for pw in range(w_p):
                    out.append((pv * h_p + ph) * w_i + pu * w_p + pw)
    return out


def _verify_requantize(rng, n: int) -> tuple[bool, str]:
    values = rng.integers(-(1 << 27), 1 << 27, size=n)
    shifts = rng.integers(0, 28, size=n)
    for v, s in zip(values, shifts):
        got = max(-128, min(127, shift_round(int(v), int(s))))
        want = _requant_oracle(int(v), int(s))
        if got != want:
            return False, f"value={v} shift={s}: got {got}, oracle {want}"
    boundary = 0
    for s in range(0, 28):
        for base in (0, 1 << s, -(1 << s), 127 << s, -(128 << s), (1 << 27) - 1, -(1 << 27)):
            for delta in range(-4, 5):
                v = base + delta
                if not -(1 << 27) <= v < (1 << 27):
                    continue
                got = max(-128, min(127, shift_round(v, s)))
                if got != _requant_oracle(v, s):
                    return False, f"boundary value={v} shift={s}"
                boundary += 1
    return True, f"{n} random + {boundary} boundary cases"


def _verify_agu(quick: bool) -> tuple[bool, str]:
    hi = 8 if quick else 12
    checked = 0
    for w_i in range(4, hi + 1):
        for h_i in range(4, hi + 1):
            for w_k in range(1, 5):
                for h_k in range(1, 5):
                    if w_k > w_i or h_k > h_i:
                        continue
                    u, v = w_i - w_k + 1, h_i - h_k + 1
                    for w_p in (1, 2, 3):
                        for h_p in (1, 2, 3):
                            if u % w_p or v % h_p:
                                continue
                            geom = arraysim.ConvGeometry(w_i, h_i, 1, w_k, h_k,
                                                         w_p, h_p, 1)
                            got = list(arraysim.iter_conv_anchors(geom))
                            want = _anchor_oracle(w_i, h_i, w_k, h_k, w_p, h_p)
                            if got != want:
                                return False, (f"W_I={w_i} H_I={h_i} W_B={w_k} "
                                               f"H_B={h_k} pool={w_p}x{h_p}")
                            checked += 1
    return True, f"{checked} geometries"


def _verify_dominance(rng, n: int) -> tuple[bool, str]:
    for i in range(n):
        n_c = (27, 147, 80)[i % 3]
        w = rng.normal(size=n_c)
        r1 = binapprox.approximate_alg1(w, 2).residual
        r2 = binapprox.approximate_alg2(w, 2, 100).residual
        if r2 > r1 + 1e-12:
            return False, f"tensor {i}: refined {r2} > greedy {r1}"
    return True, f"{n} tensors"


def _verify_bitexact(rng, nets: int, images: int) -> tuple[bool, str]:
    for i in range(nets):
        net = _random_small_net(rng)
        real = weights.random_real_bank(net, rng)
        approx = weights.approximate_bank(real, net, algorithm=1)
        fixed = weights.quantize_bank(approx, net)
        cfg = SimConfig(n_sa=1, d_arch=int(rng.integers(2, 9)), m_arch=2)
        prog = isa.compile_network(net, cfg, quant=fixed)
        for j in range(images):
            img = rng.integers(-128, 128, size=net.layers[0].n_inputs)
            ref = refnet.infer_ref(net, fixed, img, mode="fixed",
                                   m_limit=[cfg.effective_levels(l.m_levels)
                                            for l in net.layers])
            out, _ = arraysim.run_program(prog, fixed, img, cfg)
            if not np.array_equal(ref.reshape(-1), out.reshape(-1)):
                return False, f"net {i} image {j}"
    return True, f"{nets} networks x {images} images"


def _random_small_net(rng) -> network.NetworkSpec:
    w = int(rng.integers(6, 13))
    h = int(rng.integers(6, 13))
    c = int(rng.integers(1, 4))
    layers = []
    cur = (w, h, c)
    n_layers = int(rng.integers(1, 4))
    for li in range(n_layers):
        if li == n_layers - 1 and rng.random() < 0.4:
            layers.append(network.LayerSpec(
                "dense", 1, 1, cur[0] * cur[1] * cur[2],
                d_out=int(rng.integers(2, 9)), m_levels=int(rng.integers(1, 4)),
                activation="none" if rng.random() < 0.5 else "relu"))
            cur = (1, 1, layers[-1].d_out)
            continue
        k = int(rng.integers(1, min(4, cur[0], cur[1]) + 1))
        u, v = cur[0] - k + 1, cur[1] - k + 1
        pools_u = [p for p in (1, 2, 3) if u % p == 0]
        pools_v = [p for p in (1, 2, 3) if v % p == 0]
        pw = int(rng.choice(pools_u))
        ph = int(rng.choice(pools_v))
        d = int(rng.integers(1, 9))
        layers.append(network.LayerSpec(
            "conv", cur[0], cur[1], cur[2], w_k=k, h_k=k, d_out=d,
            pool_w=pw, pool_h=ph, m_levels=int(rng.integers(1, 4))))
        cur = (layers[-1].out_w, layers[-1].out_h, d)
        if cur[0] < 2 or cur[1] < 2:
            break
    return network.NetworkSpec("random", w, h, c, layers)


def _verify_roundtrip(rng, n: int) -> tuple[bool, str]:
    params = list(isa.PARAM_CODES)
    for i in range(n):
        instructions = []
        length = int(rng.integers(2, 40))
        for _ in range(length):
            kind = rng.integers(0, 4)
            if kind == 0:
                instructions.append(isa.sti(params[int(rng.integers(0, len(params)))],
                                            int(rng.integers(0, 1 << 16)),
                                            reg=int(rng.integers(0, 16))))
            elif kind == 1:
                instructions.append(isa.Instruction(isa.OP_HLT))
            elif kind == 2:
                instructions.append(isa.Instruction(
                    isa.OP_CONV, layer=int(rng.integers(0, 256)),
                    last=bool(rng.integers(0, 2))))
            else:
                instructions.append(isa.Instruction(
                    isa.OP_BRA, target=int(rng.integers(0, length))))
        instructions.append(isa.Instruction(isa.OP_HLT))
        prog = isa.Program(instructions)
        words = prog.words()
        back = isa.assemble(isa.disassemble(words))
        if back.words() != words:
            return False, f"program {i}"
    return True, f"{n} programs"


def _verify_manifest_files(manifest_path) -> tuple[bool, str]:
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    net = network.load_network(manifest["network"])
    approx = weights.load_approx_bank(manifest["weights"])
    if len(approx) != len(net.layers):
        return False, f"{manifest['weights']}: {len(approx)} layers, network has {len(net.layers)}"
    containers.load_tensor(manifest["image"])
    return True, "manifest files load cleanly"


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    quick = args.quick
    checks = [
        ("requantize vs big-integer oracle",
         lambda: _verify_requantize(rng, 20_000 if quick else 200_000)),
        ("anchor order vs enumeration oracle", lambda: _verify_agu(quick)),
        ("refined residual never above greedy",
         lambda: _verify_dominance(rng, 60 if quick else 300)),
        ("simulator bit-exact vs reference",
         lambda: _verify_bitexact(rng, 3 if quick else 10, 2 if quick else 3)),
        ("assembler round trip", lambda: _verify_roundtrip(rng, 50)),
    ]
    if args.manifest:
        checks.append(("manifest file integrity",
                       lambda: _verify_manifest_files(args.manifest)))
    failed = 0
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # pragma: no cover - defensive reporting
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"check": name, "pass": ok, "detail": detail})
        print(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
        failed += 0 if ok else 1
    if args.json:
        _write_json(args.json, {"seed": args.seed, "quick": quick,
                                "results": results})
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binarray",
        description="Binary-weight CNN accelerator toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approximate", help="binarize network weights")
    p.add_argument("--network", required=True)
    p.add_argument("--out", required=True, help="output weight bank directory")
    p.add_argument("--real-weights", help="real weight bank directory")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for generated weights when no bank is given")
    p.add_argument("--levels", help="bit-planes per filter: M or comma list per layer")
    p.add_argument("--alg", type=int, choices=(1, 2), default=2)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--bits-w", type=int, default=32)
    p.add_argument("--bits-alpha", type=int, default=8)
    p.add_argument("--json")
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("compile", help="lower a network to a processing program")
    p.add_argument("--network", required=True)
    p.add_argument("--config", required=True, help="NxDxM, e.g. 1x32x2")
    p.add_argument("--mode", choices=MODES, default="high_throughput")
    p.add_argument("--weights", help="approximated weight bank (fixes shifts)")
    p.add_argument("--out", help="binary program file")
    p.add_argument("--asm", help="assembly text file")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("simulate", help="run a frame through the array simulator")
    p.add_argument("--manifest", help="run manifest JSON")
    p.add_argument("--network")
    p.add_argument("--weights")
    p.add_argument("--image")
    p.add_argument("--config")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", help="output directory")
    p.add_argument("--trace", action="store_const", const=True,
                   help="write an event trace")
    p.add_argument("--json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="analytical throughput for config sweeps")
    p.add_argument("--network", required=True)
    p.add_argument("--configs", required=True,
                   help="comma list (1x8x2,1x32x2) or a JSON sweep file of "
                        "[N, D, M] triples")
    p.add_argument("--levels")
    p.add_argument("--clock", type=float, default=None, help="clock in Hz")
    p.add_argument("--gops", type=float, default=1e9, help="CPU baseline MACs/s")
    p.add_argument("--variant", choices=perfmodel.VARIANTS, default="corrected")
    p.add_argument("--offload-final-dense", action="store_true")
    p.add_argument("--json")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("verify", help="run self-checks against independent oracles")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="also validate the files of a run manifest")
    p.add_argument("--json")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
