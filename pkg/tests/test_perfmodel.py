import math
from fractions import Fraction

import pytest

from binarray import perfmodel
from binarray.config import SimConfig, parse_config
from binarray.network import LayerSpec, cnn_a, cnn_a_convs


L1 = LayerSpec("conv", 48, 48, 3, w_k=7, h_k=7, d_out=5, pool_w=2, pool_h=2)
L2 = LayerSpec("conv", 21, 21, 5, w_k=4, h_k=4, d_out=150, pool_w=6, pool_h=6)


def test_output_dims_examples():
    assert perfmodel.output_dims(L1) == (42, 42, 5)
    pointwise = LayerSpec("conv", 13, 11, 2, w_k=1, h_k=1, d_out=4)
    assert perfmodel.output_dims(pointwise) == (13, 11, 4)


def test_output_dims_stride_validation():
    bad = LayerSpec.__new__(LayerSpec)  # bypass construction checks
    bad.__dict__.update(kind="conv", w_in=8, h_in=8, c_in=1, w_k=3, h_k=3,
                        d_out=1, stride=2, pad=0, pool_w=1, pool_h=1,
                        m_levels=1, activation="relu", x_frac=7, out_frac=7,
                        alpha_frac=None)
    with pytest.raises(ValueError):
        perfmodel.output_dims(bad)  # (8-3)/2 not integral


def test_output_dims_literal_variant_uses_pool_height():
    layer = LayerSpec("conv", 10, 10, 1, w_k=3, h_k=3, d_out=2)
    u, v, _ = perfmodel.output_dims(layer, variant="literal")
    assert (u, v) == (8, 10)  # literal form subtracts the pooling height (1)


def test_logical_arrays():
    assert perfmodel.logical_arrays(SimConfig(n_sa=1, m_arch=2), 2) == 1
    assert perfmodel.logical_arrays(SimConfig(n_sa=4, m_arch=2), 4) == 2
    assert perfmodel.logical_arrays(SimConfig(n_sa=1, m_arch=2), 4) == Fraction(1, 2)


def test_tiles_examples():
    cfg = SimConfig(n_sa=4, d_arch=32, m_arch=2)
    assert perfmodel.tiles(cfg, L1, Fraction(4)) == 4
    assert perfmodel.tiles(cfg, L2, Fraction(1)) == 1  # D >= D_arch * n_lsa
    tiny = LayerSpec("conv", 2, 2, 1, w_k=1, h_k=1, d_out=1)
    assert perfmodel.tiles(cfg, tiny, Fraction(8)) == 1  # W_I/N_T > 1 binds


def test_passes_examples():
    assert perfmodel.passes(SimConfig(d_arch=8), L2, Fraction(1)) == 19
    assert perfmodel.passes(SimConfig(d_arch=32), L1, Fraction(1)) == 1
    dw = LayerSpec("depthwise", 16, 16, 64, w_k=3, h_k=3, d_out=64,
                   pool_w=2, pool_h=2)
    assert perfmodel.passes(SimConfig(d_arch=32), dw, Fraction(1)) == 64


def test_layer_cycles_reference_value():
    cfg = parse_config("1x8x2")
    assert perfmodel.layer_cycles(cfg, L1) == 338_688
    assert perfmodel.layer_cycles(cfg, L2) == 670_320


def test_layer_cycles_linear_in_passes():
    base = perfmodel.layer_cycles(SimConfig(d_arch=8), L2)          # 19 passes
    wide = LayerSpec("conv", 21, 21, 5, w_k=4, h_k=4, d_out=300,
                     pool_w=6, pool_h=6)
    assert perfmodel.layer_cycles(SimConfig(d_arch=8), wide) == base * 38 // 19


def test_layer_cycles_literal_variant():
    cfg = parse_config("1x8x2")
    # literal form replaces one kernel-height factor with the input height
    assert perfmodel.layer_cycles(cfg, L1, variant="literal") == 338_688 * 48 // 7


def test_two_layer_total_against_published_target():
    cfg = parse_config("1x32x2")
    total = sum(perfmodel.layer_cycles(cfg, l) for l in cnn_a_convs().layers)
    assert total == 515_088
    deviation = (total - 466_668) / 466_668
    assert abs(deviation) < 0.15  # reconstructed geometry, gap reported


def test_depthwise_single_plane_sweep():
    dw = LayerSpec("depthwise", 16, 16, 8, w_k=3, h_k=3, d_out=8,
                   pool_w=2, pool_h=2)
    cfg = SimConfig(d_arch=32, m_arch=2)
    # one input plane per pass, one channel at a time
    assert perfmodel.layer_cycles(cfg, dw) == 16 * 16 * 3 * 3 * 8


def test_dense_maps_to_vector_sweep():
    dense = LayerSpec("dense", 1, 1, 1350, d_out=340)
    assert perfmodel.layer_cycles(SimConfig(d_arch=8), dense) == 1350 * math.ceil(340 / 8)


def test_stride_substitution():
    strided = LayerSpec("conv", 9, 9, 1, w_k=3, h_k=3, d_out=2, stride=2)
    cfg = SimConfig(d_arch=8, m_arch=2)
    u, v, _ = perfmodel.output_dims(strided)
    assert perfmodel.layer_cycles(cfg, strided) == u * v * 4 * 1 * 3 * 3


def test_cycles_monotone_in_hardware(rng):
    layers = [L1, L2,
              LayerSpec("dense", 1, 1, 500, d_out=77, m_levels=4),
              LayerSpec("depthwise", 14, 14, 12, w_k=3, h_k=3, d_out=12,
                        pool_w=2, pool_h=2, m_levels=4)]
    for layer in layers:
        for _ in range(40):
            n_sa = int(rng.integers(1, 5))
            d_arch = int(rng.integers(1, 65))
            m_arch = int(rng.integers(1, 5))
            base = perfmodel.layer_cycles(
                SimConfig(n_sa=n_sa, d_arch=d_arch, m_arch=m_arch), layer)
            for kwargs in ({"n_sa": n_sa + 1}, {"d_arch": d_arch + 8},
                           {"m_arch": m_arch + 1}):
                cfg = SimConfig(**{"n_sa": n_sa, "d_arch": d_arch,
                                   "m_arch": m_arch, **kwargs})
                assert perfmodel.layer_cycles(cfg, layer) <= base


def test_mode_consistency_doubles_cycles():
    layer = LayerSpec("conv", 16, 16, 4, w_k=3, h_k=3, d_out=64,
                      pool_w=2, pool_h=2)
    cfg = SimConfig(n_sa=1, d_arch=32, m_arch=2)
    ht = perfmodel.layer_cycles(cfg, layer, m_levels=2)
    ha = perfmodel.layer_cycles(cfg, layer, m_levels=4)
    assert ha == 2 * ht


def test_output_dims_positive_for_valid_layers(rng):
    for _ in range(200):
        w = int(rng.integers(3, 20))
        h = int(rng.integers(3, 20))
        k = int(rng.integers(1, min(w, h) + 1))
        layer = LayerSpec("conv", w, h, int(rng.integers(1, 5)),
                          w_k=k, h_k=k, d_out=int(rng.integers(1, 9)))
        u, v, d = perfmodel.output_dims(layer)
        assert u >= 1 and v >= 1 and d >= 1


def test_utilization_examples():
    cfg = SimConfig(d_arch=32, m_arch=2)
    assert perfmodel.utilization_of(cfg, L1) == pytest.approx(5 / 32)
    full = LayerSpec("conv", 16, 16, 4, w_k=3, h_k=3, d_out=64,
                     pool_w=2, pool_h=2)
    assert perfmodel.utilization_of(cfg, full) == pytest.approx(1.0)
    dw = LayerSpec("depthwise", 16, 16, 8, w_k=3, h_k=3, d_out=8,
                   pool_w=2, pool_h=2)
    assert perfmodel.utilization_of(cfg, dw) == pytest.approx(1 / 32)


def test_cpu_fps_reference():
    assert perfmodel.cpu_fps(9_000_000) == pytest.approx(111.11, abs=0.01)
    with pytest.raises(ValueError):
        perfmodel.cpu_fps(0)


def test_network_estimate_and_fps():
    net = cnn_a()
    est = perfmodel.estimate_network(net, parse_config("1x8x2"))
    assert est.total_cycles == 1_091_078
    assert est.fps == pytest.approx(4e8 / 1_091_078)
    est32 = perfmodel.estimate_network(net, parse_config("1x32x2"))
    assert est32.fps == pytest.approx(745.77, abs=0.01)


def test_offload_excludes_trailing_dense():
    net = cnn_a()
    cfg = parse_config("1x8x2")
    with_dense = perfmodel.estimate_network(net, cfg)
    offloaded = perfmodel.estimate_network(net, cfg, offload_final_dense=True)
    conv_only = sum(perfmodel.layer_cycles(cfg, l) for l in net.layers[:2])
    assert offloaded.total_cycles == conv_only
    assert offloaded.fps > with_dense.fps


def test_doubling_arrays_on_channel_bound_layer():
    layer = LayerSpec("conv", 32, 32, 8, w_k=3, h_k=3, d_out=512,
                      pool_w=2, pool_h=2)
    f1 = perfmodel.layer_cycles(SimConfig(n_sa=1, d_arch=32, m_arch=2), layer)
    f2 = perfmodel.layer_cycles(SimConfig(n_sa=2, d_arch=32, m_arch=2), layer)
    assert f1 / f2 == pytest.approx(2.0)


def test_sweep_formatting():
    net = cnn_a()
    configs = [parse_config(c) for c in ("1x8x2", "1x32x2")]
    estimates = perfmodel.sweep(net, configs)
    text = perfmodel.format_sweep(estimates, net=net)
    assert "[1,8,2]" in text and "[1,32,2]" in text and "cpu" in text
    payloads = [e.to_json() for e in estimates]
    assert payloads[0]["fps"] == pytest.approx(estimates[0].fps)
