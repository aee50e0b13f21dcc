"""Layer and network descriptions shared by the oracle, compiler and simulator.

Feature tensors are channel-planar: shape (C, H, W), each plane row-major.
Filters flatten in the same order, so a conv kernel of shape (C, KH, KW)
becomes a coefficient vector by plain row-major reshape.  Dense layers see
the flattened (C*H*W) vector of the previous output in exactly that order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

KIND_CONV = "conv"
KIND_DENSE = "dense"
KIND_DEPTHWISE = "depthwise"
KINDS = (KIND_CONV, KIND_DENSE, KIND_DEPTHWISE)

ACTIVATIONS = ("relu", "none")


class NetworkError(ValueError):
    """Invalid layer geometry or broken layer chaining."""


@dataclass
class LayerSpec:
    """Geometry, approximation depth and quantization of one layer.

    Convolution output width is (w_in - w_k + 2*pad)/stride + 1 and must be
    integral; pooling must divide the convolution output exactly (the
    datapath only downsamples).  Conv and depthwise layers always apply ReLU
    because activation is fused into the pooling stage; dense layers may
    skip it.
    """

    kind: str
    w_in: int
    h_in: int
    c_in: int
    w_k: int = 1
    h_k: int = 1
    d_out: int = 1
    stride: int = 1
    pad: int = 0
    pool_w: int = 1
    pool_h: int = 1
    m_levels: int = 2
    activation: str = "relu"
    x_frac: int = 7
    out_frac: int = 7
    alpha_frac: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NetworkError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        for name in ("w_in", "h_in", "c_in", "w_k", "h_k", "d_out", "stride",
                     "pool_w", "pool_h", "m_levels"):
            if getattr(self, name) < 1:
                raise NetworkError(f"{name} must be >= 1")
        if self.pad < 0:
            raise NetworkError("pad must be >= 0")
        if self.kind == KIND_DENSE:
            if (self.w_k, self.h_k) != (1, 1) or (self.pool_w, self.pool_h) != (1, 1):
                raise NetworkError("dense layers take no kernel or pooling dims")
            if self.stride != 1 or self.pad != 0:
                raise NetworkError("dense layers take no stride or padding")
            return
        if self.kind == KIND_DEPTHWISE and self.d_out != self.c_in:
            raise NetworkError("depthwise layers require d_out == c_in")
        if self.activation != "relu":
            raise NetworkError(f"{self.kind} layers always apply relu (fused with pooling)")
        if self.w_k > self.w_in + 2 * self.pad or self.h_k > self.h_in + 2 * self.pad:
            raise NetworkError("kernel larger than padded input")
        if (self.w_in - self.w_k + 2 * self.pad) % self.stride or \
           (self.h_in - self.h_k + 2 * self.pad) % self.stride:
            raise NetworkError("stride does not divide the sliding range")
        if self.conv_w % self.pool_w or self.conv_h % self.pool_h:
            raise NetworkError(
                f"pooling {self.pool_w}x{self.pool_h} does not divide conv output "
                f"{self.conv_w}x{self.conv_h} (downsampling only)")

    # Convolution output dims (before pooling).
    @property
    def conv_w(self) -> int:
        if self.kind == KIND_DENSE:
            return 1
        return (self.w_in - self.w_k + 2 * self.pad) // self.stride + 1

    @property
    def conv_h(self) -> int:
        if self.kind == KIND_DENSE:
            return 1
        return (self.h_in - self.h_k + 2 * self.pad) // self.stride + 1

    # Layer output dims (after pooling).
    @property
    def out_w(self) -> int:
        return self.conv_w // self.pool_w

    @property
    def out_h(self) -> int:
        return self.conv_h // self.pool_h

    @property
    def n_inputs(self) -> int:
        """Flattened input element count."""
        return self.w_in * self.h_in * self.c_in

    @property
    def n_c(self) -> int:
        """Coefficients per filter: the length of one binary plane."""
        if self.kind == KIND_DENSE:
            return self.n_inputs
        if self.kind == KIND_DEPTHWISE:
            return self.w_k * self.h_k
        return self.w_k * self.h_k * self.c_in

    @property
    def out_elems(self) -> int:
        return self.d_out * self.out_w * self.out_h

    @property
    def requant_shift(self) -> int | None:
        if self.alpha_frac is None:
            return None
        return self.x_frac + self.alpha_frac - self.out_frac

    def to_json(self) -> dict:
        obj = {
            "kind": self.kind,
            "out_channels": self.d_out,
            "m": self.m_levels,
            "activation": self.activation,
            "q": {
                "x": {"bits": 8, "frac": self.x_frac},
                "out": {"bits": 8, "frac": self.out_frac},
                "alpha": None if self.alpha_frac is None else {"bits": 8, "frac": self.alpha_frac},
            },
        }
        if self.kind != KIND_DENSE:
            obj.update({
                "kernel": [self.w_k, self.h_k],
                "stride": self.stride,
                "pad": self.pad,
                "pool": [self.pool_w, self.pool_h],
            })
        return obj


@dataclass
class NetworkSpec:
    """An ordered stack of layers plus the input tensor description."""

    name: str
    input_w: int
    input_h: int
    input_c: int
    layers: list[LayerSpec] = field(default_factory=list)
    input_frac: int = 7

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        w, h, c = self.input_w, self.input_h, self.input_c
        frac = self.input_frac
        for i, layer in enumerate(self.layers):
            if layer.kind == KIND_DENSE:
                expect = (1, 1, w * h * c)
            else:
                expect = (w, h, c)
            got = (layer.w_in, layer.h_in, layer.c_in)
            if got != expect:
                raise NetworkError(
                    f"layer {i} ({layer.kind}) input dims {got} do not chain "
                    f"from previous output {expect}")
            if layer.x_frac != frac:
                raise NetworkError(
                    f"layer {i} x_frac {layer.x_frac} does not match incoming "
                    f"activation frac {frac}")
            w, h, c = layer.out_w, layer.out_h, layer.d_out
            frac = layer.out_frac

    def layer_m(self, i: int) -> int:
        return self.layers[i].m_levels

    def with_levels(self, m) -> "NetworkSpec":
        """Copy of the network with per-layer bit-plane counts replaced.

        ``m`` is a single count or a sequence with one entry per layer.
        """
        if isinstance(m, int):
            ms = [m] * len(self.layers)
        else:
            ms = list(m)
            if len(ms) != len(self.layers):
                raise NetworkError(
                    f"{len(ms)} level counts for {len(self.layers)} layers")
        layers = [replace(l, m_levels=v) for l, v in zip(self.layers, ms)]
        return NetworkSpec(self.name, self.input_w, self.input_h, self.input_c,
                           layers, self.input_frac)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "input": {"w": self.input_w, "h": self.input_h, "c": self.input_c,
                      "frac": self.input_frac},
            "layers": [l.to_json() for l in self.layers],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkSpec":
        inp = obj["input"]
        w, h, c = int(inp["w"]), int(inp["h"]), int(inp["c"])
        frac = int(inp.get("frac", 7))
        layers = []
        cur_frac = frac
        for i, lo in enumerate(obj["layers"]):
            kind = lo["kind"]
            q = lo.get("q", {})

            def _frac(key, default):
                fmt = q.get(key)
                if fmt is None:
                    return default
                if int(fmt.get("bits", 8)) != 8:
                    raise NetworkError(f"layer {i}: activation/alpha formats are 8-bit")
                return int(fmt["frac"])

            x_frac = _frac("x", cur_frac)
            out_frac = _frac("out", 7)
            afmt = q.get("alpha")
            alpha_frac = None if afmt is None else int(afmt["frac"])
            common = dict(m_levels=int(lo.get("m", 2)),
                          activation=lo.get("activation", "relu"),
                          x_frac=x_frac, out_frac=out_frac, alpha_frac=alpha_frac)
            if kind == KIND_DENSE:
                layer = LayerSpec(kind, 1, 1, w * h * c,
                                  d_out=int(lo["out_channels"]), **common)
            else:
                kw, kh = (int(v) for v in lo["kernel"])
                pw, ph = (int(v) for v in lo.get("pool", [1, 1]))
                layer = LayerSpec(kind, w, h, c, w_k=kw, h_k=kh,
                                  d_out=int(lo["out_channels"]),
                                  stride=int(lo.get("stride", 1)),
                                  pad=int(lo.get("pad", 0)),
                                  pool_w=pw, pool_h=ph, **common)
            layers.append(layer)
            w, h, c = layer.out_w, layer.out_h, layer.d_out
            cur_frac = layer.out_frac
        return cls(obj.get("name", "network"), int(inp["w"]), int(inp["h"]),
                   int(inp["c"]), layers, frac)


def save_network(net: NetworkSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net.to_json(), fh, indent=2)
        fh.write("\n")


def load_network(path) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return NetworkSpec.from_json(json.load(fh))


def cnn_a(m_levels: int = 2) -> NetworkSpec:
    """Reference network A: two conv stages and three dense stages.

    48x48x3 input, 5@7x7 conv with 2x2 pooling, 150@4x4 conv with 6x6
    pooling, then dense 1350 -> 340 -> 490 -> 43.  The pooling shapes are
    the unique downsampling choice that chains 48 -> 21 -> 3 and feeds the
    first dense stage 1350 values; they are a documented reconstruction,
    not ground truth.
    """
    layers = [
        LayerSpec(KIND_CONV, 48, 48, 3, w_k=7, h_k=7, d_out=5,
                  pool_w=2, pool_h=2, m_levels=m_levels),
        LayerSpec(KIND_CONV, 21, 21, 5, w_k=4, h_k=4, d_out=150,
                  pool_w=6, pool_h=6, m_levels=m_levels),
        LayerSpec(KIND_DENSE, 1, 1, 1350, d_out=340, m_levels=m_levels,
                  activation="relu"),
        LayerSpec(KIND_DENSE, 1, 1, 340, d_out=490, m_levels=m_levels,
                  activation="relu"),
        LayerSpec(KIND_DENSE, 1, 1, 490, d_out=43, m_levels=m_levels,
                  activation="none"),
    ]
    return NetworkSpec("cnn-a", 48, 48, 3, layers)


def cnn_a_convs(m_levels: int = 2) -> NetworkSpec:
    """Just the two convolution stages of the reference network."""
    full = cnn_a(m_levels)
    return NetworkSpec("cnn-a-convs", 48, 48, 3, full.layers[:2])
