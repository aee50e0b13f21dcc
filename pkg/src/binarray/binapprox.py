"""Multi-level binary approximation of weight tensors.

A real coefficient vector w of length N_c is approximated as a linear
combination of M binary planes:  w ~ sum_m B_m * alpha_m  with entries of
B_m in {+1, -1}.  Planes are chosen greedily from residual signs; the
scaling factors come from a least-squares fit against the chosen planes.
An optional refinement loop re-derives the planes from the fitted scales
until they stabilize, keeping the best iterate seen.

All arithmetic is 64-bit float; quantization to hardware formats lives in
``fxp``/``weights``.  sign(0) is fixed to +1 so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import KIND_DENSE, KIND_DEPTHWISE, NetworkSpec

DEFAULT_REFINE_ITERS = 100


def _as_flat(w) -> np.ndarray:
    arr = np.asarray(w, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("weight tensor is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("weight tensor contains non-finite values")
    return arr


def _sign_plus(x: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1, as int8."""
    return np.where(x >= 0.0, 1, -1).astype(np.int8)


@dataclass
class BinaryApprox:
    """Binary planes, scaling factors and the achieved squared error.

    ``bitplanes`` has shape (M, N_c) with entries +1/-1; ``residual`` is
    ||w - sum_m B_m alpha_m||^2.  ``bias`` rides along untouched: it is
    never binarized.
    """

    bitplanes: np.ndarray
    alphas: np.ndarray
    residual: float
    bias: float | None = None

    def __post_init__(self):
        self.bitplanes = np.ascontiguousarray(self.bitplanes, dtype=np.int8)
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if self.bitplanes.ndim != 2:
            raise ValueError("bitplanes must be a (M, N_c) array")
        if self.alphas.shape != (self.bitplanes.shape[0],):
            raise ValueError("one alpha per bitplane required")
        if not np.all(np.isfinite(self.alphas)):
            raise ValueError("alphas must be finite")
        if not np.all(np.abs(self.bitplanes) == 1):
            raise ValueError("bitplane entries must be +1 or -1")

    @property
    def m_levels(self) -> int:
        return self.bitplanes.shape[0]

    @property
    def n_c(self) -> int:
        return self.bitplanes.shape[1]

    def check_residual(self, w, rel_tol: float = 1e-9) -> None:
        """Verify the stored residual against a recomputation from fields."""
        arr = _as_flat(w)
        actual = float(np.sum((arr - reconstruct(self)) ** 2))
        scale = max(abs(actual), abs(self.residual), 1.0)
        if abs(actual - self.residual) > rel_tol * scale:
            raise ValueError(
                f"stored residual {self.residual} inconsistent with fields ({actual})")


def greedy_binarize(w, m_levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Derive M binary planes from residual signs, with scale estimates.

    Plane m is the sign pattern of the running deviation; its estimate
    alpha_hat_m is the mean absolute deviation, which is then subtracted
    before the next plane is drawn.
    """
    if m_levels < 1:
        raise ValueError("m_levels must be >= 1")
    arr = _as_flat(w)
    planes = np.empty((m_levels, arr.size), dtype=np.int8)
    estimates = np.empty(m_levels, dtype=np.float64)
    dw = arr.copy()
    for m in range(m_levels):
        b = _sign_plus(dw)
        a_hat = float(np.mean(dw * b))
        planes[m] = b
        estimates[m] = a_hat
        dw -= b * a_hat
    return planes, estimates


def solve_scaling(w, bitplanes) -> np.ndarray:
    """Least-squares scaling factors for fixed binary planes.

    Solves min_alpha ||w - B^T alpha||^2; when planes repeat and the normal
    equations are singular, the minimum-norm solution is returned.
    """
    arr = _as_flat(w)
    planes = np.asarray(bitplanes)
    if planes.ndim != 2 or planes.shape[1] != arr.size:
        raise ValueError(
            f"bitplanes shape {planes.shape} does not match weight length {arr.size}")
    design = planes.T.astype(np.float64)
    alphas, *_ = np.linalg.lstsq(design, arr, rcond=None)
    return alphas


def _residual(arr: np.ndarray, planes: np.ndarray, alphas: np.ndarray) -> float:
    recon = (planes.astype(np.float64) * alphas[:, None]).sum(axis=0)
    return float(np.sum((arr - recon) ** 2))


def approximate_alg1(w, m_levels: int, bias: float | None = None) -> BinaryApprox:
    """Greedy planes followed by one least-squares solve for the scales."""
    arr = _as_flat(w)
    planes, _ = greedy_binarize(arr, m_levels)
    alphas = solve_scaling(arr, planes)
    return BinaryApprox(planes, alphas, _residual(arr, planes, alphas), bias)


def approximate_alg2(w, m_levels: int, max_iters: int = DEFAULT_REFINE_ITERS,
                     bias: float | None = None) -> BinaryApprox:
    """Recursive refinement: re-derive planes from the fitted scales.

    Starting from the greedy solution, planes are recomputed from the signs
    of the running deviation under the current least-squares scales, then
    the scales are re-solved.  The loop stops when the planes stabilize or
    after ``max_iters`` iterations (plane elements may oscillate), and the
    iterate with the smallest residual seen is returned.  The result is
    therefore never worse than the greedy solution.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    arr = _as_flat(w)
    planes, _ = greedy_binarize(arr, m_levels)
    alphas = solve_scaling(arr, planes)
    best_planes, best_alphas = planes, alphas
    best_res = _residual(arr, planes, alphas)

    for _ in range(max_iters):
        old = planes
        dw = arr.copy()
        new = np.empty_like(planes)
        for m in range(m_levels):
            b = _sign_plus(dw)
            new[m] = b
            dw -= b * alphas[m]
        planes = new
        alphas = solve_scaling(arr, planes)
        res = _residual(arr, planes, alphas)
        if res < best_res:
            best_planes, best_alphas, best_res = planes, alphas, res
        if np.array_equal(planes, old):
            break
    return BinaryApprox(best_planes, best_alphas, best_res, bias)


def approximate(w, m_levels: int, algorithm: int = 2,
                max_iters: int = DEFAULT_REFINE_ITERS,
                bias: float | None = None) -> BinaryApprox:
    if algorithm == 1:
        return approximate_alg1(w, m_levels, bias)
    if algorithm == 2:
        return approximate_alg2(w, m_levels, max_iters, bias)
    raise ValueError(f"algorithm must be 1 or 2, got {algorithm}")


def reconstruct(a: BinaryApprox) -> np.ndarray:
    """The approximated coefficient vector sum_m B_m alpha_m (bias excluded)."""
    return (a.bitplanes.astype(np.float64) * a.alphas[:, None]).sum(axis=0)


def codebook(alphas) -> np.ndarray:
    """All 2^M signed combinations +-alpha_1 +- ... +- alpha_M.

    Returned as a multiset in sign-lexicographic order (+ before -);
    duplicate values are kept.
    """
    a = np.asarray(alphas, dtype=np.float64)
    if a.ndim != 1 or a.size < 1:
        raise ValueError("alphas must be a non-empty vector")
    values = np.zeros(1, dtype=np.float64)
    for alpha in a:
        values = np.concatenate([values + alpha, values - alpha])
    return values


def compression_factor(n_c: int, m_levels: int, bits_w: int = 32,
                       bits_alpha: int = 8) -> float:
    """Storage ratio of one filter (N_c coefficients plus one bias).

    (N_c + 1) * bits_w  /  (M * (N_c + bits_alpha)); tends to bits_w / M
    for large filters.
    """
    for name, v in (("n_c", n_c), ("m_levels", m_levels),
                    ("bits_w", bits_w), ("bits_alpha", bits_alpha)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1")
    return (n_c + 1) * bits_w / (m_levels * (n_c + bits_alpha))


@dataclass
class CompressionReport:
    """Network-wide storage accounting, filter by filter."""

    original_bits: int
    compressed_bits: int
    per_layer: list[tuple[int, int, int, float]] = field(default_factory=list)

    @property
    def factor(self) -> float:
        return self.original_bits / self.compressed_bits

    def to_json(self) -> dict:
        return {
            "original_bits": self.original_bits,
            "compressed_bits": self.compressed_bits,
            "factor": self.factor,
            "per_layer": [
                {"layer": lid, "n_c": n_c, "m": m, "factor": f}
                for lid, n_c, m, f in self.per_layer
            ],
        }


def _layer_filters(layer) -> tuple[int, int]:
    """(filter count, coefficients per filter) for storage accounting.

    Depthwise stages count one 2D filter per channel; dense stages one
    coefficient row per neuron.
    """
    if layer.kind == KIND_DENSE:
        return layer.d_out, layer.n_inputs
    if layer.kind == KIND_DEPTHWISE:
        return layer.c_in, layer.w_k * layer.h_k
    return layer.d_out, layer.n_c


def network_compression(net: NetworkSpec, m_levels=None, bits_w: int = 32,
                        bits_alpha: int = 8) -> CompressionReport:
    """Aggregate the per-filter storage ratio over a whole network.

    ``m_levels`` overrides the per-layer plane counts (single int or one
    per layer).  Original storage counts N_c coefficients plus one bias per
    filter at bits_w each; compressed storage counts M planes of N_c bits
    plus M scale words, matching the single-filter formula so that a
    one-filter network reduces to ``compression_factor``.
    """
    if m_levels is None:
        ms = [l.m_levels for l in net.layers]
    elif isinstance(m_levels, int):
        ms = [m_levels] * len(net.layers)
    else:
        ms = list(m_levels)
        if len(ms) != len(net.layers):
            raise ValueError(f"{len(ms)} level counts for {len(net.layers)} layers")

    orig = 0
    comp = 0
    per_layer = []
    for i, (layer, m) in enumerate(zip(net.layers, ms)):
        filters, n_c = _layer_filters(layer)
        o = filters * (n_c + 1) * bits_w
        c = filters * m * (n_c + bits_alpha)
        orig += o
        comp += c
        per_layer.append((i, n_c, m, o / c))
    return CompressionReport(orig, comp, per_layer)
