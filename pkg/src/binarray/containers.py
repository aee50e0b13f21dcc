"""On-disk containers: tensors and binary-approximation files.

Tensor container: a UTF-8 JSON header terminated by a newline, padded with
spaces to ``data_offset``, followed by raw little-endian element data.  The
header declares dtype ("f64" | "i32" | "u8" | "i8"), shape, "row-major"
order and either the payload offset within the same file or a sibling
``data_file``.

Approximation container: the same framing with header fields M, N_c,
alphas, bias and residual; the payload holds the bitplanes packed LSB-first
into 64-bit little-endian words, plane-major (bit i of plane m is bit
(i mod 64) of word i // 64; set bit means +1).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .binapprox import BinaryApprox

DTYPES = {
    "f64": np.dtype("<f8"),
    "i32": np.dtype("<i4"),
    "u8": np.dtype("u1"),
    "i8": np.dtype("i1"),
}
_NAMES = {v: k for k, v in DTYPES.items()}
_ALIGN = 128


class ContainerError(ValueError):
    """Malformed or truncated container file."""


def _frame(header: dict, payload: bytes) -> bytes:
    body = dict(header)
    offset = _ALIGN
    while True:
        body["data_offset"] = offset
        head = (json.dumps(body, sort_keys=True) + "\n").encode("utf-8")
        if len(head) <= offset:
            break
        offset += _ALIGN * ((len(head) - offset) // _ALIGN + 1)
    return head + b" " * (offset - len(head)) + payload


def _read_frame(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ContainerError(f"{path}: missing header terminator")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: bad header: {exc}") from None
    data_file = header.get("data_file")
    if data_file:
        sibling = os.path.join(os.path.dirname(os.fspath(path)), data_file)
        with open(sibling, "rb") as fh:
            return header, fh.read()
    offset = int(header.get("data_offset", nl + 1))
    if offset < nl + 1 or offset > len(blob):
        raise ContainerError(f"{path}: data offset {offset} outside file")
    return header, blob[offset:]


def save_tensor(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _NAMES:
        if np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype("<f8")
        elif np.issubdtype(arr.dtype, np.signedinteger):
            arr = arr.astype("<i4")
        else:
            raise ContainerError(f"unsupported dtype {arr.dtype}")
    header = {
        "dtype": _NAMES[arr.dtype],
        "shape": list(arr.shape),
        "order": "row-major",
    }
    with open(path, "wb") as fh:
        fh.write(_frame(header, arr.tobytes()))


def load_tensor(path) -> np.ndarray:
    header, payload = _read_frame(path)
    name = header.get("dtype")
    if name not in DTYPES:
        raise ContainerError(f"{path}: unknown dtype {name!r}")
    if header.get("order", "row-major") != "row-major":
        raise ContainerError(f"{path}: only row-major order is supported")
    dtype = DTYPES[name]
    shape = tuple(int(v) for v in header["shape"])
    need = int(np.prod(shape)) * dtype.itemsize
    if len(payload) < need:
        raise ContainerError(
            f"{path}: expected {need} payload bytes at offset "
            f"{header.get('data_offset')}, found {len(payload)}")
    return np.frombuffer(payload[:need], dtype=dtype).reshape(shape).copy()


def pack_bitplanes(bitplanes: np.ndarray) -> bytes:
    """Pack +-1 planes into LSB-first 64-bit words, plane-major."""
    planes = np.asarray(bitplanes)
    m, n_c = planes.shape
    words_per_plane = (n_c + 63) // 64
    bits = np.zeros((m, words_per_plane * 64), dtype=np.uint8)
    bits[:, :n_c] = planes > 0
    return np.packbits(bits, axis=1, bitorder="little").tobytes()


def unpack_bitplanes(data: bytes, m: int, n_c: int) -> np.ndarray:
    words_per_plane = (n_c + 63) // 64
    need = m * words_per_plane * 8
    if len(data) < need:
        raise ContainerError(f"packed bitplanes truncated: {len(data)} < {need} bytes")
    raw = np.frombuffer(data[:need], dtype=np.uint8).reshape(m, words_per_plane * 8)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :n_c]
    return np.where(bits == 1, 1, -1).astype(np.int8)


def save_binary_approx(path, approx: BinaryApprox) -> None:
    header = {
        "M": approx.m_levels,
        "N_c": approx.n_c,
        "alphas": [float(a) for a in approx.alphas],
        "bias": None if approx.bias is None else float(approx.bias),
        "residual": float(approx.residual),
    }
    with open(path, "wb") as fh:
        fh.write(_frame(header, pack_bitplanes(approx.bitplanes)))


def load_binary_approx(path) -> BinaryApprox:
    header, payload = _read_frame(path)
    try:
        m = int(header["M"])
        n_c = int(header["N_c"])
        alphas = np.asarray(header["alphas"], dtype=np.float64)
        bias = header.get("bias")
        residual = float(header["residual"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerError(f"{path}: bad approximation header: {exc}") from None
    try:
        planes = unpack_bitplanes(payload, m, n_c)
    except ContainerError as exc:
        raise ContainerError(
            f"{path}: at offset {header.get('data_offset')}: {exc}") from None
    return BinaryApprox(planes, alphas, residual,
                        None if bias is None else float(bias))
