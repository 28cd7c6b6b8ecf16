"""Binary and text file formats for networks and datasets.

Model file (little-endian)::

    b"REAAS1"                      magic
    uint32 n_layers
    n_layers x (uint32 out, uint32 in)
    per layer: float64[out*in] weight (row-major), float64[out] bias

Dataset file (little-endian)::

    uint64 count, uint64 dim, uint64 num_classes
    float64[count*dim] inputs (row-major), int32[count] labels
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import AffineLayer, AffineNetwork, LabeledDataset

MAGIC = b"REAAS1"


class FormatError(ValueError):
    pass


def network_to_bytes(net: AffineNetwork) -> bytes:
    parts = [MAGIC, struct.pack("<I", net.depth)]
    parts += [struct.pack("<II", l.out_dim, l.in_dim) for l in net.layers]
    for l in net.layers:
        parts.append(l.weight.astype("<f8").tobytes(order="C"))
        parts.append(l.bias.astype("<f8").tobytes())
    return b"".join(parts)


def network_from_bytes(buf: bytes) -> AffineNetwork:
    if buf[:6] != MAGIC:
        raise FormatError("not a model file (bad magic)")
    pos = 6
    try:
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = [struct.unpack_from("<II", buf, pos + 8 * k) for k in range(n)]
        pos += 8 * n
        layers = []
        for out, inp in dims:
            w = np.frombuffer(buf, "<f8", out * inp, pos).reshape(out, inp)
            pos += 8 * out * inp
            b = np.frombuffer(buf, "<f8", out, pos)
            pos += 8 * out
            layers.append(AffineLayer(w, b))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated or corrupt model file: {exc}") from exc
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes in model file")
    return AffineNetwork(tuple(layers))


def save_network(net: AffineNetwork, path) -> None:
    Path(path).write_bytes(network_to_bytes(net))


def load_network(path) -> AffineNetwork:
    return network_from_bytes(Path(path).read_bytes())


def network_to_text(net: AffineNetwork) -> str:
    """Human-readable dump; round-trips exactly through :func:`network_from_text`."""
    lines = [MAGIC.decode(), f"layers {net.depth}"]
    for k, l in enumerate(net.layers):
        lines.append(f"layer {k} {l.out_dim} {l.in_dim}")
        for row in l.weight:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append("bias " + " ".join(repr(float(v)) for v in l.bias))
    return "\n".join(lines) + "\n"


def network_from_text(text: str) -> AffineNetwork:
    rows = text.strip().splitlines()
    if not rows or rows[0] != MAGIC.decode():
        raise FormatError("not a text model export")
    n = int(rows[1].split()[1])
    pos = 2
    layers = []
    for _ in range(n):
        _, _, out, inp = rows[pos].split()
        out, inp = int(out), int(inp)
        w = np.array([[float(v) for v in rows[pos + 1 + r].split()] for r in range(out)]).reshape(out, inp)
        b = np.array([float(v) for v in rows[pos + 1 + out].split()[1:]])
        layers.append(AffineLayer(w, b))
        pos += out + 2
    return AffineNetwork(tuple(layers))


def save_dataset(data: LabeledDataset, path) -> None:
    header = struct.pack("<QQQ", len(data), data.dim, data.num_classes)
    body = data.inputs.astype("<f8").tobytes() + data.labels.astype("<i4").tobytes()
    Path(path).write_bytes(header + body)


def load_dataset(path, shape=None) -> LabeledDataset:
    buf = Path(path).read_bytes()
    if len(buf) < 24:
        raise FormatError("dataset file too short")
    count, dim, classes = struct.unpack_from("<QQQ", buf, 0)
    expected = 24 + 8 * count * dim + 4 * count
    if len(buf) != expected:
        raise FormatError(f"dataset file has {len(buf)} bytes, header implies {expected}")
    X = np.frombuffer(buf, "<f8", count * dim, 24).reshape(count, dim)
    y = np.frombuffer(buf, "<i4", count, 24 + 8 * count * dim)
    return LabeledDataset(X.copy(), y.astype(np.int64), int(classes), shape)
