"""The TLDM deployable-model container.

Layout (little-endian)::

    magic "TLDM" | version u8 | kind u8 | class_count u8 | input_size u16
    metadata: u32 length + UTF-8 JSON
    layers:   u16 count, then per layer tag u8 + length u16 + value
    params:   u16 count, then per tensor id u16 + length u32 + raw bytes
    qparams:  u16 count, then per record id u16 + scale f32 + zero_point i8 + pad u8
    CRC-32 (IEEE) u32 over every preceding byte
"""

from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from ..errors import (
    BadMagicError,
    ChecksumError,
    ModelFormatError,
    TruncatedError,
    UnsupportedVersionError,
)
from ..nn.layers import (
    Activation,
    Conv2D,
    Dense,
    DepthwiseConv2D,
    Dropout,
    Flatten,
    LayerSpec,
    Pool,
    Softmax,
)
from ..nn.model import ModelGraph, activation_points, param_slots
from ..tensor import QuantParams

MAGIC = b"TLDM"
VERSION = 1
HEADER = struct.Struct("<4sBBBH")
QPARAM_RECORD = struct.Struct("<Hfbx")


class ModelKind(enum.IntEnum):
    DENSE32 = 0
    PRUNED32 = 1
    HALF16 = 2
    INT8 = 3


@dataclass
class CompressedModel:
    """A deployable model.

    Tensor ids ``0..P-1`` are parameters (weight, bias per parametric
    layer); ids ``P + k`` are the k-th activation point of the int8 plan.
    ``qparams`` is populated only for the int8 kind.
    """

    kind: ModelKind
    layers: List[LayerSpec]
    params: List[np.ndarray]
    input_size: int
    class_count: int
    qparams: Dict[int, QuantParams] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.params))

    def activation_ids(self) -> Dict[int, int]:
        """Activation point -> tensor id."""
        base = len(self.params)
        return {p: base + k for k, p in enumerate(activation_points(self.layers))}

    def to_graph(self) -> ModelGraph:
        """Float graph with parameters widened (dense32/pruned32/half16 only)."""
        if self.kind is ModelKind.INT8:
            raise ValueError("int8 models have no float graph; use the edge runtime")
        return ModelGraph(list(self.layers), [p.astype(np.float32) for p in self.params],
                          self.input_size, self.class_count, name=self.metadata.get("name", ""))

    def __eq__(self, other):
        if not isinstance(other, CompressedModel):
            return NotImplemented
        return to_bytes(self) == to_bytes(other)


def param_dtypes(kind: ModelKind, layers) -> List[np.dtype]:
    dtypes = []
    for wid, bid in param_slots(layers).values():
        if kind is ModelKind.INT8:
            dtypes += [np.dtype("<i1"), np.dtype("<i4")]
        elif kind is ModelKind.HALF16:
            dtypes += [np.dtype("<f2")] * 2
        else:
            dtypes += [np.dtype("<f4")] * 2
    return dtypes


# ------------------------------------------------------------ layer table

_PADDING = {"same": 0, "valid": 1}
_ACT = {"relu": 0, "relu6": 1}
_POOL = {"max": 0, "global_avg": 1}


def _inv(d):
    return {v: k for k, v in d.items()}


def _encode_layer(layer: LayerSpec):
    if isinstance(layer, Conv2D):
        return 1, struct.pack("<BBHHBB", layer.kh, layer.kw, layer.cin, layer.cout,
                              layer.stride, _PADDING[layer.padding])
    if isinstance(layer, DepthwiseConv2D):
        return 2, struct.pack("<BBHBB", layer.kh, layer.kw, layer.channels,
                              layer.stride, _PADDING[layer.padding])
    if isinstance(layer, Dense):
        return 3, struct.pack("<II", layer.units_in, layer.units_out)
    if isinstance(layer, Pool):
        return 4, struct.pack("<BBB", _POOL[layer.kind], layer.window, layer.stride)
    if isinstance(layer, Activation):
        return 5, struct.pack("<B", _ACT[layer.kind])
    if isinstance(layer, Dropout):
        return 6, struct.pack("<d", layer.rate)
    if isinstance(layer, Flatten):
        return 7, b""
    if isinstance(layer, Softmax):
        return 8, b""
    raise TypeError(f"cannot encode layer {layer!r}")


def _decode_layer(tag: int, value: bytes) -> LayerSpec:
    try:
        if tag == 1:
            kh, kw, cin, cout, s, p = struct.unpack("<BBHHBB", value)
            return Conv2D(kh, kw, cin, cout, s, _inv(_PADDING)[p])
        if tag == 2:
            kh, kw, c, s, p = struct.unpack("<BBHBB", value)
            return DepthwiseConv2D(kh, kw, c, s, _inv(_PADDING)[p])
        if tag == 3:
            return Dense(*struct.unpack("<II", value))
        if tag == 4:
            k, win, s = struct.unpack("<BBB", value)
            return Pool(_inv(_POOL)[k], win, s)
        if tag == 5:
            return Activation(_inv(_ACT)[struct.unpack("<B", value)[0]])
        if tag == 6:
            return Dropout(struct.unpack("<d", value)[0])
        if tag == 7 and not value:
            return Flatten()
        if tag == 8 and not value:
            return Softmax()
    except (struct.error, KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad layer record tag={tag}: {exc}") from exc
    raise ModelFormatError(f"unknown layer tag {tag}")


# ------------------------------------------------------------- encode

def to_bytes(model: CompressedModel) -> bytes:
    out = bytearray(HEADER.pack(MAGIC, VERSION, int(model.kind), model.class_count, model.input_size))
    meta = json.dumps(model.metadata, sort_keys=True, separators=(",", ":")).encode()
    out += struct.pack("<I", len(meta)) + meta
    out += struct.pack("<H", len(model.layers))
    for layer in model.layers:
        tag, value = _encode_layer(layer)
        out += struct.pack("<BH", tag, len(value)) + value
    dtypes = param_dtypes(model.kind, model.layers)
    out += struct.pack("<H", len(model.params))
    for pid, (p, dt) in enumerate(zip(model.params, dtypes)):
        raw = np.ascontiguousarray(p, dtype=dt).tobytes()
        out += struct.pack("<HI", pid, len(raw)) + raw
    out += struct.pack("<H", len(model.qparams))
    for tid in sorted(model.qparams):
        qp = model.qparams[tid]
        out += QPARAM_RECORD.pack(tid, qp.scale, qp.zero_point)
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def model_size_bytes(model: CompressedModel) -> int:
    """Exact serialized length of the container."""
    return len(to_bytes(model))


def serialize(model: CompressedModel, path) -> int:
    data = to_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


# ------------------------------------------------------------- decode

class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data, self.pos = data, pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"container truncated: need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> CompressedModel:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}")
    if len(data) < HEADER.size:
        raise TruncatedError("container shorter than its header")
    _, version, kind, class_count, input_size = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"container version {version} (supported: {VERSION})")

    r = _Reader(data, HEADER.size)
    (meta_len,) = r.unpack("<I")
    meta_raw = r.take(meta_len)
    (n_layers,) = r.unpack("<H")
    layer_records = []
    for _ in range(n_layers):
        tag, length = r.unpack("<BH")
        layer_records.append((tag, r.take(length)))
    (n_params,) = r.unpack("<H")
    blocks = []
    for _ in range(n_params):
        pid, length = r.unpack("<HI")
        blocks.append((pid, r.take(length)))
    (n_q,) = r.unpack("<H")
    records = [QPARAM_RECORD.unpack(r.take(QPARAM_RECORD.size)) for _ in range(n_q)]
    body_end = r.pos
    (crc,) = r.unpack("<I")
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after checksum")
    if zlib.crc32(data[:body_end]) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC-32 mismatch")

    try:
        kind = ModelKind(kind)
    except ValueError as exc:
        raise ModelFormatError(f"unknown model kind {kind}") from exc
    try:
        metadata = json.loads(meta_raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"bad metadata block: {exc}") from exc
    layers = [_decode_layer(t, v) for t, v in layer_records]
    shapes = [s for layer in layers for s in layer.param_shapes()]
    dtypes = param_dtypes(kind, layers)
    if len(blocks) != len(shapes):
        raise ModelFormatError(f"{len(blocks)} parameter blocks for {len(shapes)} tensors")
    params = []
    for expected, ((pid, raw), shape, dt) in enumerate(zip(blocks, shapes, dtypes)):
        if pid != expected:
            raise ModelFormatError(f"parameter block {expected} carries id {pid}")
        if len(raw) != int(np.prod(shape)) * dt.itemsize:
            raise ModelFormatError(f"parameter {pid}: {len(raw)} bytes for shape {shape}")
        params.append(np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("=")))
    qparams = {}
    for tid, scale, zp in records:
        try:
            qparams[tid] = QuantParams(scale, zp)
        except ValueError as exc:
            raise ModelFormatError(f"quant record {tid}: {exc}") from exc
    return CompressedModel(kind, layers, params, input_size, class_count, qparams, metadata)


def deserialize(path) -> CompressedModel:
    return from_bytes(Path(path).read_bytes())


def check_quant_coverage(model: CompressedModel) -> None:
    """Raise unless an int8 model has a record for every parameter and
    activation tensor (and a float model has none)."""
    if model.kind is not ModelKind.INT8:
        if model.qparams:
            raise ModelFormatError(f"{model.kind.name} container carries quantization records")
        return
    needed = set(range(len(model.params))) | set(model.activation_ids().values())
    missing = sorted(needed - set(model.qparams))
    if missing:
        raise ModelFormatError(f"int8 container missing quantization records for tensors {missing}")
    for layer_index, (wid, bid) in param_slots(model.layers).items():
        if model.qparams[wid].zero_point != 0 or model.qparams[bid].zero_point != 0:
            raise ModelFormatError("weights and biases must be symmetric (zero_point 0)")
    if not isinstance(model.layers[-1], Softmax):
        raise ModelFormatError("model must end in Softmax")
