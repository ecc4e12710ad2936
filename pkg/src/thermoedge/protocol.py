"""Camera -> edge wire protocol (big-endian, self-delimiting by type).

    header  magic u32 = 0x544C4331 ("TLC1"), type u8
    frame   header + seq u32 + width u16 + height u16 + width*height pixels
    result  header + seq u32 + class u8 + reserved u8 + confidence f32 + latency_us u32
    close   header only
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from .errors import UnknownTypeError, WireMagicError, WireTruncatedError, ZeroDimensionError, ProtocolError

MAGIC = 0x544C4331
TYPE_FRAME = 0x01
TYPE_RESULT = 0x02
TYPE_CLOSE = 0x03

HEADER = struct.Struct(">IB")
_MAGIC_BYTES = struct.pack(">I", MAGIC)
FRAME_HEADER = struct.Struct(">IBIHH")
RESULT = struct.Struct(">IBIBxfI")

FRAME_HEADER_SIZE = FRAME_HEADER.size  # 13
RESULT_SIZE = RESULT.size  # 19
CLOSE_SIZE = HEADER.size  # 5
CONFIDENCE_OFFSET = 11


@dataclass(frozen=True)
class FrameMessage:
    seq: int
    width: int
    height: int
    pixels: bytes

    @classmethod
    def from_image(cls, seq: int, image: np.ndarray) -> "FrameMessage":
        image = np.ascontiguousarray(image, dtype=np.uint8)
        h, w = image.shape
        return cls(seq, w, h, image.tobytes())

    def image(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)


@dataclass(frozen=True)
class ResultMessage:
    seq: int
    class_index: int
    confidence: float
    latency_us: int


@dataclass(frozen=True)
class CloseMessage:
    pass


Message = Union[FrameMessage, ResultMessage, CloseMessage]


def encode_frame(msg: FrameMessage) -> bytes:
    if msg.width == 0 or msg.height == 0:
        raise ZeroDimensionError("frame width and height must be non-zero")
    if len(msg.pixels) != msg.width * msg.height:
        raise ValueError(f"{len(msg.pixels)} pixels for a {msg.width}x{msg.height} frame")
    return FRAME_HEADER.pack(MAGIC, TYPE_FRAME, msg.seq, msg.width, msg.height) + bytes(msg.pixels)


def encode_result(msg: ResultMessage) -> bytes:
    return RESULT.pack(MAGIC, TYPE_RESULT, msg.seq, msg.class_index, msg.confidence, msg.latency_us)


def encode_close() -> bytes:
    return HEADER.pack(MAGIC, TYPE_CLOSE)


def encode(msg: Message) -> bytes:
    if isinstance(msg, FrameMessage):
        return encode_frame(msg)
    if isinstance(msg, ResultMessage):
        return encode_result(msg)
    return encode_close()


def _header(data: bytes) -> int:
    if len(data) < HEADER.size:
        # a partial magic that already disagrees is a magic error, not truncation
        if bytes(data[:4]) != _MAGIC_BYTES[:min(len(data), 4)]:
            raise WireMagicError(f"bad magic {bytes(data[:4])!r}")
        raise WireTruncatedError("message shorter than its header")
    magic, mtype = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise WireMagicError(f"bad magic 0x{magic:08X}")
    if mtype not in (TYPE_FRAME, TYPE_RESULT, TYPE_CLOSE):
        raise UnknownTypeError(f"unknown message type 0x{mtype:02X}")
    return mtype


def message_length(data: bytes) -> Optional[int]:
    """Total length of the message at the start of ``data``, or None if
    not enough bytes have arrived to know it."""
    if len(data) < HEADER.size:
        if bytes(data[:4]) != _MAGIC_BYTES[:min(len(data), 4)]:
            raise WireMagicError(f"bad magic {bytes(data[:4])!r}")
        return None
    mtype = _header(data)
    if mtype == TYPE_CLOSE:
        return CLOSE_SIZE
    if mtype == TYPE_RESULT:
        return RESULT_SIZE
    if len(data) < FRAME_HEADER_SIZE:
        return None
    _, _, _, w, h = FRAME_HEADER.unpack_from(data)
    if w == 0 or h == 0:
        raise ZeroDimensionError("frame with zero width or height")
    return FRAME_HEADER_SIZE + w * h


def decode(data: bytes) -> Message:
    """Decode exactly one message occupying all of ``data``."""
    data = bytes(data)
    mtype = _header(data)
    n = message_length(data)
    if n is None or len(data) < n:
        raise WireTruncatedError(f"message truncated ({len(data)} bytes)")
    if len(data) > n:
        raise ProtocolError(f"{len(data) - n} trailing bytes after message")
    if mtype == TYPE_CLOSE:
        return CloseMessage()
    if mtype == TYPE_RESULT:
        _, _, seq, cls, conf, lat = RESULT.unpack(data)
        return ResultMessage(seq, cls, conf, lat)
    _, _, seq, w, h = FRAME_HEADER.unpack_from(data)
    return FrameMessage(seq, w, h, data[FRAME_HEADER_SIZE:])


def decode_frame(data: bytes) -> FrameMessage:
    msg = decode(data)
    if not isinstance(msg, FrameMessage):
        raise ProtocolError(f"expected a frame, got {type(msg).__name__}")
    return msg


def decode_result(data: bytes) -> ResultMessage:
    msg = decode(data)
    if not isinstance(msg, ResultMessage):
        raise ProtocolError(f"expected a result, got {type(msg).__name__}")
    return msg


class MessageBuffer:
    """Incremental decoder for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> List[Message]:
        self._buf += chunk
        out = []
        while True:
            n = message_length(self._buf)
            if n is None or len(self._buf) < n:
                return out
            out.append(decode(bytes(self._buf[:n])))
            del self._buf[:n]

    @property
    def pending(self) -> int:
        return len(self._buf)


def _recv_exact(sock: socket.socket, n: int, allow_eof: bool = False) -> Optional[bytes]:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            if allow_eof and got == 0:
                return None
            raise WireTruncatedError(f"connection closed mid-message ({got}/{n} bytes)")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_message(sock: socket.socket) -> Optional[Message]:
    """Blocking read of one message; None on a clean end of stream."""
    head = _recv_exact(sock, HEADER.size, allow_eof=True)
    if head is None:
        return None
    mtype = _header(head)
    if mtype == TYPE_CLOSE:
        return CloseMessage()
    if mtype == TYPE_RESULT:
        return decode(head + _recv_exact(sock, RESULT_SIZE - HEADER.size))
    rest = _recv_exact(sock, FRAME_HEADER_SIZE - HEADER.size)
    _, _, _, w, h = FRAME_HEADER.unpack(head + rest)
    if w == 0 or h == 0:
        raise ZeroDimensionError("frame with zero width or height")
    return decode(head + rest + _recv_exact(sock, w * h))
