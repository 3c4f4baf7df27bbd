"""Length-prefixed binary framing for guest/host messages.

One frame per entity row::

    u32 round | u8 kind | u32 guest | u64 entity | u32 payload bytes | payload (f64 LE)

All header fields are little-endian. A batched message is sent as
consecutive frames sharing (round, kind, guest).
"""
from __future__ import annotations

import io
import socket
import struct
from typing import BinaryIO, Iterator

import numpy as np

from .protocol import ActivationMessage, GradientMessage

HEADER = struct.Struct("<IBIQI")
KIND_ACTIVATION = 1
KIND_GRADIENT = 2


class FrameError(ValueError):
    pass


def encode(msg: ActivationMessage | GradientMessage) -> bytes:
    if isinstance(msg, ActivationMessage):
        kind, rows, ents = KIND_ACTIVATION, msg.activation, msg.entities
    else:
        kind, rows, ents = KIND_GRADIENT, msg.grad, msg.entities
    rows = np.atleast_2d(np.asarray(rows, dtype="<f8"))
    if ents is None:
        ents = np.zeros(len(rows), dtype=np.int64)
    if len(ents) != len(rows):
        raise FrameError(f"{len(rows)} rows but {len(ents)} entity ids")
    out = bytearray()
    for e, row in zip(ents, rows):
        payload = row.tobytes()
        out += HEADER.pack(msg.round, kind, msg.guest, int(e), len(payload))
        out += payload
    return bytes(out)


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


def iter_frames(stream: BinaryIO) -> Iterator[tuple[int, int, int, int, np.ndarray]]:
    while True:
        head = _read_exact(stream, HEADER.size)
        if not head:
            return
        if len(head) < HEADER.size:
            raise FrameError("truncated frame header")
        rnd, kind, guest, entity, length = HEADER.unpack(head)
        if kind not in (KIND_ACTIVATION, KIND_GRADIENT):
            raise FrameError(f"unknown message kind {kind}")
        if length % 8:
            raise FrameError(f"payload length {length} is not a multiple of 8")
        payload = _read_exact(stream, length)
        if len(payload) < length:
            raise FrameError("truncated frame payload")
        yield rnd, kind, guest, entity, np.frombuffer(payload, dtype="<f8").astype(np.float64)


def decode(data: bytes) -> list[ActivationMessage | GradientMessage]:
    """Regroup consecutive frames with equal (round, kind, guest) into messages."""
    messages: list[ActivationMessage | GradientMessage] = []
    group: list = []

    def flush() -> None:
        if not group:
            return
        rnd, kind, guest = group[0][:3]
        ents = np.array([f[3] for f in group], dtype=np.int64)
        rows = np.stack([f[4] for f in group])
        if kind == KIND_ACTIVATION:
            messages.append(ActivationMessage(guest, ents, rows, rnd))
        else:
            messages.append(GradientMessage(guest, rnd, rows, ents))
        group.clear()

    for frame in iter_frames(io.BytesIO(data)):
        if group and frame[:3] != group[0][:3]:
            flush()
        group.append(frame)
    flush()
    return messages


def roundtrip(msg: ActivationMessage | GradientMessage) -> ActivationMessage | GradientMessage:
    """Encode then decode; usable as the ``transport`` hook of ``train_epoch``."""
    (out,) = decode(encode(msg))
    return out


def send_message(sock: socket.socket, msg: ActivationMessage | GradientMessage) -> None:
    data = encode(msg)
    sock.sendall(struct.pack("<I", len(data)) + data)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise FrameError("connection closed mid-message")
        buf += chunk
    return bytes(buf)


def recv_message(sock: socket.socket) -> ActivationMessage | GradientMessage:
    """Receive one message sent by :func:`send_message` (u32 byte count, then frames)."""
    (size,) = struct.unpack("<I", _recv_exact(sock, 4))
    (msg,) = decode(_recv_exact(sock, size))
    return msg
