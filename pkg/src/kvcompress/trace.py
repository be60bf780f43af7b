"""
Binary trace files (``KVTR``) holding Q/K/V tensors of one decode session.

Layout, all little-endian::

    b"KVTR"
    u32 version (1)
    u32 G, H, d, S, decode_steps, turns
    u32 dtype code (0 = float32)
    turn 1:   prompt K [S, G, d], prompt V [S, G, d],
              queries [steps, G, H, d],
              appended K [steps, G, d], appended V [steps, G, d]
    turn k>1: u32 new-prompt length n, then the same blocks with n rows

The file must end exactly after the last turn.
"""

import struct

import numpy as np

from .errors import TraceFormatError
from .kv_store import GroupLayout
from .workload import Session, Turn

__all__ = ["MAGIC", "VERSION", "write_trace", "read_trace", "encode_trace", "decode_trace"]

MAGIC = b"KVTR"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4")}
_HEADER = struct.Struct("<4s8I")
_U32 = struct.Struct("<I")


def encode_trace(session):
    layout = session.layout
    G, H, d = layout.num_groups, layout.heads_per_group, layout.head_dim
    turns = session.turns
    if not turns:
        raise TraceFormatError("a trace needs at least one turn")
    steps = turns[0].decode_steps
    parts = [_HEADER.pack(MAGIC, VERSION, G, H, d, turns[0].prompt_len, steps, len(turns), 0)]
    f4 = DTYPE_CODES[0]
    for i, t in enumerate(turns):
        if t.decode_steps != steps:
            raise TraceFormatError("every turn must have the same number of decode steps")
        expected = {
            "prompt_keys": (t.prompt_len, G, d),
            "prompt_values": (t.prompt_len, G, d),
            "queries": (steps, G, H, d),
            "step_keys": (steps, G, d),
            "step_values": (steps, G, d),
        }
        if i > 0:
            parts.append(_U32.pack(t.prompt_len))
        for name, shape in expected.items():
            arr = np.asarray(getattr(t, name))
            if arr.shape != shape:
                raise TraceFormatError(f"turn {i} {name} has shape {arr.shape}, expected {shape}")
            parts.append(np.ascontiguousarray(arr, dtype=f4).tobytes())
    return b"".join(parts)


def write_trace(path, session):
    data = encode_trace(session)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def decode_trace(data):
    buf = memoryview(data)
    if len(buf) < _HEADER.size:
        raise TraceFormatError("file shorter than the trace header")
    magic, version, G, H, d, S, steps, n_turns, dtype_code = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TraceFormatError(f"unsupported trace version {version}")
    if dtype_code not in DTYPE_CODES:
        raise TraceFormatError(f"unknown dtype code {dtype_code}")
    if min(G, H, d, S, n_turns) < 1:
        raise TraceFormatError("header dimensions must be positive")
    dt = DTYPE_CODES[dtype_code]
    off = _HEADER.size

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        nbytes = count * dt.itemsize
        if off + nbytes > len(buf):
            raise TraceFormatError("payload shorter than the header dimensions imply")
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(shape)
        off += nbytes
        return arr.astype(np.float32)

    turns = []
    for i in range(n_turns):
        n = S
        if i > 0:
            if off + _U32.size > len(buf):
                raise TraceFormatError(f"missing prompt length for turn {i}")
            (n,) = _U32.unpack_from(buf, off)
            off += _U32.size
        turns.append(Turn(
            prompt_keys=take((n, G, d)),
            prompt_values=take((n, G, d)),
            queries=take((steps, G, H, d)),
            step_keys=take((steps, G, d)),
            step_values=take((steps, G, d)),
        ))
    if off != len(buf):
        raise TraceFormatError(f"{len(buf) - off} trailing bytes after the last turn")
    return Session(layout=GroupLayout(G, H, d), turns=turns, meta={
        "generator": "trace", "seq_len": S, "decode_steps": steps, "turns": n_turns,
        "num_groups": G, "heads_per_group": H, "head_dim": d,
    })


def read_trace(path):
    with open(path, "rb") as fh:
        return decode_trace(fh.read())
