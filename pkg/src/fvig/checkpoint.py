"""Flat binary checkpoint files.

Layout (all integers little-endian u32):

    magic "FVIG" | version | header_len | header (UTF-8) | count |
    count x (name_len | name (UTF-8) | rank | dims... | float64 LE payload)

The header carries free-form text; the model stores its configuration there
as newline-separated ``key=value`` pairs.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from typing import Iterable

import numpy as np

MAGIC = b"FVIG"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


def save_checkpoint(path, tensors: Iterable[tuple[str, np.ndarray]] | dict, header: str = "") -> None:
    if isinstance(tensors, dict):
        tensors = tensors.items()
    items = [(name, np.asarray(arr, dtype=np.float64)) for name, arr in tensors]
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    header_bytes = header.encode("utf-8")
    chunks.append(struct.pack("<I", len(header_bytes)))
    chunks.append(header_bytes)
    chunks.append(struct.pack("<I", len(items)))
    for name, arr in items:
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype("<f8").tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> tuple[str, "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as fh:
        buf = fh.read()
    view = memoryview(buf)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint '{path}': expected {what}")
        piece = view[pos : pos + n]
        pos += n
        return piece

    def u32(what: str) -> int:
        return struct.unpack("<I", take(4, what))[0]

    if bytes(take(4, "magic")) != MAGIC:
        raise CheckpointError(f"'{path}' is not a FVIG checkpoint (bad magic)")
    version = u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in '{path}'")
    header = bytes(take(u32("header length"), "header")).decode("utf-8")
    count = u32("tensor count")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        name = bytes(take(u32("name length"), "name")).decode("utf-8")
        rank = u32("rank")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims")) if rank else ()
        n = int(np.prod(dims)) if dims else 1
        payload = take(8 * n, f"payload of '{name}'")
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if pos != len(view):
        raise CheckpointError(f"trailing bytes after last record in '{path}'")
    return header, tensors


def count_floats(tensors: dict) -> int:
    return int(sum(np.asarray(a).size for a in tensors.values()))
