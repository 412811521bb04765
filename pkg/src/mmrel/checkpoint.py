"""A small deterministic tensor container.

Layout: magic line, 8-byte little-endian header length, JSON header, then the
raw little-endian float64 payloads in header order.  ``np.savez`` is avoided
because zip entries carry wall-clock timestamps, which breaks byte-identical
reruns.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorpusParseError, MissingInputError

MAGIC = b"MMRELTENSORS\n"


def write_tensors(path, meta: dict, tensors) -> None:
    """``tensors`` is an iterable of ``(name, array)`` or ``(name, array, extra)``."""
    entries, blobs, offset = [], [], 0
    for item in tensors:
        name, arr = item[0], np.ascontiguousarray(item[1], dtype="<f8")
        extra = item[2] if len(item) > 2 else {}
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw), **extra})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_tensors(path):
    """Return ``(meta, entries, arrays)`` with arrays keyed by entry name."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"no such file: {path}")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CorpusParseError("not a tensor container", path=path)
    pos = len(MAGIC)
    try:
        (hlen,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise CorpusParseError(f"corrupt header: {exc}", path=path) from None
    pos += hlen
    arrays = {}
    for e in header["tensors"]:
        start = pos + e["offset"]
        buf = data[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise CorpusParseError(f"truncated tensor {e['name']!r}", path=path)
        arrays[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(e["shape"]).copy()
    return header["meta"], header["tensors"], arrays
