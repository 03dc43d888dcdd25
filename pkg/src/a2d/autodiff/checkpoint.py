"""Weight checkpoint container.

Layout: 8-byte magic carrying the format version, a little-endian uint64
header length, a JSON header (parameter paths -> shape/offset, plus an
arbitrary metadata dict), then the concatenated little-endian float64
buffers.  Round-trips bit-exactly.
"""

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"A2DCKPT1"


def save(path, params, meta=None):
    """Write {parameter-path: ndarray} plus an optional metadata dict."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = arr.astype("<f8", copy=False).tobytes()  # tobytes() emits C order
        entries.append({"path": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"params": entries, "meta": meta or {}}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load(path):
    """Return ({parameter-path: ndarray}, meta)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r} (expected {MAGIC!r})")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        body = f.read()
    params = {}
    for e in header["params"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = e["offset"]
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=start)
        params[e["path"]] = arr.astype(np.float64).copy().reshape(shape)
    return params, header.get("meta", {})
