"""Flat float32 image files with a one-line ``dims:`` text header."""

from pathlib import Path

import numpy as np


def write_array(path, values, dims):
    values = np.asarray(values, dtype="<f4").ravel()
    if values.size != int(np.prod(dims)):
        raise ValueError(f"{values.size} values do not fill dims {tuple(dims)}")
    header = "dims: " + " ".join(str(int(d)) for d in dims) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(values.tobytes())


def read_array(path):
    """Return ``(values, dims)``; values are float32."""
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    header = data[:nl].decode("ascii")
    if not header.startswith("dims:"):
        raise ValueError(f"{path}: missing 'dims:' header")
    dims = tuple(int(t) for t in header[5:].split())
    if not 1 <= len(dims) <= 3:
        raise ValueError(f"{path}: expected 1 to 3 dims, got {dims}")
    values = np.frombuffer(data[nl + 1:], dtype="<f4")
    if values.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload has {values.size} values, header says {dims}")
    return values.copy(), dims
