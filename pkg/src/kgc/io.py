"""Field dumps, tidy time series and run manifests."""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .lattice import Lattice

MAGIC = b"KGCONGRUENCE\0\0\0\0"


def _canonical(values: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Flatten to (sites, components) in canonical site order."""
    v = np.asarray(values, dtype=float)
    if v.shape == lattice.shape:
        return v.ravel(order="F")[:, None]
    if v.shape[1:] == lattice.shape:
        return np.stack([c.ravel(order="F") for c in v], axis=1)
    raise ValueError(f"field shape {v.shape} does not match lattice {lattice.shape}")


def field_to_text(values: np.ndarray, lattice: Lattice, names: Iterable[str] = ("value",),
                  units: str = "natural") -> str:
    cols = _canonical(values, lattice)
    coords = np.stack([c.ravel(order="F") for c in lattice.coords()], axis=1)
    names = list(names)
    if len(names) != cols.shape[1]:
        names = [f"value_{i + 1}" for i in range(cols.shape[1])]
    header = ["site_index"] + [f"a_{i + 1}" for i in range(lattice.n)] + names
    lines = [f"# units = {units}", f"# counts = {' '.join(map(str, lattice.counts))}",
             f"# box = {' '.join(repr(b) for b in lattice.box)}", "# " + ", ".join(header)]
    for i in range(lattice.size):
        row = [str(i)] + [repr(float(x)) for x in coords[i]] + [repr(float(x)) for x in cols[i]]
        lines.append(", ".join(row))
    return "\n".join(lines) + "\n"


def field_to_bytes(values: np.ndarray, lattice: Lattice) -> bytes:
    """Binary block: magic, u32 n, u32 counts[n], f64 box[n], f64 values."""
    cols = _canonical(values, lattice)
    head = MAGIC + struct.pack(f"<I{lattice.n}I", lattice.n, *lattice.counts)
    head += struct.pack(f"<{lattice.n}d", *lattice.box)
    # component-major so a scalar field is just the values in site order
    return head + np.ascontiguousarray(cols.T, dtype="<f8").tobytes()


def field_from_bytes(blob: bytes) -> tuple[Lattice, np.ndarray]:
    if blob[:16] != MAGIC:
        raise ValueError("bad magic")
    (n,) = struct.unpack_from("<I", blob, 16)
    counts = struct.unpack_from(f"<{n}I", blob, 20)
    box = struct.unpack_from(f"<{n}d", blob, 20 + 4 * n)
    lattice = Lattice(counts, box)
    data = np.frombuffer(blob, dtype="<f8", offset=20 + 12 * n)
    ncomp = data.size // lattice.size
    comps = [data[k * lattice.size:(k + 1) * lattice.size].reshape(lattice.shape, order="F")
             for k in range(ncomp)]
    return lattice, comps[0].copy() if ncomp == 1 else np.stack(comps)


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def content_hash(*blobs: bytes | str) -> str:
    """git-style blob hash of the concatenated inputs."""
    data = b"".join(b.encode() if isinstance(b, str) else b for b in blobs)
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def timeseries_csv(rows: Iterable[tuple[float, str, float]]) -> str:
    lines = ["t,residual_name,value"]
    lines += [f"{t!r},{name},{float(v)!r}" for t, name, v in rows]
    return "\n".join(lines) + "\n"


def manifest_text(entries: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in entries.items())
