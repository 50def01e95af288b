"""QCF1 binary grid dumps, JSON sidecars and CSV scan exports.

A dump is a 32-byte header (magic ``QCF1``, nx, ny, component count as
little-endian uint64, 4 padding bytes) followed by little-endian float64
values in row-major ``(nx, ny, ncomp)`` order.  The sidecar ``<path>.json``
holds the GridSpec and component names.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import GridFormatError
from .fields import ComplexGrid, GridField, GridSpec

MAGIC = b"QCF1"
HEADER = struct.Struct("<4sQQQ4x")
assert HEADER.size == 32


def write_array(path, data: np.ndarray, spec: GridSpec, kind="array", components=None) -> Path:
    path = Path(path)
    data = np.asarray(data, dtype="<f8")
    if data.shape[:2] != (spec.nx, spec.ny):
        raise GridFormatError("data does not match grid shape")
    flat = data.reshape(spec.nx, spec.ny, -1)
    ncomp = flat.shape[2]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, spec.nx, spec.ny, ncomp))
        fh.write(np.ascontiguousarray(flat).tobytes())
    names = list(components) if components else [f"c{k}" for k in range(ncomp)]
    meta = {"format": "QCF1", "kind": kind, "grid": spec.to_dict(), "components": names,
            "shape": list(data.shape)}
    sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_array(path):
    """Return (data, spec, meta); data is reshaped to the sidecar's shape if present."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    magic, nx, ny, ncomp = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    expected = HEADER.size + 8 * nx * ny * ncomp
    if len(raw) != expected:
        raise GridFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(nx, ny, ncomp).astype(float)
    meta = {}
    sc = sidecar(path)
    if sc.exists():
        meta = json.loads(sc.read_text())
        spec = GridSpec.from_dict(meta["grid"])
        if (spec.nx, spec.ny) != (nx, ny):
            raise GridFormatError(f"{path}: sidecar grid disagrees with header")
        if "shape" in meta:
            data = data.reshape(meta["shape"])
    else:
        spec = GridSpec(0.0, 1.0, 0.0, 1.0, int(nx), int(ny))
    return data, spec, meta


def write_field(path, f: GridField) -> Path:
    """Values and gradients packed as 6 components: u1, u2, du1/dx, du1/dy, du2/dx, du2/dy."""
    g = f.require_gradients().gradients.reshape(f.spec.nx, f.spec.ny, 4)
    data = np.concatenate([f.values, g], axis=-1)
    return write_array(path, data, f.spec, "field",
                       ["u1", "u2", "du1_dx", "du1_dy", "du2_dx", "du2_dy"])


def read_field(path) -> GridField:
    data, spec, meta = read_array(path)
    data = data.reshape(spec.nx, spec.ny, -1)
    if data.shape[2] == 6:
        return GridField(spec, data[..., :2], data[..., 2:].reshape(spec.nx, spec.ny, 2, 2), "file")
    if data.shape[2] == 2:
        return GridField(spec, data, None, "file")
    raise GridFormatError(f"{path}: a field needs 2 or 6 components, found {data.shape[2]}")


def write_complex(path, g: ComplexGrid) -> Path:
    data = np.stack([g.values.real, g.values.imag], -1)
    return write_array(path, data, g.spec, "complex", ["re", "im"])


def read_complex(path) -> ComplexGrid:
    data, spec, _ = read_array(path)
    data = data.reshape(spec.nx, spec.ny, -1)
    if data.shape[2] != 2:
        raise GridFormatError(f"{path}: a complex grid needs 2 components")
    return ComplexGrid(spec, data[..., 0] + 1j * data[..., 1])


def write_scan_csv(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "integral"])
        for d, v in rows:
            w.writerow([repr(float(d)), repr(float(v))])
    return path


def read_scan_csv(path):
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [(float(row["delta"]), float(row["integral"])) for row in r]
