import json
import struct

import numpy as np
import pytest

from qclab import fields as F
from qclab import gridio as G
from qclab.errors import GridFormatError


def test_header_layout(tmp_path):
    spec = F.GridSpec(0, 1, 0, 2, 3, 4)
    data = np.arange(3 * 4 * 2, dtype=float).reshape(3, 4, 2)
    path = G.write_array(tmp_path / "a.qcf", data, spec)
    raw = path.read_bytes()
    assert len(raw) == 32 + 8 * data.size
    assert raw[:4] == b"QCF1"
    assert struct.unpack_from("<QQQ", raw, 4) == (3, 4, 2)
    # row-major little-endian body
    assert np.array_equal(np.frombuffer(raw[32:], "<f8"), data.ravel())
    meta = json.loads((tmp_path / "a.qcf.json").read_text())
    assert F.GridSpec.from_dict(meta["grid"]) == spec


def test_field_round_trip(tmp_path):
    spec = F.GridSpec.square(9)
    f = F.sample(F.radial_stretch(), spec)
    G.write_field(tmp_path / "f.qcf", f)
    g = G.read_field(tmp_path / "f.qcf")
    assert g.spec == spec
    assert np.array_equal(g.values, f.values) and np.array_equal(g.gradients, f.gradients)


def test_complex_round_trip(tmp_path):
    spec = F.GridSpec.square(5)
    c = F.ComplexGrid(spec, spec.z() ** 2)
    G.write_complex(tmp_path / "c.qcf", c)
    assert np.array_equal(G.read_complex(tmp_path / "c.qcf").values, c.values)


def test_bad_files(tmp_path):
    p = tmp_path / "bad.qcf"
    p.write_bytes(b"XXXX" + bytes(28))
    with pytest.raises(GridFormatError):
        G.read_array(p)
    p.write_bytes(b"QC")
    with pytest.raises(GridFormatError):
        G.read_array(p)
    p.write_bytes(struct.pack("<4sQQQ4x", b"QCF1", 2, 2, 1) + bytes(8))
    with pytest.raises(GridFormatError):
        G.read_array(p)


def test_scan_csv(tmp_path):
    rows = [(0.5, 1.25), (0.25, 2.5)]
    p = G.write_scan_csv(tmp_path / "s.csv", rows)
    assert p.read_text().splitlines()[0] == "delta,integral"
    assert G.read_scan_csv(p) == rows
