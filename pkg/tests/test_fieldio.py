import numpy as np
import pytest

from fracmap.constants import FracParams
from fracmap.errors import ConfigError
from fracmap.extension import build_halfspace_grid, extend
from fracmap.fieldio import lattice_csv, read_dump, read_extension, read_lattice_field, write_extension, write_lattice_field
from fracmap.lattice import build_lattice, preset_field


def test_lattice_roundtrip(tmp_path):
    lat = build_lattice(FracParams(2, 0.3, 3), 0.25, 1.0, 1.5)
    u = preset_field(lat, "random-perturbation", seed=2)
    path = tmp_path / "f.bin"
    write_lattice_field(path, lat, u)
    header, back = read_lattice_field(path, lat)
    assert np.array_equal(back, u)
    assert header["n"] == 2 and header["d"] == 3 and header["s"] == 0.3 and header["h"] == 0.25
    raw = path.read_bytes()
    assert raw.startswith(b"fracmap-field 1\n")
    assert len(raw.split(b"end\n", 1)[1]) == 8 * u.size


def test_geometry_mismatch(tmp_path):
    a = build_lattice(FracParams(1, 0.5, 1), 0.25, 1.0, 1.5)
    b = build_lattice(FracParams(1, 0.5, 1), 0.125, 1.0, 1.5)
    write_lattice_field(tmp_path / "a.bin", a, preset_field(a, "constant"))
    with pytest.raises(ConfigError):
        read_lattice_field(tmp_path / "a.bin", b)
    (tmp_path / "junk.bin").write_bytes(b"hello\nend\n")
    with pytest.raises(ConfigError):
        read_dump(tmp_path / "junk.bin")


def test_extension_roundtrip(tmp_path):
    lat = build_lattice(FracParams(1, 0.5, 1), 0.25, 1.0, 2.0)
    v = extend(preset_field(lat, "step"), build_halfspace_grid(lat, 8))
    write_extension(tmp_path / "e.bin", v)
    header, vals = read_extension(tmp_path / "e.bin")
    assert np.array_equal(vals, v.values)
    assert np.allclose(header["z"], v.grid.zz)


def test_csv():
    lat = build_lattice(FracParams(1, 0.5, 2), 0.5, 1.0, 1.5)
    lines = lattice_csv(lat, preset_field(lat, "constant")).splitlines()
    assert lines[0] == "x1,u1,u2" and len(lines) == lat.N + 1
    lat3 = build_lattice(FracParams(3, 0.5, 1), 0.5, 0.5, 1.0)
    with pytest.raises(ConfigError):
        lattice_csv(lat3, preset_field(lat3, "constant"))
