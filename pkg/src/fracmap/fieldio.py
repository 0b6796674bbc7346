"""Field dumps: a short text header followed by a row-major little-endian float64 payload.

Header lines are ``key value...`` pairs terminated by a line ``end``::

    fracmap-field 1
    kind lattice            # or: extension
    n 2
    d 2
    h 0.0625
    L 1
    L_ext 2
    s 0.5
    shape 65 65 2           # payload array shape, C order
    z 0 0.0039 ...          # extension dumps only: trace height 0, then the level heights
    x_extent 1.25           # extension dumps only
    end

Lattice dumps store the field on the full grid ``(2m+1,)*n + (d,)``.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError

MAGIC = "fracmap-field 1"


def _fmt(x) -> str:
    return repr(float(x))


def _write(path, header: dict, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f8")
    lines = [MAGIC]
    for k, v in header.items():
        vals = v if isinstance(v, (list, tuple, np.ndarray)) else [v]
        lines.append(k + " " + " ".join(str(x) if isinstance(x, (str, int, np.integer)) else _fmt(x) for x in vals))
    lines.append("shape " + " ".join(str(int(k)) for k in data.shape))
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(data.tobytes(order="C"))


def read_dump(path):
    """Return ``(header, array)``; numeric header values are parsed to floats/ints."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header = {}
    pos = 0
    first = True
    while True:
        nl = raw.index(b"\n", pos)
        line = raw[pos:nl].decode("ascii").strip()
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise ConfigError(f"{path}: not a field dump")
            first = False
            continue
        if line == "end":
            break
        key, *vals = line.split()
        parsed = []
        for v in vals:
            try:
                parsed.append(int(v))
            except ValueError:
                try:
                    parsed.append(float(v))
                except ValueError:
                    parsed.append(v)
        header[key] = parsed[0] if len(parsed) == 1 and key not in ("shape", "z") else parsed
    shape = tuple(header["shape"])
    data = np.frombuffer(raw, dtype="<f8", offset=pos)
    if data.size != int(np.prod(shape)):
        raise ConfigError(f"{path}: payload size does not match header shape")
    return header, data.reshape(shape).copy()


def write_lattice_field(path, lat, u) -> None:
    u = np.asarray(u, dtype=float).reshape(lat.N, -1)
    p = lat.params
    header = {"kind": "lattice", "n": p.n, "d": u.shape[1], "h": lat.h, "L": lat.L, "L_ext": lat.L_ext, "s": p.s}
    _write(path, header, lat.to_grid(u))


def read_lattice_field(path, lat=None):
    """Read a lattice dump; with ``lat`` given, check geometry and return node-ordered values."""
    header, data = read_dump(path)
    if header.get("kind") != "lattice":
        raise ConfigError(f"{path}: not a lattice field dump")
    if lat is None:
        return header, data
    if data.shape[:-1] != lat.grid_shape or not np.isclose(header["h"], lat.h):
        raise ConfigError(f"{path}: geometry does not match the lattice")
    return header, data.reshape(lat.N, -1)


def write_extension(path, v) -> None:
    g = v.grid
    p = g.lattice.params
    header = {
        "kind": "extension", "n": p.n, "d": v.values.shape[-1], "h": g.lattice.h, "L": g.lattice.L,
        "L_ext": g.lattice.L_ext, "s": p.s, "x_extent": g.x_extent, "z": list(g.zz),
    }
    _write(path, header, v.values)


def read_extension(path):
    header, data = read_dump(path)
    if header.get("kind") != "extension":
        raise ConfigError(f"{path}: not an extension field dump")
    return header, data


def lattice_csv(lat, u) -> str:
    """One row per node: coordinates then components (``n <= 2``)."""
    if lat.n > 2:
        raise ConfigError("CSV export is limited to n <= 2")
    u = np.asarray(u, dtype=float).reshape(lat.N, -1)
    head = [f"x{k + 1}" for k in range(lat.n)] + [f"u{k + 1}" for k in range(u.shape[1])]
    rows = np.hstack([lat.coords, u])
    out = [",".join(head)]
    out += [",".join(f"{x:.17g}" for x in row) for row in rows]
    return "\n".join(out) + "\n"
