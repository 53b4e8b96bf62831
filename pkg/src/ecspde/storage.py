"""Binary snapshot files.

Layout (all integers little-endian):

    magic   8 bytes ASCII "ECSPDE01"
    version u32 (currently 1)
    n       u32 (grid size per dimension)
    time    f64
    nfields u32
    then per field:
      name length u32, UTF-8 name bytes,
      n*n complex coefficients as little-endian f64 (re, im) pairs, in
      row-major wavenumber order with k = -n/2+1 .. n/2 along each axis.

Round trips are byte-exact; loads verify the magic, version, byte length,
and Hermitian symmetry of every field.
"""

from __future__ import annotations

import struct

import numpy as np

from .spectral import FourierGrid, ScalarField, SpectralError, VectorField, hermitize

MAGIC = b"ECSPDE01"
VERSION = 1


class SnapshotError(IOError):
    pass


def _axis_order(n: int) -> np.ndarray:
    """File order k = -n/2+1 .. n/2 mapped to numpy FFT-layout indices."""
    ks = np.arange(-n // 2 + 1, n // 2 + 1)
    return ks % n


def write_snapshot(path, time: float, fields: dict[str, np.ndarray], n: int):
    """Write named coefficient arrays (numpy FFT layout, shape (n, n))."""
    perm = _axis_order(n)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", n))
        fh.write(struct.pack("<d", float(time)))
        fh.write(struct.pack("<I", len(fields)))
        for name, coef in fields.items():
            if coef.shape != (n, n):
                raise SnapshotError(f"field {name!r} has shape {coef.shape}, expected {(n, n)}")
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            ordered = np.ascontiguousarray(coef[np.ix_(perm, perm)], dtype="<c16")
            fh.write(ordered.tobytes())


def read_snapshot(path):
    """Read a snapshot; returns (time, n, {name: coef in numpy FFT layout})."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 4 + 4 + 8 + 4:
        raise SnapshotError(f"{path}: truncated header")
    if data[: len(MAGIC)] != MAGIC:
        raise SnapshotError(f"{path}: bad magic {data[:8]!r}")
    off = len(MAGIC)
    version, n = struct.unpack_from("<II", data, off)
    off += 8
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported version {version}")
    (time,) = struct.unpack_from("<d", data, off)
    off += 8
    (nfields,) = struct.unpack_from("<I", data, off)
    off += 4
    perm = _axis_order(n)
    inv = np.empty(n, dtype=int)
    inv[perm] = np.arange(n)
    fields = {}
    for _ in range(nfields):
        if off + 4 > len(data):
            raise SnapshotError(f"{path}: truncated field header")
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + name_len + 16 * n * n > len(data):
            raise SnapshotError(f"{path}: truncated field body")
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        flat = np.frombuffer(data, dtype="<c16", count=n * n, offset=off)
        off += 16 * n * n
        ordered = flat.reshape(n, n)
        coef = np.ascontiguousarray(ordered[np.ix_(inv, inv)]).astype(complex)
        try:
            hermitize(coef)
        except SpectralError as e:
            raise SnapshotError(f"{path}: field {name!r} breaks Hermitian symmetry: {e}") from e
        fields[name] = coef
    if off != len(data):
        raise SnapshotError(f"{path}: {len(data) - off} trailing bytes")
    return time, n, fields


def write_state_snapshot(path, state):
    """Serialize one system state (single path)."""
    if state.batch_shape not in ((), (1,)):
        raise SnapshotError("state snapshots are written per path")
    q = state.q.coef if state.batch_shape == () else state.q.coef[0]
    u = state.u.coef if state.batch_shape == () else state.u.coef[0]
    write_snapshot(
        path,
        state.t,
        {"q": q, "u_x": u[0], "u_y": u[1]},
        state.grid.n,
    )


def read_state_snapshot(path):
    from .dynamics import SystemState

    time, n, fields = read_snapshot(path)
    for need in ("q", "u_x", "u_y"):
        if need not in fields:
            raise SnapshotError(f"{path}: missing field {need!r}")
    grid = FourierGrid(n)
    q = ScalarField(grid, fields["q"])
    u = VectorField(grid, np.stack([fields["u_x"], fields["u_y"]]))
    return SystemState(q, u, time)
