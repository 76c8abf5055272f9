"""Trajectory record file and CSV serialization.

Binary layout (all little-endian, no padding), one file per run:

    header:
        magic          8 bytes   b"LWSRTRJ1"
        radius         uint32    lattice radius M (N = 2M+1 sites)
        n_modes        uint32    noise-mode count of the run
        dt             float64   integration step
        record_stride  uint32    steps between snapshots
        reserved       uint32    zero
    record (repeated until EOF):
        path_id        uint64
        time           float64
        u_real         float64[N]
        u_imag         float64[N]
        v              float64[N]
        norms          float64[3]   |u|^2, |u|^4, |v|^2

Records are append-only and ordered by (path block, time). CSV files quote
nothing and render every floating-point value with 17 significant digits, so
equal runs produce byte-identical files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .lattice import num_sites

MAGIC = b"LWSRTRJ1"
_HEADER = struct.Struct("<8sIIdII")
_REC_FIXED = struct.Struct("<Qd")


def fmt_float(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path, header, rows) -> None:
    """Write rows of mixed numbers/strings; floats at 17 significant digits."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [
                cell if isinstance(cell, str) else
                (str(cell) if isinstance(cell, (int, np.integer)) else fmt_float(cell))
                for cell in row
            ]
            fh.write(",".join(cells) + "\n")


@dataclass
class TrajectoryWriter:
    """Streams snapshot records for one run."""

    path: str
    radius: int
    n_modes: int
    dt: float
    record_stride: int

    def __post_init__(self):
        self._fh = open(self.path, "wb")
        self._fh.write(
            _HEADER.pack(MAGIC, self.radius, self.n_modes, self.dt, self.record_stride, 0)
        )
        self._n = num_sites(self.radius)

    def append(self, path_id: int, time: float, u: np.ndarray, v: np.ndarray) -> None:
        u = np.asarray(u, dtype=np.complex128)
        v = np.asarray(v, dtype=np.float64)
        u2 = float(np.sum(u.real**2 + u.imag**2))
        v2 = float(np.sum(v**2))
        self._fh.write(_REC_FIXED.pack(path_id, time))
        self._fh.write(np.ascontiguousarray(u.real, dtype="<f8").tobytes())
        self._fh.write(np.ascontiguousarray(u.imag, dtype="<f8").tobytes())
        self._fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        self._fh.write(np.array([u2, u2 * u2, v2], dtype="<f8").tobytes())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class TrajectoryRecord:
    path_id: int
    time: float
    u: np.ndarray
    v: np.ndarray
    norms: np.ndarray  # |u|^2, |u|^4, |v|^2


def read_trajectory(path: str):
    """Header dict and the list of records of a trajectory file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, radius, n_modes, dt, stride, _ = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a trajectory file (bad magic {magic!r})")
    n = num_sites(radius)
    rec_bytes = _REC_FIXED.size + 8 * (3 * n + 3)
    body = raw[_HEADER.size :]
    if len(body) % rec_bytes != 0:
        raise ValueError(f"{path}: truncated record (stray {len(body) % rec_bytes} bytes)")
    records = []
    for off in range(0, len(body), rec_bytes):
        pid, t = _REC_FIXED.unpack_from(body, off)
        arr = np.frombuffer(body, dtype="<f8", count=3 * n + 3,
                            offset=off + _REC_FIXED.size)
        records.append(
            TrajectoryRecord(
                path_id=pid,
                time=t,
                u=arr[:n] + 1j * arr[n : 2 * n],
                v=arr[2 * n : 3 * n].copy(),
                norms=arr[3 * n :].copy(),
            )
        )
    header = {
        "radius": radius,
        "n_modes": n_modes,
        "dt": dt,
        "record_stride": stride,
    }
    return header, records
