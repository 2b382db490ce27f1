"""Binary grid snapshots (SHF1) and greyscale PGM renders.

SHF1 layout, all little endian::

    bytes 0-3    magic b"SHF1"
    bytes 4-7    u32 rows
    bytes 8-11   u32 cols
    bytes 12-19  f64 cell side (macroscopic length of one grid step)
    bytes 20-27  f64 time (macroscopic)
    bytes 28-    rows * cols f64 values, row major

Every snapshot ``name.shf`` has a sidecar ``name.shf.json`` holding the seed,
the coupling schedule, the lost mass and any extra metadata.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SHF1"
_HEADER = struct.Struct("<4sIIdd")


def write_snapshot(path, values, cell_side: float, time: float, meta: dict | None = None):
    """Write ``values`` (2-d) and its sidecar; returns the sidecar path."""
    v = np.ascontiguousarray(values, dtype="<f8")
    if v.ndim != 2:
        raise ValueError("snapshot must be 2-d")
    rows, cols = v.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, rows, cols, float(cell_side), float(time)))
        f.write(v.tobytes(order="C"))
    side = f"{path}.json"
    with open(side, "w") as f:
        json.dump(meta or {}, f, indent=2, sort_keys=False)
        f.write("\n")
    return side


def read_snapshot(path):
    """Return ``(values, cell_side, time, meta)``; ``meta`` is ``{}`` without a sidecar."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("truncated SHF1 header")
        magic, rows, cols, cell, time = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError("not an SHF1 file")
        body = f.read()
    if len(body) != 8 * rows * cols:
        raise ValueError(f"SHF1 body has {len(body)} bytes, expected {8 * rows * cols}")
    values = np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)
    try:
        with open(f"{path}.json") as f:
            meta = json.load(f)
    except FileNotFoundError:
        meta = {}
    return values, cell, time, meta


# quantiles of log10(value) over the positive cells that map to black and white
CLIP_LOW = 0.005
CLIP_HIGH = 0.995


def render_pgm(values, path, clip=(CLIP_LOW, CLIP_HIGH)) -> tuple:
    """Write a plain (P2) PGM with 8-bit log-scaled intensities.

    Clipping rule: let ``L = log10(v)`` over the strictly positive cells and
    ``lo, hi`` its ``clip`` quantiles.  A positive cell gets grey level
    ``round(255 * (clamp(L, lo, hi) - lo) / (hi - lo))``; cells equal to 0
    (unreachable sites) are black.  If ``hi == lo`` every positive cell is
    mid grey (128).  Non-finite or negative values are rejected.

    Returns ``(rows, cols)``.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("image must be 2-d")
    if not np.all(np.isfinite(v)):
        raise ValueError("snapshot holds non-finite values")
    if np.any(v < 0):
        raise ValueError("snapshot holds negative values")
    pos = v > 0
    img = np.zeros(v.shape, dtype=np.int64)
    if np.any(pos):
        L = np.log10(v[pos])
        lo, hi = np.quantile(L, clip[0]), np.quantile(L, clip[1])
        if hi > lo:
            img[pos] = np.rint(255 * (np.clip(L, lo, hi) - lo) / (hi - lo)).astype(np.int64)
        else:
            img[pos] = 128
    rows, cols = v.shape
    with open(path, "w") as f:
        f.write(f"P2\n{cols} {rows}\n255\n")
        for r in img:
            f.write(" ".join(map(str, r.tolist())) + "\n")
    return rows, cols


def render_field(snapshot_path, output_path) -> tuple:
    """Render an SHF1 snapshot file to a plain PGM; returns ``(rows, cols)``."""
    values, _, _, _ = read_snapshot(snapshot_path)
    return render_pgm(values, output_path)


def read_pgm(path) -> np.ndarray:
    """Parse a plain PGM written by :func:`render_pgm` (comments allowed)."""
    with open(path) as f:
        toks = [t for line in f for t in line.split("#")[0].split()]
    if toks[0] != "P2":
        raise ValueError("not a plain PGM")
    cols, rows, _ = int(toks[1]), int(toks[2]), int(toks[3])
    return np.array(toks[4:4 + rows * cols], dtype=np.int64).reshape(rows, cols)
