"""File formats: DFTG binary arrays, 16-bit PGM images, CSV tables, gnuplot scripts.

DFTG layout (little-endian): ``b"DFTG"``, ``u32 rank``, ``u32 dims[rank]``,
``f64 data`` in row-major order.  Optional tagged trailers follow the data:

* ``b"RDOM"`` ``f64``: disk radius of a grid function;
* ``b"AXES"`` ``u32 count`` then, per axis, ``u32 len`` + UTF-8 label and
  ``f64`` axis values (one per sample along that dimension).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .transform import GridFunction, SinogramFunction

MAGIC = b"DFTG"


def _pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def write_dftg(path, obj) -> None:
    """Write a ``GridFunction``, ``SinogramFunction`` or plain array."""
    if isinstance(obj, GridFunction):
        data = _pack_array(obj.values) + b"RDOM" + struct.pack("<d", obj.r_dom)
    elif isinstance(obj, SinogramFunction):
        data = _pack_array(obj.values) + b"AXES" + struct.pack("<I", len(obj.axes))
        for label, ax in zip(obj.labels, obj.axes):
            lb = str(label).encode("utf-8")
            data += struct.pack("<I", len(lb)) + lb + np.asarray(ax, "<f8").tobytes()
    else:
        data = _pack_array(np.asarray(obj, float))
    Path(path).write_bytes(data)


def read_dftg(path):
    """Read a DFTG file back into the type it was written from."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValidationError(f"{path}: not a DFTG file")
    (rank,) = struct.unpack_from("<I", buf, 4)
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    off = 8 + 4 * rank
    size = int(np.prod(dims)) if rank else 1
    if len(buf) < off + 8 * size:
        raise ValidationError(f"{path}: truncated data")
    arr = np.frombuffer(buf, "<f8", size, off).reshape(dims).copy()
    off += 8 * size
    tag = buf[off:off + 4]
    if tag == b"RDOM":
        (r,) = struct.unpack_from("<d", buf, off + 4)
        return GridFunction(arr, r)
    if tag == b"AXES":
        (count,) = struct.unpack_from("<I", buf, off + 4)
        off += 8
        labels, axes = [], []
        for k in range(count):
            (ln,) = struct.unpack_from("<I", buf, off)
            labels.append(buf[off + 4:off + 4 + ln].decode("utf-8"))
            off += 4 + ln
            axes.append(np.frombuffer(buf, "<f8", dims[k], off).copy())
            off += 8 * dims[k]
        return SinogramFunction(arr, tuple(axes), tuple(labels))
    if tag:
        raise ValidationError(f"{path}: unknown trailer {tag!r}")
    return arr


def write_pgm(path, values, lo: float | None = None, hi: float | None = None) -> None:
    """16-bit binary PGM (P5), linearly scaled from ``[lo, hi]`` to ``[0, 65535]``.

    Row ``i`` of the image is ``values[i, :]``.
    """
    v = np.asarray(getattr(values, "values", values), float)
    if v.ndim != 2:
        raise ValidationError("PGM export needs a 2D array")
    lo = float(np.min(v)) if lo is None else lo
    hi = float(np.max(v)) if hi is None else hi
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    q = np.clip(np.rint((v - lo) * scale), 0, 65535).astype(">u2")
    head = f"P5\n{v.shape[1]} {v.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(head + q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM written by :func:`write_pgm` (raw 16-bit or 8-bit values)."""
    buf = Path(path).read_bytes()
    tokens, off = [], 0
    while len(tokens) < 4:
        while buf[off:off + 1].isspace():
            off += 1
        if buf[off:off + 1] == b"#":
            off = buf.index(b"\n", off) + 1
            continue
        end = off
        while not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[off:end].decode("ascii"))
        off = end
    off += 1
    if tokens[0] != "P5":
        raise ValidationError(f"{path}: not a binary PGM")
    w, h, mx = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dt = ">u2" if mx > 255 else "u1"
    return np.frombuffer(buf, dt, w * h, off).reshape(h, w).astype(np.int64)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def write_gnuplot_loglog(path, data_csv, slope: float, intercept: float,
                         title: str = "order probe") -> None:
    """Gnuplot script plotting a CSV ``freq,amplitude`` against its log-log fit."""
    script = (
        "set datafile separator ','\n"
        "set logscale xy\n"
        f"set title '{title} (slope {slope:.4f})'\n"
        "set xlabel 'cycles per domain'\n"
        "set ylabel 'amplitude'\n"
        f"f(x) = exp({intercept!r}) * x**({slope!r})\n"
        f"plot '{Path(data_csv).name}' every ::1 using 1:2 with points title 'measured', "
        "f(x) with lines title 'fit'\n"
    )
    Path(path).write_text(script)
