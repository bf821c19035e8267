"""File formats: binary PGM images, RFVOL1 volumes, CSV tables and key=value configs."""
from __future__ import annotations

import csv
import io
import os

import numpy as np


class ParseError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


def _read_bytes(src) -> bytes:
    if isinstance(src, (bytes, bytearray)):
        return bytes(src)
    with open(src, "rb") as fh:
        return fh.read()


def _header_tokens(data: bytes, count: int, pos: int):
    """Read `count` whitespace-separated header tokens, skipping # comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise ParseError("truncated header", pos)
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        out.append((data[start:pos], start))
    return out, pos


def read_pgm(src) -> np.ndarray:
    """Binary (P5) PGM as float64 in [0, 1], shape (height, width)."""
    data = _read_bytes(src)
    if data[:2] != b"P5":
        raise ParseError("not a binary PGM (expected P5)", 0)
    toks, pos = _header_tokens(data, 3, 2)
    vals = []
    for tok, off in toks:
        if not tok.isdigit():
            raise ParseError(f"bad header field {tok!r}", off)
        vals.append(int(tok))
    w, h, maxval = vals
    if w <= 0 or h <= 0:
        raise ParseError("image dimensions must be positive", toks[0][1])
    if not 0 < maxval < 65536:
        raise ParseError("maxval must be in 1..65535", toks[2][1])
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", pos)
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(data) - pos < need:
        raise ParseError(f"raster truncated: need {need} bytes, have {len(data) - pos}", len(data))
    img = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return img.astype(np.float64) / maxval


def write_pgm(path, img, maxval: int = 255):
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM holds a 2-D image")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(q.astype(dtype).tobytes())


def read_rfvol(src):
    """RFVOL1 volume: returns (float64 array (frames, height, width), spacing (dt, dy, dx))."""
    data = _read_bytes(src)
    nl = data.find(b"\n")
    if nl < 0:
        raise ParseError("missing header line", len(data))
    parts = data[:nl].split(b" ")
    if parts[0] != b"RFVOL1":
        raise ParseError("not an RFVOL1 file", 0)
    if len(parts) != 7:
        raise ParseError(f"header needs 7 fields, found {len(parts)}", 0)
    offs = np.cumsum([0] + [len(p) + 1 for p in parts[:-1]])
    vals = []
    for i, conv in enumerate((int,) * 3 + (float,) * 3, 1):
        try:
            vals.append(conv(parts[i]))
        except ValueError:
            what = "integer" if conv is int else "spacing"
            raise ParseError(f"bad {what} {parts[i]!r} in header", int(offs[i])) from None
    w, h, n, dx, dy, dt = vals
    if min(w, h, n) <= 0 or min(dx, dy, dt) <= 0:
        raise ParseError("sizes and spacings must be positive", int(offs[1]))
    need = 4 * w * h * n
    body = data[nl + 1:]
    if len(body) != need:
        raise ParseError(f"expected {need} sample bytes, found {len(body)}", nl + 1 + min(len(body), need))
    vol = np.frombuffer(body, dtype="<f4").reshape(n, h, w).astype(np.float64)
    return vol, (dt, dy, dx)


def write_rfvol(path, vol, spacing):
    """Write a volume (frames, height, width), or an image as a single frame."""
    vol = np.asarray(vol)
    if vol.ndim == 2:
        vol = vol[None]
        spacing = (1.0,) + tuple(spacing)
    n, h, w = vol.shape
    dt, dy, dx = spacing
    with open(path, "wb") as fh:
        fh.write(f"RFVOL1 {w} {h} {n} {dx!r} {dy!r} {dt!r}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(vol, dtype="<f4").tobytes())


def fmt(x) -> str:
    """17 significant digits, locale independent."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    text = buf.getvalue()
    if path is None or path == "-":
        return text
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(text)
    return text


def read_csv(path):
    with open(path, encoding="ascii", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def kernel_rows(k):
    """Rows (x1, x2[, t], value) of a sampled kernel, in array order."""
    vals = k.values
    if k.axes == "x1x2":
        x2, x1 = np.meshgrid(k.coords(0), k.coords(1), indexing="ij")
        return ("x1", "x2", "value"), np.column_stack([x1.ravel(), x2.ravel(), vals.ravel()])
    t, x2, x1 = np.meshgrid(k.coords(0), k.coords(1), k.coords(2), indexing="ij")
    return ("x1", "x2", "t", "value"), np.column_stack([x1.ravel(), x2.ravel(), t.ravel(), vals.ravel()])


def read_config(path, allowed=None) -> dict:
    """Plain key=value lines; blank lines and # comments ignored; unknown keys rejected."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{os.fspath(path)}:{lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            if allowed is not None and k not in allowed:
                raise ValueError(f"{os.fspath(path)}:{lineno}: unknown key {k!r}")
            out[k] = v
    return out
