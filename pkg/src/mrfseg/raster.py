"""PGM rasters (P2/P5) and the planar ``MSI`` multiband container.

A single-band image or label map is one PGM file. A multiband image is an
ASCII line ``MSI z w q`` followed by ``q`` complete P5 images, one per band.
Integer data in ``[0, 65535]`` is stored as is. Other real data is quantized
to 16 bits as ``v = round((x - offset) / scale)``; the header comment
``mrfseg scale=<s> offset=<o>`` records the map back.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .core import LabelMap, MultiSpectralImage, as_image, as_labels

MAXVAL = 65535
_SCALE_RE = re.compile(r"mrfseg scale=(\S+) offset=(\S+)")
_LABELS_RE = re.compile(r"mrfseg labels=(\d+)")
_WS = b" \t\r\n\v\f"


class RasterError(ValueError):
    """Malformed or truncated raster data."""


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos
        self.comments: list[str] = []

    def skip_space(self) -> None:
        buf = self.buf
        while self.pos < len(buf):
            c = buf[self.pos : self.pos + 1]
            if c == b"#":
                end = buf.find(b"\n", self.pos)
                end = len(buf) if end < 0 else end
                self.comments.append(buf[self.pos + 1 : end].decode("utf-8", "replace").strip())
                self.pos = end
            elif c in _WS:
                self.pos += 1
            else:
                break

    def token(self, what: str) -> bytes:
        self.skip_space()
        start = self.pos
        while self.pos < len(self.buf) and self.buf[self.pos : self.pos + 1] not in _WS and self.buf[self.pos : self.pos + 1] != b"#":
            self.pos += 1
        if self.pos == start:
            raise RasterError(f"expected {what} at byte offset {start}, found end of data")
        return self.buf[start : self.pos]

    def integer(self, what: str, lo: int, hi: int) -> int:
        start = self.pos
        tok = self.token(what)
        if not tok.isdigit():
            raise RasterError(f"expected {what} at byte offset {start}, found {tok[:16]!r}")
        v = int(tok)
        if not lo <= v <= hi:
            raise RasterError(f"{what} {v} at byte offset {start} is outside [{lo}, {hi}]")
        return v


def _parse_pgm(r: _Reader) -> np.ndarray:
    r.skip_space()
    start = r.pos
    magic = r.buf[start : start + 2]
    if magic not in (b"P2", b"P5"):
        raise RasterError(f"bad PGM magic {magic!r} at byte offset {start}")
    r.pos += 2
    w = r.integer("width", 1, 2**31)
    h = r.integer("height", 1, 2**31)
    maxval = r.integer("maxval", 1, MAXVAL)
    if magic == b"P2":
        vals = []
        for _ in range(w * h):
            vals.append(r.integer("sample", 0, maxval))
        return np.array(vals, dtype=np.int64).reshape(h, w)
    if r.pos >= len(r.buf) or r.buf[r.pos : r.pos + 1] not in _WS:
        raise RasterError(f"expected a single whitespace byte after maxval at byte offset {r.pos}")
    r.pos += 1
    width = 1 if maxval < 256 else 2
    need = w * h * width
    have = len(r.buf) - r.pos
    if have < need:
        raise RasterError(f"truncated P5 payload at byte offset {r.pos}: expected {need} bytes, got {have}")
    dt = np.dtype(">u2") if width == 2 else np.dtype("u1")
    arr = np.frombuffer(r.buf, dtype=dt, count=w * h, offset=r.pos).astype(np.int64).reshape(h, w)
    r.pos += need
    if arr.max(initial=0) > maxval:
        raise RasterError(f"sample exceeds maxval {maxval} in payload ending at byte offset {r.pos}")
    return arr


def _encode_pgm(a: np.ndarray, binary: bool, comments=()) -> bytes:
    a = np.asarray(a)
    if a.ndim != 2:
        raise RasterError("PGM holds exactly one 2-D band")
    if a.size and (a.min() < 0 or a.max() > MAXVAL):
        raise RasterError(f"PGM samples must lie in [0, {MAXVAL}]")
    h, w = a.shape
    maxval = max(int(a.max(initial=0)), 1)
    head = [b"P5" if binary else b"P2"]
    head += [f"# {c}".encode() for c in comments]
    head.append(f"{w} {h}".encode())
    head.append(str(maxval).encode())
    out = b"\n".join(head) + b"\n"
    if binary:
        dt = ">u2" if maxval >= 256 else "u1"
        return out + a.astype(dt).tobytes()
    rows = [" ".join(str(int(v)) for v in row) for row in a]
    return out + "\n".join(rows).encode() + b"\n"


def _quantize(band: np.ndarray):
    """Integer samples plus the ``(scale, offset)`` map back, or ``None`` if lossless."""
    if np.all(np.isfinite(band)) and np.array_equal(band, np.round(band)) and band.min() >= 0 and band.max() <= MAXVAL:
        return band.astype(np.int64), None
    if not np.all(np.isfinite(band)):
        raise RasterError("cannot store non-finite samples")
    lo, hi = float(band.min()), float(band.max())
    scale = (hi - lo) / MAXVAL if hi > lo else 1.0
    return np.round((band - lo) / scale).astype(np.int64), (scale, lo)


def _restore(a: np.ndarray, comments) -> np.ndarray:
    for c in comments:
        m = _SCALE_RE.search(c)
        if m:
            return a * float(m.group(1)) + float(m.group(2))
    return a.astype(np.float64)


def _band_bytes(band: np.ndarray, binary: bool) -> bytes:
    q, sm = _quantize(band)
    comments = [] if sm is None else [f"mrfseg scale={sm[0]!r} offset={sm[1]!r}"]
    return _encode_pgm(q, binary, comments)


def _write(path, data: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise OSError(f"cannot write {os.fspath(path)}: {exc.strerror}") from exc


def _read(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {os.fspath(path)}: {exc.strerror}") from exc


def encode_image(image, binary: bool = True) -> bytes:
    image = as_image(image)
    if image.bands == 1:
        return _band_bytes(image.data[:, :, 0], binary)
    z, w, q = image.shape + (image.bands,)
    parts = [f"MSI {z} {w} {q}\n".encode()]
    parts += [_band_bytes(image.data[:, :, b], True) for b in range(q)]
    return b"".join(parts)


def decode_image(buf: bytes) -> MultiSpectralImage:
    r = _Reader(buf)
    r.skip_space()
    if buf[r.pos : r.pos + 3] == b"MSI":
        r.pos += 3
        z = r.integer("height", 1, 2**31)
        w = r.integer("width", 1, 2**31)
        q = r.integer("band count", 1, 2**16)
        if r.pos < len(buf) and buf[r.pos : r.pos + 1] == b"\n":
            r.pos += 1
        bands = []
        for b in range(q):
            sub = _Reader(buf, r.pos)
            a = _parse_pgm(sub)
            if a.shape != (z, w):
                raise RasterError(f"band {b} has shape {a.shape}, header says {(z, w)}")
            bands.append(_restore(a, sub.comments))
            r.pos = sub.pos
        return MultiSpectralImage(np.stack(bands, axis=2))
    a = _parse_pgm(r)
    return MultiSpectralImage(_restore(a, r.comments))


def encode_labels(labels, binary: bool = True) -> bytes:
    labels = as_labels(labels)
    return _encode_pgm(labels.labels, binary, [f"mrfseg labels={labels.n_labels}"])


def decode_labels(buf: bytes, n_labels: int | None = None) -> LabelMap:
    r = _Reader(buf)
    a = _parse_pgm(r)
    if n_labels is None:
        n_labels = -1
        for c in r.comments:
            m = _LABELS_RE.search(c)
            if m:
                n_labels = int(m.group(1))
    return LabelMap(a, n_labels)


def write_image(path, image, binary: bool = True) -> None:
    _write(path, encode_image(image, binary))


def read_image(path) -> MultiSpectralImage:
    return decode_image(_read(path))


def write_labels(path, labels, binary: bool = True) -> None:
    _write(path, encode_labels(labels, binary))


def read_labels(path, n_labels: int | None = None) -> LabelMap:
    return decode_labels(_read(path), n_labels)
