"""Portable graymap images, block tiling and signal tables."""

from __future__ import annotations

import numpy as np

__all__ = [
    "ImageFormatError",
    "load_pgm",
    "save_pgm",
    "block_split",
    "block_join",
    "load_signals_csv",
]


class ImageFormatError(ValueError):
    """Malformed or unsupported image file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _tokens(data, start, count):
    """Read ``count`` whitespace separated header tokens, skipping comments."""
    out = []
    pos = start
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise ImageFormatError("truncated header", pos)
        begin = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        tok = data[begin:pos]
        if not tok.isdigit():
            raise ImageFormatError(f"expected an integer, got {tok!r}", begin)
        out.append(int(tok))
    return out, pos


def load_pgm(path, require_dyadic=True):
    """Load a P2 or P5 graymap scaled to [0, 1].

    Raises :class:`ImageFormatError` for malformed files, non-square
    images and (by default) sides that are not powers of two.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"unsupported magic number {magic!r}", 0)
    (width, height, maxval), pos = _tokens(data, 2, 3)
    if not 0 < maxval < 65536 or width < 1 or height < 1:
        raise ImageFormatError("bad image dimensions or maxval", pos)
    count = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - pos < need:
            raise ImageFormatError(
                f"truncated raster: need {need} bytes, found {len(data) - pos}",
                len(data))
        pix = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    else:
        pix, _ = _tokens(data, pos, count)
        pix = np.array(pix)
    if np.any(pix > maxval):
        raise ImageFormatError("pixel value above maxval")
    grid = pix.reshape(height, width).astype(float) / maxval
    if width != height:
        raise ImageFormatError(f"image is {height}x{width}, not square")
    if require_dyadic and width & (width - 1):
        raise ImageFormatError(f"side {width} is not a power of two")
    return grid


def save_pgm(path, grid, maxval=255, binary=True):
    """Write a grid in [0, 1] as P5 (or P2 with ``binary=False``)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ValueError("a graymap is two dimensional")
    pix = np.rint(np.clip(grid, 0.0, 1.0) * maxval).astype(int)
    h, w = pix.shape
    header = f"P{5 if binary else 2}\n{w} {h}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            dtype = ">u2" if maxval > 255 else "u1"
            fh.write(pix.astype(dtype).tobytes())
        else:
            for row in pix:
                fh.write((" ".join(map(str, row)) + "\n").encode())


def block_split(grid, block):
    """Row-major list of ``block x block`` tiles."""
    grid = np.asarray(grid)
    h, w = grid.shape
    if block < 1 or h % block or w % block:
        raise ValueError(f"block {block} does not divide a {h}x{w} grid")
    return [grid[r:r + block, c:c + block].copy()
            for r in range(0, h, block) for c in range(0, w, block)]


def block_join(blocks, shape):
    """Inverse of :func:`block_split` for a grid of ``shape``."""
    h, w = shape
    b = blocks[0].shape[0]
    if h % b or w % b or len(blocks) != (h // b) * (w // b):
        raise ValueError("blocks do not tile the requested shape")
    out = np.empty(shape, dtype=np.result_type(*blocks))
    per_row = w // b
    for i, blk in enumerate(blocks):
        r, c = divmod(i, per_row)
        out[r * b:(r + 1) * b, c * b:(c + 1) * b] = blk
    return out


def load_signals_csv(path):
    """One signal per column: returns an array of shape (K, N)."""
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return arr.T.copy()
