"""Synthetic label images, flip noise, and PGM/atomic file I/O."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def generate_patch_image(rows: int, cols: int, n_states: int, n_rects: int, seed) -> np.ndarray:
    """Background 0 with ``n_rects`` axis-aligned rectangles painted in order."""
    if n_rects < 0:
        raise ValueError("n_rects must be non-negative")
    if n_states < 2:
        raise ValueError("need at least two states")
    rng = np.random.default_rng(seed)
    img = np.zeros((rows, cols), dtype=np.int64)
    for _ in range(n_rects):
        r0, r1 = np.sort(rng.integers(0, rows + 1, size=2))
        c0, c1 = np.sort(rng.integers(0, cols + 1, size=2))
        if r1 == r0:
            r1 = min(r0 + 1, rows)
            r0 = r1 - 1
        if c1 == c0:
            c1 = min(c0 + 1, cols)
            c0 = c1 - 1
        img[r0:r1, c0:c1] = rng.integers(1, n_states)
    return img


def corrupt_flip(labels, p: float, seed, n_states: int | None = None) -> np.ndarray:
    """Replace each label, with probability ``p``, by a uniformly drawn different one."""
    if not 0.0 <= p < 1.0:
        raise ValueError("flip probability must lie in [0, 1)")
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if n_states is None else int(n_states)
    if k < 2:
        raise ValueError("need at least two states to flip")
    rng = np.random.default_rng(seed)
    flip = rng.random(labels.shape) < p
    # offset in 1..k-1 never maps a label to itself
    offset = rng.integers(1, k, size=labels.shape)
    return np.where(flip, (labels + offset) % k, labels)


# ---------------------------------------------------------------------------
# files


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_pgm(img, maxval: int, binary: bool = False) -> bytes:
    img = np.asarray(img, dtype=np.int64)
    if img.ndim != 2:
        raise ValueError("PGM images are two-dimensional")
    if not 1 <= maxval <= 65535:
        raise ValueError("PGM maxval must be in 1..65535")
    if img.min() < 0 or img.max() > maxval:
        raise ValueError("pixel value exceeds maxval")
    rows, cols = img.shape
    head = f"{'P5' if binary else 'P2'}\n{cols} {rows}\n{maxval}\n".encode("ascii")
    if binary:
        dtype = ">u1" if maxval < 256 else ">u2"
        return head + img.astype(dtype).tobytes()
    body = "\n".join(" ".join(str(v) for v in row) for row in img) + "\n"
    return head + body.encode("ascii")


def decode_pgm(data: bytes) -> tuple[np.ndarray, int]:
    """Parse P2 or P5 bytes into ``(image, maxval)``."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    magic, cols, rows, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        pos += 1  # single whitespace byte before the raster
        dtype = ">u1" if maxval < 256 else ">u2"
        raw = np.frombuffer(data, dtype=dtype, count=rows * cols, offset=pos)
        return raw.astype(np.int64).reshape(rows, cols), maxval
    if magic == b"P2":
        vals = np.array(data[pos:].split(), dtype=np.int64)
        if vals.size != rows * cols:
            raise ValueError("PGM raster size does not match its header")
        return vals.reshape(rows, cols), maxval
    raise ValueError(f"unsupported PGM magic {magic!r}")


def write_pgm(path, img, n_states: int, binary: bool = False) -> None:
    atomic_write_bytes(path, encode_pgm(img, n_states - 1, binary))


def read_pgm(path) -> tuple[np.ndarray, int]:
    return decode_pgm(Path(path).read_bytes())
