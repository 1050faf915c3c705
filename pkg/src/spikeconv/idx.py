"""Reader/writer for the IDX binary format used by the MNIST distribution.

Layout: two zero bytes, a type code (only 0x08, unsigned byte, is
supported), the number of dimensions, then one big-endian uint32 per
dimension, then the raw data in row-major order. Files ending in ``.gz``
are transparently (de)compressed.
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_UBYTE = 0x08


class IdxError(ValueError):
    """Raised for malformed or unsupported IDX files."""


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def read_idx(path) -> np.ndarray:
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxError(f"{path}: truncated header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise IdxError(f"{path}: bad magic prefix {raw[:2]!r}")
    if dtype_code != _UBYTE:
        raise IdxError(f"{path}: unsupported element type 0x{dtype_code:02x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxError(f"{path}: truncated dimension table")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header != count:
        raise IdxError(
            f"{path}: expected {count} data bytes for shape {dims}, "
            f"found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims).copy()


def write_idx(path, array) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise IdxError("only uint8 arrays can be written")
    header = struct.pack(">HBB", 0, _UBYTE, array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    # mtime=0 keeps gzip output byte-reproducible
    path = Path(path)
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(
                filename="", mode="wb", fileobj=raw, mtime=0) as fh:
            fh.write(header + np.ascontiguousarray(array).tobytes())
    else:
        with open(path, "wb") as fh:
            fh.write(header + np.ascontiguousarray(array).tobytes())


def magic_of(path) -> int:
    with _open(path, "rb") as fh:
        return struct.unpack(">I", fh.read(4))[0]


def load_images(path) -> np.ndarray:
    """Images as float64 in [0, 1], shape (N, rows, cols)."""
    if magic_of(path) != IMAGES_MAGIC:
        raise IdxError(f"{path}: not an IDX image file")
    raw = read_idx(path)
    return raw.astype(np.float64) / 255.0


def load_labels(path) -> np.ndarray:
    if magic_of(path) != LABELS_MAGIC:
        raise IdxError(f"{path}: not an IDX label file")
    return read_idx(path).astype(np.int64)


def load_pair(images_path, labels_path):
    images = load_images(images_path)
    labels = load_labels(labels_path)
    if len(images) != len(labels):
        raise IdxError(
            f"{len(images)} images but {len(labels)} labels "
            f"({images_path}, {labels_path})")
    return images, labels


_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("test-images-idx3-ubyte", "test-labels-idx1-ubyte"),
}


def dataset_paths(data_dir, split):
    """Resolve the image/label files of ``split`` inside ``data_dir``."""
    data_dir = Path(data_dir)
    out = []
    for stem in _NAMES[split]:
        for cand in (data_dir / stem, data_dir / f"{stem}.gz"):
            if cand.exists():
                out.append(cand)
                break
        else:
            raise FileNotFoundError(f"{data_dir}: missing {stem}[.gz]")
    return tuple(out)


def load_split(data_dir, split):
    return load_pair(*dataset_paths(data_dir, split))
