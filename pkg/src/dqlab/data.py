"""Data sources: the 2-D binary checkerboard generator and IDX image files."""
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DqlabError
from .quantize import DiscreteBatch


class ParseError(DqlabError):
    """Malformed IDX container."""


class CheckerboardSource:
    """Draws (0,1) or (1,0) with equal probability; entropy exactly 1 bit."""

    dim = 2
    bit_depth = 1

    def sample(self, n, rng):
        first = rng.integers(0, 2, size=n)
        x = np.empty((n, 2), dtype=np.int64)
        x[:, 0] = first
        x[:, 1] = 1 - first
        return x

    def batch(self, n, rng):
        return DiscreteBatch(self.sample(n, rng), self.bit_depth)


@dataclass
class ImageDataset:
    """Index-range splits over one discrete image array."""
    train: DiscreteBatch
    val: DiscreteBatch
    test: DiscreteBatch
    bit_depth: int
    provenance: str = ""

    @property
    def dim(self):
        return self.train.dim


def load_idx_array(path):
    """Raw IDX payload as an int64 array with the file's dimensions."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise ParseError(f"{path}: truncated header at byte {len(blob)}")
    zero1, zero2, dtype, ndim = struct.unpack(">BBBB", blob[:4])
    if zero1 != 0 or zero2 != 0 or dtype != 0x08:
        raise ParseError(f"{path}: bad magic {blob[:4].hex()} at byte 0 "
                         "(expected unsigned-byte IDX)")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise ParseError(f"{path}: truncated dimension table at byte "
                         f"{len(blob)}")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 0
    if len(blob) != header_len + count:
        raise ParseError(f"{path}: payload ends at byte {len(blob)}, "
                         f"expected {header_len + count}")
    data = np.frombuffer(blob, dtype=np.uint8, offset=header_len)
    return data.reshape(dims).astype(np.int64)


def write_idx(path, values):
    """Write an unsigned-byte IDX file (inverse of load_idx_array)."""
    arr = np.asarray(values)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ConfigError("IDX ubyte payload must lie in [0, 255]")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, 0x08, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(np.uint8).tobytes())


def load_idx(path, splits=(40000, 10000, 10000), bit_depth=8):
    """IDX images flattened to vectors and split by index ranges.

    The split is positional (first n_train rows are train, then val, then
    test) and never randomized.
    """
    arr = load_idx_array(path)
    if arr.ndim < 2:
        raise ParseError(f"{path}: expected image data, got {arr.ndim}-D")
    flat = arr.reshape(arr.shape[0], -1)
    n_train, n_val, n_test = splits
    total = n_train + n_val + n_test
    if flat.shape[0] < total:
        raise ConfigError(f"{path} holds {flat.shape[0]} images, "
                          f"need {total} for splits {splits}")
    return ImageDataset(
        train=DiscreteBatch(flat[:n_train], bit_depth),
        val=DiscreteBatch(flat[n_train:n_train + n_val], bit_depth),
        test=DiscreteBatch(flat[n_train + n_val:total], bit_depth),
        bit_depth=bit_depth,
        provenance=str(path))


def binarize(batch, threshold):
    """Threshold to bit depth 1: value >= threshold maps to 1."""
    hi = 1 << batch.bit_depth
    if not (0 < threshold < hi):
        raise ConfigError(f"threshold must lie in (0, {hi})")
    return DiscreteBatch((batch.values >= threshold).astype(np.int64), 1)


def binarize_dataset(ds, threshold):
    return ImageDataset(
        train=binarize(ds.train, threshold),
        val=binarize(ds.val, threshold),
        test=binarize(ds.test, threshold),
        bit_depth=1,
        provenance=f"{ds.provenance} (binarized at {threshold})")


class ArraySource:
    """Finite dataset adapter exposing the batch-sampling interface."""

    def __init__(self, batch):
        self.values = batch.values
        self.bit_depth = batch.bit_depth
        self.dim = batch.dim

    def sample(self, n, rng):
        idx = rng.integers(0, self.values.shape[0], size=n)
        return self.values[idx]
