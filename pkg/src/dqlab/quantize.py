"""Quantizer and log-likelihood unit accounting.

The quantizer maps a continuous vector to the integer anchor of the unit
hypercube bin containing it: componentwise floor. Its mass is the indicator
of bin membership, so the bin volume is exactly 1 and no volume term enters
the likelihood.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


@dataclass
class DiscreteBatch:
    """Batch of integer vectors with a declared bit depth.

    values: (n, D) int64 array, every component in [0, 2**bit_depth).
    """
    values: np.ndarray
    bit_depth: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 2:
            raise ConfigError("DiscreteBatch values must be 2-D (n, D)")
        if self.bit_depth < 1:
            raise ConfigError("bit_depth must be >= 1")
        hi = 1 << self.bit_depth
        if self.values.size and (self.values.min() < 0
                                 or self.values.max() >= hi):
            raise ConfigError(f"values outside [0, 2**{self.bit_depth})")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


def quantize(v):
    """Componentwise floor: the bin anchor of v. quantize(x + u) == x
    for any u in [0, 1)^D."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DomainError("quantize: non-finite component")
    return np.floor(v).astype(np.int64)


def nats_to_bpd(nats, dim):
    """Convert nats to bits per dimension: nats / (D * ln 2)."""
    if dim < 1:
        raise ConfigError("dimension must be >= 1")
    return nats / (dim * math.log(2.0))


def nats_to_bits(nats):
    """Convert nats to total bits."""
    return nats / math.log(2.0)


def reduce_bit_depth(batch, target_bits):
    """Drop low-order bits: value -> floor(value / 2**(depth - target))."""
    if target_bits < 1:
        raise ConfigError("target_bits must be >= 1")
    if target_bits > batch.bit_depth:
        raise ConfigError(f"target_bits {target_bits} exceeds bit depth "
                          f"{batch.bit_depth}")
    shift = batch.bit_depth - target_bits
    return DiscreteBatch(batch.values >> shift, target_bits)
