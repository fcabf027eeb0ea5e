"""Dequantization objectives.

Per-datapoint log-weights are log p(v_k) - log q(u_k|x); the four bounds
differ only in how the K weights per datapoint are combined:

* vi: the single-sample bound (identical to iw at K=1),
* iw: log of the mean weight,
* renyi: power-mean generalization with exponent 1 - alpha,
* vrmax: the single largest weight (the alpha -> -inf limit).

All combiners accept a shared (B, K) weight tensor, so coherence identities
between them can be checked on common draws.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, NumericError
from .quantize import nats_to_bits, nats_to_bpd

VALID_KINDS = ("vi", "iw", "renyi", "vrmax")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which bound to optimize/evaluate, with K draws per datapoint."""
    kind: str
    k: int = 1
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ConfigError(f"unknown objective kind {self.kind!r}")
        if self.k < 1:
            raise ConfigError("objective K must be >= 1")
        if self.kind == "vi" and self.k != 1:
            raise ConfigError("vi is the K=1 bound; use iw for K > 1")
        if self.kind == "renyi":
            if self.alpha is None:
                raise ConfigError("renyi objective needs alpha")
            if self.alpha >= 1.0:
                raise ConfigError("renyi alpha must be < 1")
        elif self.alpha is not None:
            raise ConfigError(f"alpha is only valid for renyi, got kind "
                              f"{self.kind!r}")


@dataclass
class BoundEstimate:
    """Objective value in nats (mean over datapoints)."""
    value_nats: float
    spec: ObjectiveSpec
    per_example: Optional[np.ndarray] = None

    def total_bits(self):
        return nats_to_bits(-self.value_nats)

    def bpd(self, dim):
        return nats_to_bpd(-self.value_nats, dim)


def log_weights(x, dequantizer, model, k, rng):
    """(B, K) tensor of log importance weights, K i.i.d. draws per row of x."""
    sample = dequantizer.sample(x, k, rng)
    log_p = model.log_prob(sample.v)
    w = dc.sub(log_p, sample.log_q)
    if not np.all(np.isfinite(w.data)):
        bad = int(np.flatnonzero(~np.isfinite(w.data))[0])
        raise NumericError(f"non-finite log-weight for datapoint {bad // k} "
                           f"(draw {bad % k})")
    return dc.reshape(w, (x.shape[0], k))


def iw_from_weights(w):
    k = w.shape[1]
    return dc.sub(dc.logsumexp(w, 1), math.log(k))


def renyi_from_weights(w, alpha):
    k = w.shape[1]
    scale = 1.0 - alpha
    scaled = dc.mul(w, scale)
    return dc.mul(dc.sub(dc.logsumexp(scaled, 1), math.log(k)), 1.0 / scale)


def vrmax_from_weights(w):
    return dc.max_over_axis(w, 1)


def combine_weights(spec, w):
    if spec.kind in ("vi", "iw"):
        return iw_from_weights(w)
    if spec.kind == "renyi":
        return renyi_from_weights(w, spec.alpha)
    return vrmax_from_weights(w)


def vi_bound(x, dequantizer, model, rng):
    """Single-draw variational bound per datapoint, (B,)."""
    return iw_bound(x, dequantizer, model, 1, rng)


def iw_bound(x, dequantizer, model, k, rng):
    """K-draw importance-weighted bound per datapoint, (B,)."""
    return iw_from_weights(log_weights(x, dequantizer, model, k, rng))


def renyi_bound(x, dequantizer, model, k, alpha, rng):
    if alpha >= 1.0:
        raise ConfigError("renyi alpha must be < 1")
    return renyi_from_weights(log_weights(x, dequantizer, model, k, rng),
                              alpha)


def vrmax_bound(x, dequantizer, model, k, rng):
    """Largest-weight bound; the gradient touches only the argmax draw."""
    return vrmax_from_weights(log_weights(x, dequantizer, model, k, rng))


def objective_bound(spec, x, dequantizer, model, rng):
    return combine_weights(spec, log_weights(x, dequantizer, model,
                                             spec.k, rng))


@dataclass
class EvalReport:
    """vi and iw-K means over a dataset, with the gap between them.

    The gap (iw minus vi, >= 0 in expectation) is the quantity the tables
    report as the divergence of the dequantizer from the model posterior.
    """
    vi: BoundEstimate
    iw: BoundEstimate
    dim: int
    n: int

    @property
    def gap_nats(self):
        return self.iw.value_nats - self.vi.value_nats

    @property
    def vi_bits(self):
        return self.vi.total_bits()

    @property
    def iw_bits(self):
        return self.iw.total_bits()

    @property
    def gap_bits(self):
        return self.vi_bits - self.iw_bits

    @property
    def vi_bpd(self):
        return self.vi.bpd(self.dim)

    @property
    def iw_bpd(self):
        return self.iw.bpd(self.dim)

    @property
    def gap_bpd(self):
        return self.vi_bpd - self.iw_bpd


def _worker_count():
    raw = os.environ.get("DQLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def evaluate_loglik(x, dequantizer, model, k_eval, rng, chunk_size=4096):
    """Frozen-model evaluation over a dataset: mean iw-K and vi bounds.

    Deterministic given the rng state regardless of worker count: every
    chunk draws from its own pre-derived stream and results are reduced in
    chunk order. DQLAB_THREADS caps the worker pool.
    """
    x = np.asarray(x)
    n = x.shape[0]
    chunks = [x[i:i + chunk_size] for i in range(0, n, chunk_size)]
    seeds = rng.integers(0, 2**63 - 1, size=(len(chunks), 2))

    def run(args):
        xc, seed_pair = args
        crng = np.random.default_rng(seed_pair)
        iw = iw_bound(xc, dequantizer, model, k_eval, crng).data
        vi = vi_bound(xc, dequantizer, model, crng).data
        return iw, vi

    workers = min(_worker_count(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, zip(chunks, seeds)))
    else:
        results = [run(a) for a in zip(chunks, seeds)]
    iw_all = np.concatenate([r[0] for r in results])
    vi_all = np.concatenate([r[1] for r in results])
    dim = x.shape[1]
    return EvalReport(
        vi=BoundEstimate(float(vi_all.mean()), ObjectiveSpec("vi"), vi_all),
        iw=BoundEstimate(float(iw_all.mean()),
                         ObjectiveSpec("iw", k=k_eval), iw_all),
        dim=dim, n=n)
