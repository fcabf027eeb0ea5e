"""Dequantizing distributions q(u|x) over the unit hypercube bin.

All four families support drawing u together with its exact log-density,
differentiably through the reparameterized path. They are used in the
sampling direction only; the autoregressive family is never inverted
anywhere in training or evaluation.

Sampling returns K draws per datapoint flattened row-major: row b*K + k is
draw k for datapoint b.
"""
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import NumericError
from .nets import MLP, Linear, MaskedAutoregressiveNet, Module, gaussian_logpdf

EPS_CLAMP = 1e-6


@dataclass
class DequantSample:
    """u in the open unit cube, its log-density (nats), and v = x + u."""
    u: dc.Tensor        # (N, D)
    log_q: dc.Tensor    # (N,)
    v: dc.Tensor        # (N, D)


def _check_finite(t, what):
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite {what} in dequantizer")


def _scaled_inputs(x, bit_depth):
    hi = (1 << bit_depth) - 1
    scale = 1.0 / hi if hi > 0 else 1.0
    return dc.constant(x.astype(np.float64) * scale)


def _squash(z, x_rep):
    """Map pre-noise z through the sigmoid onto the bin anchored at x.

    Returns (u, v, jac) where jac is the per-row log-volume term
    sum_i [log u_i + log(1-u_i)], computed stably from z.
    """
    u = dc.clip(dc.sigmoid(z), EPS_CLAMP, 1.0 - EPS_CLAMP)
    v = dc.add(dc.constant(x_rep.astype(np.float64)), u)
    jac = dc.sum_over_axis(
        dc.add(dc.log_sigmoid(z), dc.log_sigmoid(dc.neg(z))), 1)
    return u, v, jac


class UniformDequantizer(Module):
    """Uniform noise over the bin; log-density identically zero."""

    def __init__(self, dim, bit_depth=1):
        super().__init__()
        self.dim = dim
        self.bit_depth = bit_depth

    def sample(self, x, k, rng):
        n = x.shape[0] * k
        u = rng.uniform(EPS_CLAMP, 1.0 - EPS_CLAMP, size=(n, self.dim))
        x_rep = np.repeat(x, k, axis=0)
        return DequantSample(u=dc.constant(u),
                             log_q=dc.constant(np.zeros(n)),
                             v=dc.constant(x_rep + u))


class LogitNormalDequantizer(Module):
    """Conditional Gaussian pushed through the sigmoid.

    A conditioning net maps x to per-dimension mean and log scale; its final
    layer starts at zero so the initial distribution is logit-standard-normal.
    """

    def __init__(self, rng, dim, bit_depth=1, width=64):
        super().__init__()
        self.dim = dim
        self.bit_depth = bit_depth
        self.cond = self.child("cond", MLP(rng, dim, [width], 2 * dim,
                                           zero_final=True))

    def _params_for(self, x, k):
        raw = self.cond(_scaled_inputs(x, self.bit_depth))
        _check_finite(raw, "conditioning output")
        raw = dc.repeat_rows(raw, k)
        mean = dc.slice_cols(raw, 0, self.dim)
        log_sigma = dc.slice_cols(raw, self.dim, 2 * self.dim)
        return mean, log_sigma

    def sample(self, x, k, rng):
        mean, log_sigma = self._params_for(x, k)
        n = x.shape[0] * k
        noise = dc.constant(rng.standard_normal((n, self.dim)))
        z = dc.add(dc.mul(dc.exp(log_sigma), noise), mean)
        x_rep = np.repeat(x, k, axis=0)
        u, v, jac = _squash(z, x_rep)
        log_q = dc.sub(gaussian_logpdf(z, mean, log_sigma), jac)
        return DequantSample(u=u, log_q=log_q, v=v)

    def log_q_at(self, u, x):
        """Exact log-density at given u; used for quadrature checks."""
        u = np.asarray(u, dtype=np.float64)
        z = dc.constant(np.log(u) - np.log1p(-u))
        mean, log_sigma = self._params_for(x, 1)
        jac = np.sum(np.log(u) + np.log1p(-u), axis=1)
        return gaussian_logpdf(z, mean, log_sigma).data - jac


class ConditionalCoupling(Module):
    """Coupling layer in the generative direction, conditioned on context:
    the pass-through block and context parameterize an affine map of the
    rest, with scale sigmoid(raw + 2).

    ``unit_scale`` pins the scale to exactly 1 (diagnostic hook; the sigmoid
    parameterization cannot reach it)."""

    def __init__(self, rng, dim, n_context, width=64, unit_scale=False):
        super().__init__()
        self.dim = dim
        self.split = (dim + 1) // 2
        self.unit_scale = unit_scale
        n_out = dim - self.split
        self.net = self.child("net", MLP(rng, self.split + n_context,
                                         [width, width], 2 * n_out,
                                         zero_final=True))

    def _heads(self, e1, h):
        raw = self.net(dc.concat_cols([e1, h]))
        n = self.dim - self.split
        raw_s = dc.slice_cols(raw, 0, n)
        t = dc.slice_cols(raw, n, 2 * n)
        return raw_s, t

    def forward_gen(self, eps, h):
        e1 = dc.slice_cols(eps, 0, self.split)
        e2 = dc.slice_cols(eps, self.split, self.dim)
        raw_s, t = self._heads(e1, h)
        if self.unit_scale:
            z2 = dc.add(e2, t)
            logdet = dc.constant(np.zeros(eps.shape[0]))
        else:
            shifted = dc.add(raw_s, 2.0)
            s = dc.sigmoid(shifted)
            assert np.all(s.data > 0.0), "coupling scale must stay positive"
            z2 = dc.affine(e2, s, t)
            logdet = dc.sum_over_axis(dc.log_sigmoid(shifted), 1)
        return dc.concat_cols([e1, z2]), logdet

    def invert_gen(self, z, h):
        """No-grad inverse (z, h numpy) -> (eps, logdet of the forward)."""
        z1 = z[:, :self.split]
        raw_s, t = self._heads(dc.constant(z1), dc.constant(h))
        if self.unit_scale:
            e2 = z[:, self.split:] - t.data
            logdet = np.zeros(z.shape[0])
        else:
            shifted = raw_s.data + 2.0
            s = 1.0 / (1.0 + np.exp(-shifted))
            e2 = (z[:, self.split:] - t.data) / s
            logdet = np.log(s).sum(axis=1)
        return np.concatenate([z1, e2], axis=1), logdet


class BipartiteFlowDequantizer(Module):
    """Conditional coupling flow over a conditional diagonal-Gaussian base,
    squashed onto the bin by the sigmoid. Layers alternate with a fixed
    reversal permutation."""

    def __init__(self, rng, dim, bit_depth=1, n_layers=4, width=64,
                 n_context=16, context_width=64):
        super().__init__()
        if dim < 2:
            raise ValueError("bipartite dequantization needs dim >= 2")
        self.dim = dim
        self.bit_depth = bit_depth
        self.context_net = self.child(
            "context", MLP(rng, dim, [context_width], n_context))
        self.base_head = self.child(
            "base", Linear(rng, n_context, 2 * dim, zero_init=True))
        self.layers = []
        for i in range(n_layers):
            layer = ConditionalCoupling(rng, dim, n_context, width)
            self.child(f"coupling{i}", layer)
            self.layers.append(layer)
        self._perm = np.arange(dim)[::-1].copy()

    def _context(self, x, k):
        h = self.context_net(_scaled_inputs(x, self.bit_depth))
        _check_finite(h, "context")
        return dc.repeat_rows(h, k)

    def _base_params(self, h):
        raw = self.base_head(h)
        mean = dc.slice_cols(raw, 0, self.dim)
        log_sigma = dc.slice_cols(raw, self.dim, 2 * self.dim)
        return mean, log_sigma

    def sample(self, x, k, rng):
        h = self._context(x, k)
        mean, log_sigma = self._base_params(h)
        n = x.shape[0] * k
        noise = dc.constant(rng.standard_normal((n, self.dim)))
        eps = dc.add(dc.mul(dc.exp(log_sigma), noise), mean)
        log_q = gaussian_logpdf(eps, mean, log_sigma)
        z = eps
        for layer in self.layers:
            z, logdet = layer.forward_gen(z, h)
            log_q = dc.sub(log_q, logdet)
            z = dc.permute_cols(z, self._perm)
        x_rep = np.repeat(x, k, axis=0)
        u, v, jac = _squash(z, x_rep)
        return DequantSample(u=u, log_q=dc.sub(log_q, jac), v=v)

    def log_q_at(self, u, x):
        """Exact log-density at given u via closed-form coupling inversion
        (bipartite layers invert cheaply; this is test/diagnostic surface)."""
        u = np.asarray(u, dtype=np.float64)
        h = self._context(x, 1)
        z = np.log(u) - np.log1p(-u)
        total = np.sum(np.log(u) + np.log1p(-u), axis=1)
        for layer in reversed(self.layers):
            z = z[:, np.argsort(self._perm)]
            z, logdet = layer.invert_gen(z, h.data)
            total += logdet
        mean, log_sigma = self._base_params(h)
        base = gaussian_logpdf(dc.constant(z), mean, log_sigma).data
        return base - total


class AutoregressiveDequantizer(Module):
    """Masked autoregressive transform of a conditional Gaussian base.

    One parallel pass produces shift m and scale s = sigmoid(raw + 2) with
    strict triangular dependency on the base noise; z = s * eps + m, squashed
    by the sigmoid. Sampling never requires a sequential inverse.
    """

    def __init__(self, rng, dim, bit_depth=1, width=64, n_context=16,
                 context_width=64, unit_scale=False):
        super().__init__()
        self.dim = dim
        self.bit_depth = bit_depth
        self.unit_scale = unit_scale
        self.context_net = self.child(
            "context", MLP(rng, dim, [context_width], n_context))
        self.base_head = self.child(
            "base", Linear(rng, n_context, 2 * dim, zero_init=True))
        self.arm = self.child(
            "arm", MaskedAutoregressiveNet(rng, dim, width, n_context,
                                           out_per_dim=2, zero_final=True))
        self._check_masks(n_context)

    def _check_masks(self, n_context):
        reach = (self.arm.mask1 @ self.arm.mask2) > 0  # input -> output paths
        for j in range(self.dim):          # eps_j is input row j
            for i in range(self.dim):      # outputs for dim i live at i, dim+i
                if i <= j and (reach[j, i] or reach[j, self.dim + i]):
                    raise ValueError("autoregressive masks violate strictness")

    def _context(self, x, k):
        h = self.context_net(_scaled_inputs(x, self.bit_depth))
        _check_finite(h, "context")
        return dc.repeat_rows(h, k)

    def _base_params(self, h):
        raw = self.base_head(h)
        return (dc.slice_cols(raw, 0, self.dim),
                dc.slice_cols(raw, self.dim, 2 * self.dim))

    def heads(self, eps, h):
        """ARM outputs for noise eps under context h: (m, raw_s)."""
        out = self.arm(eps, h)
        _check_finite(out, "autoregressive output")
        m = dc.slice_cols(out, 0, self.dim)
        raw_s = dc.slice_cols(out, self.dim, 2 * self.dim)
        return m, raw_s

    def sample(self, x, k, rng):
        h = self._context(x, k)
        mean, log_sigma = self._base_params(h)
        n = x.shape[0] * k
        noise = dc.constant(rng.standard_normal((n, self.dim)))
        eps = dc.add(dc.mul(dc.exp(log_sigma), noise), mean)
        log_q = gaussian_logpdf(eps, mean, log_sigma)
        m, raw_s = self.heads(eps, h)
        if self.unit_scale:
            z = dc.add(eps, m)
        else:
            shifted = dc.add(raw_s, 2.0)
            s = dc.sigmoid(shifted)
            assert np.all(s.data > 0.0), "autoregressive scale must stay positive"
            z = dc.affine(eps, s, m)
            log_q = dc.sub(log_q, dc.sum_over_axis(dc.log_sigmoid(shifted), 1))
        x_rep = np.repeat(x, k, axis=0)
        u, v, jac = _squash(z, x_rep)
        return DequantSample(u=u, log_q=dc.sub(log_q, jac), v=v)


DEQUANT_KINDS = ("uniform", "logitnormal", "bipartite", "ard")


def build_dequantizer(kind, rng, dim, bit_depth, width=64, n_layers=4,
                      n_context=16):
    if kind == "uniform":
        return UniformDequantizer(dim, bit_depth)
    if kind == "logitnormal":
        return LogitNormalDequantizer(rng, dim, bit_depth, width=width)
    if kind == "bipartite":
        return BipartiteFlowDequantizer(rng, dim, bit_depth, n_layers=n_layers,
                                        width=width, n_context=n_context)
    if kind == "ard":
        return AutoregressiveDequantizer(rng, dim, bit_depth, width=width,
                                         n_context=n_context)
    raise ValueError(f"unknown dequantizer kind {kind!r}")
