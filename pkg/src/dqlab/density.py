"""Continuous density models: diagonal Gaussian, covariance Gaussian via a
Cholesky-parameterized precision, and a multi-level coupling flow.

All three expose exact ``log_prob`` (differentiable, (B,) per-example nats)
and exact ``sample`` (plain numpy, no gradients).
"""
import math

import numpy as np
from scipy.linalg import solve_triangular

from . import diffcore as dc
from .nets import LOG_2PI, MLP, Module, gaussian_logpdf, tile_vector


def _as_batch(v):
    t = dc.constant(v)
    if t.ndim != 2:
        raise ValueError("density models expect (B, D) input")
    return t


class DiagGaussianModel(Module):
    """Independent Gaussian per dimension, parameterized by mean and log scale."""

    def __init__(self, dim, bit_depth=1):
        super().__init__()
        self.dim = dim
        center = 0.5 * (1 << bit_depth)
        self.mean = self.param("mean", np.full(dim, center))
        self.log_scale = self.param("log_scale", np.zeros(dim))

    def log_prob(self, v):
        v = _as_batch(v)
        rows = v.shape[0]
        return gaussian_logpdf(v, tile_vector(self.mean, rows),
                               tile_vector(self.log_scale, rows))

    def sample(self, n, rng):
        eps = rng.standard_normal((n, self.dim))
        return self.mean.data + np.exp(self.log_scale.data) * eps


class CovGaussianModel(Module):
    """Full-covariance Gaussian; the precision is L L^T with L lower
    triangular and a separately parameterized log diagonal, so positive
    definiteness holds by construction. The covariance is its inverse."""

    def __init__(self, dim, bit_depth=1):
        super().__init__()
        self.dim = dim
        center = 0.5 * (1 << bit_depth)
        self.mean = self.param("mean", np.full(dim, center))
        self.l_offdiag = self.param("l_offdiag", np.zeros((dim, dim)))
        self.log_diag = self.param("log_diag", np.zeros(dim))
        self._lower_mask = np.tril(np.ones((dim, dim)), k=-1)

    def _chol(self):
        strict = dc.mul(self.l_offdiag, dc.constant(self._lower_mask))
        return dc.add(strict, dc.diag_embed(dc.exp(self.log_diag)))

    def log_prob(self, v):
        v = _as_batch(v)
        rows = v.shape[0]
        centered = dc.sub(v, tile_vector(self.mean, rows))
        y = dc.matmul(centered, self._chol())  # row b holds L^T (v_b - mean)
        quad = dc.sum_over_axis(dc.mul(y, y), 1)
        half_logdet = dc.sum_over_axis(self.log_diag, 0)
        const = -0.5 * self.dim * LOG_2PI
        return dc.add(dc.add(dc.mul(quad, -0.5), half_logdet), const)

    def chol_matrix(self):
        return self._chol().data

    def covariance(self):
        ell = self.chol_matrix()
        return np.linalg.inv(ell @ ell.T)

    def sample(self, n, rng):
        eps = rng.standard_normal((n, self.dim))
        ell = self.chol_matrix()
        # Sigma = (L L^T)^{-1}, so v = mean + L^{-T} eps
        return self.mean.data + solve_triangular(ell.T, eps.T, lower=False).T


class LinearMix(Module):
    """Learned invertible linear map in LU form: W = P (L+I) (U + diag e^s).

    The log-determinant is the sum of the log diagonal; inversion solves the
    two triangular factors.
    """

    def __init__(self, rng, dim, permutation=None):
        super().__init__()
        self.dim = dim
        if permutation is None:
            permutation = rng.permutation(dim)
        self.perm = np.asarray(permutation)
        p = np.zeros((dim, dim))
        p[self.perm, np.arange(dim)] = 1.0
        self._p = p
        self._mask_l = np.tril(np.ones((dim, dim)), k=-1)
        self._mask_u = np.triu(np.ones((dim, dim)), k=1)
        self._eye = np.eye(dim)
        self.l_raw = self.param("l_raw", np.zeros((dim, dim)))
        self.u_raw = self.param("u_raw", np.zeros((dim, dim)))
        self.log_s = self.param("log_s", np.zeros(dim))

    def _factors(self):
        lower = dc.add(dc.mul(self.l_raw, dc.constant(self._mask_l)),
                       dc.constant(self._eye))
        upper = dc.add(dc.mul(self.u_raw, dc.constant(self._mask_u)),
                       dc.diag_embed(dc.exp(self.log_s)))
        return lower, upper

    def weight(self):
        lower, upper = self._factors()
        return dc.matmul(dc.constant(self._p), dc.matmul(lower, upper))

    def forward(self, z):
        out = dc.matmul(z, dc.transpose(self.weight()))
        logdet = dc.sum_over_axis(self.log_s, 0)
        return out, logdet

    def invert(self, z):
        lower, upper = self._factors()
        rhs = self._p.T @ z.T
        y = solve_triangular(lower.data, rhs, lower=True, unit_diagonal=True)
        return solve_triangular(upper.data, y, lower=False).T


class DensityCoupling(Module):
    """Affine coupling: the first ceil(D/2) coordinates pass through and
    parameterize scale/shift of the rest. Scale is exp(2 tanh(raw)), so the
    zero-initialized net gives the identity."""

    def __init__(self, rng, dim, width):
        super().__init__()
        self.dim = dim
        self.split = (dim + 1) // 2
        n_out = dim - self.split
        self.net = self.child("net", MLP(rng, self.split, [width, width],
                                         2 * n_out, zero_final=True))

    def _heads(self, z1):
        raw = self.net(z1)
        n = self.dim - self.split
        log_s = dc.mul(dc.tanh(dc.slice_cols(raw, 0, n)), 2.0)
        t = dc.slice_cols(raw, n, 2 * n)
        return log_s, t

    def forward(self, z):
        z1 = dc.slice_cols(z, 0, self.split)
        z2 = dc.slice_cols(z, self.split, self.dim)
        log_s, t = self._heads(z1)
        z2 = dc.affine(z2, dc.exp(log_s), t)
        return dc.concat_cols([z1, z2]), dc.sum_over_axis(log_s, 1)

    def invert(self, z):
        z1 = z[:, :self.split]
        log_s, t = self._heads(dc.constant(z1))
        z2 = (z[:, self.split:] - t.data) * np.exp(-log_s.data)
        return np.concatenate([z1, z2], axis=1)


class _Level:
    def __init__(self, subflows, prior, split_dim):
        self.subflows = subflows  # list of (LinearMix, DensityCoupling)
        self.prior = prior        # MLP or None
        self.split_dim = split_dim


class FlowDensityModel(Module):
    """Coupling flow with invertible linear mixes, multi-level factor-out,
    and a standard-normal base on the residual dimensions.

    Input is first normalized linearly to [-1, 1) from the integer range
    implied by ``bit_depth``.
    """

    def __init__(self, rng, dim, bit_depth=1, levels=1, subflows=8, width=64):
        super().__init__()
        self.dim = dim
        self.center = 0.5 * (1 << bit_depth)
        self.scale = 0.5 * (1 << bit_depth)
        self.levels = []
        d = dim
        for lvl in range(levels):
            flows = []
            for sf in range(subflows):
                mix = self.child(f"lvl{lvl}.mix{sf}", LinearMix(rng, d))
                coup = self.child(f"lvl{lvl}.coup{sf}",
                                  DensityCoupling(rng, d, width))
                flows.append((mix, coup))
            last = lvl == levels - 1
            prior = None
            split_dim = 0
            if not last:
                split_dim = d // 2
                if split_dim == 0:
                    raise ValueError("too many levels for this dimension")
                keep = d - split_dim
                prior = self.child(f"lvl{lvl}.prior",
                                   MLP(rng, keep, [width, width],
                                       2 * split_dim, zero_final=True))
                d = keep
            self.levels.append(_Level(flows, prior, split_dim))
        self.residual_dim = d

    def _normalize(self, v):
        z = dc.affine(v, 1.0 / self.scale, -self.center / self.scale)
        return z, -self.dim * math.log(self.scale)

    def log_prob(self, v):
        v = _as_batch(v)
        rows = v.shape[0]
        z, logdet0 = self._normalize(v)
        total = dc.constant(np.zeros(rows))
        for level in self.levels:
            for mix, coup in level.subflows:
                z, ld_mix = mix.forward(z)
                z, ld_coup = coup.forward(z)
                total = dc.add(dc.add(total, ld_coup), ld_mix)
            if level.prior is not None:
                d = z.shape[1]
                keep = d - level.split_dim
                z_keep = dc.slice_cols(z, 0, keep)
                z_out = dc.slice_cols(z, keep, d)
                raw = level.prior(z_keep)
                mean = dc.slice_cols(raw, 0, level.split_dim)
                log_sigma = dc.slice_cols(raw, level.split_dim,
                                          2 * level.split_dim)
                total = dc.add(total, gaussian_logpdf(z_out, mean, log_sigma))
                z = z_keep
        base = dc.add(dc.mul(dc.sum_over_axis(dc.mul(z, z), 1), -0.5),
                      -0.5 * self.residual_dim * LOG_2PI)
        return dc.add(dc.add(total, base), logdet0)

    def transform(self, v):
        """No-grad forward map v -> (latent, bijection log-det per row)."""
        t = dc.constant(np.asarray(v, dtype=np.float64))
        rows = t.shape[0]
        z, logdet0 = self._normalize(t)
        total = np.full(rows, logdet0)
        parts = []
        for level in self.levels:
            for mix, coup in level.subflows:
                z, ld_mix = mix.forward(z)
                z, ld_coup = coup.forward(z)
                total += ld_coup.data + ld_mix.data
            if level.prior is not None:
                keep = z.shape[1] - level.split_dim
                parts.append(z.data[:, keep:])
                z = dc.constant(z.data[:, :keep])
        parts.append(z.data)
        return np.concatenate(parts, axis=1), total

    def inverse_transform(self, eps):
        """Invert :meth:`transform`: latent columns back to data space."""
        eps = np.asarray(eps, dtype=np.float64)
        split_dims = [lv.split_dim for lv in self.levels if lv.prior is not None]
        offsets = np.concatenate([[0], np.cumsum(split_dims)]).astype(int)
        z = eps[:, offsets[-1]:]
        part_idx = len(split_dims)
        for level in reversed(self.levels):
            if level.prior is not None:
                part_idx -= 1
                part = eps[:, offsets[part_idx]:offsets[part_idx + 1]]
                z = np.concatenate([z, part], axis=1)
            for mix, coup in reversed(level.subflows):
                z = coup.invert(z)
                z = mix.invert(z)
        return z * self.scale + self.center

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.residual_dim))
        for level in reversed(self.levels):
            if level.prior is not None:
                raw = level.prior(dc.constant(z)).data
                mean = raw[:, :level.split_dim]
                log_sigma = raw[:, level.split_dim:]
                eps = rng.standard_normal((n, level.split_dim))
                z = np.concatenate([z, mean + np.exp(log_sigma) * eps], axis=1)
            for mix, coup in reversed(level.subflows):
                z = coup.invert(z)
                z = mix.invert(z)
        return z * self.scale + self.center


MODEL_KINDS = {
    "diag": DiagGaussianModel,
    "cov": CovGaussianModel,
    "flow": FlowDensityModel,
}


def build_model(kind, rng, dim, bit_depth, width=64, levels=1, subflows=8):
    if kind == "diag":
        return DiagGaussianModel(dim, bit_depth)
    if kind == "cov":
        return CovGaussianModel(dim, bit_depth)
    if kind == "flow":
        return FlowDensityModel(rng, dim, bit_depth, levels=levels,
                                subflows=subflows, width=width)
    raise ValueError(f"unknown density model kind {kind!r}")
