"""Parameter containers and small networks built on the autodiff core.

Initialization convention: linear weights ~ Uniform(±1/sqrt(fan_in)),
biases zero; layers feeding flow scales/shifts are zero-initialized so the
enclosing transform starts neutral.
"""
import math

import numpy as np

from . import diffcore as dc

LOG_2PI = math.log(2.0 * math.pi)


class Module:
    """Tree of named parameters; insertion order is the canonical order."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def param(self, name, array):
        t = dc.parameter(np.asarray(array, dtype=np.float64))
        self._params[name] = t
        return t

    def child(self, name, module):
        self._children[name] = module
        return module

    def parameters(self):
        out = dict(self._params)
        for cname, c in self._children.items():
            for k, t in c.parameters().items():
                out[f"{cname}.{k}"] = t
        return out

    def zero_grads(self):
        for t in self.parameters().values():
            t.zero_grad()


def uniform_init(rng, n_in, n_out):
    bound = 1.0 / math.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_in, n_out))


class Linear(Module):
    def __init__(self, rng, n_in, n_out, zero_init=False):
        super().__init__()
        w = np.zeros((n_in, n_out)) if zero_init else uniform_init(rng, n_in, n_out)
        self.w = self.param("w", w)
        self.b = self.param("b", np.zeros(n_out))

    def __call__(self, x):
        return dc.add_rowvec(dc.matmul(x, self.w), self.b)


class MLP(Module):
    """Dense layers with tanh between; optional zero-initialized final layer."""

    def __init__(self, rng, n_in, hidden, n_out, zero_final=False):
        super().__init__()
        self.layers = []
        sizes = [n_in] + list(hidden) + [n_out]
        for i in range(len(sizes) - 1):
            last = i == len(sizes) - 2
            layer = Linear(rng, sizes[i], sizes[i + 1],
                           zero_init=zero_final and last)
            self.child(f"lin{i}", layer)
            self.layers.append(layer)

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = dc.tanh(x)
        return x


def autoregressive_masks(dim, hidden, n_context, out_per_dim):
    """Strict MADE-style masks for inputs [eps | context].

    Input degrees: eps_j -> j+1, context -> 0. Hidden degrees cycle over
    0..dim-1, so output i (degree i+1) reaches only hidden units of lower
    degree, hence only eps_<i and the context.
    """
    deg_in = np.concatenate([np.arange(1, dim + 1),
                             np.zeros(n_context, dtype=np.int64)])
    deg_hidden = np.arange(hidden) % dim
    deg_out = np.tile(np.arange(1, dim + 1), out_per_dim)
    mask1 = (deg_hidden[None, :] >= deg_in[:, None]).astype(np.float64)
    mask2 = (deg_out[None, :] > deg_hidden[:, None]).astype(np.float64)
    return mask1, mask2


class MaskedAutoregressiveNet(Module):
    """Two masked linear layers with tanh between.

    Maps [eps | context] (B, dim + n_context) to (B, out_per_dim * dim);
    output block i depends only on eps_<i and the context.
    """

    def __init__(self, rng, dim, hidden, n_context, out_per_dim=2,
                 zero_final=True):
        super().__init__()
        self.dim = dim
        m1, m2 = autoregressive_masks(dim, hidden, n_context, out_per_dim)
        self.mask1, self.mask2 = m1, m2
        self.w1 = self.param("w1", uniform_init(rng, dim + n_context, hidden))
        self.b1 = self.param("b1", np.zeros(hidden))
        w2 = (np.zeros((hidden, out_per_dim * dim)) if zero_final
              else uniform_init(rng, hidden, out_per_dim * dim))
        self.w2 = self.param("w2", w2)
        self.b2 = self.param("b2", np.zeros(out_per_dim * dim))

    def __call__(self, eps, context):
        x = dc.concat_cols([eps, context]) if context is not None else eps
        h = dc.tanh(dc.add_rowvec(dc.masked_matmul(x, self.w1, self.mask1),
                                  self.b1))
        return dc.add_rowvec(dc.masked_matmul(h, self.w2, self.mask2), self.b2)


def tile_vector(vec, rows):
    """Align a (D,) parameter with a (rows, D) batch, explicitly."""
    d = vec.shape[0]
    return dc.repeat_rows(dc.reshape(vec, (1, d)), rows)


def gaussian_logpdf(z, mean, log_sigma):
    """Row-wise diagonal-Gaussian log-density; all arguments (B, D)."""
    inv = dc.exp(dc.neg(log_sigma))
    delta = dc.mul(dc.sub(z, mean), inv)
    sq = dc.mul(delta, delta)
    per_dim = dc.sub(dc.mul(sq, -0.5), log_sigma)
    d = z.shape[1]
    return dc.add(dc.sum_over_axis(per_dim, 1), -0.5 * d * LOG_2PI)
