"""Pure-numpy implementations of the hot numeric kernels.

Forward kernels return a fresh float64 array. Backward kernels accumulate
``gout * f'`` into ``gacc`` in place, matching the compiled twins in
``_ckernels.pyx`` element for element.
"""
import numpy as np

name = "python"


def sigmoid(x):
    # float64-safe: exp overflow saturates to the correct limit, never NaN
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid_bwd(y, gout, gacc):
    gacc += gout * (y * (1.0 - y))


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_bwd(x, gout, gacc):
    gacc += gout * sigmoid(x)


def log_sigmoid(x):
    return -softplus(-x)


def log_sigmoid_bwd(x, gout, gacc):
    gacc += gout * sigmoid(-x)


def tanh(x):
    return np.tanh(x)


def tanh_bwd(y, gout, gacc):
    gacc += gout * (1.0 - y * y)


def exp(x):
    return np.exp(x)


def exp_bwd(y, gout, gacc):
    gacc += gout * y


def log(x):
    return np.log(x)


def log_bwd(x, gout, gacc):
    gacc += gout / x


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """Fused Adam update with bias correction, in place."""
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
