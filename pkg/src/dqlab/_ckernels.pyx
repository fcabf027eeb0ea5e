# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the numpy kernels in _npkernels.py.

Fused single-pass loops over contiguous float64 buffers; these are the hot
inner kernels of training (activations, their backward passes, Adam).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp as c_exp, log as c_log, log1p, tanh as c_tanh, \
    sqrt as c_sqrt, fabs, pow as c_pow

cnp.import_array()

name = "compiled"


cdef inline double _sigmoid(double x) nogil:
    return 1.0 / (1.0 + c_exp(-x))


cdef inline double _softplus(double x) nogil:
    return (x if x > 0.0 else 0.0) + log1p(c_exp(-fabs(x)))


def sigmoid(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = _sigmoid(xv[i])
    return out


def sigmoid_bwd(cnp.ndarray y, cnp.ndarray gout, cnp.ndarray gacc):
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = gout.ravel()
    cdef double[::1] av = gacc.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    for i in range(n):
        av[i] += gv[i] * (yv[i] * (1.0 - yv[i]))


def softplus(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = _softplus(xv[i])
    return out


def softplus_bwd(cnp.ndarray x, cnp.ndarray gout, cnp.ndarray gacc):
    cdef double[::1] xv = x.ravel()
    cdef double[::1] gv = gout.ravel()
    cdef double[::1] av = gacc.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        av[i] += gv[i] * _sigmoid(xv[i])


def log_sigmoid(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = -_softplus(-xv[i])
    return out


def log_sigmoid_bwd(cnp.ndarray x, cnp.ndarray gout, cnp.ndarray gacc):
    cdef double[::1] xv = x.ravel()
    cdef double[::1] gv = gout.ravel()
    cdef double[::1] av = gacc.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        av[i] += gv[i] * _sigmoid(-xv[i])


def tanh(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = c_tanh(xv[i])
    return out


def tanh_bwd(cnp.ndarray y, cnp.ndarray gout, cnp.ndarray gacc):
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = gout.ravel()
    cdef double[::1] av = gacc.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    for i in range(n):
        av[i] += gv[i] * (1.0 - yv[i] * yv[i])


def exp(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = c_exp(xv[i])
    return out


def exp_bwd(cnp.ndarray y, cnp.ndarray gout, cnp.ndarray gacc):
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = gout.ravel()
    cdef double[::1] av = gacc.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    for i in range(n):
        av[i] += gv[i] * yv[i]


def log(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = c_log(xv[i])
    return out


def log_bwd(cnp.ndarray x, cnp.ndarray gout, cnp.ndarray gacc):
    cdef double[::1] xv = x.ravel()
    cdef double[::1] gv = gout.ravel()
    cdef double[::1] av = gacc.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        av[i] += gv[i] / xv[i]


def adam_update(cnp.ndarray param, cnp.ndarray grad, cnp.ndarray m,
                cnp.ndarray v, long step, double lr, double beta1,
                double beta2, double eps):
    cdef double[::1] pv = param.ravel()
    cdef double[::1] gv = grad.ravel()
    cdef double[::1] mv = m.ravel()
    cdef double[::1] vv = v.ravel()
    cdef double bc1 = 1.0 - c_pow(beta1, step)
    cdef double bc2 = 1.0 - c_pow(beta2, step)
    cdef Py_ssize_t i, n = pv.shape[0]
    for i in range(n):
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i]
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * (gv[i] * gv[i])
        pv[i] -= lr * (mv[i] / bc1) / (c_sqrt(vv[i] / bc2) + eps)
