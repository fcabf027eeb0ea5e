"""Independent numerical oracles shared by the test modules.

Everything here is deliberately dumb and slow: central differences,
direct summation, midpoint/Gauss grids. None of it reuses the package's
differentiation or log-det code paths.
"""
import numpy as np

from dqlab import diffcore as dc


def finite_diff_grad(f, arrays, h=1e-5):
    """Central-difference gradient of scalar f(*arrays) w.r.t. each array.

    Mutates entries in place and restores them; arrays must be float64.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def reverse_grad(f, arrays):
    """Reverse-mode gradient of scalar-producing f over Tensor leaves."""
    leaves = [dc.parameter(a.copy()) for a in arrays]
    with dc.Tape() as tape:
        out = f(*leaves)
        tape.backward(out)
    return [lf.grad.copy() if lf.grad is not None else np.zeros_like(a)
            for lf, a in zip(leaves, arrays)], out.item()


def assert_close_rel(got, want, rtol, floor=1.0):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(floor, np.abs(want))
    err = np.max(np.abs(got - want) / denom) if got.size else 0.0
    assert err < rtol, f"max relative error {err:.3e} >= {rtol}"


def numerical_jacobian(f, x, h=1e-5):
    """Dense Jacobian of vector map f: R^n -> R^m by central differences."""
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(f(x))
    jac = np.zeros((y0.size, x.size))
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        jac[:, i] = (np.asarray(f(xp)).ravel() -
                     np.asarray(f(xm)).ravel()) / (2.0 * h)
    return jac


def grid_integral_2d(log_density, lo, hi, resolution):
    """Midpoint-rule integral of exp(log_density) over [lo,hi]^2.

    log_density takes an (N, 2) array of points and returns (N,) log values.
    """
    edges = np.linspace(lo, hi, resolution + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    cell = (hi - lo) / resolution
    g1, g2 = np.meshgrid(centers, centers, indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    vals = np.exp(np.asarray(log_density(pts)))
    return vals.sum() * cell * cell


def gauss_legendre_bin_integral(log_density, anchor, order=64):
    """∫ over the unit hypercube bin anchored at integer vector ``anchor``.

    Tensor-product Gauss-Legendre quadrature; exact to machine precision
    for smooth 2-D densities.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    # map [-1,1] -> [0,1]
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    a1, a2 = anchor
    g1, g2 = np.meshgrid(a1 + t, a2 + t, indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    vals = np.exp(np.asarray(log_density(pts))).reshape(order, order)
    return float(w @ vals @ w)
