"""Shared test helpers.

The finite-difference gradient here is the reference implementation the
autodiff checks are judged against.  It only ever calls the forward pass, so
it stays independent of the backward code paths it is used to verify.
"""

import numpy as np


def fd_grad(fn, params, h=1e-5):
    """Central finite differences of a scalar function of several arrays.

    fn: callable taking a list of float64 arrays, returning a python float.
    params: list of arrays; each is perturbed one element at a time.
    Returns a list of gradient arrays of matching shapes.
    """
    grads = []
    for pi, p in enumerate(params):
        g = np.zeros_like(p, dtype=np.float64)
        flat = g.reshape(-1)
        base = [q.copy() for q in params]
        for i in range(p.size):
            plus = [q.copy() for q in base]
            minus = [q.copy() for q in base]
            plus[pi].reshape(-1)[i] += h
            minus[pi].reshape(-1)[i] -= h
            flat[i] = (fn(plus) - fn(minus)) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol, atol=1e-8):
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n)
        bound = atol + rtol * np.abs(n)
        worst = np.max(err - bound)
        assert np.all(err <= bound), (
            f"gradient mismatch: worst excess {worst:.3e}, "
            f"max |analytic-fd| {err.max():.3e}"
        )
