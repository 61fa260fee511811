"""Shared numerical oracles for the test suite.

The finite-difference helpers here are deliberately independent of the
package's own differentiation code: they only ever call forward functions.
"""

import numpy as np


def numerical_gradient(f, x, step=1e-5):
    """Central-difference gradient of scalar f at x (any shape)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x, flat_g = x.ravel(), g.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + step
        fp = f(x)
        flat_x[i] = orig - step
        fm = f(x)
        flat_x[i] = orig
        flat_g[i] = (fp - fm) / (2.0 * step)
    return g


def rel_error(analytic, numeric, floor=1e-8):
    """Max-norm relative disagreement between two gradient arrays."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / denom)
