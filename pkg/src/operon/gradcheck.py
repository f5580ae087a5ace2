"""Central finite-difference check of analytic MSE gradients."""

import numpy as np


def mse_gradients(model, functions, y, s):
    """Analytic gradient of the batch MSE, copied out of the model."""
    model.zero_grad()
    resid = model.forward(functions, y) - s
    model.backward(2.0 * resid / resid.size)
    grads = [g.copy() for g in model.gradients()]
    model.zero_grad()
    return grads


def finite_difference_gradients(model, functions, y, s, h=1e-6):
    def loss():
        r = model.predict(functions, y) - s
        return np.dot(r, r) / r.size

    out = []
    for p in model.parameters():
        g = np.empty_like(p)
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + h
            up = loss()
            p[i] = orig - h
            down = loss()
            p[i] = orig
            g[i] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def relative_errors(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)`` per entry, flattened.

    ``floor`` keeps finite-difference roundoff (about ``eps * loss / h``)
    from dominating the ratio for near-zero gradients.
    """
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_gradients(model, functions, y, s, h=1e-6):
    """Return ``(max_relative_error, analytic, numeric)``."""
    analytic = mse_gradients(model, functions, y, s)
    numeric = finite_difference_gradients(model, functions, y, s, h)
    return float(relative_errors(analytic, numeric).max()), analytic, numeric
