"""Central finite-difference probes shared by the unit and acceptance suites."""

import numpy as np


def probe(fn, arrays, grads, rng, n_probes=20, h=1e-6):
    """Largest relative error between analytic and numeric partials.

    ``fn()`` returns a scalar computed from the arrays in ``arrays`` (which
    are perturbed in place); ``grads`` are the analytic gradients in the same
    order. Each probe picks a random array and a random element.
    """
    worst = 0.0
    for _ in range(n_probes):
        k = int(rng.integers(len(arrays)))
        arr = arrays[k]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        up = fn()
        arr[idx] = old - h
        down = fn()
        arr[idx] = old
        numeric = (up - down) / (2 * h)
        analytic = float(grads[k][idx])
        err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, err)
    return worst
