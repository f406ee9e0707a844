"""Accelerated proximal gradient (FISTA) used by the inner solver and the references."""

import math

import numpy as np


def fista(value, grad, prox, x0, L, max_iter, restart=True, stop=None):
    """Minimize ``value = smooth + nonsmooth`` given ``grad`` of the smooth part.

    ``prox(v, t)`` is the prox of ``t * nonsmooth``. With ``restart`` the
    momentum is reset whenever the objective goes up (function-value
    restart), which keeps the iterates monotone. ``stop(k, x, fx, gm_norm)``
    may end the run early; ``gm_norm`` is the norm of the gradient mapping at
    the extrapolated point.

    Returns ``(x, fx, iterations)`` with ``x`` the best iterate seen.
    """
    L = max(float(L), 1e-300)
    x = np.array(x0, dtype=float)
    fx = value(x)
    y = x.copy()
    t = 1.0
    k = 0
    for k in range(1, max_iter + 1):
        xn = prox(y - grad(y) / L, 1.0 / L)
        fn = value(xn)
        gm = L * math.sqrt(float(np.sum((y - xn) ** 2)))
        if restart and fn > fx:
            # momentum overshot: restart from the best point
            y = x.copy()
            t = 1.0
            if stop is not None and stop(k, x, fx, gm):
                break
            continue
        tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = xn + ((t - 1.0) / tn) * (xn - x)
        if fn <= fx:
            x, fx = xn, fn
        t = tn
        if stop is not None and stop(k, x, fx, gm):
            break
    return x, fx, k
