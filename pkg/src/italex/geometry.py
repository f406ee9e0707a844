"""Level-set geometry of the outer functions and the basic proximal maps.

Each outer function knows how to project onto, and minimize a linear
function over, its sublevel sets ``{x : omega(x) <= alpha}``. It also
carries the constants ``(kappa, gamma)`` of its global error bound

    dist(x, Lev(alpha)) ** kappa <= gamma * max(omega(x) - alpha, 0)

which drive the level-set expansion.
"""

import math

import numpy as np

from .errors import InvalidArgument, UnsupportedConfiguration

# dual root-finding stops at this constraint residual (relative to the ellipsoid
# radius, or to max(1, alpha) for the elastic net) or after MAX_ROOT_ITERS
ROOT_TOL = 1e-10
MAX_ROOT_ITERS = 200
LEVEL_TOL = 1e-9


def level_tolerance(alpha):
    """Slack allowed when testing ``omega(x) <= alpha``."""
    return LEVEL_TOL * max(1.0, abs(alpha))


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def prox_l1(x, t):
    """Prox of ``t * ||.||_1`` (componentwise soft threshold)."""
    if t <= 0:
        raise InvalidArgument(f"prox_l1 needs t > 0, got {t}")
    return soft_threshold(np.asarray(x, dtype=float), t)


def prox_indicator(x, kind, lower=None, upper=None):
    """Projection onto the nonnegative orthant or a box ``[lower, upper]``."""
    x = np.asarray(x, dtype=float)
    if kind == "nonneg":
        return np.maximum(x, 0.0)
    if kind == "box":
        lo = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
        hi = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
        if np.any(lo > hi):
            raise InvalidArgument("box has lower > upper")
        return np.clip(x, lo, hi)
    raise InvalidArgument(f"unknown indicator kind {kind!r}")


def _sign_plus(v):
    # sign with sign(0) = +1 so LMO ties are reproducible
    return 1.0 if v >= 0 else -1.0


def project_l1_ball(x, r):
    """Euclidean projection onto ``{u : ||u||_1 <= r}`` (sort-based threshold)."""
    if r < 0:
        raise InvalidArgument(f"l1 ball radius must be >= 0, got {r}")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    if ax.sum() <= r:
        return x.copy()
    if r == 0:
        return np.zeros_like(x)
    mu = np.sort(ax)[::-1]
    cums = np.cumsum(mu)
    ks = np.arange(1, x.size + 1)
    k = np.nonzero(mu * ks > cums - r)[0][-1]
    theta = (cums[k] - r) / (k + 1.0)
    return np.sign(x) * np.maximum(ax - theta, 0.0)


def lmo_l1_ball(c, r):
    """Minimize ``<c, p>`` over the l1 ball: a signed vertex, lowest index wins ties."""
    if r < 0:
        raise InvalidArgument(f"l1 ball radius must be >= 0, got {r}")
    c = np.asarray(c, dtype=float)
    p = np.zeros_like(c)
    i = int(np.argmax(np.abs(c)))
    p[i] = -r * _sign_plus(c[i])
    return p


class _Eig:
    """Cached eigendecomposition of an SPD matrix."""

    def __init__(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise InvalidArgument("Q must be square")
        if not np.allclose(Q, Q.T, rtol=1e-10, atol=1e-12):
            raise InvalidArgument("Q must be symmetric")
        try:
            np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            raise InvalidArgument("Q must be positive definite") from None
        self.Q = Q
        self.q, self.V = np.linalg.eigh(Q)
        if self.q[0] <= 0:
            raise InvalidArgument("Q must be positive definite")

    def qnorm(self, v):
        return math.sqrt(max(float(v @ self.Q @ v), 0.0))


def _project_ellipsoid_eig(x, eig, r, center=None):
    x = np.asarray(x, dtype=float)
    x0 = np.zeros_like(x) if center is None else np.asarray(center, dtype=float)
    v = x - x0
    # the relative slack keeps projection idempotent after the final rescale
    if eig.qnorm(v) <= r * (1.0 + 1e-14):
        return x.copy()
    if r == 0:
        return x0.copy()
    q = eig.q
    c = eig.V.T @ v
    c2 = c * c
    qc2 = q * c2

    def qn(lam):
        return math.sqrt(float(qc2 @ (1.0 + lam * q) ** -2))

    # psi(lam) = ||w(lam)||_Q decreases from ||v||_Q > r to 0
    lo, hi = 0.0, math.sqrt(float(c2 @ (1.0 / q))) / r
    while qn(hi) > r:
        hi *= 2.0
    lam = hi
    for _ in range(MAX_ROOT_ITERS):
        inv = 1.0 / (1.0 + lam * q)
        t = qc2 * inv * inv
        s = math.sqrt(float(t.sum()))
        if abs(s - r) <= ROOT_TOL * r:
            break
        if s > r:
            lo = lam
        else:
            hi = lam
        # Newton on 1/r - 1/psi (nearly linear in lam)
        dpsi2 = -2.0 * float(t @ (q * inv))
        cand = lam - (1.0 / r - 1.0 / s) / (0.5 * dpsi2 / s**3)
        lam = cand if lo < cand < hi else 0.5 * (lo + hi)
    w = eig.V @ (c / (1.0 + lam * q))
    s = eig.qnorm(w)
    if s > r:
        w *= r / s
    return x0 + w


def project_ellipsoid(x, Q, r, center=None):
    """Projection onto ``{u : ||u - center||_Q <= r}``.

    Solves the scalar KKT equation for the multiplier of ``(I + lam Q) w = x - center``
    by safeguarded Newton iterations on the eigenbasis of ``Q``.
    """
    if r < 0:
        raise InvalidArgument(f"ellipsoid radius must be >= 0, got {r}")
    return _project_ellipsoid_eig(x, _Eig(Q), r, center)


def _lmo_ellipsoid_eig(c, eig, r, center=None):
    c = np.asarray(c, dtype=float)
    x0 = np.zeros_like(c) if center is None else np.asarray(center, dtype=float)
    if not np.any(c):
        return x0.copy()
    qinv_c = eig.V @ ((eig.V.T @ c) / eig.q)
    return x0 - r * qinv_c / math.sqrt(float(c @ qinv_c))


def _enet_value(u, rho):
    return float(np.abs(u).sum() + rho * (u @ u))


def project_elastic_net_ball(x, rho, alpha):
    """Projection onto ``{u : ||u||_1 + rho ||u||^2 <= alpha}``.

    Bisection on the multiplier ``lam`` of ``u(lam) = soft(x, lam) / (1 + 2 lam rho)``.
    """
    if rho <= 0:
        raise InvalidArgument(f"elastic net needs rho > 0, got {rho}")
    if alpha < 0:
        raise InvalidArgument(f"elastic-net level must be >= 0, got {alpha}")
    x = np.asarray(x, dtype=float)
    if _enet_value(x, rho) <= alpha:
        return x.copy()
    if alpha == 0:
        return np.zeros_like(x)

    def u_of(lam):
        return soft_threshold(x, lam) / (1.0 + 2.0 * lam * rho)

    lo, hi = 0.0, float(np.max(np.abs(x)))
    u = u_of(hi)
    for _ in range(MAX_ROOT_ITERS):
        mid = 0.5 * (lo + hi)
        um = u_of(mid)
        val = _enet_value(um, rho)
        if val > alpha:
            lo = mid
        else:
            hi, u = mid, um
            if alpha - val <= ROOT_TOL * max(1.0, alpha):
                break
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    return u


def lmo_elastic_net_ball(c, rho, alpha):
    """Minimize ``<c, p>`` over the elastic-net ball.

    The ball is strictly convex, so the minimizer is unique for ``c != 0``:
    ``p_i = -sign(c_i) max(|c_i| - mu, 0) / (2 rho mu)`` with ``mu`` chosen
    so the constraint is active.
    """
    c = np.asarray(c, dtype=float)
    ac = np.abs(c)
    cmax = float(ac.max()) if c.size else 0.0
    if alpha <= 0 or cmax == 0.0:
        return np.zeros_like(c)

    def p_of(mu):
        return -np.sign(c) * np.maximum(ac - mu, 0.0) / (2.0 * rho * mu)

    hi = cmax
    lo = 0.5 * cmax
    while _enet_value(p_of(lo), rho) < alpha:
        hi = lo
        lo *= 0.5
    p = p_of(hi)
    for _ in range(MAX_ROOT_ITERS):
        mid = 0.5 * (lo + hi)
        pm = p_of(mid)
        val = _enet_value(pm, rho)
        if val > alpha:
            lo = mid
        else:
            hi, p = mid, pm
            if alpha - val <= ROOT_TOL * max(1.0, alpha):
                break
        if hi - lo <= 1e-16 * hi:
            break
    return p


class OuterFunction:
    """Convex norm-like outer objective together with its level-set oracles.

    Subclasses provide ``__call__``, ``project``, ``lmo`` and ``diameter``.
    ``kappa``/``gamma`` are the error-bound constants used by the expansion
    step.
    """

    kind = None
    kappa = 1.0
    gamma = 1.0
    lower_bound = 0.0
    smooth = False

    def __call__(self, x):
        raise NotImplementedError

    def project(self, x, alpha):
        raise NotImplementedError

    def lmo(self, c, alpha):
        raise NotImplementedError

    def diameter(self, alpha):
        raise NotImplementedError

    def contains(self, x, alpha):
        return self(x) <= alpha + level_tolerance(alpha)

    def _check_level(self, alpha):
        if alpha < self.lower_bound - level_tolerance(alpha):
            raise InvalidArgument(
                f"level {alpha} is below inf omega = {self.lower_bound}")

    def gradient(self, x):
        raise UnsupportedConfiguration(f"{self.kind} outer function is not smooth")

    def prox(self, v, t):
        """Prox of ``t * omega``; only the separable kinds have one."""
        raise UnsupportedConfiguration(f"no prox available for {self.kind} outer function")

    def to_dict(self):
        raise NotImplementedError


class L1Norm(OuterFunction):
    """``omega(x) = ||x||_1``; kappa = 1, gamma = 1."""

    kind = "l1"

    def __call__(self, x):
        return float(np.abs(x).sum())

    def project(self, x, alpha):
        self._check_level(alpha)
        return project_l1_ball(x, max(alpha, 0.0))

    def lmo(self, c, alpha):
        self._check_level(alpha)
        return lmo_l1_ball(c, max(alpha, 0.0))

    def diameter(self, alpha):
        return 2.0 * max(alpha, 0.0)

    def prox(self, v, t):
        return soft_threshold(v, t)

    def to_dict(self):
        return {"kind": self.kind}


class EllipsoidNorm(OuterFunction):
    """``omega(x) = ||x - center||_Q``; kappa = 1, gamma = 1/sqrt(lambda_min(Q))."""

    kind = "ellipsoid"

    def __init__(self, Q, center=None):
        self._eig = _Eig(Q)
        self.Q = self._eig.Q
        n = self.Q.shape[0]
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        self.gamma = 1.0 / math.sqrt(self._eig.q[0])
        self.dim = n

    def __call__(self, x):
        return self._eig.qnorm(np.asarray(x, dtype=float) - self.center)

    def project(self, x, alpha):
        self._check_level(alpha)
        return _project_ellipsoid_eig(x, self._eig, max(alpha, 0.0), self.center)

    def lmo(self, c, alpha):
        self._check_level(alpha)
        return _lmo_ellipsoid_eig(c, self._eig, max(alpha, 0.0), self.center)

    def diameter(self, alpha):
        return 2.0 * max(alpha, 0.0) * self.gamma

    def to_dict(self):
        return {"kind": self.kind, "Q": self.Q.tolist(), "center": self.center.tolist()}


class SquaredQNorm(OuterFunction):
    """``omega(x) = ||x - center||_Q^2``, smooth and 2 lambda_min(Q)-strongly convex.

    kappa = 2 and gamma = 2/sigma = 1/lambda_min(Q).
    """

    kind = "qnorm"
    kappa = 2.0
    smooth = True

    def __init__(self, Q, center=None):
        self._eig = _Eig(Q)
        self.Q = self._eig.Q
        n = self.Q.shape[0]
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        self.gamma = 1.0 / float(self._eig.q[0])
        self.lipschitz_grad = 2.0 * float(self._eig.q[-1])
        self.dim = n

    def __call__(self, x):
        v = np.asarray(x, dtype=float) - self.center
        return float(v @ self.Q @ v)

    def gradient(self, x):
        return 2.0 * (self.Q @ (np.asarray(x, dtype=float) - self.center))

    def project(self, x, alpha):
        self._check_level(alpha)
        return _project_ellipsoid_eig(x, self._eig, math.sqrt(max(alpha, 0.0)), self.center)

    def lmo(self, c, alpha):
        self._check_level(alpha)
        return _lmo_ellipsoid_eig(c, self._eig, math.sqrt(max(alpha, 0.0)), self.center)

    def diameter(self, alpha):
        return 2.0 * math.sqrt(max(alpha, 0.0) / self._eig.q[0])

    def to_dict(self):
        return {"kind": self.kind, "Q": self.Q.tolist(), "center": self.center.tolist()}


class ElasticNet(OuterFunction):
    """``omega(x) = ||x||_1 + rho ||x||^2``.

    Two error bounds hold; ``kappa=1`` uses gamma = 1, ``kappa=2`` uses
    gamma = 1/rho (from 2 rho-strong convexity).
    """

    kind = "elastic_net"

    def __init__(self, rho, kappa=1):
        if rho <= 0:
            raise InvalidArgument(f"elastic net needs rho > 0, got {rho}")
        if kappa not in (1, 2):
            raise InvalidArgument("elastic net error bound has kappa 1 or 2")
        self.rho = float(rho)
        self.kappa = float(kappa)
        self.gamma = 1.0 if kappa == 1 else 1.0 / self.rho

    def __call__(self, x):
        return _enet_value(np.asarray(x, dtype=float), self.rho)

    def project(self, x, alpha):
        self._check_level(alpha)
        return project_elastic_net_ball(x, self.rho, max(alpha, 0.0))

    def lmo(self, c, alpha):
        self._check_level(alpha)
        return lmo_elastic_net_ball(c, self.rho, max(alpha, 0.0))

    def diameter(self, alpha):
        a = max(alpha, 0.0)
        return 2.0 * min(a, math.sqrt(a / self.rho))

    def prox(self, v, t):
        return soft_threshold(v, t) / (1.0 + 2.0 * t * self.rho)

    def to_dict(self):
        return {"kind": self.kind, "rho": self.rho, "kappa": int(self.kappa)}


def outer_from_dict(spec):
    kind = spec.get("kind")
    if kind == "l1":
        return L1Norm()
    if kind == "ellipsoid":
        return EllipsoidNorm(spec["Q"], spec.get("center"))
    if kind == "qnorm":
        return SquaredQNorm(spec["Q"], spec.get("center"))
    if kind == "elastic_net":
        return ElasticNet(spec["rho"], spec.get("kappa", 1))
    raise InvalidArgument(f"unknown omega kind {kind!r}")


def validate_error_bound(outer, samples=1000, seed=0, dim=None, threshold=1e-8):
    """Empirically check the kappa-power gamma-global error bound.

    Draws ``samples`` pairs ``(x, alpha)`` with ``alpha >= inf omega`` and ``x``
    uniform in ``[-B, B]^n``, ``B = 10 * diameter(alpha)``, and reports the
    worst ``dist^kappa - gamma [omega(x) - alpha]_+``.
    """
    if samples < 1:
        raise InvalidArgument("samples must be >= 1")
    n = getattr(outer, "dim", None) or dim or 3
    rng = np.random.Generator(np.random.Philox(seed))
    worst = -math.inf
    for _ in range(samples):
        alpha = outer.lower_bound + rng.uniform(0.0, 3.0)
        B = 10.0 * max(outer.diameter(alpha), 1e-3)
        x = rng.uniform(-B, B, size=n)
        d = float(np.linalg.norm(x - outer.project(x, alpha)))
        excess = max(outer(x) - alpha, 0.0)
        worst = max(worst, d**outer.kappa - outer.gamma * excess)
    return {
        "kind": outer.kind,
        "kappa": float(outer.kappa),
        "gamma": float(outer.gamma),
        "samples": samples,
        "max_violation": float(worst),
        "passed": bool(worst <= threshold),
    }
