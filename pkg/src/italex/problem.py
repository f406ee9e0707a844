"""Bilevel instances: inner composite objective, outer function, lifted objective.

The inner problem is ``min phi(x) = f(x) + g(x)`` with ``f(x) = ||Ax - b||^2``
and ``g`` one of: zero, the indicator of the nonnegative orthant, or the
indicator of a box. The outer function ``omega`` lives in :mod:`geometry`.

For a level ``alpha`` the lifted objective on pairs ``y = (y1, y2)`` is

    phi_hat(y) = phi(y1) + ||y1 - y2||^2 + indicator(omega(y2) <= alpha)

whose smooth part ``f(y1) + ||y1 - y2||^2`` has an ``(L_f + 2)``-Lipschitz
gradient.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidArgument, UnsupportedConfiguration
from .geometry import OuterFunction, level_tolerance, outer_from_dict, prox_indicator

# slack for membership in dom(g); iterates are convex combinations of
# feasible points so only round-off can push them outside
DOMAIN_TOL = 1e-10


def spectral_norm_sq(A, tol=1e-8, max_iter=10000, seed=0, exact_below=2000):
    """Largest eigenvalue of ``A^T A``.

    Exact (SVD) when the smaller side of ``A`` is at most ``exact_below``.
    Otherwise power iteration to relative tolerance ``tol``; its estimate
    approaches from below, so it is inflated by ``1 + 10 tol``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    if n == 0 or not np.any(A):
        return 0.0
    if min(A.shape) <= exact_below:
        return float(np.linalg.norm(A, 2)) ** 2
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam * (1.0 + 10.0 * tol)


class LeastSquares:
    """``f(x) = ||A x - b||^2`` with ``grad f = 2 A^T (A x - b)``.

    The gradient is Lipschitz with constant ``L_f = 2 lambda_max(A^T A)``.
    """

    def __init__(self, A, b, lipschitz_grad=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
            raise InvalidArgument(f"incompatible shapes A{A.shape} and b{b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InvalidArgument("A and b must be finite")
        self.A = A
        self.b = b
        if lipschitz_grad is None:
            # exact for small problems, power iteration otherwise
            if min(A.shape) <= 400:
                lipschitz_grad = 2.0 * float(np.linalg.norm(A, 2)) ** 2
            else:
                lipschitz_grad = 2.0 * spectral_norm_sq(A)
        self.lipschitz_grad = float(lipschitz_grad)

    @property
    def dim(self):
        return self.A.shape[1]

    def residual(self, x):
        return self.A @ x - self.b

    def value(self, x):
        r = self.residual(x)
        return float(r @ r)

    def gradient(self, x):
        return 2.0 * (self.A.T @ self.residual(x))

    def value_and_gradient(self, x):
        r = self.residual(x)
        return float(r @ r), 2.0 * (self.A.T @ r)

    __call__ = value


def _lmo_nonneg_ball(c, center, radius):
    """argmin <c, p> over ``{p >= 0, ||p - center|| <= radius}`` (center >= 0).

    KKT gives ``p(t) = max(center - t c, 0)`` with ``t`` chosen so that
    ``||p(t) - center|| = radius``. The squared distance is piecewise
    quadratic in ``t`` with breakpoints ``center_i / c_i`` (``c_i > 0``), so the
    root is found exactly by a sweep over sorted breakpoints.
    """
    c = np.asarray(c, dtype=float)
    y = np.maximum(np.asarray(center, dtype=float), 0.0)
    if radius <= 0.0 or not np.any(c):
        return y.copy()
    R2 = radius * radius
    pos = c > 0
    # coordinates with c_i < 0 grow linearly forever; c_i > 0 saturate at y_i
    slope = float(np.sum(c[c < 0] ** 2))
    bp = np.full_like(c, np.inf)
    bp[pos] = y[pos] / c[pos]
    order = np.argsort(bp[pos], kind="stable")
    idx = np.flatnonzero(pos)[order]
    active = slope + float(np.sum(c[pos] ** 2))
    fixed = 0.0
    t_prev = 0.0
    t = None
    for i in idx:
        tb = bp[i]
        if active > 0 and active * tb * tb + fixed >= R2:
            t = math.sqrt((R2 - fixed) / active)
            break
        fixed += y[i] ** 2
        active -= c[i] ** 2
        t_prev = tb
    if t is None:
        active = slope
        if active == 0.0:
            # bounded ray: the unconstrained-by-ball limit is inside the ball
            p = y.copy()
            p[pos] = 0.0
            return p
        t = max(math.sqrt(max(R2 - fixed, 0.0) / active), t_prev)
    return np.maximum(y - t * c, 0.0)


class NonsmoothPart:
    """Base class for ``g``: value, prox, and (when bounded) a linear oracle."""

    kind = None
    domain_diameter = math.inf
    # indicators vanish on their domain, so g(x) - g(p) terms drop out
    indicator = True

    def __call__(self, x):
        raise NotImplementedError

    def prox(self, x, t):
        raise NotImplementedError

    @property
    def has_linear_oracle(self):
        return math.isfinite(self.domain_diameter)

    def linear_oracle(self, c):
        raise UnsupportedConfiguration(
            f"g of kind {self.kind!r} has an unbounded domain and no linear oracle")

    def lmo_ball(self, c, center, radius):
        """argmin ``<c, p> + g(p)`` restricted to the ball ``B(center, radius)``."""
        raise NotImplementedError

    def contains(self, x):
        return math.isfinite(self(x))

    def project(self, x):
        return self.prox(x, 1.0)

    def to_dict(self):
        return {"kind": self.kind}


class Zero(NonsmoothPart):
    kind = "none"

    def __call__(self, x):
        return 0.0

    def prox(self, x, t):
        return np.array(x, dtype=float)

    def lmo_ball(self, c, center, radius):
        c = np.asarray(c, dtype=float)
        nc = float(np.linalg.norm(c))
        if nc == 0.0:
            return np.array(center, dtype=float)
        return np.asarray(center, dtype=float) - radius * c / nc


class NonNegative(NonsmoothPart):
    kind = "nonneg"

    def __call__(self, x):
        return 0.0 if (np.asarray(x) >= -DOMAIN_TOL).all() else math.inf

    def prox(self, x, t):
        return prox_indicator(x, "nonneg")

    def lmo_ball(self, c, center, radius):
        return _lmo_nonneg_ball(c, center, radius)


class Box(NonsmoothPart):
    """Indicator of ``{lower <= x <= upper}``; bounds are scalars or vectors."""

    kind = "box"

    def __init__(self, lower, upper, dim=None):
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if dim is not None:
            lo = np.broadcast_to(lo, (dim,)).copy()
            hi = np.broadcast_to(hi, (dim,)).copy()
        if lo.shape != hi.shape or np.any(lo > hi):
            raise InvalidArgument("box needs lower <= upper with matching shapes")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidArgument("box bounds must be finite")
        self.lower = lo
        self.upper = hi
        self.dim = dim
        slack = DOMAIN_TOL * np.maximum(1.0, np.maximum(abs(lo), abs(hi)))
        self._lo_slack = lo - slack
        self._hi_slack = hi + slack
        if dim is not None:
            self.domain_diameter = float(np.linalg.norm(hi - lo))

    def __call__(self, x):
        x = np.asarray(x)
        ok = (x >= self._lo_slack).all() and (x <= self._hi_slack).all()
        return 0.0 if ok else math.inf

    def prox(self, x, t):
        return prox_indicator(x, "box", self.lower, self.upper)

    def linear_oracle(self, c):
        # vertex of the box; c_i = 0 counts as positive (sign(0) = +1)
        return np.where(np.asarray(c) >= 0, self.lower, self.upper)

    def lmo_ball(self, c, center, radius):
        return self.linear_oracle(c)

    def to_dict(self):
        return {"kind": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


def nonsmooth_from_dict(spec, dim):
    spec = spec or {"kind": "none"}
    kind = spec.get("kind", "none")
    if kind == "none":
        return Zero()
    if kind == "nonneg":
        return NonNegative()
    if kind == "box":
        if "lower" not in spec or "upper" not in spec:
            raise InvalidArgument("box g needs 'lower' and 'upper'")
        return Box(spec["lower"], spec["upper"], dim=dim)
    raise InvalidArgument(f"unknown g kind {kind!r}")


@dataclass(frozen=True)
class LiftedPoint:
    """A pair ``(y1, y2)`` with ``y1 in dom(g)`` and ``omega(y2) <= alpha_tag``."""

    y1: np.ndarray
    y2: np.ndarray
    alpha_tag: float

    def stacked(self):
        return np.concatenate([self.y1, self.y2])

    def distance(self, other):
        return math.sqrt(float(np.sum((self.y1 - other.y1) ** 2) + np.sum((self.y2 - other.y2) ** 2)))


@dataclass
class BilevelInstance:
    """``min omega(x)`` over the minimizers of ``f(x) + g(x)``.

    ``reference`` optionally holds ``phi_star``, ``omega_star`` and ``x_star``
    for tests and metrics.
    """

    smooth: LeastSquares
    nonsmooth: NonsmoothPart
    outer: OuterFunction
    reference: Optional[dict] = None

    def __post_init__(self):
        dim = getattr(self.outer, "dim", None)
        if dim is not None and dim != self.smooth.dim:
            raise InvalidArgument(f"omega has dimension {dim}, f has {self.smooth.dim}")
        gdim = getattr(self.nonsmooth, "dim", None)
        if gdim is not None and gdim != self.smooth.dim:
            raise InvalidArgument(f"g has dimension {gdim}, f has {self.smooth.dim}")

    @property
    def dim(self):
        return self.smooth.dim

    @property
    def lipschitz(self):
        return self.smooth.lipschitz_grad

    def phi(self, x):
        gx = self.nonsmooth(x)
        if not math.isfinite(gx):
            return math.inf
        return self.smooth.value(x) + gx

    def phi_hat(self, y, alpha):
        if not self.outer.contains(y.y2, alpha):
            return math.inf
        gx = self.nonsmooth(y.y1)
        if not math.isfinite(gx):
            return math.inf
        d = y.y1 - y.y2
        return self.smooth.value(y.y1) + gx + float(d @ d)

    def lifted_value(self, x, z):
        """``phi(x) + ||x - z||^2`` without the level-set indicator."""
        d = np.asarray(x) - np.asarray(z)
        return self.phi(x) + float(d @ d)

    def grad_f_hat(self, y):
        d = y.y1 - y.y2
        return self.smooth.gradient(y.y1) + 2.0 * d, -2.0 * d

    def lifted_point(self, y1, y2, alpha):
        return LiftedPoint(np.asarray(y1, dtype=float), np.asarray(y2, dtype=float), float(alpha))

    def to_dict(self):
        out = {
            "A": self.smooth.A.tolist(),
            "b": self.smooth.b.tolist(),
            "g": self.nonsmooth.to_dict(),
            "omega": self.outer.to_dict(),
        }
        if self.reference:
            ref = {}
            for k, v in self.reference.items():
                ref[k] = np.asarray(v).tolist() if k == "x_star" else float(v)
            out["reference"] = ref
        return out

    @classmethod
    def from_dict(cls, spec):
        try:
            f = LeastSquares(spec["A"], spec["b"], spec.get("lipschitz"))
        except KeyError as exc:
            raise InvalidArgument(f"instance is missing field {exc.args[0]!r}") from None
        omega_spec = dict(spec.get("omega") or {"kind": "l1"})
        if omega_spec.get("kind") in ("ellipsoid", "qnorm") and "Q" not in omega_spec:
            omega_spec["Q"] = np.eye(f.dim).tolist()
        outer = outer_from_dict(omega_spec)
        g = nonsmooth_from_dict(spec.get("g"), f.dim)
        ref = spec.get("reference")
        if ref is not None:
            ref = dict(ref)
            if "x_star" in ref:
                ref["x_star"] = np.asarray(ref["x_star"], dtype=float)
        return cls(f, g, outer, ref)


def eval_phi(instance, x):
    return instance.phi(np.asarray(x, dtype=float))


def eval_phi_hat(instance, y, alpha):
    return instance.phi_hat(y, alpha)


def grad_f_hat(instance, y):
    return instance.grad_f_hat(y)


def load_instance(path):
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except FileNotFoundError:
        raise InvalidArgument(f"instance file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(spec, dict):
        raise InvalidArgument(f"{path}: expected a JSON object")
    return BilevelInstance.from_dict(spec)


def save_instance(instance, path):
    Path(path).write_text(json.dumps(instance.to_dict(), indent=1))


def toy_instance():
    """``f(x) = (x - 2)^2``, ``g`` the indicator of ``[-3, 3]``, ``omega = |x|``.

    The inner problem has the unique minimizer ``x = 2`` so ``phi* = 0`` and
    ``omega* = 2``.
    """
    from .geometry import L1Norm

    f = LeastSquares([[1.0]], [2.0])
    g = Box(-3.0, 3.0, dim=1)
    return BilevelInstance(f, g, L1Norm(), {"phi_star": 0.0, "omega_star": 2.0,
                                            "x_star": np.array([2.0])})


def level_ok(instance, y, tol_scale=1.0):
    """Membership of ``y.y2`` in the tagged level set (with the usual slack)."""
    return instance.outer(y.y2) <= y.alpha_tag + tol_scale * level_tolerance(y.alpha_tag)
