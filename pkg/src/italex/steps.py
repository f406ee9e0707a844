"""Single descent steps on the lifted objective and their optimality measures.

Both steps take the current lifted point ``y`` at level ``alpha`` and return
the next point together with an optimality measure ``mu(y)`` evaluated at the
input. The measure upper-bounds ``phi_hat(y) - h(alpha)`` and vanishes exactly
at minimizers, which is what the approximation oracle needs.

The lifted smooth part ``f(y1) + ||y1 - y2||^2`` is handled with the fixed
constant ``L_f + 2``; no backtracking.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalInconsistency, UnsupportedConfiguration

# negative measures/decreases above this are float noise and get clamped to 0
CLAMP_TOL = 1e-9


def _clamp(value, what, scale=1.0):
    if value < 0.0:
        if value < -CLAMP_TOL * max(1.0, scale):
            raise NumericalInconsistency(f"{what} = {value:.3e} is negative")
        return 0.0
    return value


@dataclass
class DiameterContext:
    """Quantities the measures need beyond the point itself.

    ``eps`` is the fixed tolerance of the surrounding level-set loop, so that
    ``phi_bar <= phi* + eps/2``; the oracle is then called with tolerance
    ``eps/2``. ``D_alpha`` bounds the diameter of ``dom(g) x Lev(alpha)`` and is
    ``inf`` when ``g`` has an unbounded domain.
    """

    D_alpha: float
    phi_bar: float
    eps: float
    D_lev: float

    @classmethod
    def build(cls, instance, alpha, phi_bar, eps):
        D_lev = instance.outer.diameter(alpha)
        return cls(instance.nonsmooth.domain_diameter + D_lev, phi_bar, eps, D_lev)

    def d_tilde(self, phi_hat_y):
        """Bound on the diameter of the lifted level set through ``y``."""
        gap = max(phi_hat_y - self.phi_bar + 0.5 * self.eps, 0.0)
        return min(self.D_alpha, math.sqrt(6.0 * gap + 4.0 * self.D_lev ** 2))


@dataclass
class StepOutcome:
    next: object
    measure: float
    decrease: float
    phi_hat_y: float
    phi_hat_next: float
    # diameter used by the step's sufficient-decrease guarantee
    D_step: float = math.inf
    extras: dict = field(default_factory=dict)


def _phi_hat(instance, y, alpha, known):
    return instance.phi_hat(y, alpha) if known is None else known


def gcg_step(instance, y, alpha, ctx, phi_hat_y=None):
    """Generalized conditional gradient step on the lifted problem.

    When ``g`` has an unbounded domain the first block is restricted to the
    ball around ``y1`` of radius ``D_tilde(y)``, which still contains every
    point of the lifted level set through ``y``.
    """
    g = instance.nonsmooth
    outer = instance.outer
    L = instance.lipschitz + 2.0
    fy = _phi_hat(instance, y, alpha, phi_hat_y)
    g1, g2 = instance.grad_f_hat(y)
    D_lev = ctx.D_lev
    if g.has_linear_oracle:
        p1 = g.linear_oracle(g1)
        D_step = ctx.D_alpha
    else:
        if not hasattr(g, "lmo_ball"):
            raise UnsupportedConfiguration(f"GCG needs a linear oracle for g of kind {g.kind!r}")
        radius = ctx.d_tilde(fy)
        p1 = g.lmo_ball(g1, y.y1, radius)
        D_step = math.sqrt(radius ** 2 + D_lev ** 2)
    p2 = outer.lmo(g2, alpha)
    d1 = y.y1 - p1
    d2 = y.y2 - p2
    S = float(g1 @ d1 + g2 @ d2)
    if not g.indicator:
        S += g(y.y1) - g(p1)
    S = _clamp(S, "surrogate gap", abs(fy))
    dist2 = float(d1 @ d1 + d2 @ d2)
    if S == 0.0 or dist2 == 0.0:
        return StepOutcome(y, 0.0, 0.0, fy, fy, D_step, {"eta": 0.0})
    eta = min(1.0, S / (L * dist2))
    nxt = instance.lifted_point(y.y1 - eta * d1, y.y2 - eta * d2, alpha)
    fn = instance.phi_hat(nxt, alpha)
    if not math.isfinite(fn):
        # convex combination left the level set by round-off; pull it back
        nxt = instance.lifted_point(nxt.y1, outer.project(nxt.y2, alpha), alpha)
        fn = instance.phi_hat(nxt, alpha)
    dec = fy - fn
    return StepOutcome(nxt, S, dec, fy, fn, D_step, {"eta": eta})


def pg_step(instance, y, alpha, ctx, phi_hat_y=None):
    """Proximal gradient step with the decrease-based measure ``S_tilde``."""
    L_f = instance.lipschitz
    L = L_f + 2.0
    fy = _phi_hat(instance, y, alpha, phi_hat_y)
    g1, _ = instance.grad_f_hat(y)
    n1 = instance.nonsmooth.prox(y.y1 - g1 / L, 1.0 / L)
    n2 = instance.outer.project((L_f * y.y2 + 2.0 * y.y1) / L, alpha)
    nxt = instance.lifted_point(n1, n2, alpha)
    fn = instance.phi_hat(nxt, alpha)
    zeta = _clamp(fy - fn, "PG decrease", abs(fy))
    D_t = ctx.d_tilde(fy)
    measure = 2.0 * max(zeta, D_t * math.sqrt(0.5 * L * zeta))
    return StepOutcome(nxt, measure, fy - fn, fy, fn, D_t, {"zeta": zeta})


def _require_smooth_inner(instance):
    if instance.nonsmooth.kind != "none":
        raise UnsupportedConfiguration(
            f"the smooth-inner variant needs g = 0, got g of kind {instance.nonsmooth.kind!r}")


def smooth_pg_step(instance, y, alpha, ctx, phi_hat_y=None):
    """Projected gradient on ``f + indicator(Lev(alpha))`` with ``y1 = y2 = x``."""
    _require_smooth_inner(instance)
    L = max(instance.lipschitz, 1e-300)
    x = y.y1
    fy = instance.smooth.value(x) if phi_hat_y is None else phi_hat_y
    xn = instance.outer.project(x - instance.smooth.gradient(x) / L, alpha)
    nxt = instance.lifted_point(xn, xn, alpha)
    fn = instance.smooth.value(xn)
    zeta = _clamp(fy - fn, "PG decrease", abs(fy))
    D_t = ctx.D_lev
    measure = 2.0 * max(zeta, D_t * math.sqrt(0.5 * L * zeta))
    return StepOutcome(nxt, measure, fy - fn, fy, fn, D_t, {"zeta": zeta})


def smooth_gcg_step(instance, y, alpha, ctx, phi_hat_y=None):
    """Conditional gradient on ``f`` over ``Lev(alpha)`` with ``y1 = y2 = x``."""
    _require_smooth_inner(instance)
    L = max(instance.lipschitz, 1e-300)
    x = y.y1
    fy = instance.smooth.value(x) if phi_hat_y is None else phi_hat_y
    grad = instance.smooth.gradient(x)
    p = instance.outer.lmo(grad, alpha)
    d = x - p
    S = _clamp(float(grad @ d), "surrogate gap", abs(fy))
    dist2 = float(d @ d)
    if S == 0.0 or dist2 == 0.0:
        return StepOutcome(y, 0.0, 0.0, fy, fy, ctx.D_lev, {"eta": 0.0})
    eta = min(1.0, S / (L * dist2))
    xn = x - eta * d
    if not instance.outer.contains(xn, alpha):
        xn = instance.outer.project(xn, alpha)
    fn = instance.smooth.value(xn)
    return StepOutcome(instance.lifted_point(xn, xn, alpha), S, fy - fn, fy, fn,
                       ctx.D_lev, {"eta": eta})


STEPS = {"gcg": gcg_step, "pg": pg_step}
SMOOTH_STEPS = {"gcg": smooth_gcg_step, "pg": smooth_pg_step}


def gcg_decrease_ok(out, lipschitz, slack=1e-9):
    """``decrease >= 1/2 min{S, S^2 / (L D^2)}`` with ``L`` the lifted constant."""
    S = out.measure
    if S == 0.0:
        return out.decrease >= -slack
    bound = 0.5 * min(S, S * S / (lipschitz * out.D_step ** 2))
    return out.decrease >= bound - slack


def pg_decrease_ok(out, lipschitz, D_hat, slack=1e-9):
    """``decrease >= min{S/2, S^2 / (2 L D_hat^2)}``."""
    S = out.measure
    bound = min(0.5 * S, S * S / (2.0 * lipschitz * D_hat ** 2))
    return out.decrease >= bound - slack


def surrogate_gap_lower_bound_check(instance, y, alpha, h_alpha_ref, measure, tol=1e-6):
    """Whether ``measure >= phi_hat(y) - h(alpha)`` (up to ``tol``)."""
    return measure >= instance.phi_hat(y, alpha) - h_alpha_ref - tol
