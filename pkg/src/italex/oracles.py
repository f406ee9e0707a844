"""Approximation and expansion oracles.

The approximation oracle runs a descent step on the lifted problem at a fixed
level ``alpha`` until it can either certify ``h(alpha) - phi_bar >= rho > 0``
(the level is too low) or it has found a lifted point within ``eps_tol`` of
``phi_bar`` (the level is good enough). The expansion oracle turns a
certified gap ``rho`` into a safe increase of the level.
"""

import math
from dataclasses import dataclass

from .errors import BudgetExhausted, InvalidArgument
from .steps import STEPS, DiameterContext

DEFAULT_MAX_STEPS = 200_000


@dataclass
class OracleOutcome:
    rho: float
    y: object
    inner_iterations: int
    phi_hat: float = math.nan


def _resolve_step(step):
    if callable(step):
        return step
    try:
        return STEPS[step]
    except KeyError:
        raise InvalidArgument(f"unknown step {step!r}; expected 'gcg' or 'pg'") from None


def approximation_oracle(instance, y0, alpha, phi_bar, eps_tol, step="pg",
                         max_steps=DEFAULT_MAX_STEPS, ctx=None, callback=None):
    """Run ``step`` from ``y0`` at level ``alpha`` until a stopping rule fires.

    Returns ``OracleOutcome(0, y)`` once ``phi_hat(y) - phi_bar <= eps_tol`` and
    ``OracleOutcome(rho, y)`` once ``rho = phi_hat(y) - phi_bar - mu(y)`` exceeds
    ``eps_tol / 2``; the first rule is tested first. ``ctx`` defaults to a
    context whose outer tolerance is ``2 * eps_tol``. ``callback(y, outcome)``
    sees every step.
    """
    if eps_tol <= 0:
        raise InvalidArgument(f"eps_tol must be positive, got {eps_tol}")
    step_fn = _resolve_step(step)
    if ctx is None:
        ctx = DiameterContext.build(instance, alpha, phi_bar, 2.0 * eps_tol)
    y = y0 if y0.alpha_tag == alpha else instance.lifted_point(y0.y1, y0.y2, alpha)
    fy = instance.phi_hat(y, alpha)
    if not math.isfinite(fy):
        raise InvalidArgument("initial lifted point is infeasible for the level set")
    for j in range(1, max_steps + 1):
        out = step_fn(instance, y, alpha, ctx, phi_hat_y=fy)
        if callback is not None:
            callback(y, out)
        gap = fy - phi_bar
        if gap <= eps_tol:
            return OracleOutcome(0.0, y, j, fy)
        rho = gap - out.measure
        if rho > 0.5 * eps_tol:
            return OracleOutcome(rho, y, j, fy)
        y, fy = out.next, out.phi_hat_next
    raise BudgetExhausted(
        f"approximation oracle used {max_steps} steps at alpha={alpha:.6g} without "
        f"stopping (phi_hat - phi_bar = {fy - phi_bar:.3e}); phi_bar may be below phi*",
        last=y, steps=max_steps)


def expansion_oracle(alpha, rho, kappa, gamma):
    """``alpha + rho^(kappa/2) / gamma``."""
    if not rho > 0:
        raise InvalidArgument(f"rho must be positive, got {rho}")
    if gamma <= 0 or not 0 < kappa <= 2:
        raise InvalidArgument("need gamma > 0 and kappa in (0, 2]")
    return alpha + rho ** (0.5 * kappa) / gamma


def expansion_oracle_smooth(alpha, rho, kappa, gamma, L_f):
    """``alpha + (2 rho / L_f)^(kappa/2) / gamma`` for a smooth inner function."""
    if not rho > 0:
        raise InvalidArgument(f"rho must be positive, got {rho}")
    if not L_f > 0:
        raise InvalidArgument(f"L_f must be positive, got {L_f}")
    if gamma <= 0 or not 0 < kappa <= 2:
        raise InvalidArgument("need gamma > 0 and kappa in (0, 2]")
    return alpha + (2.0 * rho / L_f) ** (0.5 * kappa) / gamma


def delta(rho, kappa, gamma):
    """Level increase ``Delta(rho)`` of the composite expansion oracle."""
    return expansion_oracle(0.0, rho, kappa, gamma)
