"""ITALEX: level-set expansion for simple bilevel problems.

``italex_ft`` runs the expansion loop for a fixed tolerance ``eps`` and a fixed
estimate ``phi_bar`` of the inner optimal value. ``italex_ct`` nests it in a
loop that halves the tolerance and refreshes ``phi_bar`` each round, and
``italex_smooth`` is the variant for ``g = 0`` whose iterates never exceed the
optimal outer value.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExhausted, InvalidArgument, UnsupportedConfiguration
from .fista import fista
from .oracles import (DEFAULT_MAX_STEPS, approximation_oracle, expansion_oracle,
                      expansion_oracle_smooth)
from .steps import SMOOTH_STEPS, STEPS, DiameterContext

log = logging.getLogger(__name__)


class _StopRun(Exception):
    """Raised inside a step callback once the global step budget is spent."""


def solve_inner(instance, u0, eps, radius=None, max_iter=200_000):
    """Approximately minimize ``phi = f + g``; returns ``(u, phi(u))``.

    With a ``radius`` bound on ``||u0 - x*||`` FISTA runs for the worst-case
    count ``ceil(sqrt(2 L_f radius^2 / eps))``, which guarantees
    ``phi(u) <= phi* + eps``. Without one it runs restarted FISTA until the
    gradient-mapping certificate ``||G|| * max(1, 2||x||) <= eps / 2``.
    """
    if not eps > 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    f = instance.smooth
    g = instance.nonsmooth
    u0 = g.project(np.asarray(u0, dtype=float))
    L = f.lipschitz_grad
    if L == 0.0:
        return u0, instance.phi(u0)
    if radius is not None:
        iters = int(math.ceil(math.sqrt(2.0 * L * radius ** 2 / eps)))
        u, _, _ = fista(f.value, f.gradient, g.prox, u0, L, max(iters, 1), restart=False)
        return u, instance.phi(u)

    def stop(k, x, fx, gm):
        return gm * max(1.0, 2.0 * float(np.linalg.norm(x))) <= 0.5 * eps

    u, _, k = fista(f.value, f.gradient, g.prox, u0, L, max_iter, stop=stop)
    if k >= max_iter:
        log.warning("inner solve hit its %d-iteration cap", max_iter)
    return u, instance.phi(u)


@dataclass
class FtResult:
    alpha_final: float
    x: np.ndarray
    z: np.ndarray
    oracle_calls: int
    step_iterations: int
    budget_exhausted: bool = False


@dataclass
class SolveReport:
    x_final: np.ndarray
    z_final: np.ndarray
    alpha_final: float
    alpha_trace: list
    rounds: list
    snapshots: list
    config: dict
    oracle_calls: int = 0
    step_iterations: int = 0
    elapsed_s: float = 0.0
    budget_exhausted: bool = False
    final: dict = field(default_factory=dict)

    @property
    def R(self):
        return len(self.rounds)

    @property
    def N(self):
        return self.oracle_calls

    @property
    def M(self):
        return self.step_iterations

    def to_dict(self, timestamps=True):
        snaps = []
        for s in self.snapshots:
            s = dict(s)
            if not timestamps:
                s.pop("t_ms", None)
            snaps.append(s)
        out = {
            "config": self.config,
            "rounds": self.rounds,
            "alpha_trace": [float(a) for a in self.alpha_trace],
            "snapshots": snaps,
            "final": dict(self.final),
            "x_final": np.asarray(self.x_final).tolist(),
        }
        if timestamps:
            out["elapsed_s"] = self.elapsed_s
        return out

    def to_json(self, timestamps=True):
        return json.dumps(self.to_dict(timestamps), indent=1, sort_keys=True)


class _Tracker:
    """Counters, snapshots and the optional global step budget of one run."""

    def __init__(self, instance, snapshot_period, max_total_steps, callback, time_budget):
        self.instance = instance
        self.period = snapshot_period
        self.max_total = max_total_steps
        self.callback = callback
        self.time_budget = time_budget
        self.steps = 0
        self.oracle_calls = 0
        self.alpha_trace = []
        self.snapshots = []
        self.t0 = time.perf_counter()
        self.exhausted = False

    def snapshot(self, x):
        inst = self.instance
        x = np.asarray(x)
        self.snapshots.append({
            "t_ms": round(1000.0 * (time.perf_counter() - self.t0), 3),
            "it": self.steps,
            "phi": inst.phi(x),
            "omega": inst.outer(x),
            "xnorm2": float(x @ x),
        })

    def remaining(self):
        if self.max_total is None:
            return DEFAULT_MAX_STEPS
        return max(self.max_total - self.steps, 0)

    def on_step(self, y, out):
        self.steps += 1
        if self.callback is not None:
            self.callback(y, out)
        if self.period and self.steps % self.period == 0:
            self.snapshot(out.next.y1)
        if self.max_total is not None and self.steps >= self.max_total:
            self.exhausted = True
            self.last = out.next
            raise _StopRun
        if self.time_budget is not None and time.perf_counter() - self.t0 >= self.time_budget:
            self.exhausted = True
            self.last = out.next
            raise _StopRun


def _run_ft(instance, eps, phi_bar, alpha, y, step_fn, expand, tracker, max_oracle_steps):
    """Shared expansion loop; returns ``(alpha, y)`` at termination."""
    while True:
        ctx = DiameterContext.build(instance, alpha, phi_bar, eps)
        tracker.alpha_trace.append(alpha)
        cap = max_oracle_steps
        if tracker.max_total is not None:
            cap = min(cap, tracker.remaining() + 1)
        out = approximation_oracle(instance, y, alpha, phi_bar, 0.5 * eps, step_fn,
                                   max_steps=cap, ctx=ctx, callback=tracker.on_step)
        tracker.oracle_calls += 1
        y = out.y
        if out.rho == 0.0:
            return alpha, y
        alpha = expand(alpha, out.rho)
        log.debug("expanded level to %.10g (rho=%.3e)", alpha, out.rho)
        y = instance.lifted_point(y.y1, y.y2, alpha)


def _composite_expand(instance):
    outer = instance.outer
    return lambda a, rho: expansion_oracle(a, rho, outer.kappa, outer.gamma)


def _smooth_expand(instance):
    outer = instance.outer
    L = instance.lipschitz
    return lambda a, rho: expansion_oracle_smooth(a, rho, outer.kappa, outer.gamma, L)


def _step_fn(step, table):
    if callable(step):
        return step
    try:
        return table[step]
    except KeyError:
        raise InvalidArgument(f"unknown step {step!r}; expected 'gcg' or 'pg'") from None


def italex_ft(instance, eps, phi_bar, alpha0, x0, z0, step="pg",
              max_oracle_steps=DEFAULT_MAX_STEPS, callback=None):
    """Expansion loop at fixed tolerance; see the module docstring."""
    if not eps > 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    step_fn = _step_fn(step, STEPS)
    tracker = _Tracker(instance, 0, None, callback, None)
    y = instance.lifted_point(x0, z0, alpha0)
    if not instance.outer.contains(y.y2, alpha0):
        raise InvalidArgument("z0 is not in the initial level set")
    alpha, y = _run_ft(instance, eps, phi_bar, alpha0, y, step_fn,
                       _composite_expand(instance), tracker, max_oracle_steps)
    return FtResult(alpha, y.y1, y.y2, tracker.oracle_calls, tracker.steps)


def default_start(instance):
    """``x0 = 0`` (or its projection onto dom g), ``alpha0 = omega(x0)``."""
    zero = np.zeros(instance.dim)
    x0 = zero if instance.nonsmooth.contains(zero) else instance.nonsmooth.project(zero)
    if instance.nonsmooth.contains(zero):
        alpha0 = instance.outer(zero)
    else:
        alpha0 = instance.outer.lower_bound
    return x0, alpha0


def _check_eps(eps_target, eps1):
    if not (eps_target > 0 and math.isfinite(eps_target)):
        raise InvalidArgument(f"eps_target must be positive and finite, got {eps_target}")
    if eps1 is None:
        eps1 = max(eps_target, 0.1)
    if not (eps1 > 0 and math.isfinite(eps1)):
        raise InvalidArgument(f"eps1 must be positive and finite, got {eps1}")
    return eps1


def italex_ct(instance, eps_target, eps1=None, alpha0=None, x0=None, z0=None, u0=None,
              step="pg", snapshot_period=50, max_total_steps=None,
              max_oracle_steps=DEFAULT_MAX_STEPS, inner_radius=None, callback=None,
              time_budget=None, smooth=False):
    """Changing-tolerance ITALEX; stops after the first round with ``eps_r <= eps_target``.

    ``max_total_steps`` (or ``time_budget`` in seconds) ends the run early and
    sets ``budget_exhausted`` on the report instead of raising.
    """
    eps1 = _check_eps(eps_target, eps1)
    if smooth and instance.nonsmooth.kind != "none":
        raise UnsupportedConfiguration(
            f"the smooth-inner variant needs g = 0, got g of kind {instance.nonsmooth.kind!r}")
    step_fn = _step_fn(step, SMOOTH_STEPS if smooth else STEPS)
    expand = _smooth_expand(instance) if smooth else _composite_expand(instance)
    dx0, dalpha0 = default_start(instance)
    x = dx0 if x0 is None else np.asarray(x0, dtype=float)
    alpha = dalpha0 if alpha0 is None else float(alpha0)
    if smooth:
        x = instance.outer.project(x, alpha)
        z = x
    elif z0 is None:
        z = instance.outer.project(x, alpha)
    else:
        z = np.asarray(z0, dtype=float)
    if not instance.nonsmooth.contains(x):
        raise InvalidArgument("x0 is outside dom(g)")
    if not instance.outer.contains(z, alpha):
        raise InvalidArgument("z0 is not in the initial level set")
    u = x.copy() if u0 is None else np.asarray(u0, dtype=float)

    tracker = _Tracker(instance, snapshot_period, max_total_steps, callback, time_budget)
    tracker.snapshot(x)
    rounds = []
    eps_r = eps1
    y = instance.lifted_point(x, z, alpha)
    try:
        while True:
            u, phi_bar = solve_inner(instance, u, 0.5 * eps_r, inner_radius)
            calls0, steps0 = tracker.oracle_calls, tracker.steps
            rounds.append({"eps": eps_r, "phi_bar": phi_bar, "oracle_calls": 0,
                           "step_iters": 0, "skipped": True})
            if instance.lifted_value(y.y1, y.y2) > phi_bar + 0.5 * eps_r:
                alpha, y = _run_ft(instance, eps_r, phi_bar, alpha, y, step_fn, expand,
                                   tracker, max_oracle_steps)
                rounds[-1]["skipped"] = False
            rounds[-1]["oracle_calls"] = tracker.oracle_calls - calls0
            rounds[-1]["step_iters"] = tracker.steps - steps0
            log.info("round %d: eps=%.3e phi_bar=%.10g alpha=%.10g calls=%d steps=%d",
                     len(rounds), eps_r, phi_bar, alpha, rounds[-1]["oracle_calls"],
                     rounds[-1]["step_iters"])
            if eps_r <= eps_target:
                break
            eps_r *= 0.5
    except _StopRun:
        last = tracker.last
        y = instance.lifted_point(last.y1, last.y2, last.alpha_tag)
        alpha = last.alpha_tag
        rounds[-1]["oracle_calls"] = tracker.oracle_calls - calls0
        rounds[-1]["step_iters"] = tracker.steps - steps0
    except BudgetExhausted as exc:
        exc.steps = tracker.steps
        raise
    if not tracker.snapshots or tracker.snapshots[-1]["it"] != tracker.steps:
        tracker.snapshot(y.y1)
    x_final = y.y1
    report = SolveReport(
        x_final=x_final, z_final=y.y2, alpha_final=alpha,
        alpha_trace=tracker.alpha_trace, rounds=rounds, snapshots=tracker.snapshots,
        config={"method": ("italex-smooth-" if smooth else "italex-") + (
                    step if isinstance(step, str) else "custom"),
                "eps_target": eps_target, "eps1": eps1, "snapshot_period": snapshot_period,
                "max_total_steps": max_total_steps},
        oracle_calls=tracker.oracle_calls, step_iterations=tracker.steps,
        elapsed_s=time.perf_counter() - tracker.t0, budget_exhausted=tracker.exhausted)
    report.final = {
        "phi": instance.phi(x_final), "omega": instance.outer(x_final), "alpha": alpha,
        "N": report.N, "M": report.M, "R": report.R, "budget_exhausted": tracker.exhausted,
    }
    ref = instance.reference or {}
    if "omega_star" in ref:
        p = instance.outer.project(x_final, ref["omega_star"])
        report.final["feas_dist"] = float(np.linalg.norm(x_final - p))
    return report


def italex_smooth(instance, eps_target, eps1=None, alpha0=None, x0=None, u0=None,
                  step="pg", **kwargs):
    """ITALEX-CT for ``g = 0`` on the un-lifted variable; iterates stay in ``Lev(alpha_k)``."""
    return italex_ct(instance, eps_target, eps1, alpha0=alpha0, x0=x0, u0=u0, step=step,
                     smooth=True, **kwargs)


def iteration_budget(instance, eps, eps1, phi_hat_0, step="pg", *, omega_star=None,
                     phi_star=None, omega_z0=None, phi_bar_1=None, smooth=False):
    """Worst-case counts ``K1``, ``K2`` and ``N`` of the step-complexity theorem.

    ``omega_star`` and ``phi_star`` default to the instance reference;
    ``phi_bar_1`` defaults to ``phi_star`` (which can only enlarge ``K1``).
    ``omega_z0`` defaults to ``omega(0)``.
    """
    ref = instance.reference or {}
    omega_star = ref.get("omega_star") if omega_star is None else omega_star
    phi_star = ref.get("phi_star") if phi_star is None else phi_star
    if omega_star is None or phi_star is None:
        raise InvalidArgument("iteration_budget needs omega_star and phi_star")
    if phi_bar_1 is None:
        phi_bar_1 = phi_star
    if omega_z0 is None:
        omega_z0 = instance.outer(np.zeros(instance.dim))
    outer = instance.outer
    D_lev = outer.diameter(omega_star)
    rounds = math.ceil(math.log2(eps1 / eps) - 1e-12) if eps1 > eps else 0
    if smooth:
        L = instance.lipschitz
        D2 = D_lev ** 2
        N = math.ceil((2.0 * L / eps) ** (0.5 * outer.kappa) * outer.gamma
                      * max(omega_star - omega_z0, 0.0))
    else:
        L = instance.lipschitz + 2.0
        D_big = instance.nonsmooth.domain_diameter + D_lev
        if step == "pg":
            delta0 = phi_hat_0 - phi_star + 0.5 * eps1
            D2 = min(6.0 * delta0 + 4.0 * D_lev ** 2, D_big ** 2)
        elif math.isfinite(D_big):
            D2 = D_big ** 2
        else:
            # ball-restricted GCG: radius D_tilde <= D_hat_0 plus the level-set block
            delta0 = phi_hat_0 - phi_star + 0.5 * eps1
            D2 = 6.0 * delta0 + 4.0 * D_lev ** 2 + D_lev ** 2
        N = math.ceil(2.0 ** outer.kappa * outer.gamma * max(omega_star - omega_z0, 0.0)
                      / eps ** (0.5 * outer.kappa))
    N += rounds + 1
    eta1 = 0.5
    eta2 = math.inf if D2 == 0 else 1.0 / (2.0 * L * D2)
    arg = min(eta2 / eta1, 4.0 / eps1) * (phi_hat_0 - phi_bar_1)
    K1 = max(math.log2(arg), 0.0) if arg > 0 else 0.0
    K2 = (32.0 / (eta2 * eps) if math.isfinite(eta2) else 0.0) \
        + (math.log2(9.0) + 2.0) * (rounds + 1)
    return {"K1": K1, "K2": K2, "N": float(N)}


def check_xi_sequence(xi, eta):
    """Check ``xi_p <= max(2/eta, xi_1) / p`` for a sequence obeying the recursion.

    The recursion ``xi_{p+1} <= xi_p - eta xi_{p+1}^2`` (and ``xi >= 0``) is a
    precondition; a violation raises ``InvalidArgument``.
    """
    if not eta > 0:
        raise InvalidArgument("eta must be positive")
    xi = [float(v) for v in xi]
    if not xi:
        return True
    slack = 1e-12
    for p in range(len(xi) - 1):
        a, b = xi[p], xi[p + 1]
        if a < -slack or b < -slack or b > a - eta * b * b + slack * max(1.0, abs(a)):
            raise InvalidArgument(f"sequence violates the recursion at p={p + 1}")
    c = max(2.0 / eta, xi[0])
    return all(v <= c / p + slack * max(1.0, c) for p, v in enumerate(xi, start=1))
