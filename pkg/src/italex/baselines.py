"""Baseline bilevel methods: BiG-SAM and iteratively regularized proximal gradient.

Both need a gradient of the outer function. Nonsmooth outer functions are
replaced by a Huber-smoothed surrogate; the ellipsoid norm ``||x - c||_Q`` is
replaced by its square, which has the same minimizers over any set.
"""

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument, UnsupportedConfiguration
from .solver import SolveReport


@dataclass
class BaselineConfig:
    method: str = "bigsam"
    s: Optional[float] = None  # outer stepsize, default 1/L_omega
    t: Optional[float] = None  # inner stepsize, default 1/L_f
    c: float = 2.0  # alpha_k = min(1, c/k)
    lambda0: Optional[float] = None  # lambda_k = lambda0/k, default L_f
    delta: Optional[float] = None  # Huber smoothing parameter

    def __post_init__(self):
        if self.method not in ("bigsam", "irpg"):
            raise InvalidArgument(f"unknown baseline {self.method!r}")
        if self.c <= 0:
            raise InvalidArgument("schedule coefficient c must be positive")
        if self.delta is not None and self.delta <= 0:
            raise InvalidArgument("Huber delta must be positive")


def huber_gradient(x, delta, rho=0.0):
    """Gradient of ``sum_i H_delta(x_i) + rho ||x||^2``."""
    return np.clip(x / delta, -1.0, 1.0) + 2.0 * rho * x


def huber_value(x, delta, rho=0.0):
    ax = np.abs(x)
    h = np.where(ax <= delta, 0.5 * x * x / delta, ax - 0.5 * delta)
    return float(h.sum() + rho * (x @ x))


def huber_smooth_outer(outer, delta):
    """``(value, gradient, L)`` of the Huber surrogate of an l1 or elastic-net outer."""
    if not delta > 0:
        raise InvalidArgument("Huber delta must be positive")
    rho = getattr(outer, "rho", 0.0) if outer.kind == "elastic_net" else 0.0
    if outer.kind not in ("l1", "elastic_net"):
        raise UnsupportedConfiguration(f"Huber smoothing applies to l1/elastic_net, not {outer.kind}")
    return (lambda x: huber_value(x, delta, rho),
            lambda x: huber_gradient(x, delta, rho),
            1.0 / delta + 2.0 * rho)


def outer_gradient_map(outer, delta=None):
    """``(value, gradient, L_omega)`` of the smooth outer surrogate a baseline descends on."""
    if outer.kind == "qnorm":
        return outer, outer.gradient, outer.lipschitz_grad
    if outer.kind == "ellipsoid":
        Q, c = outer.Q, outer.center
        L = 2.0 * float(np.linalg.eigvalsh(Q)[-1])
        return (lambda x: outer(x) ** 2, lambda x: 2.0 * (Q @ (x - c)), L)
    if outer.kind in ("l1", "elastic_net"):
        if delta is None:
            raise UnsupportedConfiguration(
                f"{outer.kind} outer function is nonsmooth; set a Huber delta")
        return huber_smooth_outer(outer, delta)
    raise UnsupportedConfiguration(f"no gradient map for outer kind {outer.kind!r}")


class _Prepared:
    def __init__(self, instance, cfg):
        self.grad_w, self.L_w = outer_gradient_map(instance.outer, cfg.delta)[1:]
        L_f = instance.lipschitz
        self.t = cfg.t if cfg.t is not None else 1.0 / max(L_f, 1e-300)
        self.s = cfg.s if cfg.s is not None else 1.0 / self.L_w
        self.lambda0 = cfg.lambda0 if cfg.lambda0 is not None else L_f


def bigsam_step(instance, x, k, cfg, _prep=None):
    """``alpha_k (x - s grad w(x)) + (1 - alpha_k) prox_{t g}(x - t grad f(x))``."""
    prep = _prep or _Prepared(instance, cfg)
    a = min(1.0, cfg.c / k)
    outer_part = x - prep.s * prep.grad_w(x)
    inner_part = instance.nonsmooth.prox(x - prep.t * instance.smooth.gradient(x), prep.t)
    return a * outer_part + (1.0 - a) * inner_part


def irpg_step(instance, x, k, cfg, _prep=None):
    """Prox-gradient step on ``phi + lambda_k omega`` with ``t = 1/(L_f + lambda_k L_omega)``."""
    prep = _prep or _Prepared(instance, cfg)
    lam = prep.lambda0 / k
    t = cfg.t if cfg.t is not None else 1.0 / (instance.lipschitz + lam * prep.L_w)
    v = x - t * (instance.smooth.gradient(x) + lam * prep.grad_w(x))
    return instance.nonsmooth.prox(v, t)


def run_baseline(instance, cfg, max_iter, snapshot_period=50, x0=None, callback=None,
                 time_budget=None):
    """Run a baseline for ``max_iter`` iterations and return a ``SolveReport``."""
    if isinstance(cfg, dict):
        cfg = BaselineConfig(**cfg)
    prep = _Prepared(instance, cfg)
    step = bigsam_step if cfg.method == "bigsam" else irpg_step
    x = np.zeros(instance.dim) if x0 is None else np.asarray(x0, dtype=float)
    x = instance.nonsmooth.project(x)
    t0 = time.perf_counter()
    snaps = []

    def snap(k):
        snaps.append({"t_ms": round(1000.0 * (time.perf_counter() - t0), 3), "it": k,
                      "phi": instance.phi(x), "omega": instance.outer(x),
                      "xnorm2": float(x @ x)})

    snap(0)
    k = 0
    exhausted = False
    for k in range(1, max_iter + 1):
        x = step(instance, x, k, cfg, prep)
        if callback is not None:
            callback(k, x)
        if snapshot_period and k % snapshot_period == 0:
            snap(k)
        if time_budget is not None and time.perf_counter() - t0 >= time_budget:
            exhausted = True
            break
    if snaps[-1]["it"] != k:
        snap(k)
    report = SolveReport(
        x_final=x, z_final=x, alpha_final=math.nan, alpha_trace=[], rounds=[],
        snapshots=snaps,
        config={"method": cfg.method, "c": cfg.c, "delta": cfg.delta, "s": prep.s,
                "t": prep.t, "lambda0": prep.lambda0, "max_iter": max_iter,
                "snapshot_period": snapshot_period},
        oracle_calls=0, step_iterations=k, elapsed_s=time.perf_counter() - t0,
        budget_exhausted=exhausted or k >= max_iter)
    report.final = {"phi": instance.phi(x), "omega": instance.outer(x), "alpha": None,
                    "N": 0, "M": k, "R": 0, "budget_exhausted": report.budget_exhausted}
    return report
