"""Problem generators, reference values, metrics and the experiment runner.

Random streams come from numpy's counter-based Philox generator, keyed by
the experiment seed; instance ``i`` of an experiment uses the ``i``-th child
of ``SeedSequence(seed)``.
"""

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, run_baseline
from .errors import InvalidArgument, UnsupportedConfiguration
from .fista import fista
from .geometry import L1Norm, outer_from_dict
from .problem import BilevelInstance, LeastSquares, nonsmooth_from_dict, spectral_norm_sq
from .solver import italex_ct

log = logging.getLogger(__name__)

METHODS = ("italex-pg", "italex-gcg", "italex-smooth", "bigsam", "irpg")


def rng_from_seed(seed):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(int(seed)))


def first_difference_Q(n):
    """``L^T L + I`` with ``L`` the ``(n-1) x n`` forward-difference matrix."""
    L = np.zeros((max(n - 1, 0), n))
    idx = np.arange(n - 1)
    L[idx, idx] = -1.0
    L[idx, idx + 1] = 1.0
    return L.T @ L + np.eye(n)


def generate_lsq(n, m, k_sparse, sigma, seed, cond=100.0, g="none", omega=None,
                 identity=False):
    """Random least-squares bilevel instance ``f(x) = ||A x - b||^2``.

    ``A = U diag(s) V^T`` with ``s`` log-spaced from 1 down to ``1/cond``, a
    ``k_sparse``-sparse ground truth ``x_true`` (nonnegative when ``g`` is the
    nonnegative indicator) and ``b = A x_true + sigma * noise``. ``identity``
    forces ``A = I`` (square only), a test hook with ``X* = {x_true}``.
    """
    if n < 1 or m < 1:
        raise InvalidArgument(f"need positive dimensions, got n={n}, m={m}")
    if not 0 <= k_sparse <= n:
        raise InvalidArgument(f"k_sparse={k_sparse} must lie in [0, n={n}]")
    if sigma < 0 or cond < 1:
        raise InvalidArgument("need sigma >= 0 and cond >= 1")
    rng = rng_from_seed(seed)
    if identity:
        if m != n:
            raise InvalidArgument("identity hook needs m == n")
        A = np.eye(n)
    else:
        r = min(m, n)
        U, _ = np.linalg.qr(rng.standard_normal((m, r)))
        V, _ = np.linalg.qr(rng.standard_normal((n, r)))
        s = np.logspace(0.0, -math.log10(cond), r)
        A = (U * s) @ V.T
    x_true = np.zeros(n)
    support = rng.choice(n, size=k_sparse, replace=False)
    vals = rng.standard_normal(k_sparse)
    if g == "nonneg":
        vals = np.abs(vals)
    x_true[np.sort(support)] = vals
    b = A @ x_true + sigma * rng.standard_normal(m)
    L_f = 2.0 * spectral_norm_sq(A, tol=1e-8)
    f = LeastSquares(A, b, lipschitz_grad=L_f)
    gspec = g if isinstance(g, dict) else {"kind": g}
    ospec = dict(omega or {"kind": "l1"})
    if ospec["kind"] in ("ellipsoid", "qnorm") and "Q" not in ospec:
        ospec["Q"] = first_difference_Q(n) if ospec.get("difference", True) else np.eye(n)
    inst = BilevelInstance(f, nonsmooth_from_dict(gspec, n), outer_from_dict(ospec))
    inst.x_true = x_true
    return inst


def _stall_stop(tol, patience=200):
    """Stop once the gradient mapping is below ``tol`` or the objective has not
    improved by a relative 1e-13 for ``patience`` iterations (round-off floor)."""
    state = {"best": math.inf, "since": 0}

    def stop(k, x, fx, gm):
        if gm <= tol:
            return True
        if fx < state["best"] - 1e-13 * max(1.0, abs(state["best"])):
            state["best"], state["since"] = fx, 0
        else:
            state["since"] += 1
        return state["since"] >= patience

    return stop


def _phi_fista(instance, x0, tol, max_iter=500_000):
    f, g = instance.smooth, instance.nonsmooth

    return fista(f.value, f.gradient, g.prox, g.project(x0), f.lipschitz_grad, max_iter,
                 stop=_stall_stop(tol))


def _direct_inner_solution(instance):
    """Exact-ish inner minimizer from a direct solver (scipy), or ``None``."""
    from scipy.optimize import lsq_linear

    A, b = instance.smooth.A, instance.smooth.b
    g = instance.nonsmooth
    if g.kind == "none":
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        return x
    if g.kind == "nonneg":
        bounds = (0.0, np.inf)
    elif g.kind == "box":
        bounds = (g.lower, g.upper)
    else:
        return None
    res = lsq_linear(A, b, bounds=bounds, method="bvls", tol=1e-14, max_iter=10_000)
    return np.clip(res.x, *bounds) if g.kind == "box" else np.maximum(res.x, 0.0)


def reference_phi_star(instance, tol=1e-10, x0=None, max_iter=500_000):
    """High-accuracy ``phi*`` from a direct solve polished by restarted FISTA.

    When a direct solver applies (``g`` is zero, nonnegativity or a box) its
    solution warm-starts FISTA; otherwise FISTA starts from ``x0``. FISTA runs
    until its gradient-mapping norm is below ``tol * 1e-2``. The smallest
    attained value is returned; every candidate upper-bounds ``phi*``.
    """
    return instance.phi(_inner_solution(instance, tol * 1e-2, x0, max_iter))


def _inner_solution(instance, tol=1e-12, x0=None, max_iter=500_000):
    xd = _direct_inner_solution(instance)
    start = xd if xd is not None else (np.zeros(instance.dim) if x0 is None else x0)
    xf, _, _ = _phi_fista(instance, start, tol, max_iter)
    if xd is None:
        return xf
    if instance.phi(xd) > instance.phi(xf) + max(1e-10, 1e-8 * instance.phi(xf)):
        log.warning("direct inner solve is off by %.3e", instance.phi(xd) - instance.phi(xf))
    return xf if instance.phi(xf) <= instance.phi(xd) else xd


def reference_omega_star(instance, tol=1e-8, method="exact"):
    """``omega*``, the least outer value over the inner solution set.

    ``exact`` uses the fact that ``A x`` is constant on the inner solution set:
    it solves ``min omega(x) s.t. A x = A x_hat, x in dom g`` with cvxpy.
    ``path`` returns ``omega`` at the smallest regularization weight whose
    ``phi``-gap is within ``tol``; it approaches ``omega*`` from below.
    """
    if method == "path":
        phi_star = reference_phi_star(instance, min(tol, 1e-10))
        pts = regularization_path(instance, tol=min(tol, 1e-10) * 1e-2, phi_star=phi_star)
        ok = [p for p in pts if p["phi_gap"] <= tol]
        if not ok:
            return pts[-1]["omega"]
        return min(ok, key=lambda p: p["lam"])["omega"]
    if method != "exact":
        raise InvalidArgument(f"unknown method {method!r}")
    import cvxpy as cp

    x_hat = _inner_solution(instance)
    A = instance.smooth.A
    p = A @ x_hat
    x = cp.Variable(instance.dim)
    cons = [A @ x == p]
    g = instance.nonsmooth
    if g.kind == "nonneg":
        cons.append(x >= 0)
    elif g.kind == "box":
        cons += [x >= g.lower, x <= g.upper]
    outer = instance.outer
    if outer.kind == "l1":
        obj = cp.norm1(x)
    elif outer.kind == "elastic_net":
        obj = cp.norm1(x) + outer.rho * cp.sum_squares(x)
    elif outer.kind in ("ellipsoid", "qnorm"):
        Lc = np.linalg.cholesky(outer.Q).T
        expr = Lc @ (x - outer.center)
        obj = cp.norm2(expr) if outer.kind == "ellipsoid" else cp.sum_squares(expr)
    else:
        raise UnsupportedConfiguration(f"no exact reference for outer kind {outer.kind!r}")
    prob = cp.Problem(cp.Minimize(obj), cons)
    try:
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12,
                   tol_feas=1e-12)
    except Exception:  # solver failures fall back to the default chain
        prob.solve()
    xs = np.asarray(x.value, dtype=float)
    if g.kind == "nonneg":
        xs = np.maximum(xs, 0.0)
    elif g.kind == "box":
        xs = np.clip(xs, g.lower, g.upper)
    return float(outer(xs)), xs


def reference_h(instance, alpha, tol=1e-10, starts=3, seed=0, max_iter=200_000):
    """``h(alpha) = min phi(y1) + ||y1 - y2||^2`` over ``omega(y2) <= alpha``.

    Long restarted FISTA runs on the lifted problem from several starts; the
    best value is returned.
    """
    f, g, outer = instance.smooth, instance.nonsmooth, instance.outer
    n = instance.dim
    L = f.lipschitz_grad + 4.0  # Lipschitz constant of the full lifted gradient

    def value(v):
        y1, y2 = v[:n], v[n:]
        d = y1 - y2
        return f.value(y1) + float(d @ d)

    def grad(v):
        y1, y2 = v[:n], v[n:]
        d = y1 - y2
        return np.concatenate([f.gradient(y1) + 2.0 * d, -2.0 * d])

    def prox(v, t):
        return np.concatenate([g.prox(v[:n], t), outer.project(v[n:], alpha)])

    rng = rng_from_seed(seed)
    best = math.inf
    starts_list = [np.zeros(2 * n)]
    x_in = _inner_solution(instance)
    starts_list.append(np.concatenate([x_in, outer.project(x_in, alpha)]))
    while len(starts_list) < starts:
        starts_list.append(rng.standard_normal(2 * n))
    for v0 in starts_list[:max(starts, 1)]:
        v0 = prox(v0, 1.0)
        v, fv, _ = fista(value, grad, prox, v0, L, max_iter, stop=_stall_stop(tol))
        best = min(best, fv)
    return best


def _path_prox(instance, lam):
    """Prox of ``t (g + lam omega)`` and any extra smooth term for ``(P_lam)``."""
    g, outer = instance.nonsmooth, instance.outer
    kind = outer.kind
    if kind in ("l1", "elastic_net"):
        def prox(v, t):
            return g.prox(outer.prox(v, t * lam), t)
        return prox, None, 0.0
    if kind == "qnorm":
        return g.prox, (lambda x: lam * outer.gradient(x), lambda x: lam * outer(x)), \
            lam * outer.lipschitz_grad
    raise UnsupportedConfiguration(f"regularization path needs a prox for {kind!r}")


def default_lambdas(instance, levels=25):
    lam_max = 0.5 * instance.lipschitz  # lambda_max(A^T A)
    return [lam_max / 2.0 ** l for l in range(1, levels + 1)]


def regularization_path(instance, lambdas=None, tol=1e-10, phi_star=None, max_iter=200_000):
    """Solve ``min phi + lam omega`` for decreasing ``lam`` with warm starts.

    Returns dicts ``{lam, phi, phi_gap, omega, x}`` in the order of ``lambdas``.
    """
    lambdas = default_lambdas(instance) if lambdas is None else list(lambdas)
    if phi_star is None:
        phi_star = reference_phi_star(instance)
    f = instance.smooth
    x = np.zeros(instance.dim)
    x = instance.nonsmooth.project(x)
    out = []
    for lam in lambdas:
        if lam < 0:
            raise InvalidArgument("lambdas must be nonnegative")
        prox, extra, L_extra = _path_prox(instance, lam)
        if extra is None:
            val = lambda v, lam=lam: f.value(v) + lam * instance.outer(v)
            grad = f.gradient
        else:
            eg, ev = extra
            val = lambda v, ev=ev: f.value(v) + ev(v)
            grad = lambda v, eg=eg: f.gradient(v) + eg(v)

        x, _, _ = fista(val, grad, prox, x, f.lipschitz_grad + L_extra, max_iter,
                        stop=_stall_stop(tol))
        phi = instance.phi(x)
        out.append({"lam": lam, "phi": phi, "phi_gap": phi - phi_star,
                    "omega": instance.outer(x), "x": x.copy()})
    return out


@dataclass
class MetricSeries:
    grid: list
    delta_phi: dict = field(default_factory=dict)
    delta_omega: dict = field(default_factory=dict)
    flagged_zero_norm: list = field(default_factory=list)

    def rows(self):
        for method in self.delta_phi:
            for t, dp, dw in zip(self.grid, self.delta_phi[method], self.delta_omega[method]):
                yield t, method, dp, dw


def _snapshot_at(snaps, t, key):
    """Last snapshot at or before ``t`` (snapshots are sorted by ``key``)."""
    best = snaps[0]
    for s in snaps:
        if s[key] <= t:
            best = s
        else:
            break
    return best


def compute_metrics(runs, refs, time_grid, key="it"):
    """Average normalized gaps over instances.

    ``runs`` is a list of ``{"instance": i, "method": m, "snapshots": [...]}``
    and ``refs[i]["phi_star"]`` the inner optimum of instance ``i``. The
    normalizer ``||x_i*||^2`` comes from the snapshot with the smallest
    ``phi`` across all methods of instance ``i`` (clamped below by 1e-12);
    ``omega_max^i`` is the largest ``omega`` seen on instance ``i``.
    """
    if not runs:
        raise InvalidArgument("no runs to aggregate")
    by_inst = {}
    for r in runs:
        by_inst.setdefault(r["instance"], []).append(r)
    methods = []
    for r in runs:
        if r["method"] not in methods:
            methods.append(r["method"])
    norm2, omax, flagged = {}, {}, []
    for i, rs in by_inst.items():
        allsnaps = [s for r in rs for s in r["snapshots"]]
        best = min(allsnaps, key=lambda s: s["phi"])
        if best["xnorm2"] < 1e-12:
            flagged.append(i)
        norm2[i] = max(1e-12, best["xnorm2"])
        omax[i] = max(s["omega"] for s in allsnaps)
    series = MetricSeries(list(time_grid), flagged_zero_norm=flagged)
    for m in methods:
        dphi, dom = [], []
        for t in time_grid:
            ps, ws = [], []
            for i, rs in by_inst.items():
                for r in rs:
                    if r["method"] != m:
                        continue
                    s = _snapshot_at(r["snapshots"], t, key)
                    ps.append((s["phi"] - refs[i]["phi_star"]) / norm2[i])
                    ws.append(1.0 - s["omega"] / omax[i] if omax[i] > 0 else 0.0)
            dphi.append(float(np.mean(ps)))
            dom.append(float(np.mean(ws)))
        series.delta_phi[m] = dphi
        series.delta_omega[m] = dom
    return series


@dataclass
class ExperimentConfig:
    generator: dict
    instances: int = 1
    methods: list = field(default_factory=lambda: [{"name": "italex-pg"}])
    budget: dict = field(default_factory=lambda: {"iterations": 1000})
    snapshot_period: int = 50
    grid_points: int = 21
    eps: float = 1e-8
    eps1: float = 0.1
    output_dir: str = "bench_out"

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        if "generator" not in known:
            raise InvalidArgument("config needs a 'generator' section")
        cfg = cls(**known)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError:
            raise InvalidArgument(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(d)

    def validate(self):
        gen = self.generator
        for k in ("n", "m", "k_sparse"):
            if k not in gen:
                raise InvalidArgument(f"generator needs {k!r}")
        if self.instances < 1:
            raise InvalidArgument("instances must be >= 1")
        if not self.methods:
            raise InvalidArgument("at least one method is required")
        for m in self.methods:
            if m.get("name") not in METHODS:
                raise InvalidArgument(f"unknown method {m.get('name')!r}; choose from {METHODS}")
        if not ({"iterations", "seconds"} & set(self.budget)):
            raise InvalidArgument("budget needs 'iterations' or 'seconds'")

    @property
    def iteration_mode(self):
        return "iterations" in self.budget


def method_label(spec):
    return spec.get("label") or spec["name"] + (
        f"-d{spec['delta']:g}" if spec.get("delta") is not None else "")


def run_method(instance, spec, budget, snapshot_period=50, eps=1e-8, eps1=0.1):
    """Run one method on one instance under an iteration or wall-clock budget."""
    name = spec["name"]
    iters = budget.get("iterations")
    secs = budget.get("seconds")
    if name.startswith("italex"):
        step = "gcg" if name.endswith("gcg") else spec.get("step", "pg")
        return italex_ct(instance, spec.get("eps", eps), spec.get("eps1", eps1), step=step,
                         snapshot_period=snapshot_period, max_total_steps=iters,
                         time_budget=secs, smooth=name == "italex-smooth")
    cfg = BaselineConfig(method=name, c=spec.get("c", 2.0), delta=spec.get("delta"),
                         lambda0=spec.get("lambda0"), s=spec.get("s"), t=spec.get("t"))
    return run_baseline(instance, cfg, iters if iters is not None else 10 ** 9,
                        snapshot_period, time_budget=secs)


def _run_instance(args):
    cfg, i, child = args
    gen = dict(cfg.generator)
    gen.pop("seed", None)
    inst = generate_lsq(seed=child, **gen)
    phi_star = reference_phi_star(inst)
    runs = []
    for spec in cfg.methods:
        rep = run_method(inst, spec, cfg.budget, cfg.snapshot_period, cfg.eps, cfg.eps1)
        runs.append({"instance": i, "method": method_label(spec),
                     "snapshots": rep.snapshots, "final": rep.final})
    return i, {"phi_star": phi_star}, runs


def run_experiment(config, jobs=1, write=True):
    """Generate the instances, run every method, aggregate and write outputs.

    Returns ``{"config", "refs", "runs", "metrics"}``. With an iteration
    budget the metric grid is in iterations and every output is a pure
    function of the config.
    """
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    seed = int(config.generator.get("seed", 0))
    children = np.random.SeedSequence(seed).spawn(config.instances)
    tasks = [(config, i, children[i]) for i in range(config.instances)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_instance, tasks))
    else:
        results = [_run_instance(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    refs = {i: ref for i, ref, _ in results}
    runs = [r for _, _, rs in results for r in rs]
    if config.iteration_mode:
        key, horizon = "it", config.budget["iterations"]
    else:
        key, horizon = "t_ms", 1000.0 * config.budget["seconds"]
    grid = [horizon * j / (config.grid_points - 1) for j in range(config.grid_points)] \
        if config.grid_points > 1 else [horizon]
    if key == "it":
        grid = [int(round(t)) for t in grid]
    metrics = compute_metrics(runs, refs, grid, key=key)
    bundle = {"config": config.__dict__, "refs": refs, "runs": runs, "metrics": metrics}
    if write:
        write_outputs(bundle, config.output_dir, timestamps=not config.iteration_mode)
    return bundle


def metrics_csv(metrics):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "method", "delta_phi", "delta_omega"])
    for t, m, dp, dw in metrics.rows():
        w.writerow([t, m, repr(float(dp)), repr(float(dw))])
    return buf.getvalue()


def write_outputs(bundle, out_dir, timestamps=True):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        runs = []
        for r in bundle["runs"]:
            snaps = [dict(s) for s in r["snapshots"]]
            if not timestamps:
                for s in snaps:
                    s.pop("t_ms", None)
            runs.append({**r, "snapshots": snaps})
        m = bundle["metrics"]
        doc = {
            "config": bundle["config"],
            "refs": {str(k): v for k, v in bundle["refs"].items()},
            "runs": runs,
            "metrics": {"grid": m.grid, "delta_phi": m.delta_phi,
                        "delta_omega": m.delta_omega,
                        "flagged_zero_norm": m.flagged_zero_norm},
        }
        (out / "results.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
        (out / "metrics.csv").write_text(metrics_csv(m))
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc.strerror}") from exc
