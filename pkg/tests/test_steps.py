import math

import numpy as np
import pytest

from italex.errors import NumericalInconsistency, UnsupportedConfiguration
from italex.geometry import EllipsoidNorm, L1Norm
from italex.problem import BilevelInstance, LeastSquares, NonNegative, Zero
from italex.steps import (DiameterContext, _clamp, gcg_decrease_ok, gcg_step, pg_decrease_ok,
                          pg_step, smooth_gcg_step, smooth_pg_step,
                          surrogate_gap_lower_bound_check)

from refs import cvx_h, grid_h_toy


def ctx_for(inst, alpha, phi_bar=0.0, eps=0.2):
    return DiameterContext.build(inst, alpha, phi_bar, eps)


def test_gcg_toy_example(toy):
    y = toy.lifted_point([0.0], [0.5], 1.0)
    out = gcg_step(toy, y, 1.0, ctx_for(toy, 1.0))
    # p = (3, -1) by enumerating interval endpoints
    cands = [(p1, p2) for p1 in (-3.0, 3.0) for p2 in (-1.0, 1.0)]
    S_enum = max(-5 * (0.0 - p1) + 1 * (0.5 - p2) for p1, p2 in cands)
    assert out.measure == pytest.approx(16.5) == pytest.approx(S_enum)
    assert out.extras["eta"] == pytest.approx(16.5 / (4 * 11.25))
    assert out.next.y1[0] == pytest.approx(3 * out.extras["eta"])


def test_gcg_zero_gap_at_minimizer(toy):
    y = toy.lifted_point([1.5], [1.0], 1.0)
    out = gcg_step(toy, y, 1.0, ctx_for(toy, 1.0))
    assert abs(out.measure) <= 1e-9
    assert out.next.distance(y) <= 1e-6


def test_pg_toy_example(toy):
    y = toy.lifted_point([0.0], [0.0], 1.0)
    out = pg_step(toy, y, 1.0, ctx_for(toy, 1.0))
    assert out.next.y1[0] == pytest.approx(1.0) and out.next.y2[0] == 0.0
    assert out.extras["zeta"] == pytest.approx(2.0)
    assert out.phi_hat_y == 4.0 and out.phi_hat_next == pytest.approx(2.0)


def test_pg_fixed_point(toy):
    y = toy.lifted_point([1.5], [1.0], 1.0)
    out = pg_step(toy, y, 1.0, ctx_for(toy, 1.0))
    assert out.measure == pytest.approx(0.0, abs=1e-12)
    assert out.next.distance(y) <= 1e-12


def test_pg_unbounded_domain_uses_sqrt_branch():
    inst = BilevelInstance(LeastSquares(np.eye(2), [1.0, 1.0]), Zero(), L1Norm())
    ctx = ctx_for(inst, 1.0, phi_bar=0.0, eps=0.1)
    assert ctx.D_alpha == math.inf
    y = inst.lifted_point([0.0, 0.0], [0.0, 0.0], 1.0)
    out = pg_step(inst, y, 1.0, ctx)
    expected = math.sqrt(6 * (2.0 - 0.0 + 0.05) + 4 * 2.0 ** 2)
    assert out.D_step == pytest.approx(expected)
    assert math.isfinite(out.measure)


def test_d_tilde_never_exceeds_d_alpha(toy):
    ctx = ctx_for(toy, 1.0)
    for v in (0.0, 1.0, 100.0, 1e6):
        assert ctx.d_tilde(v) <= ctx.D_alpha


def test_surrogate_gap_check_examples(toy):
    h1 = grid_h_toy(1.0)
    assert h1 == pytest.approx(0.5, abs=1e-6)
    y = toy.lifted_point([0.0], [0.5], 1.0)
    assert surrogate_gap_lower_bound_check(toy, y, 1.0, h1, 16.5)
    y_opt = toy.lifted_point([1.5], [1.0], 1.0)
    assert surrogate_gap_lower_bound_check(toy, y_opt, 1.0, h1, 0.0)
    assert not surrogate_gap_lower_bound_check(toy, y, 1.0, h1, 1.0)


def test_clamp_distinguishes_noise_from_bugs():
    assert _clamp(-1e-12, "x") == 0.0
    assert _clamp(0.3, "x") == 0.3
    with pytest.raises(NumericalInconsistency):
        _clamp(-1e-6, "x")


def test_gcg_raises_on_broken_oracle(toy):
    class BadL1(L1Norm):
        def lmo(self, c, alpha):
            return -super().lmo(c, alpha)  # the worst vertex instead of the best

    inst = BilevelInstance(toy.smooth, toy.nonsmooth, BadL1())
    # grad in y1 vanishes here, so the outer block alone decides the sign of S
    y = inst.lifted_point([1.25], [0.5], 1.0)
    with pytest.raises(NumericalInconsistency):
        gcg_step(inst, y, 1.0, ctx_for(inst, 1.0))


def _random_instances():
    rng = np.random.default_rng(7)
    out = []
    for k in range(3):
        n, m = 6, 4
        A = rng.standard_normal((m, n))
        b = rng.standard_normal(m) * 2
        g = NonNegative() if k % 2 == 0 else Zero()
        outer = L1Norm() if k < 2 else EllipsoidNorm(np.diag(rng.uniform(0.5, 2, n)))
        out.append(BilevelInstance(LeastSquares(A, b), g, outer))
    return out


@pytest.mark.parametrize("inst", _random_instances(), ids=["nonneg-l1", "zero-l1", "nonneg-ell"])
def test_measures_upper_bound_gap_and_decrease(inst):
    """Both measures dominate phi_hat(y) - h(alpha); both steps decrease sufficiently."""
    alpha = 0.8
    h = cvx_h(inst, alpha)
    L = inst.lipschitz + 2.0
    n = inst.dim
    rng = np.random.default_rng(3)
    for step in (pg_step, gcg_step):
        y = inst.lifted_point(inst.nonsmooth.project(rng.standard_normal(n)),
                              inst.outer.project(rng.standard_normal(n), alpha), alpha)
        ctx = ctx_for(inst, alpha, phi_bar=h, eps=1e-3)
        D_hat = ctx.d_tilde(inst.phi_hat(y, alpha))
        for _ in range(300):
            out = step(inst, y, alpha, ctx)
            assert out.measure >= 0.0 and out.decrease >= -1e-12
            assert surrogate_gap_lower_bound_check(inst, y, alpha, h, out.measure, tol=1e-6)
            assert inst.outer.contains(out.next.y2, alpha)
            if step is gcg_step:
                assert gcg_decrease_ok(out, L)
            else:
                assert pg_decrease_ok(out, L, D_hat)
            y = out.next


def test_smooth_steps_require_zero_g(toy):
    y = toy.lifted_point([0.0], [0.0], 1.0)
    with pytest.raises(UnsupportedConfiguration):
        smooth_pg_step(toy, y, 1.0, ctx_for(toy, 1.0))
    with pytest.raises(UnsupportedConfiguration):
        smooth_gcg_step(toy, y, 1.0, ctx_for(toy, 1.0))


def test_smooth_steps_keep_iterates_in_level(toy_smooth):
    alpha = 1.2
    ctx = ctx_for(toy_smooth, alpha)
    for step in (smooth_pg_step, smooth_gcg_step):
        y = toy_smooth.lifted_point([0.0], [0.0], alpha)
        for _ in range(50):
            out = step(toy_smooth, y, alpha, ctx)
            assert abs(out.next.y1[0]) <= alpha + 1e-12
            assert np.array_equal(out.next.y1, out.next.y2)
            y = out.next
        assert y.y1[0] == pytest.approx(alpha, abs=1e-6)
