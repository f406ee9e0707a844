import json
from pathlib import Path

import numpy as np
import pytest

from italex.bench import (ExperimentConfig, compute_metrics, generate_lsq, metrics_csv,
                          reference_h, reference_omega_star, reference_phi_star,
                          regularization_path, rng_from_seed, run_experiment)
from italex.errors import InvalidArgument, UnsupportedConfiguration
from italex.geometry import EllipsoidNorm
from italex.problem import BilevelInstance, LeastSquares, Zero
from italex.solver import italex_smooth

from refs import grid_h_toy

GOLDEN = Path(__file__).parent / "golden"


def test_generator_is_deterministic():
    a = generate_lsq(30, 20, 5, 0.1, seed=11, g="nonneg")
    b = generate_lsq(30, 20, 5, 0.1, seed=11, g="nonneg")
    c = generate_lsq(30, 20, 5, 0.1, seed=12, g="nonneg")
    assert np.array_equal(a.smooth.A, b.smooth.A) and np.array_equal(a.smooth.b, b.smooth.b)
    assert not np.array_equal(a.smooth.A, c.smooth.A)
    assert np.count_nonzero(a.x_true) == 5 and np.all(a.x_true >= 0)
    # the counter-based stream is fixed by the seed
    assert rng_from_seed(0).bit_generator.__class__.__name__ == "Philox"


def test_generator_rejects_bad_arguments():
    with pytest.raises(InvalidArgument):
        generate_lsq(0, 5, 0, 0.1, seed=0)
    with pytest.raises(InvalidArgument):
        generate_lsq(5, 5, 6, 0.1, seed=0)
    with pytest.raises(InvalidArgument):
        generate_lsq(5, 4, 1, 0.1, seed=0, identity=True)


@pytest.mark.parametrize("cond", [10.0, 100.0, 1e4])
def test_generator_condition_number(cond):
    inst = generate_lsq(40, 60, 5, 0.0, seed=3, cond=cond)
    s = np.linalg.svd(inst.smooth.A, compute_uv=False)
    assert abs(s[0] / s[-1] - cond) <= 0.05 * cond
    assert inst.lipschitz == pytest.approx(2 * s[0] ** 2, rel=1e-6)


def test_identity_hook_has_unique_solution():
    inst = generate_lsq(8, 8, 3, 0.0, seed=1, identity=True, omega={"kind": "l1"})
    assert reference_phi_star(inst) <= 1e-20
    omega_star, xs = reference_omega_star(inst)
    assert omega_star == pytest.approx(np.abs(inst.x_true).sum(), abs=1e-7)


def test_rank_deficient_instance_has_many_minimizers():
    inst = generate_lsq(20, 10, 3, 0.05, seed=2)
    phi_star = reference_phi_star(inst)
    _, xs = reference_omega_star(inst)
    null = np.linalg.svd(inst.smooth.A)[2][-1]
    assert inst.phi(xs + 5 * null) == pytest.approx(phi_star, abs=1e-8)
    assert inst.outer(xs + 5 * null) > inst.outer(xs)


def test_reference_phi_star_independent_of_start():
    inst = generate_lsq(15, 10, 3, 0.05, seed=9, g={"kind": "box", "lower": -0.5, "upper": 0.5})
    a = reference_phi_star(inst, x0=np.zeros(15))
    b = reference_phi_star(inst, x0=np.full(15, 0.7))
    assert a == pytest.approx(b, abs=1e-9)


def test_reference_omega_star_toy(toy):
    omega_star, xs = reference_omega_star(toy)
    assert omega_star == pytest.approx(2.0, abs=1e-6)
    assert reference_omega_star(toy, method="path") == pytest.approx(2.0, abs=1e-3)
    with pytest.raises(InvalidArgument):
        reference_omega_star(toy, method="magic")


def test_path_reference_approaches_from_below():
    inst = generate_lsq(20, 12, 3, 0.01, seed=4, g="none", omega={"kind": "l1"}, cond=5)
    exact, _ = reference_omega_star(inst)
    path = reference_omega_star(inst, tol=1e-6, method="path")
    # path points trade phi for omega, so they sit at or below omega* up to solve accuracy
    assert path <= exact * (1 + 1e-5)
    assert path >= 0.9 * exact


def test_exact_omega_star_matches_smooth_variant():
    inst = generate_lsq(20, 12, 3, 0.01, seed=4, g="none", omega={"kind": "l1"}, cond=5)
    omega_star, _ = reference_omega_star(inst)
    rep = italex_smooth(inst, 1e-6, 0.1)
    assert abs(rep.final["omega"] - omega_star) <= 1e-2 * omega_star


def test_reference_h_toy(toy):
    assert reference_h(toy, 1.0) == pytest.approx(0.5, abs=1e-8)
    assert reference_h(toy, 1.0) == pytest.approx(grid_h_toy(1.0), abs=1e-6)
    assert reference_h(toy, 2.5) == pytest.approx(0.0, abs=1e-9)


def test_reference_h_nonincreasing_and_convex():
    inst = generate_lsq(10, 6, 2, 0.05, seed=5, g="nonneg", omega={"kind": "l1"}, cond=5)
    omega_star, _ = reference_omega_star(inst)
    alphas = np.linspace(0.0, 1.2 * omega_star, 9)
    h = np.array([reference_h(inst, a) for a in alphas])
    assert np.all(np.diff(h) <= 1e-8)
    assert np.all(h[1:-1] <= 0.5 * (h[:-2] + h[2:]) + 1e-8)
    assert h[-1] == pytest.approx(reference_phi_star(inst), abs=1e-8)


def _snap(it, phi, omega, xnorm2=1.0):
    return {"it": it, "phi": phi, "omega": omega, "xnorm2": xnorm2}


def test_compute_metrics_hand_values():
    refs = {0: {"phi_star": 1.0}, 1: {"phi_star": 0.0}}
    runs = [
        {"instance": 0, "method": "a", "snapshots": [_snap(0, 3.0, 1.0), _snap(10, 1.5, 2.0, 2.0)]},
        {"instance": 0, "method": "b", "snapshots": [_snap(0, 3.0, 1.0), _snap(5, 2.0, 4.0)]},
        {"instance": 1, "method": "a", "snapshots": [_snap(0, 1.0, 0.5, 4.0)]},
        {"instance": 1, "method": "b", "snapshots": [_snap(0, 0.5, 1.0, 0.5)]},
    ]
    m = compute_metrics(runs, refs, [0, 10])
    # instance 0: x* from phi=1.5 (xnorm2 2), omega_max 4; instance 1: x* from phi=0.5, omega_max 1
    assert m.delta_phi["a"] == pytest.approx([(1.0 + 2.0) / 2, (0.25 + 2.0) / 2])
    assert m.delta_phi["b"] == pytest.approx([(1.0 + 1.0) / 2, (0.5 + 1.0) / 2])
    assert m.delta_omega["a"] == pytest.approx([(0.75 + 0.5) / 2, (0.5 + 0.5) / 2])
    assert m.delta_omega["b"] == pytest.approx([(0.75 + 0.0) / 2, (0.0 + 0.0) / 2])
    assert m.flagged_zero_norm == []
    lines = metrics_csv(m).splitlines()
    assert lines[0] == "t,method,delta_phi,delta_omega" and len(lines) == 5


def test_compute_metrics_trivial_cases():
    refs = {0: {"phi_star": 2.0}}
    runs = [{"instance": 0, "method": "a", "snapshots": [_snap(0, 2.0, 3.0, 0.0)]}]
    m = compute_metrics(runs, refs, [0, 5])
    assert m.delta_phi["a"] == [0.0, 0.0] and m.delta_omega["a"] == [0.0, 0.0]
    assert m.flagged_zero_norm == [0]
    with pytest.raises(InvalidArgument):
        compute_metrics([], refs, [0])


def test_regularization_path_limits():
    inst = generate_lsq(20, 15, 3, 0.01, seed=7, g="nonneg", omega={"kind": "l1"}, cond=10)
    pts = regularization_path(inst, [1e4, 1e-7])
    assert pts[0]["omega"] == 0.0 and pts[0]["phi_gap"] > 0.1
    assert pts[1]["phi_gap"] <= 1e-5
    full = regularization_path(inst)
    gaps = [p["phi_gap"] for p in full]
    assert all(b <= a + 1e-10 for a, b in zip(gaps, gaps[1:]))
    with pytest.raises(InvalidArgument):
        regularization_path(inst, [-1.0])


def test_regularization_path_needs_prox():
    inst = BilevelInstance(LeastSquares(np.eye(2), [1.0, 1.0]), Zero(), EllipsoidNorm(np.eye(2)))
    with pytest.raises(UnsupportedConfiguration):
        regularization_path(inst, [1.0])


SMALL = {"generator": {"n": 10, "m": 8, "k_sparse": 2, "sigma": 0.01, "cond": 10.0,
                       "g": "nonneg", "seed": 3},
         "methods": [{"name": "italex-pg"}], "budget": {"iterations": 10},
         "snapshot_period": 2, "grid_points": 3}


def test_run_experiment_single_series(tmp_path):
    b = run_experiment({**SMALL, "output_dir": str(tmp_path)})
    assert list(b["metrics"].delta_phi) == ["italex-pg"]
    assert b["metrics"].grid == [0, 5, 10]
    assert (tmp_path / "results.json").exists() and (tmp_path / "metrics.csv").exists()
    doc = json.loads((tmp_path / "results.json").read_text())
    assert "t_ms" not in doc["runs"][0]["snapshots"][0]


def test_run_experiment_is_deterministic(tmp_path):
    cfg = {**SMALL, "instances": 2,
           "methods": [{"name": "italex-pg"}, {"name": "bigsam", "delta": 0.1}, {"name": "irpg", "delta": 0.1}]}
    run_experiment({**cfg, "output_dir": str(tmp_path / "a")})
    run_experiment({**cfg, "output_dir": str(tmp_path / "b")}, jobs=2)
    for name in ("metrics.csv", "results.json"):
        a = (tmp_path / "a" / name).read_text().replace(str(tmp_path / "a"), "OUT")
        b = (tmp_path / "b" / name).read_text().replace(str(tmp_path / "b"), "OUT")
        assert a == b


def test_experiment_config_validation(tmp_path):
    with pytest.raises(InvalidArgument):
        ExperimentConfig.from_dict({**SMALL, "bogus": 1})
    with pytest.raises(InvalidArgument):
        ExperimentConfig.from_dict({**SMALL, "methods": [{"name": "mng"}]})
    with pytest.raises(InvalidArgument):
        ExperimentConfig.from_dict({**SMALL, "budget": {}})
    with pytest.raises(InvalidArgument):
        ExperimentConfig.load(tmp_path / "nope.json")


def test_write_failure_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        run_experiment({**SMALL, "output_dir": str(blocker / "sub")})


def test_golden_bench_ordering():
    cfg = ExperimentConfig.load(GOLDEN / "bench_config.json")
    expected = json.loads((GOLDEN / "bench_expected.json").read_text())
    m = run_experiment(cfg, jobs=2, write=False)["metrics"]
    final = {k: v[-1] for k, v in m.delta_phi.items()}
    assert sorted(final, key=final.get) == expected["final_delta_phi_order"]
    for k, v in expected["final_delta_phi"].items():
        assert final[k] == pytest.approx(v, rel=1e-4)
    # ITALEX variants descend over the grid
    for k in ("italex-pg", "italex-gcg"):
        assert all(b <= a + 1e-9 for a, b in zip(m.delta_phi[k], m.delta_phi[k][1:]))
