import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from misfitlab.core import ModelParams, PiecewiseAffine, displacement_from_config, validate_config
from misfitlab.exceptions import Infeasible, SlopeTooSteep
from misfitlab.halfline import energy_exact, energy_of_config, evenly_spaced_config
from misfitlab.interval_opt import (
    ClEstimate,
    CoreEnergy,
    SolverOptions,
    build_recovery_sequence,
    center_bounds,
    dislocation_density,
    estimate_cl,
    minimize_positions,
    plug_points,
    project_ordered,
    random_centers,
    recovery_energy,
    recovery_spacings,
    split_energy_diagnostic,
    spg_minimize,
    subadditivity_check,
)

ORACLES = Path(__file__).parent / "oracles"
UNIT = ModelParams(1.0, 1.0, 0.1, 1.0)


def core_energy_matches(params, x):
    X = validate_config(x, params)
    ref = energy_exact(displacement_from_config(X), params.l).value
    got = CoreEnergy(params).energy(X.as_array())
    return abs(got - ref) <= 1e-9 * (1 + ref), got, ref


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 40), st.floats(2.0, 12.0), st.integers(0, 2**31))
def test_core_energy_matches_block_formula(N, l, seed):
    p = ModelParams(1.0, 2.0, 0.1, l)
    N = min(N, int(l / p.delta))
    x = random_centers(N, p, np.random.default_rng(seed))
    ok, got, ref = core_energy_matches(p, x)
    assert ok, (got, ref)


def test_core_energy_truncated_and_touching():
    p = ModelParams(1.0, 1.0, 0.1, 3.0)
    lo, hi = center_bounds(p)
    x = np.array([lo, lo + 0.1, 1.0, 1.1, 1.2, hi - 0.1, hi])
    ok, got, ref = core_energy_matches(p, x)
    assert ok, (got, ref)


def test_core_energy_many_far_pairs():
    p = ModelParams(1.0, 1.0, 0.1, 20.0)
    x = np.linspace(0.05, 19.95, 100)
    ok, got, ref = core_energy_matches(p, x)
    assert ok, (got, ref)


def test_gradient_finite_differences():
    p = ModelParams(1.0, 1.5, 0.1, 6.0)
    model = CoreEnergy(p)
    rng = np.random.default_rng(3)
    x = random_centers(25, p, rng)
    x = project_ordered(x + 0.01, p.delta, *center_bounds(p))
    # keep a little room so finite differences stay feasible
    x = x[(x > 0.05) & (x < 5.95)]
    _, g = model.evaluate(x)
    h = 1e-5
    fd = np.array([(model.energy(x + h * e) - model.energy(x - h * e)) / (2 * h) for e in np.eye(x.size)])
    assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


def test_empty_configuration_energy():
    p = ModelParams(0.7, 1.0, 0.1, 3.0)
    X, E = minimize_positions(0, p)
    assert X.N == 0
    assert E == pytest.approx(0.49 * 9, rel=1e-14)


def test_single_core_minimizer_is_centred():
    ref = json.loads((ORACLES / "n1_center.json").read_text())
    X, E = minimize_positions(1, UNIT)
    assert abs(X.centers[0] - 0.5) <= 1e-3
    assert abs(X.centers[0] - ref["center"]) <= 1e-6
    assert E == pytest.approx(ref["energy"], rel=1e-12)


def test_infeasible_count():
    with pytest.raises(Infeasible):
        minimize_positions(11, UNIT)


def test_projection_feasible_and_idempotent():
    rng = np.random.default_rng(0)
    p = ModelParams(1.0, 1.0, 0.1, 2.0)
    lo, hi = center_bounds(p)
    for _ in range(50):
        y = rng.uniform(-1, 3, rng.integers(1, 15))
        x = project_ordered(y, p.delta, lo, hi)
        assert np.all(np.diff(x) >= p.delta - 1e-12)
        assert x[0] >= lo and x[-1] <= hi + 1e-12
        np.testing.assert_allclose(project_ordered(x, p.delta, lo, hi), x, atol=1e-12)


def test_projection_matches_qp_oracle():
    rng = np.random.default_rng(1)
    delta, lo, hi = 0.1, 0.0, 1.0
    for _ in range(20):
        n = int(rng.integers(2, 7))
        y = rng.uniform(-0.2, 1.2, n)
        cons = [{"type": "ineq", "fun": lambda x, i=i: x[i + 1] - x[i] - delta} for i in range(n - 1)]
        ref = minimize(lambda x: 0.5 * np.sum((x - y) ** 2), np.linspace(0.05, 0.95, n),
                       jac=lambda x: x - y, method="SLSQP", bounds=[(lo, hi)] * n, constraints=cons,
                       options={"ftol": 1e-15, "maxiter": 500}).x
        np.testing.assert_allclose(project_ordered(y, delta, lo, hi), ref, atol=1e-7)


def test_descent_is_monotone():
    p = ModelParams(1.0, 1.0, 0.1, 8.0)
    model = CoreEnergy(p)
    lo, hi = center_bounds(p)
    x0 = random_centers(40, p, np.random.default_rng(5))
    res = spg_minimize(model.evaluate, x0, lambda y: project_ordered(y, p.delta, lo, hi),
                       noise=model.noise, record_history=True)
    assert res.converged
    steps = np.diff(res.history)
    assert np.all(steps <= model.noise)
    assert res.history[-1] < model.energy(x0)


def test_unit_length_matches_exhaustive_scan():
    # frozen output of tests/oracles/cl_scan_l1.py
    ref = {int(k): v for k, v in json.loads((ORACLES / "cl_scan_l1.json").read_text()).items()}
    best = min(ref, key=ref.get)
    est = estimate_cl(UNIT, SolverOptions(restarts=8))
    assert est.N_star == best == 7
    assert est.c_l == pytest.approx(ref[best], rel=1e-9)
    for N, E in est.energies_by_N.items():
        assert E <= ref[N] * (1 + 1e-9)
    assert est.c_l > 0
    assert est.c_l <= energy_of_config(evenly_spaced_config(UNIT)) / UNIT.l


def test_estimate_is_deterministic():
    p = UNIT.with_length(2.0)
    opts = SolverOptions(restarts=3, seed=11)
    a, b = estimate_cl(p, opts), estimate_cl(p, opts)
    assert a.to_dict() == b.to_dict()


def test_estimate_round_trip():
    est = estimate_cl(UNIT.with_length(1.5), SolverOptions(restarts=2))
    back = ClEstimate.from_dict(json.loads(json.dumps(est.to_dict())))
    assert back.to_dict() == est.to_dict()
    assert back.config().N == est.N_star


def test_subadditivity_half_length():
    assert subadditivity_check(1.0, 2.0, UNIT, SolverOptions(restarts=4))


def test_subadditivity_domain():
    with pytest.raises(ValueError):
        subadditivity_check(2.0, 2.0, UNIT)


def test_subadditivity_factor_above_one():
    for h, l in [(1.0, 2.5), (3.0, 10.0), (4.9, 5.0)]:
        r = l - h * math.floor(l / h)
        assert r < h and l / (l - r) >= 1.0


def test_density_of_evenly_spaced_array():
    p = ModelParams(1.0, 1.0, 0.1, 8.0)
    X = evenly_spaced_config(p)
    hist = dislocation_density(X, 4)
    np.testing.assert_allclose(hist.normalized_density, p.n_star)
    assert sum(hist.counts) == X.N == 40


def test_density_empty():
    hist = dislocation_density(validate_config([], UNIT), 5)
    assert list(hist.counts) == [0] * 5


def test_split_diagnostic_trivial_cases():
    u = PiecewiseAffine.affine(0.0, 4.0, 2.0)
    assert split_energy_diagnostic(u, 4.0, 2.0) == 0.0
    v = displacement_from_config(evenly_spaced_config(UNIT.with_length(4.0)))
    assert split_energy_diagnostic(v, 4.0, 0.0) == 0.0
    assert split_energy_diagnostic(v, 4.0, 2.0) > 0.0


def test_split_diagnostic_decreases_for_minimizers():
    opts = SolverOptions(restarts=2, window=1)
    vals = []
    for l in (5.0, 10.0, 20.0):
        X = estimate_cl(UNIT.with_length(l), opts).config()
        vals.append(split_energy_diagnostic(displacement_from_config(X), l, l / 2))
    assert vals[0] > vals[1] > vals[2] > 0


def test_recovery_spacings_use_matching_constant():
    p = ModelParams(1.0, 3.0, 0.1, 1.0)
    w = PiecewiseAffine(np.array([0.0, 0.5, 1.0]), np.array([0.5, -0.5]))
    s = recovery_spacings(w, 100.0, p)
    assert s[0] == pytest.approx(1.0 * 0.1 / (0.5 * 10))
    assert s[1] == pytest.approx(3.0 * 0.1 / (0.5 * 10))


def test_plugged_points_spacing():
    p = UNIT.with_length(400.0)
    w = PiecewiseAffine.affine(0.5, 1.0)
    pts = plug_points(w, 400.0, p, [])
    gaps = np.diff(pts)
    np.testing.assert_allclose(gaps, 0.1 / (0.5 * 20), rtol=1e-9)


def test_slope_too_steep():
    with pytest.raises(SlopeTooSteep):
        plug_points(PiecewiseAffine.affine(50.0, 1.0), 4.0, UNIT.with_length(4.0), [])


@pytest.mark.parametrize("slope", [0.5, -0.5])
def test_recovery_is_admissible(slope):
    l = 25.0
    p = UNIT.with_length(l)
    base = evenly_spaced_config(p)
    X = build_recovery_sequence(PiecewiseAffine.affine(slope, 1.0), l, UNIT, base=base)
    assert validate_config(X.centers, X.params) == X
    F = recovery_energy(X)
    assert F == pytest.approx(energy_of_config(X) / l, rel=1e-9)
    # the rescaled end value follows the target slope
    u = displacement_from_config(X)
    assert abs(u(l) / math.sqrt(l) - slope) < 0.5


def test_estimate_consistent_with_closed_form():
    est = estimate_cl(UNIT.with_length(3.0), SolverOptions(restarts=3))
    direct = energy_of_config(est.config()) / 3.0
    assert abs(direct - est.c_l) <= est.solver_tol
    assert est.c_l <= est.energies_by_N[0] / 3.0
