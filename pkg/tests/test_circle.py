import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from misfitlab.circle import (
    CircleConfig,
    PeriodicDisplacement,
    bv_norm,
    circ_dist,
    constancy_check,
    core_width,
    cutoff_energy,
    energy_Erho,
    energy_tilde,
    erho_offset,
    evenly_spaced,
    even_energy,
    f_pair,
    gk_decomposition,
    gradient_tilde,
    lambda_limit_convergence,
    lambda_limit_table,
    max_gap_error,
    minimize_circle,
    periodic_energy_identity,
)
from misfitlab.exceptions import (
    BadK,
    CoincidentPoints,
    CutoffTooLarge,
    CutoffViolation,
    InvalidParameters,
    OnBoundary,
    SeparationViolation,
)

ORACLES = Path(__file__).parent / "oracles"


def random_config(rng, N, rho=None):
    rho = 0.5 / N if rho is None else rho
    gaps = rho + (1 - N * rho) * rng.dirichlet(np.ones(N))
    x = rng.uniform() + np.concatenate(([0.0], np.cumsum(gaps[:-1])))
    return CircleConfig(tuple(x), rho)


def test_circular_distance():
    assert circ_dist(0.1, 0.9) == pytest.approx(0.2)
    assert circ_dist(0.3, 0.3) == 0.0
    assert circ_dist(0.0, 0.5) == 0.5


def test_config_validation():
    with pytest.raises(InvalidParameters):
        CircleConfig((0.0, 0.5), 0.5)
    with pytest.raises(SeparationViolation):
        CircleConfig((0.0, 0.05), 0.1)
    X = CircleConfig((1.2, 0.7), 0.1)
    assert X.points == pytest.approx((0.2, 0.7))


def test_pair_energy_values():
    assert energy_tilde(CircleConfig((0.3,), 0.1)) == 0.0
    assert energy_tilde(evenly_spaced(2, 0.1)) == pytest.approx(4 * (math.log(2) + 1), rel=1e-14)
    assert energy_tilde(CircleConfig((0.0, 0.4), 0.1)) == pytest.approx(4 * (-math.log(0.4) + 0.8), rel=1e-14)
    assert even_energy(2) == pytest.approx(6.772588722239782, rel=1e-14)


def test_hand_gradient():
    g = gradient_tilde(CircleConfig((0.0, 0.4), 0.1))
    assert g[1] == pytest.approx(-2.0, abs=1e-8)
    assert g[0] == pytest.approx(2.0, abs=1e-8)


def test_gradient_vanishes_when_even():
    for N in range(2, 9):
        assert np.abs(gradient_tilde(evenly_spaced(N, 0.5 / N, offset=0.13))).max() < 1e-10


def test_gradient_on_boundary():
    with pytest.raises(OnBoundary):
        gradient_tilde(CircleConfig((0.0, 0.1), 0.1))


def test_coincident_points():
    from misfitlab.circle import _energy_tilde

    with pytest.raises(CoincidentPoints):
        _energy_tilde(np.array([0.2, 0.2]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_gradient_sums_to_zero_and_matches_fd(N, seed):
    X = random_config(np.random.default_rng(seed), N)
    g = gradient_tilde(X)
    assert abs(g.sum()) <= 1e-9 * (1 + np.abs(g).sum())
    x = X.as_array()
    h = 1e-6
    from misfitlab.circle import _energy_tilde

    fd = np.array([(_energy_tilde(x + h * e) - _energy_tilde(x - h * e)) / (2 * h) for e in np.eye(N)])
    assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


def test_f_convexity():
    d = np.linspace(1e-3, 1 - 1e-3, 1000)
    second = np.diff(f_pair(d), 2)
    junction = np.abs(d[1:-1] - 0.5) < 2e-3
    assert np.all(second[~junction] > 0)
    assert np.all(second[junction] >= -1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31))
def test_gk_pieces(N, seed):
    X = random_config(np.random.default_rng(seed), N)
    total = 0.0
    for k in range(1, N):
        G, d = gk_decomposition(X, k)
        assert math.fsum(d) == pytest.approx(k, abs=1e-12)
        assert G >= N * f_pair(k / N) - 1e-12
        total += G
    assert 2 * total == pytest.approx(energy_tilde(X), rel=1e-12)


def test_gk_equality_at_even_points():
    X = evenly_spaced(5, 0.1, offset=0.3)
    for k in range(1, 5):
        G, d = gk_decomposition(X, k)
        np.testing.assert_allclose(d, k / 5, atol=1e-14)
        assert G == pytest.approx(5 * f_pair(k / 5), abs=1e-10)


def test_gk_bad_k():
    with pytest.raises(BadK):
        gk_decomposition(evenly_spaced(3, 0.1), 3)
    with pytest.raises(BadK):
        gk_decomposition(evenly_spaced(3, 0.1), 0)


def test_cutoff_energy_matches_brute_force():
    # frozen output of tests/oracles/erho_quadrature.py
    ref = json.loads((ORACLES / "erho_quadrature.json").read_text())
    cases = {
        "N1_rho0.1": ((0.37,), 0.1),
        "N2_even_rho0.05": ((0.0, 0.5), 0.05),
        "N2_d0.3_rho0.05": ((0.0, 0.3), 0.05),
        "N3_rho0.05": ((0.05, 0.31, 0.72), 0.05),
    }
    for key, (pts, rho) in cases.items():
        assert energy_Erho(CircleConfig(pts, rho)) == pytest.approx(ref[key], rel=1e-9), key
    assert ref["N1_rho0.1"] == pytest.approx(2 * math.log(5), rel=1e-12)


def test_cutoff_energy_prefers_even_spacing():
    assert energy_Erho(evenly_spaced(2, 0.05)) < energy_Erho(CircleConfig((0.0, 0.3), 0.05))


def test_cutoff_energy_rotation_invariant():
    X = CircleConfig((0.05, 0.31, 0.72), 0.05)
    assert energy_Erho(X.rotated(0.417)) == pytest.approx(energy_Erho(X), rel=1e-12)


def test_cutoff_energy_rejects_large_rho():
    # a pair at exactly rho is admissible
    energy_Erho(CircleConfig((0.0, 0.2), 0.2))
    # the constructor already refuses closer pairs, so bypass it
    X = CircleConfig((0.0, 0.3), 0.2)
    object.__setattr__(X, "rho", 0.35)
    with pytest.raises(CutoffTooLarge):
        energy_Erho(X)


@pytest.mark.parametrize("N", [1, 2, 3, 5])
def test_offset_constant(N):
    rng = np.random.default_rng(N)
    X = random_config(rng, N, rho=0.4 / N)
    lhs = energy_Erho(X) / (X.lam / N) ** 2 - energy_tilde(X)
    assert lhs == pytest.approx(erho_offset(N, X.rho), rel=1e-10)


def test_constancy_trivial_cases():
    X = CircleConfig((0.05, 0.31, 0.72), 0.05)
    assert constancy_check(X, X) == 0.0
    assert abs(constancy_check(X, X.rotated(0.2))) < 1e-10
    with pytest.raises(InvalidParameters):
        constancy_check(X, evenly_spaced(2, 0.05))


def test_minimize_from_given_start():
    run = minimize_circle(2, 0.1, x0=[0.0, 0.4])
    assert max_gap_error(run.config) < 1e-9
    assert run.energy <= run.start_energy
    assert run.energy == pytest.approx(even_energy(2), rel=1e-12)


def test_minimize_three_points_many_seeds():
    for seed in range(50):
        run = minimize_circle(3, 0.05, seed=seed)
        assert max_gap_error(run.config) <= 1e-6
        assert run.energy <= run.start_energy


def test_minimize_single_point():
    run = minimize_circle(1, 0.5, seed=2)
    assert run.config.N == 1 and run.energy == 0.0


def test_core_width_closes_loop():
    v = PeriodicDisplacement((0.1, 0.6), 1.0, 3.0)
    assert v.delta == pytest.approx(core_width(2, 1.0, 3.0)) == pytest.approx(0.125)
    u = v.as_piecewise()
    assert abs(u.values[-1] - u.values[0]) < 1e-14


def test_core_arc_through_zero():
    v = PeriodicDisplacement((0.0,), 1.0, 1.0)
    np.testing.assert_allclose(v.core_arcs(), [[0.0, 0.25], [0.75, 1.0]])


def test_bv_bound():
    for Lam in (1.0, 10.0, 100.0):
        v = PeriodicDisplacement((0.2, 0.55, 0.8), 1.0, Lam)
        assert bv_norm(v.h()) <= 2 * 1.0 + 1e-12


def test_identity_single_core():
    lhs, rhs = periodic_energy_identity(PeriodicDisplacement((0.3,), 1.0, 1.0), 1e-6)
    assert abs(lhs - rhs) <= 2e-6


def test_identity_small_misfit():
    # both strains scale together, so the energy scales like their square
    lhs, rhs = periodic_energy_identity(PeriodicDisplacement((0.3,), 1e-3, 1e-3), 1e-9)
    assert abs(lhs) < 1e-5 and abs(rhs) < 1e-5
    assert abs(lhs - rhs) <= 2e-9


def test_identity_rotation():
    a = periodic_energy_identity(PeriodicDisplacement((0.3,), 1.0, 1.0), 1e-7)
    b = periodic_energy_identity(PeriodicDisplacement((0.55,), 1.0, 1.0), 1e-7)
    assert a == pytest.approx(b, abs=1e-6)


def test_lambda_limit_gaps_shrink():
    X = evenly_spaced(2, 0.1)
    table = lambda_limit_table(X, [10, 100, 1000])
    gaps = [r.gap for r in table]
    assert gaps[0] > gaps[1] > gaps[2]
    assert [r.delta for r in table] == pytest.approx([1 / 22, 1 / 202, 1 / 2002])
    assert lambda_limit_convergence(X, [10, 100, 1000]) == gaps


def test_lambda_limit_needs_wide_cutoff():
    with pytest.raises(CutoffViolation):
        lambda_limit_table(evenly_spaced(2, 0.01), [1.0])


def test_cutoff_energy_of_step_limit():
    # a very large Lambda reproduces the step-profile value
    X = evenly_spaced(3, 0.1, offset=0.05)
    v = PeriodicDisplacement(X.points, 1.0, 1e4)
    assert cutoff_energy(v.h(), X.rho) == pytest.approx(energy_Erho(X), rel=5e-4)
