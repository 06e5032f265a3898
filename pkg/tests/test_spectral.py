"""Mode enumeration, norms, projection and the exact forced stepper."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import solve_ivp

from heattrack.spectral import (
    DomainSpec,
    ModeTable,
    SpectralField,
    as_points,
    enumerate_modes,
    eval_modes,
    gauss_legendre_grid,
    heat_step_forced,
    heat_step_forced_linear,
    phi1,
    phi2,
    project_function,
    resolvent_apply,
    semigroup_apply,
)


# ---------------------------------------------------------------------------
# enumeration


def test_interval_eigenvalues_follow_the_cosine_formula():
    domain = DomainSpec.interval(1.7, kappa=2.3)
    table = enumerate_modes(domain, 8)
    expected = 2.3 * (np.arange(8) * np.pi / 1.7) ** 2
    assert_allclose(table.eigenvalues, expected, rtol=0, atol=1e-12)
    assert table.eigenvalues[0] == 0.0
    assert np.all(np.diff(table.eigenvalues) > 0)


def test_unit_interval_eigenvalues_spot_values():
    table = enumerate_modes(DomainSpec.interval(1.0), 4)
    assert_allclose(table.eigenvalues,
                    [0.0, np.pi ** 2, 4 * np.pi ** 2, 9 * np.pi ** 2],
                    rtol=1e-15)


def test_unit_box_tie_break_orders_axes_first():
    # the three first excited modes are degenerate; the agreed order is
    # (1,0,0), (0,1,0), (0,0,1) after the constant mode
    table = enumerate_modes(DomainSpec.box((1.0, 1.0, 1.0)), 4)
    assert table.indices.tolist() == [
        [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    assert_allclose(table.eigenvalues, [0.0] + [np.pi ** 2] * 3, rtol=1e-15)


def test_box_enumeration_matches_brute_force():
    domain = DomainSpec.box((1.0, 1.3, 0.8), kappa=0.7)
    table = enumerate_modes(domain, 25)
    # recompute eigenvalues from the returned indices and verify the sort
    recomputed = 0.7 * np.sum(
        (table.indices * np.pi / np.array([1.0, 1.3, 0.8])) ** 2, axis=1)
    assert_allclose(table.eigenvalues, recomputed, rtol=1e-14)
    assert np.all(np.diff(table.eigenvalues) >= -1e-12)
    # brute force over a generous index cube: the K smallest must agree
    grid = np.stack(np.meshgrid(*(np.arange(9),) * 3, indexing="ij"),
                    axis=-1).reshape(-1, 3)
    lam = 0.7 * np.sum((grid * np.pi / np.array([1.0, 1.3, 0.8])) ** 2, axis=1)
    assert_allclose(table.eigenvalues, np.sort(lam)[:25], rtol=1e-12)


def test_mode_table_size_and_matches(table32):
    assert table32.size == 32
    other = enumerate_modes(table32.domain, 32)
    assert table32.matches(other)
    assert not table32.matches(enumerate_modes(table32.domain, 16))


def test_enumerate_modes_rejects_bad_count(unit_interval):
    with pytest.raises(ValueError):
        enumerate_modes(unit_interval, 0)


# ---------------------------------------------------------------------------
# quadrature and projection


@pytest.mark.parametrize("domain,order,k", [
    (DomainSpec.interval(1.0), 48, 16),
    (DomainSpec.interval(2.5, kappa=0.3), 48, 12),
    (DomainSpec.box((1.0, 1.0, 1.0)), 16, 20),
])
def test_quadrature_orthonormality(domain, order, k):
    table = enumerate_modes(domain, k)
    pts, w = gauss_legendre_grid(domain, order)
    p = eval_modes(table, pts)
    gram = p.T @ (w[:, None] * p)
    assert_allclose(gram, np.eye(k), atol=1e-10)


def test_project_linear_profile_matches_hand_integrals():
    """f(x) = x on [0,1] has a cosine series computable in closed form."""
    table = enumerate_modes(DomainSpec.interval(1.0), 8)
    coeffs = project_function(lambda p: p[:, 0], table, quad_order=64).coeffs
    expected = np.zeros(8)
    expected[0] = 0.5  # <x, 1> on [0,1]
    for k in range(1, 8):
        n = k
        expected[k] = np.sqrt(2.0) * ((-1.0) ** n - 1.0) / (n * np.pi) ** 2
    assert_allclose(coeffs, expected, atol=1e-13)


def test_projection_roundtrip_recovers_band_limited_fields(table32):
    rng = np.random.default_rng(5)
    coeffs = np.zeros(32)
    coeffs[:10] = rng.standard_normal(10)
    field = SpectralField(table32, coeffs)
    back = project_function(lambda p: field.evaluate(p), table32,
                            quad_order=64)
    assert_allclose(back.coeffs, coeffs, atol=1e-12)


def test_gauss_grid_integrates_the_constant(unit_interval):
    pts, w = gauss_legendre_grid(unit_interval, 8)
    assert_allclose(np.sum(w), 1.0, rtol=1e-14)
    box = DomainSpec.box((1.0, 2.0, 0.5))
    _, w3 = gauss_legendre_grid(box, 6)
    assert_allclose(np.sum(w3), 1.0 * 2.0 * 0.5, rtol=1e-14)


# ---------------------------------------------------------------------------
# norms


def test_norm_values_single_mode(table32):
    coeffs = np.zeros(32)
    coeffs[5] = -3.0
    lam = table32.eigenvalues[5]
    z = SpectralField(table32, coeffs)
    assert_allclose(z.norm("H"), 3.0, rtol=1e-15)
    assert_allclose(z.norm("Vdual"), 3.0 / (1.0 + lam), rtol=1e-15)
    assert_allclose(z.norm("graph"), 3.0 * (1.0 + lam), rtol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1,
                max_size=12))
def test_norm_ordering_holds_for_any_coefficients(vals):
    table = enumerate_modes(DomainSpec.interval(1.0), 12)
    coeffs = np.zeros(12)
    coeffs[:len(vals)] = vals
    z = SpectralField(table, coeffs)
    # resolvent weight <= 1 <= graph weight on every mode
    assert z.norm("Vdual") <= z.norm("H") + 1e-9 * z.norm("H")
    assert z.norm("H") <= z.norm("graph") + 1e-9 * z.norm("graph")


def test_unknown_norm_kind_raises(table32):
    with pytest.raises(ValueError):
        SpectralField(table32).norm("L2")


def test_field_algebra_rejects_table_mismatch(unit_interval):
    a = SpectralField(enumerate_modes(unit_interval, 4))
    b = SpectralField(enumerate_modes(unit_interval, 8))
    with pytest.raises(ValueError):
        _ = a + b


def test_as_points_coercion_rules():
    assert as_points([0.2, 0.7], 1).shape == (2, 1)
    assert as_points([0.2, 0.7, 0.4], 3).shape == (1, 3)
    assert as_points([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]], 3).shape == (2, 3)
    with pytest.raises(ValueError):
        as_points([[0.1, 0.2]], 3)


# ---------------------------------------------------------------------------
# step propagators


def _phi1_reference(lam, dt):
    lam = np.asarray(lam, dtype=float)
    x = lam * dt
    out = np.empty_like(x)
    for i, xi in np.ndenumerate(x):
        if xi < 1e-4:
            # independent Taylor expansion, one more term than the code
            out[i] = dt * (1 - xi / 2 + xi ** 2 / 6 - xi ** 3 / 24)
        else:
            out[i] = -np.expm1(-xi) / lam[i]
    return out


def _phi2_reference(lam, dt):
    lam = np.asarray(lam, dtype=float)
    x = lam * dt
    out = np.empty_like(x)
    for i, xi in np.ndenumerate(x):
        if xi < 1e-2:
            out[i] = dt * (0.5 - xi / 6 + xi ** 2 / 24 - xi ** 3 / 120
                           + xi ** 4 / 720)
        else:
            out[i] = dt * (np.exp(-xi) - 1.0 + xi) / xi ** 2
    return out


def test_phi_functions_across_both_branches():
    # the branch thresholds cap the worst cancellation at ~2e-10 relative,
    # so 1e-9 is the honest accuracy contract across the whole range
    dt = 0.37
    lam = np.array([0.0, 1e-9, 1e-7, 1e-5, 1e-3, 0.1, 1.0, 40.0, 400.0])
    assert_allclose(phi1(lam, dt), _phi1_reference(lam, dt), rtol=1e-9)
    assert_allclose(phi2(lam, dt), _phi2_reference(lam, dt), rtol=1e-9)
    # limits at lam = 0 are exact
    assert phi1(np.array([0.0]), dt)[0] == dt
    assert phi2(np.array([0.0]), dt)[0] == dt / 2


def test_forced_step_matches_ode_oracle(unit_interval):
    """Held-input step against a tight adaptive integration of a' = -la+b."""
    table = enumerate_modes(unit_interval, 8)
    actuators = np.array([[0.3], [0.8]])
    u = np.array([1.3, -0.7])
    b = eval_modes(table, actuators).T @ u
    lam = table.eigenvalues
    z0 = np.arange(1.0, 9.0) / 10.0
    sol = solve_ivp(lambda s, y: -lam * y + b, (0.0, 0.05), z0,
                    rtol=1e-12, atol=1e-14)
    stepped = heat_step_forced(SpectralField(table, z0), actuators, u, 0.05)
    assert_allclose(stepped.coeffs, sol.y[:, -1], atol=1e-12)


def test_linear_input_step_matches_ode_oracle(unit_interval):
    table = enumerate_modes(unit_interval, 8)
    actuators = np.array([[0.3], [0.8]])
    u0 = np.array([1.3, -0.7])
    u1 = np.array([0.4, 1.1])
    b0 = eval_modes(table, actuators).T @ u0
    b1 = eval_modes(table, actuators).T @ u1
    lam = table.eigenvalues
    z0 = np.arange(1.0, 9.0) / 10.0
    sol = solve_ivp(lambda s, y: -lam * y + b0 + (b1 - b0) * (s / 0.05),
                    (0.0, 0.05), z0, rtol=1e-12, atol=1e-14)
    stepped = heat_step_forced_linear(SpectralField(table, z0), actuators,
                                      u0, u1, 0.05)
    assert_allclose(stepped.coeffs, sol.y[:, -1], atol=1e-12)


def test_zero_input_step_is_the_semigroup(table32):
    rng = np.random.default_rng(3)
    z = SpectralField(table32, rng.standard_normal(32))
    stepped = heat_step_forced(z, np.array([[0.5]]), np.array([0.0]), 0.02)
    assert_allclose(stepped.coeffs, semigroup_apply(z, 0.02).coeffs,
                    rtol=1e-14)


def test_semigroup_is_a_flow(table32):
    rng = np.random.default_rng(4)
    z = SpectralField(table32, rng.standard_normal(32))
    once = semigroup_apply(z, 0.07)
    twice = semigroup_apply(semigroup_apply(z, 0.03), 0.04)
    # rounding of lam*t in the exponent costs ~ulp(lam*t) relative accuracy
    assert_allclose(once.coeffs, twice.coeffs, rtol=1e-11)
    with pytest.raises(ValueError):
        semigroup_apply(z, -0.1)


def test_resolvent_divides_by_one_plus_eigenvalue(table32):
    z = SpectralField(table32, np.ones(32))
    out = resolvent_apply(z)
    assert_allclose(out.coeffs, 1.0 / (1.0 + table32.eigenvalues),
                    rtol=1e-15)


def test_step_rejects_bad_arguments(table32):
    z = SpectralField(table32)
    with pytest.raises(ValueError):
        heat_step_forced(z, np.array([[0.5]]), np.array([1.0]), 0.0)
    with pytest.raises(ValueError):
        heat_step_forced(z, np.array([[0.5]]), np.array([1.0, 2.0]), 0.01)
