"""Decomposition tests against brute-force two-path oracles.

Each identity is checked three ways: frozen hand-computed scalar cases,
an independent re-implementation of the perturbed step in test code, and
randomized residual checks at the documented tolerances.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskcam.core import CropSpec
from maskcam.forward import DenseSystem
from maskcam.mismatch import (
    AdmmStepContext,
    MismatchTerms,
    admm_step_decomposition,
    direct_inversion_decomposition,
    direct_inversion_residual_slope,
    gd_step_decomposition,
    prox_step_mismatch,
    wiener_decomposition,
)
from maskcam.recover import NumericalError


def random_square_system(seed, ndim=10, delta_scale=0.05):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(ndim, ndim))
    h = g @ g.T / ndim + 2 * np.eye(ndim)  # SPD, eigenvalues >= 2
    delta = delta_scale * rng.normal(size=(ndim, ndim))
    return DenseSystem(h=h, delta=delta), rng


# ------------------------------------------------------------------ terms type


def test_terms_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        MismatchTerms(np.zeros(3), np.zeros(4), np.zeros(3), np.zeros(3))


def test_terms_nonfinite_rejected():
    bad = np.array([np.nan, 0.0])
    with pytest.raises(ValueError):
        MismatchTerms(np.zeros(2), bad, np.zeros(2), np.zeros(2))


def test_terms_noisy_estimate_is_sum():
    t = MismatchTerms(np.ones(2), 2 * np.ones(2), 3 * np.ones(2), 4 * np.ones(2))
    assert np.array_equal(t.noisy_estimate, 10 * np.ones(2))
    assert t.relative_residual() == pytest.approx(np.linalg.norm(4 * np.ones(2)) / np.linalg.norm(10 * np.ones(2)))


# ------------------------------------------------------------------ direct


def test_direct_scalar_frozen_case():
    sys = DenseSystem(h=np.array([[1.0]]), delta=np.array([[0.1]]))
    terms = direct_inversion_decomposition(sys, np.array([1.0]), np.array([0.0]))
    assert terms.clean_estimate[0] == 1.0
    assert terms.model_mismatch_term[0] == pytest.approx(-0.1, abs=1e-15)
    assert terms.noise_amplification_term[0] == 0.0
    assert terms.noisy_estimate[0] == pytest.approx(1 / 1.1, abs=1e-15)
    assert terms.residual[0] == pytest.approx(1 / 1.1 - 0.9, abs=1e-12)


def test_direct_zero_delta_gives_zero_mismatch_and_residual():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(8, 8)) + 3 * np.eye(8)
    x = rng.normal(size=8)
    n = rng.normal(size=8)
    terms = direct_inversion_decomposition(DenseSystem(h=h), x, n)
    assert np.all(terms.model_mismatch_term == 0)
    assert np.linalg.norm(terms.residual) < 1e-12
    assert np.allclose(
        terms.noisy_estimate, x + np.linalg.solve(h, n), atol=1e-10
    )


def test_direct_matches_brute_force_solve():
    for seed in range(10):
        sys, rng = random_square_system(seed)
        x = rng.normal(size=10)
        n = 0.01 * rng.normal(size=10)
        terms = direct_inversion_decomposition(sys, x, n)
        brute = np.linalg.solve(sys.h + sys.delta, sys.h @ x + n)
        assert np.allclose(terms.noisy_estimate, brute, atol=1e-12)


def test_direct_residual_is_second_order():
    for seed in range(5):
        sys, rng = random_square_system(seed, delta_scale=0.02)
        x = rng.normal(size=10)
        n = 0.01 * rng.normal(size=10)
        slope = direct_inversion_residual_slope(sys, x, n, octaves=3)
        assert slope == pytest.approx(2.0, abs=0.1)


def test_direct_spectral_radius_guard():
    sys = DenseSystem(h=np.eye(3), delta=-1.5 * np.eye(3))
    with pytest.raises(NumericalError, match="spectral radius"):
        direct_inversion_decomposition(sys, np.ones(3), np.zeros(3))


def test_direct_singular_guard():
    sys = DenseSystem(h=np.zeros((3, 3)), delta=0.01 * np.eye(3))
    with pytest.raises(NumericalError):
        direct_inversion_decomposition(sys, np.ones(3), np.zeros(3))


def test_direct_noise_superposition():
    sys, rng = random_square_system(3)
    x = rng.normal(size=10)
    n1 = rng.normal(size=10)
    n2 = rng.normal(size=10)
    a = direct_inversion_decomposition(sys, x, n1).noise_amplification_term
    b = direct_inversion_decomposition(sys, x, n2).noise_amplification_term
    both = direct_inversion_decomposition(sys, x, n1 + n2).noise_amplification_term
    assert np.allclose(both, a + b, atol=1e-10)


def test_slope_probe_requires_nonzero_delta():
    with pytest.raises(ValueError):
        direct_inversion_residual_slope(
            DenseSystem(h=np.eye(4)), np.ones(4), np.zeros(4)
        )


# ------------------------------------------------------------------ wiener


def test_wiener_scalar_frozen_case():
    terms, m = wiener_decomposition(
        np.array([1.0 + 0j]),
        np.array([0.1 + 0j]),
        np.array([1.0 + 0j]),
        np.array([0.0 + 0j]),
        reg=1.0,
    )
    # B = 2, Delta_B = 0.21, M = 0.05 - 0.231/4.42
    assert m[0] == pytest.approx(0.05 - 0.231 / 4.42, rel=1e-12)
    assert m[0] == pytest.approx(-0.0022624434389140, rel=1e-10)
    assert terms.clean_estimate[0] == pytest.approx(0.5, abs=1e-15)
    assert terms.noisy_estimate[0] == pytest.approx(1.1 / 2.21, abs=1e-15)
    assert abs(terms.residual[0]) < 1e-15


def test_wiener_m_equals_filter_difference():
    # The closed-form M must coincide with (new filter - old filter),
    # which is an independent route to the same field.
    rng = np.random.default_rng(1)
    shape = (9, 7)
    p = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    dp = 0.1 * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    n = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    _, m = wiener_decomposition(p, dp, x, n, reg=0.5)
    alt = np.conj(p + dp) / (np.abs(p + dp) ** 2 + 0.5) - np.conj(p) / (
        np.abs(p) ** 2 + 0.5
    )
    assert np.allclose(m, alt, atol=1e-12)


def test_wiener_residual_small_on_random_fields():
    rng = np.random.default_rng(2)
    for _ in range(20):
        shape = (16, 16)
        p = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        dp = 0.2 * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
        x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        n = 0.1 * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
        terms, _ = wiener_decomposition(p, dp, x, n, reg=1e-2)
        assert terms.relative_residual() < 1e-9


def test_wiener_zero_perturbation_is_exact():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    x = rng.normal(size=(4, 4)) + 0j
    n = rng.normal(size=(4, 4)) + 0j
    terms, m = wiener_decomposition(p, np.zeros((4, 4)), x, n, reg=0.3)
    assert np.all(m == 0)
    assert np.all(terms.model_mismatch_term == 0)
    assert np.all(terms.residual == 0)


def test_wiener_noise_linearity():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    dp = 0.1 * (rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5)))
    x = rng.normal(size=(5, 5)) + 0j
    n1 = rng.normal(size=(5, 5)) + 0j
    n2 = rng.normal(size=(5, 5)) + 0j
    a = wiener_decomposition(p, dp, x, n1, 0.2)[0].noise_amplification_term
    b = wiener_decomposition(p, dp, x, n2, 0.2)[0].noise_amplification_term
    both = wiener_decomposition(p, dp, x, n1 + n2, 0.2)[0].noise_amplification_term
    assert np.allclose(both, a + b, atol=1e-12)


def test_wiener_rejects_nonpositive_b():
    with pytest.raises(NumericalError):
        wiener_decomposition(
            np.zeros(3, dtype=complex),
            np.zeros(3, dtype=complex),
            np.ones(3, dtype=complex),
            np.zeros(3, dtype=complex),
            reg=0.0,
        )


# ------------------------------------------------------------------ gd step


def test_gd_scalar_frozen_case_is_bit_exact():
    sys = DenseSystem(h=np.array([[1.0]]), delta=np.array([[0.1]]))
    terms = gd_step_decomposition(
        sys, x=np.array([1.0]), n=np.array([0.0]), x_prev=np.array([0.0]), alpha=0.5
    )
    assert terms.clean_estimate[0] == 0.5
    assert terms.model_mismatch_term[0] == 0.05
    assert terms.noise_amplification_term[0] == 0.0
    # float64 happens to make 0.5 + 0.05 land exactly on 0.55
    assert terms.clean_estimate[0] + terms.model_mismatch_term[0] == 0.55
    assert abs(terms.residual[0]) < 1e-15


def test_gd_residual_small_on_random_systems():
    for seed in range(20):
        sys, rng = random_square_system(seed, ndim=10, delta_scale=0.3)
        x = rng.normal(size=10)
        n = rng.normal(size=10)
        x_prev = rng.normal(size=10)
        terms = gd_step_decomposition(sys, x, n, x_prev, alpha=0.05)
        assert terms.relative_residual() < 1e-10


def test_gd_matches_brute_force_step():
    sys, rng = random_square_system(5)
    x = rng.normal(size=10)
    n = rng.normal(size=10)
    x_prev = rng.normal(size=10)
    hhat = sys.h + sys.delta
    y = sys.h @ x + n
    brute = x_prev - 0.1 * hhat.T @ (hhat @ x_prev - y)
    terms = gd_step_decomposition(sys, x, n, x_prev, alpha=0.1)
    assert np.allclose(terms.noisy_estimate, brute, atol=1e-13)


def test_gd_zero_delta_bitwise_equal_paths():
    rng = np.random.default_rng(6)
    h = rng.normal(size=(7, 7))
    sys = DenseSystem(h=h, delta=np.zeros((7, 7)))
    terms = gd_step_decomposition(
        sys, rng.normal(size=7), rng.normal(size=7), rng.normal(size=7), alpha=0.2
    )
    assert np.all(terms.model_mismatch_term == 0)
    assert np.all(terms.noise_amplification_term == 0)
    assert np.all(terms.residual == 0)


def test_gd_rectangular_system():
    rng = np.random.default_rng(7)
    h = rng.normal(size=(6, 9))
    delta = 0.1 * rng.normal(size=(6, 9))
    sys = DenseSystem(h=h, delta=delta)
    terms = gd_step_decomposition(
        sys, rng.normal(size=9), rng.normal(size=6), rng.normal(size=9), alpha=0.05
    )
    assert terms.relative_residual() < 1e-12


def test_gd_cropped_system_folds_selection():
    rng = np.random.default_rng(8)
    h = rng.normal(size=(8, 8))
    delta = 0.1 * rng.normal(size=(8, 8))
    crop = CropSpec(0, 0, 1, 4)
    sys = DenseSystem(h=h, delta=delta, crop=crop, out_shape=(2, 4))
    x = rng.normal(size=8)
    n = rng.normal(size=4)
    terms = gd_step_decomposition(sys, x, n, rng.normal(size=8), alpha=0.05)
    assert terms.relative_residual() < 1e-12
    assert terms.noise_amplification_term.shape == (8,)


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.5))
@settings(deadline=None, max_examples=25)
def test_gd_noise_superposition(seed, alpha):
    sys, rng = random_square_system(seed, ndim=6)
    x = rng.normal(size=6)
    x_prev = rng.normal(size=6)
    n1 = rng.normal(size=6)
    n2 = rng.normal(size=6)
    a = gd_step_decomposition(sys, x, n1, x_prev, alpha).noise_amplification_term
    b = gd_step_decomposition(sys, x, n2, x_prev, alpha).noise_amplification_term
    both = gd_step_decomposition(sys, x, n1 + n2, x_prev, alpha).noise_amplification_term
    assert np.allclose(both, a + b, atol=1e-10)


# ------------------------------------------------------------------ prox step


def test_prox_zero_beta_reduces_to_gd():
    sys, rng = random_square_system(9)
    x = rng.normal(size=10)
    n = rng.normal(size=10)
    x_prev = rng.normal(size=10)
    gd = gd_step_decomposition(sys, x, n, x_prev, alpha=0.1)
    prox, discarded = prox_step_mismatch(sys, x, n, x_prev, alpha=0.1, beta=0.0)
    assert np.array_equal(prox.clean_estimate, gd.clean_estimate)
    assert np.array_equal(prox.residual, gd.residual)
    assert not discarded.any()


def test_prox_huge_beta_discards_everything():
    sys, rng = random_square_system(10)
    x = rng.normal(size=10)
    terms, discarded = prox_step_mismatch(
        sys, x, np.zeros(10), np.zeros(10), alpha=0.1, beta=1e6
    )
    assert np.all(terms.clean_estimate == 0)
    assert discarded.all()


def test_prox_discarded_fraction_monotone_in_beta():
    sys, rng = random_square_system(11, delta_scale=0.02)
    x = np.zeros(10)
    x[[2, 7]] = [1.0, -2.0]
    n = 0.01 * rng.normal(size=10)
    x_prev = np.zeros(10)
    fractions = []
    for beta in np.linspace(0, 2.0, 9):
        _, discarded = prox_step_mismatch(sys, x, n, x_prev, alpha=0.1, beta=beta)
        fractions.append(discarded.mean())
    assert all(b >= a for a, b in zip(fractions, fractions[1:]))
    assert fractions[-1] > fractions[0]


def test_prox_rejects_negative_beta():
    sys, _ = random_square_system(12)
    with pytest.raises(ValueError):
        prox_step_mismatch(
            sys, np.zeros(10), np.zeros(10), np.zeros(10), alpha=0.1, beta=-1
        )


# ------------------------------------------------------------------ admm step


def random_ctx(seed, ndim=8, c=None, delta_scale=0.1, rho=(1.0, 1.0, 1.0)):
    rng = np.random.default_rng(seed)
    if c is None:
        c = np.eye(ndim)
    return AdmmStepContext(
        hhat=rng.normal(size=(ndim, ndim)),
        delta_h=delta_scale * rng.normal(size=(ndim, ndim)),
        c=c,
        rho_x=rho[0],
        rho_y=rho[1],
        rho_z=rho[2],
        x_prev=rng.normal(size=ndim),
        aux=rng.normal(size=ndim),
        dual_xi=rng.normal(size=ndim),
        noise=0.05 * rng.normal(size=c.shape[0]),
        x_true=rng.normal(size=ndim),
    )


def oracle_admm_step(a, ctx, y):
    """Plain-inverse re-implementation of the v-then-x update."""
    ndim = a.shape[0]
    g = np.linalg.inv(ctx.c.T @ ctx.c + ctx.rho_x * np.eye(ndim))
    v = g @ (ctx.c.T @ y + ctx.dual_xi + ctx.rho_x * (a @ ctx.x_prev))
    normal = (
        ctx.rho_x * a.T @ a + ctx.rho_z * ctx.c.T @ ctx.c + ctx.rho_y * np.eye(ndim)
    )
    return np.linalg.inv(normal) @ (a.T @ (ctx.rho_x * v - ctx.dual_xi) + ctx.aux)


def test_admm_paths_match_independent_oracle():
    ctx = random_ctx(0)
    y = ctx.measurement()
    terms, _ = admm_step_decomposition(ctx)
    assert np.allclose(terms.clean_estimate, oracle_admm_step(ctx.h_true, ctx, y), atol=1e-10)
    assert np.allclose(terms.noisy_estimate, oracle_admm_step(ctx.hhat, ctx, y), atol=1e-10)


def test_admm_residual_small_identity_crop():
    for seed in range(30):
        terms, _ = admm_step_decomposition(random_ctx(seed))
        assert terms.relative_residual() < 1e-8


def test_admm_residual_small_selection_crop():
    half = np.zeros((4, 8))
    half[np.arange(4), np.arange(4)] = 1.0
    for seed in range(30):
        terms, _ = admm_step_decomposition(random_ctx(seed, c=half))
        assert terms.relative_residual() < 1e-8


def test_admm_zero_delta_collapses():
    ctx = random_ctx(1, delta_scale=0.0)
    terms, mats = admm_step_decomposition(ctx)
    assert np.all(mats["W2"] == 0)
    assert np.all(mats["W3"] == 0)
    assert np.array_equal(mats["W4"], np.eye(8))
    assert np.all(mats["delta_H"] == 0)
    assert np.array_equal(terms.clean_estimate + terms.residual, terms.noisy_estimate)
    assert np.all(terms.model_mismatch_term == 0)
    assert np.all(terms.noise_amplification_term == 0)
    assert np.array_equal(
        terms.clean_estimate, terms.noisy_estimate
    )  # identical solves, bitwise


def test_admm_reported_w_terms_compose():
    # W4 W2 must equal W1^{-1} rho_x Delta^T G; if that algebra drifts,
    # the reported matrices no longer mean what the docs say.
    ctx = random_ctx(2)
    terms, mats = admm_step_decomposition(ctx)
    ndim = 8
    g = np.linalg.inv(ctx.c.T @ ctx.c + ctx.rho_x * np.eye(ndim))
    delta = ctx.delta_h
    composed = mats["W4"] @ mats["W2"]
    direct = np.linalg.solve(mats["W1"], ctx.rho_x * delta.T @ g)
    assert np.allclose(composed, direct, atol=1e-10)
    na = composed @ (ctx.c.T @ ctx.noise)
    assert np.allclose(na, terms.noise_amplification_term, atol=1e-12)


def test_admm_noise_superposition():
    base = random_ctx(3)
    rng = np.random.default_rng(99)
    n1 = rng.normal(size=8)
    n2 = rng.normal(size=8)
    t1, _ = admm_step_decomposition(dataclasses_replace(base, noise=n1))
    t2, _ = admm_step_decomposition(dataclasses_replace(base, noise=n2))
    t12, _ = admm_step_decomposition(dataclasses_replace(base, noise=n1 + n2))
    assert np.allclose(
        t12.noise_amplification_term,
        t1.noise_amplification_term + t2.noise_amplification_term,
        atol=1e-10,
    )


def dataclasses_replace(ctx, **kw):
    import dataclasses

    return dataclasses.replace(ctx, **kw)


def test_admm_condition_guard():
    rng = np.random.default_rng(4)
    col = rng.normal(size=(8, 1))
    ctx = random_ctx(4, delta_scale=0.0)
    bad = dataclasses_replace(
        ctx, hhat=col @ col.T, c=np.zeros((1, 8)), noise=np.zeros(1), rho_y=1e-14
    )
    with pytest.raises(NumericalError, match="ill-conditioned"):
        admm_step_decomposition(bad)


def test_admm_context_validation():
    ctx = random_ctx(5)
    with pytest.raises(ValueError):
        dataclasses_replace(ctx, rho_x=0.0)
    with pytest.raises(ValueError):
        dataclasses_replace(ctx, noise=np.zeros(3))
    with pytest.raises(ValueError):
        dataclasses_replace(ctx, delta_h=np.zeros((4, 4)))
    with pytest.raises(ValueError):
        AdmmStepContext(
            hhat=np.zeros((2, 3)),
            delta_h=np.zeros((2, 3)),
            c=np.eye(2),
            rho_x=1,
            rho_y=1,
            rho_z=1,
            x_prev=np.zeros(2),
            aux=np.zeros(2),
            dual_xi=np.zeros(2),
            noise=np.zeros(2),
            x_true=np.zeros(2),
        )
