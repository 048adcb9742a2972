import numpy as np
import pytest
from scipy.special import gamma
from scipy.stats import norm

from mvparametrix import (CoverageError, FrozenParams, MeasureFlow,
                          ParametrixEngine, ParticleCloud, QuadratureGrid,
                          ReferenceKernel, beta_product_identity,
                          builtin_model, frozen_density, frozen_density_grad,
                          frozen_density_hess, frozen_params, parametrix_H,
                          parametrix_H_m, parametrix_density,
                          reference_kernel)


def constant_flow(t_end=1.0, n=16):
    return MeasureFlow.constant(ParticleCloud.dirac(np.zeros(1)), 0.0, t_end, n)


# ---------------------------------------------------------------------------
# frozen params
# ---------------------------------------------------------------------------


def test_frozen_params_brownian():
    fp = frozen_params(constant_flow(), builtin_model("brownian"), 0.0, 0.0,
                       0.7, np.array([0.3]))
    assert np.allclose(fp.mean_shift, [0.0])
    assert np.allclose(fp.covariance, [[0.7]])


def test_frozen_params_ou_anchor_two():
    fp = frozen_params(constant_flow(), builtin_model("ou", alpha=1.0), 0.0,
                       0.0, 0.5, np.array([2.0]))
    assert np.allclose(fp.mean_shift, [-1.0])
    assert np.allclose(fp.covariance, [[0.5]])


def test_frozen_params_meanfield_ou_centered_flow():
    # Flow clouds with mean 0, so b_u(z) = -alpha * z is constant in u.
    cloud = ParticleCloud.uniform(np.array([[-1.0], [1.0]]))
    flow = MeasureFlow.constant(cloud, 0.0, 1.0, 8)
    fp = frozen_params(flow, builtin_model("meanfield_ou", alpha=1.0, sigma0=1.0),
                       0.0, 0.0, 0.25, np.array([1.0]))
    assert np.allclose(fp.mean_shift, [-0.25])
    assert np.allclose(fp.covariance, [[0.25]])


def test_frozen_params_rejects_bad_window():
    flow = constant_flow()
    model = builtin_model("brownian")
    with pytest.raises(ValueError):
        frozen_params(flow, model, 0.0, 0.5, 0.5, np.array([0.0]))
    with pytest.raises(ValueError):
        frozen_params(flow, model, 0.0, 0.5, 1.5, np.array([0.0]))


def test_frozen_params_requires_symmetric_covariance():
    with pytest.raises(ValueError):
        FrozenParams(0.0, 0.0, 1.0, np.zeros(2), np.zeros(2),
                     np.array([[1.0, 0.3], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# frozen density and derivatives
# ---------------------------------------------------------------------------


def unit_fp(m=0.0, a=1.0):
    return FrozenParams(0.0, 0.0, 1.0, np.zeros(1), np.array([m]),
                        np.array([[a]]))


def test_frozen_density_peak():
    p = frozen_density(unit_fp(), np.zeros(1), np.zeros(1))
    assert np.isclose(p, 1.0 / np.sqrt(2 * np.pi))


def test_frozen_density_shifted_value():
    p = frozen_density(unit_fp(m=0.3, a=0.25), np.zeros(1), np.array([0.3]))
    assert np.isclose(p, (2 * np.pi * 0.25) ** -0.5)


def test_frozen_density_normalization():
    ys = np.linspace(-10, 10, 4001)
    dens = frozen_density(unit_fp(m=0.3, a=0.25), np.zeros(1), ys[:, None])
    assert abs(np.trapezoid(dens, ys) - 1.0) < 1e-6


def test_frozen_grad_hess_at_center():
    fp = unit_fp()
    assert np.allclose(frozen_density_grad(fp, np.zeros(1), np.zeros(1)), [0.0])
    hess = frozen_density_hess(fp, np.zeros(1), np.zeros(1))
    assert np.isclose(hess[0, 0], -1.0 / np.sqrt(2 * np.pi))


def test_frozen_grad_hess_match_finite_differences():
    fp = unit_fp(m=0.2, a=0.6)
    rng = np.random.default_rng(5)
    eps_g, eps_h = 1e-6, 1e-4
    for _ in range(5):
        y = rng.uniform(-1.5, 1.5, 1)
        z = rng.uniform(-1.5, 1.5, 1)
        g = frozen_density_grad(fp, y, z)[0]
        g_fd = (frozen_density(fp, y + eps_g, z)
                - frozen_density(fp, y - eps_g, z)) / (2 * eps_g)
        assert np.isclose(g, g_fd, rtol=1e-5)
        h = frozen_density_hess(fp, y, z)[0, 0]
        h_fd = (frozen_density(fp, y + eps_h, z)
                - 2 * frozen_density(fp, y, z)
                + frozen_density(fp, y - eps_h, z)) / eps_h**2
        assert np.isclose(h, h_fd, rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------------------
# reference kernel
# ---------------------------------------------------------------------------


def test_reference_kernel_peak():
    rk = ReferenceKernel(1.0, 1.0)
    assert np.isclose(reference_kernel(rk, 1.0, np.zeros(1)),
                      (8 * np.pi) ** -0.5)


def test_reference_kernel_normalization_and_ck():
    rk = ReferenceKernel(1.0, 1.0)
    ys = np.linspace(-16, 16, 6001)
    dens = reference_kernel(rk, 1.0, ys[:, None])
    assert abs(np.trapezoid(dens, ys) - 1.0) < 1e-6
    for y in (0.0, 0.7, -1.6):
        inner = (reference_kernel(rk, 0.4, (y - ys)[:, None])
                 * reference_kernel(rk, 0.6, ys[:, None]))
        conv = np.trapezoid(inner, ys)
        assert abs(conv - reference_kernel(rk, 1.0, np.array([y]))) < 1e-6


def test_reference_kernel_rejects_zero_duration():
    with pytest.raises(ValueError):
        reference_kernel(ReferenceKernel(1.0, 1.0), 0.0, np.zeros(1))


# ---------------------------------------------------------------------------
# beta product identity
# ---------------------------------------------------------------------------


def test_beta_product_m1():
    lhs, rhs = beta_product_identity(1)
    assert lhs == 1.0
    assert np.isclose(rhs, 1.0)


def test_beta_product_m2_is_pi():
    lhs, rhs = beta_product_identity(2)
    assert np.isclose(lhs, np.pi, rtol=1e-12)
    assert np.isclose(rhs, np.pi, rtol=1e-12)


@pytest.mark.parametrize("m", [20, 35, 50])
def test_beta_product_identity_high_levels(m):
    lhs, rhs = beta_product_identity(m)
    assert abs(lhs - rhs) / rhs < 1e-12


# ---------------------------------------------------------------------------
# parametrix kernels
# ---------------------------------------------------------------------------


def test_parametrix_H_vanishes_for_constant_coefficients():
    flow = constant_flow()
    model = builtin_model("brownian")
    for y, z in [(-0.4, 1.2), (0.0, 0.0), (2.0, -1.0)]:
        assert parametrix_H(flow, model, 0.0, 0.2, 0.9, np.array([y]),
                            np.array([z])) == 0.0


def test_parametrix_H_vanishes_on_diagonal():
    flow = constant_flow()
    model = builtin_model("ou")
    assert parametrix_H(flow, model, 0.0, 0.1, 0.8, np.array([0.7]),
                        np.array([0.7])) == pytest.approx(0.0, abs=1e-14)


def test_parametrix_H_ou_example():
    # b(0) - b(1) = 1; grad = p * a^{-1} (0 - 1 - 0) = -phi(1); trace term 0.
    flow = constant_flow()
    model = builtin_model("ou", alpha=1.0, sigma0=1.0)
    val = parametrix_H(flow, model, 0.0, 0.0, 1.0, np.array([1.0]),
                       np.array([0.0]))
    assert np.isclose(val, -norm.pdf(1.0), rtol=1e-12)


def test_parametrix_H_m_zero_for_constant_model():
    flow = constant_flow()
    model = builtin_model("constant", drift_value=0.4)
    grid = QuadratureGrid(np.array([-8.0]), np.array([8.0]), 65, 4, trunc=3)
    for m in (1, 2, 3):
        assert parametrix_H_m(flow, model, grid, 0.0, 0.2, 1.0,
                              np.array([0.1]), np.array([0.5]), m) == 0.0


def test_parametrix_H2_ou_against_independent_quadrature():
    # Oracle: nested adaptive quadrature of the level-2 kernel definition
    # (outer time integral mapped through u = r + (t-r) sin^2 theta),
    # evaluated independently of the engine's tensor-grid rule.
    oracle = 0.0594133768095907
    flow = constant_flow(0.5, 17)
    model = builtin_model("ou", alpha=1.0, sigma0=1.0)
    grid = QuadratureGrid(np.array([-8.0]), np.array([8.0]), 257, 8, trunc=2)
    val = parametrix_H_m(flow, model, grid, 0.0, 0.1, 0.5, np.array([0.3]),
                         np.array([0.8]), 2)
    assert abs(val - oracle) / abs(oracle) < 2e-2


def test_parametrix_levels_dominated_by_reference_kernel():
    # Fitted-constant version of the Gamma(m/2) domination: the constant is
    # fitted on level 1 and must dominate levels 2 and 3 on the probe set.
    model = builtin_model("ou", alpha=1.0, sigma0=1.0)
    T, r = 0.5, 0.1
    flow = constant_flow(T, 17)
    rk = ReferenceKernel(T, float(model.bound_fn(T)))
    grid = QuadratureGrid(np.array([-8.0]), np.array([8.0]), 257, 8, trunc=3)
    probes = [(y, z) for y in (-1.0, -0.3, 0.4, 1.2) for z in (-0.8, 0.1, 0.9)]
    kbar = max(
        abs(parametrix_H(flow, model, 0.0, r, T, np.array([y]), np.array([z])))
        * np.sqrt(T - r) * gamma(0.5)
        / float(reference_kernel(rk, T - r, np.array([y - z])))
        for y, z in probes)
    assert np.isfinite(kbar) and kbar > 0
    for y, z in probes:
        h_ref = float(reference_kernel(rk, T - r, np.array([y - z])))
        eng = ParametrixEngine(flow, model, grid, 0.0, T, np.array([z]))
        for m in (2, 3):
            hm = abs(eng.h_m_at(m, r, np.array([y])))
            bound = kbar**m * (T - r) ** (m / 2 - 1) / gamma(m / 2) * h_ref
            assert hm <= bound


# ---------------------------------------------------------------------------
# parametrix density
# ---------------------------------------------------------------------------


def test_parametrix_density_brownian_exact_at_every_level():
    flow = constant_flow()
    model = builtin_model("brownian")
    for trunc in (0, 1, 2, 3):
        grid = QuadratureGrid(np.array([-8.0]), np.array([8.0]), 65, 4,
                              trunc=trunc)
        res = parametrix_density(flow, model, grid, 0.0, 1.0, np.array([0.0]),
                                 np.array([1.0]))
        assert abs(res.value - norm.pdf(1.0)) < 1e-14
        assert res.converged
        assert all(t == 0.0 for t in res.terms)


def test_parametrix_density_matches_ou_closed_form():
    model = builtin_model("ou", alpha=1.0, sigma0=1.0)
    h = 0.5
    flow = constant_flow(h, 17)
    grid = QuadratureGrid(np.array([-8.0]), np.array([8.0]), 257, 8, trunc=3)
    sd = np.sqrt((1 - np.exp(-2 * h)) / 2)
    for z in (-0.5, 0.5):
        eng = ParametrixEngine(flow, model, grid, 0.0, h, np.array([z]))
        for x in (-0.5, 0.0, 0.5):
            res = eng.density(np.array([x]))
            exact = norm.pdf(z, loc=x * np.exp(-h), scale=sd)
            assert abs(res.value - exact) / exact < 1e-2
            assert res.converged
            assert res.last_term == abs(res.terms[-1])


def test_parametrix_coverage_error_for_small_box():
    flow = constant_flow()
    model = builtin_model("brownian")
    grid = QuadratureGrid(np.array([-2.0]), np.array([2.0]), 33, 4, trunc=1)
    with pytest.raises(CoverageError):
        ParametrixEngine(flow, model, grid, 0.0, 1.0, np.array([0.0]))


def test_quadrature_grid_validation():
    with pytest.raises(ValueError):
        QuadratureGrid(np.array([0.0]), np.array([0.0]), 64, 4)
    with pytest.raises(ValueError):
        QuadratureGrid(np.array([-1.0]), np.array([1.0]), 8, 4)
    with pytest.raises(ValueError):
        QuadratureGrid(np.array([-1.0]), np.array([1.0]), 64, 4, trunc=-1)
