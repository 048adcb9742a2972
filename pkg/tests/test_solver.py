import numpy as np
import pytest
from scipy import stats

from mvparametrix import (DivergenceError, MeasureFlow, ModelSpec,
                          PairingError, ParticleCloud, PerturbationMap,
                          SolverConfig, builtin_model, cloud_cov, cloud_mean,
                          sample_cloud, solve_decoupled, solve_mckean_vlasov,
                          substream, variation_frozen, variation_meanfield)


# ---------------------------------------------------------------------------
# Substreams and initial laws
# ---------------------------------------------------------------------------


def test_substream_is_deterministic_and_tag_sensitive():
    a = substream(42, "alpha").standard_normal(4)
    b = substream(42, "alpha").standard_normal(4)
    c = substream(42, "beta").standard_normal(4)
    d = substream(43, "alpha").standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_sample_cloud_dirac():
    c = sample_cloud("dirac", 5, 2, seed=0, point=[1.0, -2.0])
    assert c.points.shape == (5, 2)
    assert np.all(c.points == [1.0, -2.0])


def test_sample_cloud_gaussian_moments():
    c = sample_cloud("gaussian", 20_000, 1, seed=0, mean=0.5, std=2.0)
    assert abs(cloud_mean(c)[0] - 0.5) < 0.05
    assert abs(cloud_cov(c)[0, 0] - 4.0) < 0.15


def test_sample_cloud_uniform_support():
    c = sample_cloud("uniform", 1000, 1, seed=1, lo=-2.0, hi=3.0)
    assert c.points.min() >= -2.0 and c.points.max() <= 3.0
    assert abs(cloud_mean(c)[0] - 0.5) < 0.2


def test_sample_cloud_two_point():
    c = sample_cloud("two_point", 4000, 1, seed=2, a=-1.0, b=1.0, p=0.25)
    vals = np.unique(c.points)
    assert np.array_equal(vals, [-1.0, 1.0])
    assert abs((c.points[:, 0] == -1.0).mean() - 0.25) < 0.03


def test_sample_cloud_unknown_kind():
    with pytest.raises(ValueError):
        sample_cloud("cauchy", 10, 1, seed=0)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0.0)
    with pytest.raises(ValueError):
        SolverConfig(n_particles=0)
    with pytest.raises(ValueError):
        SolverConfig(n_mc=0)


# ---------------------------------------------------------------------------
# Interacting particle system
# ---------------------------------------------------------------------------


def test_mckean_vlasov_brownian_moments():
    model = builtin_model("brownian")
    init = sample_cloud("dirac", 10_000, 1, seed=42)
    cfg = SolverConfig(dt=1e-2, n_particles=10_000, seed=42)
    flow = solve_mckean_vlasov(model, init, 0.0, 1.0, cfg)
    term = flow.terminal
    assert abs(cloud_mean(term)[0]) < 0.04
    assert abs(cloud_cov(term)[0, 0] - 1.0) < 0.05


def test_mckean_vlasov_flow_covers_interval():
    model = builtin_model("brownian")
    init = sample_cloud("dirac", 100, 1, seed=0)
    cfg = SolverConfig(dt=0.1, seed=0)
    flow = solve_mckean_vlasov(model, init, 0.25, 0.75, cfg)
    assert flow.time_grid[0] == 0.25
    assert np.isclose(flow.end_time, 0.75)
    assert len(flow.clouds) == len(flow.time_grid)


def test_mckean_vlasov_is_reproducible():
    model = builtin_model("meanfield_ou")
    init = sample_cloud("gaussian", 500, 1, seed=7)
    cfg = SolverConfig(dt=1e-2, seed=7)
    a = solve_mckean_vlasov(model, init, 0.0, 0.3, cfg).terminal
    b = solve_mckean_vlasov(model, init, 0.0, 0.3, cfg).terminal
    assert np.array_equal(a.points, b.points)


def test_meanfield_ou_mean_conserved_and_variance_ode():
    # dX = -alpha (X - E X) dt + dW: the mean is a slow martingale and the
    # variance solves v' = -2 alpha v + 1, i.e. v(t) = 0.5 + (v0 - 0.5) e^{-2t}
    # for alpha = 1.  Start from N(1, 4).
    model = builtin_model("meanfield_ou", alpha=1.0)
    init = sample_cloud("gaussian", 10_000, 1, seed=42, mean=1.0, std=2.0)
    cfg = SolverConfig(dt=1e-3, seed=42)
    t = 0.5
    flow = solve_mckean_vlasov(model, init, 0.0, t, cfg)
    m0 = cloud_mean(init)[0]
    v_exact = 0.5 + (cloud_cov(init)[0, 0] - 0.5) * np.exp(-2.0 * t)
    assert abs(cloud_mean(flow.terminal)[0] - m0) < 0.03
    assert abs(cloud_cov(flow.terminal)[0, 0] - v_exact) < 0.1


def test_mckean_vlasov_rejects_dimension_mismatch():
    model = builtin_model("brownian", dim=2)
    init = sample_cloud("dirac", 10, 1, seed=0)
    with pytest.raises(ValueError):
        solve_mckean_vlasov(model, init, 0.0, 1.0, SolverConfig())


def _exploding_model():
    base = builtin_model("brownian")
    return ModelSpec(
        name="exploding", dim=1, noise_dim=1,
        drift=lambda t, x, c: 1e200 * np.atleast_2d(x) ** 3,
        diffusion=base.diffusion, drift_grad=base.drift_grad,
        diffusion_grad=base.diffusion_grad, drift_lions=base.drift_lions,
        diffusion_lions=base.diffusion_lions, bound_fn=base.bound_fn,
        params=dict(base.params))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_error_reports_step():
    init = sample_cloud("dirac", 8, 1, seed=0)
    cfg = SolverConfig(dt=0.25, seed=0)
    with pytest.raises(DivergenceError):
        solve_mckean_vlasov(_exploding_model(), init, 0.0, 1.0, cfg)


# ---------------------------------------------------------------------------
# Decoupled SDE
# ---------------------------------------------------------------------------


def test_decoupled_brownian_terminal_law():
    model = builtin_model("brownian")
    flow = MeasureFlow.constant(ParticleCloud.dirac([0.0]), 0.0, 1.0)
    cfg = SolverConfig(dt=1e-2, seed=42, n_mc=20_000)
    run = solve_decoupled(model, flow, x=0.3, s=0.0, t=1.0, cfg=cfg)
    # Exact law N(0.3, 1): Kolmogorov-Smirnov should not reject.
    _, p = stats.kstest(run.terminal[:, 0], "norm", args=(0.3, 1.0))
    assert p > 0.01


def test_decoupled_requires_flow_coverage():
    model = builtin_model("brownian")
    flow = MeasureFlow.constant(ParticleCloud.dirac([0.0]), 0.0, 0.5)
    with pytest.raises(ValueError):
        solve_decoupled(model, flow, 0.0, 0.0, 1.0, SolverConfig(n_mc=10))


# ---------------------------------------------------------------------------
# Variation processes
# ---------------------------------------------------------------------------


def test_variation_frozen_brownian_is_constant():
    model = builtin_model("brownian")
    flow = MeasureFlow.constant(ParticleCloud.dirac([0.0]), 0.0, 1.0)
    cfg = SolverConfig(dt=1e-2, seed=1, n_mc=64)
    vt = variation_frozen(model, flow, x=0.0, v=[1.0], s=0.0, t=1.0, cfg=cfg)
    assert np.allclose(vt, 1.0)


def test_variation_frozen_ou_decays_exponentially():
    model = builtin_model("ou", alpha=1.0)
    flow = MeasureFlow.constant(ParticleCloud.dirac([0.0]), 0.0, 1.0)
    cfg = SolverConfig(dt=1e-3, seed=1, n_mc=16)
    h = 0.7
    vt = variation_frozen(model, flow, x=0.4, v=[1.0], s=0.0, t=h, cfg=cfg)
    # v' = -v deterministically, so v(h) = e^{-h} up to Euler error O(dt).
    assert np.allclose(vt, np.exp(-h), rtol=2e-3)


def test_variation_frozen_pairing_guard():
    model = builtin_model("brownian")
    flow = MeasureFlow.constant(ParticleCloud.dirac([0.0]), 0.0, 1.0)
    base = solve_decoupled(model, flow, 0.0, 0.0, 1.0,
                           SolverConfig(seed=1, n_mc=8))
    with pytest.raises(PairingError):
        variation_frozen(model, flow, 0.0, [1.0], 0.0, 1.0,
                         SolverConfig(seed=2, n_mc=8), base=base)


def test_variation_frozen_replays_base_increments():
    model = builtin_model("ou")
    flow = MeasureFlow.constant(ParticleCloud.dirac([0.0]), 0.0, 1.0)
    cfg = SolverConfig(dt=1e-2, seed=5, n_mc=32)
    a = variation_frozen(model, flow, 0.0, [1.0], 0.0, 0.5, cfg)
    b = variation_frozen(model, flow, 0.0, [1.0], 0.0, 0.5, cfg)
    assert np.array_equal(a, b)


def test_variation_meanfield_constant_direction_fixed_point():
    # For the mean-field OU drift -alpha (x - mean), a constant direction
    # field is a fixed point: the spatial decay -alpha v is exactly cancelled
    # by the measure coupling +alpha <v>.
    model = builtin_model("meanfield_ou", alpha=1.4)
    init = sample_cloud("gaussian", 256, 1, seed=3)
    cfg = SolverConfig(dt=1e-2, seed=3)
    run = variation_meanfield(model, init, PerturbationMap.constant([1.0]),
                              0.0, 0.5, cfg)
    assert np.allclose(run.v, 1.0, atol=1e-10)
    assert np.isclose(run.flow.end_time, 0.5)


def test_variation_meanfield_matches_particle_flow():
    model = builtin_model("meanfield_ou")
    init = sample_cloud("gaussian", 256, 1, seed=9)
    cfg = SolverConfig(dt=1e-2, seed=9)
    run = variation_meanfield(model, init, PerturbationMap.identity(),
                              0.0, 0.3, cfg)
    ref = solve_mckean_vlasov(model, init, 0.0, 0.3, cfg)
    assert np.array_equal(run.flow.terminal.points, ref.terminal.points)


def test_variation_meanfield_interaction_cap_close_to_full():
    model = builtin_model("meanfield_ou")
    init = sample_cloud("gaussian", 512, 1, seed=11)
    full = variation_meanfield(model, init, PerturbationMap.identity(), 0.0,
                               0.2, SolverConfig(dt=1e-2, seed=11))
    capped = variation_meanfield(model, init, PerturbationMap.identity(), 0.0,
                                 0.2, SolverConfig(dt=1e-2, seed=11,
                                                   interaction_cap=128))
    assert np.allclose(full.v, capped.v, atol=0.05)
