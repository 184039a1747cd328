import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from mvstop.model import ModelSpec, ShimizuYamadaParams, sy_model
from mvstop.particles import (ParticlePaths, SimulationError, chaos_rate, euler_rate, fit_rate,
                              simulate_coupled_exact, simulate_limit_euler,
                              simulate_particles, standard_normals)

P = ShimizuYamadaParams(a=1.0, sigma=0.2, x0=1.0)


def test_grid_and_exercise_index():
    paths = simulate_particles(sy_model(P), 8, 20, 5, seed=0)
    assert paths.states.shape == (8, 21, 1)
    assert paths.times[0] == 0.0 and paths.times[-1] == 1.0
    np.testing.assert_array_equal(paths.exercise_index, [0, 4, 8, 12, 16, 20])
    assert paths.at_dates().shape == (8, 6, 1)


def test_divisibility_is_enforced():
    with pytest.raises(ValueError):
        simulate_particles(sy_model(P), 4, 10, 3, seed=0)
    with pytest.raises(ValueError):
        simulate_particles(sy_model(P), 4, 2, 3, seed=0)


def test_single_particle_is_scaled_brownian_motion():
    n_steps = 50
    paths = simulate_particles(sy_model(P), 1, n_steps, 1, seed=9)
    z = standard_normals(9, 1, n_steps)[0, :, 0]
    expected = P.x0 + P.sigma * math.sqrt(1.0 / n_steps) * np.concatenate([[0.0], np.cumsum(z)])
    np.testing.assert_allclose(paths.states[0, :, 0], expected, rtol=0, atol=1e-14)


def test_cloud_mean_is_martingale_started_at_x0():
    ends = []
    for seed in range(200):
        paths = simulate_particles(sy_model(P), 20, 20, 1, seed)
        ends.append(paths.states[:, -1, 0].mean())
    ends = np.array(ends)
    se = ends.std(ddof=1) / math.sqrt(ends.size)
    assert abs(ends.mean() - P.x0) < 4 * se


def test_determinism_across_workers_and_runs():
    m = sy_model(P)
    a = simulate_particles(m, 64, 30, 3, seed=42, workers=1)
    b = simulate_particles(m, 64, 30, 3, seed=42, workers=8)
    c = simulate_particles(m, 64, 30, 3, seed=42)
    assert a.states.tobytes() == b.states.tobytes() == c.states.tobytes()
    d = simulate_particles(m, 64, 30, 3, seed=43)
    assert a.states.tobytes() != d.states.tobytes()


def test_permutation_equivariance():
    m = sy_model(P)
    z = standard_normals(5, 16, 12)
    perm = np.random.default_rng(0).permutation(16)
    a = simulate_particles(m, 16, 12, 1, 5, normals=z)
    b = simulate_particles(m, 16, 12, 1, 5, normals=z[perm])
    np.testing.assert_allclose(b.states, a.states[perm], rtol=0, atol=1e-13)


def test_exchangeability_ks():
    paths = simulate_particles(sy_model(P), 4000, 20, 1, seed=1)
    end = paths.states[:, -1, 0]
    stat, pval = ks_2samp(end[:2000], end[2000:])
    # 1% critical value of the two-sample KS statistic for n = m = 2000
    assert stat < 1.628 * math.sqrt(2.0 / 2000)


def test_generic_pairwise_path_matches_shortcut():
    sy = sy_model(P)
    generic = ModelSpec(1, sy.drift_kernel, sy.diff_kernel, 1, sy.initial_state, sy.horizon)
    a = simulate_particles(sy, 300, 10, 2, seed=4)
    b = simulate_particles(generic, 300, 10, 2, seed=4)
    np.testing.assert_allclose(a.states, b.states, rtol=0, atol=1e-12)


def test_two_dimensional_generic_kernel():
    # attraction towards the other particles with a 2x1 noise loading
    def drift(x, y):
        return y - x

    def diff(x, y):
        shape = np.broadcast_shapes(x.shape, y.shape)
        out = np.zeros(shape + (1,))
        out[..., 0, 0] = 0.3
        out[..., 1, 0] = 0.1
        return out

    m = ModelSpec(2, drift, diff, 1, np.array([0.0, 1.0]), 1.0)
    paths = simulate_particles(m, 40, 10, 2, seed=0)
    assert paths.states.shape == (40, 11, 2)
    assert np.all(np.isfinite(paths.states))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_reports_step_and_particle():
    def drift(x, y):
        return np.full(np.broadcast_shapes(x.shape, y.shape), np.inf)

    def diff(x, y):
        return np.zeros(np.broadcast_shapes(x.shape, y.shape) + (1,))

    m = ModelSpec(1, drift, diff, 1, np.array([1.0]), 1.0)
    with pytest.raises(SimulationError, match="step 1, particle 0"):
        simulate_particles(m, 3, 4, 1, seed=0)


def test_coupled_exact_uses_same_streams_and_reproduces():
    a = simulate_coupled_exact(P, 10, 20, seed=7)
    b = simulate_coupled_exact(P, 10, 20, seed=7)
    assert a.coupling_tag == "exact_limit"
    assert a.states.tobytes() == b.states.tobytes()
    part = simulate_particles(sy_model(P), 10, 20, 1, seed=7)
    # same increments: coupled paths are close to the particles
    assert np.max(np.abs(a.states - part.states)) < 0.1


def test_coupled_exact_sigma_zero():
    p = ShimizuYamadaParams(sigma=0.0)
    e = simulate_coupled_exact(p, 5, 10, seed=0)
    s = simulate_particles(sy_model(p), 5, 10, 1, seed=0)
    assert np.all(e.states == 1.0) and np.all(s.states - e.states == 0.0)


def test_coupled_exact_rejects_other_models():
    with pytest.raises(TypeError):
        simulate_coupled_exact(sy_model(P), 5, 10, seed=0)


def test_limit_euler_tag():
    paths = simulate_limit_euler(P, 10, 20, 2, seed=0)
    assert paths.coupling_tag == "euler_limit"


def test_chaos_error_shrinks_with_n():
    rep = chaos_rate(P, [16, 64, 256, 1024], n_steps=50, seeds=range(4))
    assert rep.errors[0] > rep.errors[-1]
    assert -0.8 < rep.slope < -0.3


def test_chaos_rate_degenerate_for_zero_noise():
    rep = chaos_rate(ShimizuYamadaParams(sigma=0.0), [8, 16, 32, 128], n_steps=10, seeds=[0])
    assert rep.degenerate and math.isnan(rep.slope)
    assert all(e == 0.0 for e in rep.errors)


def test_chaos_rate_needs_a_decade():
    with pytest.raises(ValueError):
        chaos_rate(P, [64, 128, 256, 512], seeds=[0])


def test_euler_errors_decrease_under_refinement():
    rep = euler_rate(P, [1 / 4, 1 / 8, 1 / 16, 1 / 32], n_particles=32, seeds=range(20))
    # sizes ascending: errors must increase with the step
    assert all(a <= b for a, b in zip(rep.errors, rep.errors[1:]))


def test_euler_rate_rejects_incompatible_steps():
    with pytest.raises(ValueError):
        euler_rate(P, [1 / 3, 1 / 8, 1 / 16, 1 / 32], n_particles=4, seeds=[0])


def test_fit_rate_exact_power_law():
    sizes = [1, 2, 4, 8, 16]
    rep = fit_rate(sizes, [3.0 * s ** -0.5 for s in sizes], p=2)
    assert rep.slope == pytest.approx(-0.5, abs=1e-12)
    assert rep.r_squared == pytest.approx(1.0)


def test_paths_csv_dump(tmp_path):
    paths = simulate_particles(sy_model(P), 2, 4, 1, seed=0)
    f = tmp_path / "p.csv"
    paths.to_csv(f)
    data = np.loadtxt(f, delimiter=",", skiprows=1)
    assert data.shape == (2 * 5, 4)
    np.testing.assert_array_equal(data[:, 3], paths.states.reshape(-1))


def test_paths_invariants_enforced():
    with pytest.raises(ValueError):
        ParticlePaths(np.zeros((1, 3, 1)), np.array([0.0, 0.5, 0.5]), np.array([0, 2]), 0)
