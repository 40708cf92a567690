import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levyrobust import rng
from levyrobust.levy import (LevyModelError, TimeGrid, build_levy_model, export_paths_csv, sample_paths,
                             simulate_paths, truncate_levy_measure)


def test_pure_brownian_model():
    m = build_levy_model(0.0, 0.0, [])
    assert m.n_atoms == 0
    assert m.nu_masses.size == 0


def test_atom_masses():
    m = build_levy_model(0.0, 2.0, [(1.0, 0.5), (-1.0, 0.5)])
    np.testing.assert_array_equal(m.nu_masses, [1.0, 1.0])


def test_zero_jump_size_rejected():
    with pytest.raises(LevyModelError, match="ν must charge ℝ₀ only"):
        build_levy_model(0.0, 1.0, [(0.0, 1.0)])


def test_negative_prob_rejected():
    with pytest.raises(LevyModelError):
        build_levy_model(0.0, 1.0, [(1.0, 1.5), (-1.0, -0.5)])


def test_probs_must_sum_to_one():
    with pytest.raises(LevyModelError):
        build_levy_model(0.0, 1.0, [(1.0, 0.5), (-1.0, 0.4)])


def test_time_grid_nodes():
    g = TimeGrid(2.0, 8)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.0
    assert np.all(np.diff(g.nodes) > 0)


def test_brownian_moments():
    g = TimeGrid(1.0, 16)
    p = simulate_paths(build_levy_model(0.0, 0.0, []), g, 100_000, seed=1)
    lt = p.levy_values[:, -1]
    assert abs(lt.mean()) <= 3 / np.sqrt(100_000)
    assert abs(lt.var() - 1.0) <= 0.05


def _brute_force_compound_poisson(n, b, lam, seed):
    gen = np.random.default_rng(seed)
    w = gen.standard_normal(n)
    counts = gen.poisson(lam, n)
    ups = gen.binomial(counts, 0.5)
    return b + w + ups - (counts - ups)


def test_jump_diffusion_moments_match_brute_force():
    b, lam = 0.3, 2.0
    g = TimeGrid(1.0, 16)
    p = simulate_paths(build_levy_model(b, lam, [(1.0, 0.5), (-1.0, 0.5)]), g, 100_000, seed=2)
    lt = p.levy_values[:, -1]
    se = lt.std() / np.sqrt(lt.size)
    assert abs(lt.mean() - b) <= 3 * se
    assert abs(lt.var() - 3.0) <= 0.05 * 3.0
    ref = _brute_force_compound_poisson(1_000_000, b, lam, 99)
    assert abs(ref.var() - 3.0) <= 0.02
    assert abs(lt.var() - ref.var()) <= 0.05 * 3.0


def test_atom_counts_match_nu():
    g = TimeGrid(1.0, 8)
    m = build_levy_model(0.0, 3.0, [(0.5, 0.2), (-0.7, 0.8)])
    p = simulate_paths(m, g, 100_000, seed=3)
    rate = p.jump_counts().sum(axis=0) / (p.n_paths * g.horizon_T)
    se = np.sqrt(m.nu_masses / (p.n_paths * g.horizon_T))
    assert np.all(np.abs(rate - m.nu_masses) <= 3 * se)


def test_reconstruction_exact():
    g = TimeGrid(1.0, 32)
    p = simulate_paths(build_levy_model(0.1, 2.0, [(1.5, 0.3), (-0.5, 0.7)]), g, 3000, seed=4)
    c = p.levy_components()
    total = ((c["drift"] + c["brownian"]) + c["small_compensated"]) + c["large"]
    np.testing.assert_array_equal(total, p.levy_values)
    assert np.all((p.jump_time > 0) & (p.jump_time <= g.horizon_T))


def test_determinism_across_workers():
    g = TimeGrid(1.0, 16)
    m = build_levy_model(0.0, 2.0, [(1.0, 0.5), (-1.0, 0.5)])
    a = simulate_paths(m, g, 5000, seed=7, workers=1)
    b = simulate_paths(m, g, 5000, seed=7, workers=4)
    np.testing.assert_array_equal(a.levy_values[:, -1], b.levy_values[:, -1])


def test_paths_depend_only_on_global_index():
    g = TimeGrid(1.0, 8)
    m = build_levy_model(0.0, 2.0, [(1.0, 1.0)])
    full = simulate_paths(m, g, 3000, seed=5)
    tail = simulate_paths(m, g, 1000, seed=5, path_index_base=2000)
    np.testing.assert_array_equal(full.levy_values[2000:], tail.levy_values)


def test_thinned_sampler_intensity():
    g = TimeGrid(1.0, 8)
    m = build_levy_model(0.0, 2.0, [(1.0, 0.5), (-1.0, 0.5)])
    factor = np.tile([2.0, 0.5], (g.n_steps, 1))
    p = sample_paths(m, g, 50_000, seed=6, intensity_factor=factor)
    rate = p.jump_counts().mean(axis=0)
    expect = np.array([2.0, 0.5])
    assert np.all(np.abs(rate - expect) <= 3 * np.sqrt(expect / p.n_paths))


def test_truncation_identity_for_atomic_model():
    m = build_levy_model(0.0, 2.0, [(1.0, 0.5), (-1.0, 0.5)])
    t = truncate_levy_measure(m, 0.1, 4)
    np.testing.assert_allclose(t.nu_masses, m.nu_masses, atol=1e-8)
    assert t.small_jump_truncation_eps == 0.1


def test_truncation_total_mass():
    t = truncate_levy_measure(lambda x: x ** -2, 0.1, 9)
    assert abs(t.jump_intensity - 9.0) <= 1e-6
    assert t.n_atoms == 9


def test_truncation_rejects_zero_eps():
    with pytest.raises(LevyModelError):
        truncate_levy_measure(lambda x: x ** -2, 0.0, 9)


def test_export_csv(tmp_path):
    g = TimeGrid(1.0, 4)
    p = simulate_paths(build_levy_model(0.0, 1.0, [(1.0, 1.0)]), g, 3, seed=0)
    f = tmp_path / "paths.csv"
    export_paths_csv(p, f)
    lines = f.read_text().splitlines()
    assert lines[0] == "path_id,t,W,L,n_jumps"
    assert len(lines) == 1 + 3 * 5


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=300))
def test_tree_sum_is_deterministic(vals):
    arr = np.array(vals)
    s = rng.tree_sum(arr)
    assert s == rng.tree_sum(arr.copy())
    assert abs(s - np.sum(arr)) <= 1e-6 * max(1.0, np.abs(arr).sum())


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 5000), st.integers(1, 2500))
def test_block_layout_covers_paths(base, n):
    blocks = rng.blocks_for(n, base)
    assert sum(hi - lo for _, lo, hi in blocks) == n
    assert blocks[0][0] * rng.BLOCK_SIZE + blocks[0][1] == base
