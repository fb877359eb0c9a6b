"""Grid arithmetic, noise sampling, and stochastic-integral plumbing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisy_control.errors import NonCommensurate, OffGrid
from noisy_control.paths import (
    JumpSpec,
    NoisePath,
    coarsen,
    ito_integral,
    make_grid,
    sample_ensemble,
    sample_noise,
)


def test_grid_layout():
    g = make_grid(0.2, 1.0, 8)
    assert g.step == pytest.approx(0.025)
    assert g.n_nodes == 8 + 40 + 1
    assert g.index_zero == 8
    assert g.nodes[g.index_zero] == 0.0  # exact, not approx
    assert g.nodes[0] == pytest.approx(-0.2)
    assert g.nodes[-1] == pytest.approx(1.0)
    assert g.horizon_nodes[0] == 0.0
    assert len(g.horizon_nodes) == g.n_horizon_steps + 1


@pytest.mark.parametrize("delta,horizon,m", [
    (0.3, 1.0, 2),
    (0.2, 0.99, 8),
    (0.7, 1.0, 3),
])
def test_non_commensurate_rejected(delta, horizon, m):
    with pytest.raises(NonCommensurate):
        make_grid(delta, horizon, m)


def test_grid_validates_inputs():
    with pytest.raises(ValueError):
        make_grid(-0.2, 1.0, 8)
    with pytest.raises(ValueError):
        make_grid(0.2, 0.0, 8)
    with pytest.raises(ValueError):
        make_grid(0.2, 1.0, 0)
    with pytest.raises(ValueError):
        make_grid(0.2, 1.0, 2.5)


def test_index_of_round_trip_and_off_grid():
    g = make_grid(0.2, 1.0, 8)
    for k in range(g.n_nodes):
        assert g.index_of(g.nodes[k]) == k
    with pytest.raises(OffGrid):
        g.index_of(0.013)
    with pytest.raises(OffGrid):
        g.index_of(1.025)  # past the horizon


def test_nodes_are_frozen():
    g = make_grid(0.2, 1.0, 8)
    with pytest.raises(ValueError):
        g.nodes[0] = 99.0


def test_sampling_is_deterministic_and_keyed_per_path():
    """The ensemble must be the stack of per-index single draws, bit for bit."""
    g = make_grid(0.2, 1.0, 8)
    spec = JumpSpec.discrete(1.5, [-0.5, 1.0], [0.5, 0.5])
    ens = sample_ensemble(g, spec, seed=7, n_paths=6)
    again = sample_ensemble(g, spec, seed=7, n_paths=6)
    assert np.array_equal(ens.increments, again.increments)
    for i in range(6):
        single = sample_noise(g, spec, seed=7, path_index=i)
        assert np.array_equal(ens.increments[i], single.increments)
        assert np.array_equal(ens.jump_counts[i], single.jump_counts)
        assert np.array_equal(ens.jump_marks[i], single.jump_marks)
    # a different seed or index must actually change the draw
    other = sample_noise(g, spec, seed=8, path_index=0)
    assert not np.array_equal(other.increments, ens.increments[0])


def test_first_path_offset_matches_monolithic():
    g = make_grid(0.2, 1.0, 4)
    whole = sample_ensemble(g, JumpSpec.none(), seed=3, n_paths=10)
    tail = sample_ensemble(g, JumpSpec.none(), seed=3, n_paths=4, first_path=6)
    assert np.array_equal(whole.increments[6:], tail.increments)


def test_brownian_increment_moments():
    g = make_grid(0.2, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.none(), seed=11, n_paths=4000)
    incr = ens.increments
    se = incr.std(ddof=1) / np.sqrt(incr.size)
    assert abs(incr.mean()) < 4 * se
    assert incr.var() == pytest.approx(g.step, rel=0.05)


def test_jump_counts_match_intensity():
    g = make_grid(0.2, 1.0, 8)
    spec = JumpSpec.discrete(2.0, [1.0], [1.0])
    ens = sample_ensemble(g, spec, seed=13, n_paths=3000)
    per_path = ens.jump_counts.sum(axis=1)
    expected = spec.intensity * (g.horizon + g.delta)  # jumps fill the whole grid
    se = per_path.std(ddof=1) / np.sqrt(len(per_path))
    assert abs(per_path.mean() - expected) < 4 * se
    for i in (0, 1, 2):
        assert len(ens.jump_marks[i]) == per_path[i]


def test_ito_integral_of_ones_telescopes():
    g = make_grid(0.2, 1.0, 8)
    noise = sample_noise(g, JumpSpec.none(), seed=0)
    total = ito_integral(np.ones(g.n_nodes), noise, (-g.delta, g.horizon))
    assert total == pytest.approx(noise.increments.sum(), rel=1e-13)
    b = noise.brownian()
    window = ito_integral(np.ones(g.n_nodes), noise, (0.0, 0.5))
    assert window == pytest.approx(b[g.index_of(0.5)] - b[g.index_zero])


def test_ito_integral_window_validation():
    g = make_grid(0.2, 1.0, 8)
    noise = sample_noise(g, JumpSpec.none(), seed=0)
    f = np.ones(g.n_nodes)
    with pytest.raises(OffGrid):
        ito_integral(f, noise, (0.0, 0.513))
    with pytest.raises(ValueError):
        ito_integral(f, noise, (0.5, 0.0))
    with pytest.raises(ValueError):
        ito_integral(f[:5], noise, (0.0, 0.5))
    bad = f.copy()
    bad[3] = np.nan
    with pytest.raises(ValueError):
        ito_integral(bad, noise, (0.0, 0.5))


@settings(max_examples=60, deadline=None)
@given(
    split=st.integers(min_value=0, max_value=48),
    lo=st.integers(min_value=0, max_value=48),
    hi=st.integers(min_value=0, max_value=48),
    fseed=st.integers(min_value=0, max_value=2**16),
)
def test_ito_integral_additive_over_windows(split, lo, hi, fseed):
    """Prefix-sum anchoring makes window additivity exact, not approximate."""
    a, b = sorted((lo, hi))
    mid = min(max(split, a), b)
    g = make_grid(0.2, 1.0, 8)
    noise = sample_noise(g, JumpSpec.none(), seed=1)
    gen = np.random.Generator(np.random.Philox(key=np.uint64(fseed)))
    f = gen.normal(size=g.n_nodes)
    ta, tm, tb = g.nodes[a], g.nodes[mid], g.nodes[b]
    whole = ito_integral(f, noise, (ta, tb))
    parts = ito_integral(f, noise, (ta, tm)) + ito_integral(f, noise, (tm, tb))
    # shared prefix sums leave only the final cancellation, a few ulp at most
    assert abs(parts - whole) <= 8 * np.finfo(float).eps * (1.0 + abs(whole))


def test_ito_integral_broadcasts_over_ensembles():
    g = make_grid(0.2, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.none(), seed=5, n_paths=7)
    f = np.linspace(0.0, 1.0, g.n_nodes)
    out = ito_integral(f, ens, (0.0, 1.0))
    assert out.shape == (7,)
    single = ito_integral(f, ens.path(2), (0.0, 1.0))
    assert out[2] == single


def test_coarsen_sums_increments_and_keeps_jumps():
    g = make_grid(0.2, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.discrete(1.0, [2.0], [1.0]), seed=9, n_paths=5)
    half = coarsen(ens, 2)
    assert half.grid.steps_per_delay == 4
    assert np.array_equal(
        half.increments, ens.increments.reshape(5, -1, 2).sum(axis=-1)
    )
    assert half.jump_counts.sum() == ens.jump_counts.sum()
    with pytest.raises(ValueError):
        coarsen(ens, 3)  # does not divide 8


def test_coarsen_single_path():
    g = make_grid(0.2, 1.0, 4)
    noise = sample_noise(g, JumpSpec.none(), seed=2)
    half = coarsen(noise, 4)
    assert isinstance(half, NoisePath)
    assert half.increments.sum() == pytest.approx(noise.increments.sum())


def test_jump_spec_moments():
    spec = JumpSpec.discrete(2.0, [-0.5, 1.0], [0.5, 0.5])
    assert spec.levy_moment(0) == pytest.approx(2.0)
    assert spec.levy_moment(1) == pytest.approx(2.0 * 0.25)
    assert spec.levy_moment(2) == pytest.approx(2.0 * 0.625)
    assert JumpSpec.none().levy_moment(2) == 0.0
    gauss = JumpSpec.gaussian(1.5, loc=0.3, scale=0.2)
    assert gauss.levy_moment(1) == pytest.approx(1.5 * 0.3, rel=1e-10)
    assert gauss.levy_moment(2) == pytest.approx(1.5 * (0.3**2 + 0.2**2), rel=1e-10)


def test_jump_spec_validation():
    with pytest.raises(ValueError):
        JumpSpec(-1.0)
    with pytest.raises(ValueError):
        JumpSpec.discrete(1.0, [1.0, 2.0], [0.6, 0.6])
    with pytest.raises(ValueError):
        JumpSpec(1.0)  # intensity without a sampler


def test_nu_expectation_matches_moments():
    spec = JumpSpec.discrete(2.0, [-0.5, 1.0], [0.5, 0.5])
    assert spec.nu_expectation(lambda z: z**2) == pytest.approx(spec.levy_moment(2))
    vec = spec.nu_expectation(lambda z: np.array([z, z**2]))
    assert vec[0] == pytest.approx(spec.levy_moment(1))


def test_with_bumped_increment_is_local():
    g = make_grid(0.2, 1.0, 8)
    noise = sample_noise(g, JumpSpec.none(), seed=4)
    bumped = noise.with_bumped_increment(10, 0.5)
    assert bumped.increments[10] == noise.increments[10] + 0.5
    mask = np.ones(g.n_steps, dtype=bool)
    mask[10] = False
    assert np.array_equal(bumped.increments[mask], noise.increments[mask])
    # the original is immutable
    with pytest.raises(ValueError):
        noise.increments[0] = 1.0
