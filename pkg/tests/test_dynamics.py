"""Forward simulation: delayed state, memory window, jumps, performance."""

import numpy as np
import pytest

from noisy_control import scenarios
from noisy_control.dynamics import (
    AffineJumpCoefficient,
    CallableJumpCoefficient,
    ControlPath,
    ControlSet,
    MemoryKernel,
    evaluate_performance,
    reduce_2d,
    simulate_state,
)
from noisy_control.errors import (
    GradientMismatch,
    KernelNotReducible,
    NonFiniteState,
    OutOfControlSet,
)
from noisy_control.paths import JumpSpec, coarsen, make_grid, sample_ensemble, sample_noise


def _frozen_state_model(xi0=1.0):
    """Coefficients all zero: the state stays at xi0 and Z is a pure B-window."""
    return scenarios.custom_affine(xi0=xi0)


def test_window_is_brownian_difference_for_frozen_state():
    g = make_grid(0.2, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.none(), seed=0, n_paths=20)
    model = _frozen_state_model()
    state = simulate_state(model, ControlPath.constant(g, 0.0), ens)
    assert np.all(state.x == 1.0)
    m = g.steps_per_delay
    for i in range(ens.n_paths):
        b = ens.path(i).brownian()
        expected = b[m:] - b[: g.n_horizon_steps + 1]
        assert np.array_equal(state.z[i], expected)


def test_delay_argument_is_shifted_state():
    model = scenarios.linear_noisy_memory()
    g = make_grid(0.2, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.none(), seed=1, n_paths=5)
    state = simulate_state(model, ControlPath.constant(g, 1.0), ens)
    m = g.steps_per_delay
    assert np.array_equal(state.y, state.x[:, : g.n_horizon_steps + 1])
    assert np.array_equal(state.y[:, m:], state.x[:, m : g.index_zero + g.n_horizon_steps + 1 - m])


def test_geometric_model_discrete_moments():
    """Euler recursion of dX = a X dt + s X dB has exactly computable moments."""
    a, s = 0.3, 0.2
    model = scenarios.custom_affine(bx=a, sx=s, xi0=1.0)
    g = make_grid(0.2, 1.0, 8)
    n = g.n_horizon_steps
    ens = sample_ensemble(g, JumpSpec.none(), seed=2, n_paths=20000)
    state = simulate_state(model, ControlPath.constant(g, 0.0), ens)
    xt = state.terminal_x
    h = g.step
    mean_exact = (1 + a * h) ** n
    second_exact = ((1 + a * h) ** 2 + s**2 * h) ** n
    se_mean = xt.std(ddof=1) / np.sqrt(len(xt))
    assert abs(xt.mean() - mean_exact) < 4 * se_mean
    sq = xt**2
    se_sq = sq.std(ddof=1) / np.sqrt(len(sq))
    assert abs(sq.mean() - second_exact) < 4 * se_sq


def test_identity_kernel_shares_window_arithmetic():
    model = scenarios.linear_noisy_memory()
    g = make_grid(0.2, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.none(), seed=3, n_paths=8)
    ctrl = ControlPath.constant(g, 1.0, control_set=model.control_set)
    plain = simulate_state(model, ctrl, ens)
    flagged = simulate_state(model, ctrl, ens, kernel=MemoryKernel.identity())
    assert np.array_equal(plain.x, flagged.x)
    assert np.array_equal(flagged.z_general, flagged.z)

    # an unflagged phi = 1 kernel resummes the window, so only ulp-level equal
    flat = MemoryKernel(lambda t, s: np.ones_like(np.asarray(s, dtype=float)), 1.0)
    resummed = simulate_state(model, ctrl, ens, kernel=flat)
    assert np.max(np.abs(resummed.z_general - plain.z)) < 1e-13
    assert np.max(np.abs(resummed.x - plain.x)) < 1e-12


def test_ramp_kernel_downweights_old_noise():
    """The ramp gives weight ~0 to the oldest window node and ~1 to the newest."""
    g = make_grid(0.2, 1.0, 8)
    kernel = MemoryKernel.ramp(0.2)
    w = kernel.weights(g, g.index_zero + 8)
    assert w.shape == (8,)
    assert w[0] == pytest.approx(0.0)  # left-point node at s = t - delta
    assert w[-1] == pytest.approx(7.0 / 8.0)
    ens = sample_ensemble(g, JumpSpec.none(), seed=4, n_paths=4)
    model = _frozen_state_model()
    state = simulate_state(model, ControlPath.constant(g, 0.0), ens, kernel=kernel)
    k = g.index_zero + 8
    manual = ens.increments[:, k - 8 : k] @ w
    assert np.allclose(state.z_general[:, 8], manual, rtol=0, atol=1e-15)


def test_reduce_2d_prefix_identity_and_kernel_guard():
    model = scenarios.linear_noisy_memory()
    g = make_grid(0.2, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.none(), seed=5, n_paths=10)
    ctrl = ControlPath.constant(g, 1.0, control_set=model.control_set)
    state = reduce_2d(model, ctrl, ens)
    m = g.steps_per_delay
    window = state.x2[:, m:] - state.x2[:, : g.n_horizon_steps + 1]
    assert np.array_equal(state.z, window)
    with pytest.raises(KernelNotReducible):
        reduce_2d(model, ctrl, ens, kernel=MemoryKernel.ramp(0.2))


def test_constant_cost_integrates_to_horizon_exactly():
    # binary-exact grid: h = 1/32, so n * h is exact and J == T bitwise
    model = scenarios.custom_affine(running="linear", target=1.0, delta=0.25)
    g = make_grid(0.25, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.none(), seed=6, n_paths=3)
    j_value, se, per_path = evaluate_performance(
        model, ControlPath.constant(g, 1.0), ens
    )
    assert np.all(per_path == 1.0)
    assert j_value == 1.0
    assert se == 0.0


def test_state_is_adapted_to_the_driving_noise():
    """Bumping a Brownian increment must not move the state before that step."""
    model = scenarios.linear_noisy_memory()
    g = make_grid(0.2, 1.0, 8)
    noise = sample_noise(g, JumpSpec.none(), seed=7)
    ctrl = ControlPath.constant(g, 1.0, control_set=model.control_set)
    base = simulate_state(model, ctrl, noise)
    step = g.index_zero + 12
    bumped = simulate_state(model, ctrl, noise.with_bumped_increment(step, 0.3))
    assert np.array_equal(base.x[:, : step + 1], bumped.x[:, : step + 1])
    assert not np.array_equal(base.x[:, step + 1 :], bumped.x[:, step + 1 :])


def test_strong_error_shrinks_with_the_step():
    """Coupled coarsenings of one fine ensemble: the terminal strong error
    must fall monotonically, at the drift-dominated rate seen for this fixture
    (the diffusion correction sigma*sigma' = 0.04 X is small at these steps)."""
    model = scenarios.linear_noisy_memory()
    fine = sample_ensemble(make_grid(0.2, 1.0, 32), JumpSpec.none(), seed=90, n_paths=4000)

    def terminal(noise):
        g = noise.grid
        ctrl = ControlPath.constant(g, 1.0, control_set=model.control_set)
        return simulate_state(model, ctrl, noise).terminal_x

    ref = terminal(fine)
    e8 = np.abs(terminal(coarsen(fine, 4)) - ref).mean()
    e16 = np.abs(terminal(coarsen(fine, 2)) - ref).mean()
    assert e16 < e8
    assert 1.7 < e8 / e16 < 3.0


def test_check_gradients_accepts_correct_and_rejects_wrong():
    model = scenarios.linear_noisy_memory()
    worst = model.check_gradients(seed=0)
    assert worst < 1e-4

    bad = scenarios.custom_affine(bx=0.1, sx=0.2)
    bad._drift_grad = lambda t, x, y, z, u: (
        np.full(np.shape(x), 0.9),  # should be 0.1
        np.zeros(np.shape(x)),
        np.zeros(np.shape(x)),
        np.zeros(np.shape(x)),
    )
    with pytest.raises(GradientMismatch):
        bad.check_gradients(seed=0)


def test_control_set_and_path_validation():
    cs = ControlSet(0.0, 2.0)
    assert cs.midpoint == 1.0
    assert not cs.is_singleton
    assert ControlSet(1.5, 1.5).is_singleton
    g = make_grid(0.2, 1.0, 8)
    with pytest.raises(OutOfControlSet):
        ControlPath.constant(g, 3.0, control_set=cs)
    path = ControlPath.constant(g, 1.0, control_set=cs)
    shifted = path.shifted_by(np.ones(g.n_horizon_steps + 1), 0.5)
    assert shifted.values[0] == 1.5
    with pytest.raises(OutOfControlSet):
        path.shifted_by(np.ones(g.n_horizon_steps + 1), 5.0)
    with pytest.raises(ValueError):
        ControlPath(g, np.ones(7))


def test_exploding_state_raises_with_step_info():
    model = scenarios.custom_affine(bx=1e12)  # overflows double range mid-run
    g = make_grid(0.2, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.none(), seed=8, n_paths=2)
    with pytest.raises(NonFiniteState) as err, np.errstate(over="ignore"):
        simulate_state(model, ControlPath.constant(g, 0.0), ens)
    assert err.value.step is not None


def test_compensated_jumps_preserve_the_mean():
    """gamma = c x zeta with compensator subtracted leaves E[X(T)] unchanged."""
    spec = JumpSpec.discrete(1.0, [-0.5, 1.0], [0.5, 0.5])
    with_jumps = scenarios.consumption(jump_scale=0.1, jump_spec=spec)
    without = scenarios.consumption()
    g = make_grid(0.2, 1.0, 8)
    ctrl_kwargs = dict(control_set=without.control_set)
    ens_j = sample_ensemble(g, spec, seed=9, n_paths=20000)
    ens_0 = sample_ensemble(g, JumpSpec.none(), seed=9, n_paths=20000)
    xt_j = simulate_state(with_jumps, ControlPath.constant(g, 1.0, **ctrl_kwargs), ens_j).terminal_x
    xt_0 = simulate_state(without, ControlPath.constant(g, 1.0, **ctrl_kwargs), ens_0).terminal_x
    se = np.hypot(
        xt_j.std(ddof=1) / np.sqrt(len(xt_j)), xt_0.std(ddof=1) / np.sqrt(len(xt_0))
    )
    assert abs(xt_j.mean() - xt_0.mean()) < 4 * se


def test_affine_and_callable_jump_coefficients_agree():
    spec = JumpSpec.discrete(2.0, [-0.5, 1.0], [0.5, 0.5])
    base = lambda t, x, y, z, u: 0.1 * x
    slope = lambda t, x, y, z, u: 0.2 * x + 0.05 * z
    affine = AffineJumpCoefficient(base, slope)
    general = CallableJumpCoefficient(
        lambda t, x, y, z, u, zeta: base(t, x, y, z, u) + slope(t, x, y, z, u) * zeta
    )
    x = np.array([1.0, 2.0])
    z = np.array([0.3, -0.1])
    args = (0.5, x, x, z, 1.0)
    assert np.allclose(
        affine.nu_integral(*args, spec), general.nu_integral(*args, spec), atol=1e-14
    )
    assert np.allclose(
        affine.pair_nu_integral(*args, 0.7, -0.2, spec),
        general.pair_nu_integral(*args, 0.7, -0.2, spec),
        atol=1e-14,
    )
    vec4 = (1.0, 0.5, -0.3, 0.0)
    assert np.allclose(
        affine.grad_dot_nu_integral(*args, vec4, spec),
        general.grad_dot_nu_integral(*args, vec4, spec),
        atol=1e-8,  # callable route differentiates numerically
    )
    assert np.allclose(
        affine.evaluate(*args, 0.7), general.evaluate(*args, 0.7), atol=0.0
    )


def test_jump_moment_identities_close_under_affine_pairing():
    """pair integrals must equal the result of expanding moment by moment."""
    spec = JumpSpec.discrete(1.5, [-1.0, 0.5, 2.0], [0.2, 0.5, 0.3])
    affine = AffineJumpCoefficient(
        lambda t, x, y, z, u: 0.3, lambda t, x, y, z, u: 0.8
    )
    args = (0.0, 1.0, 1.0, 0.0, 1.0)
    r0, r1 = 0.4, -0.6
    manual = (
        0.3 * r0 * spec.levy_moment(0)
        + (0.3 * r1 + 0.8 * r0) * spec.levy_moment(1)
        + 0.8 * r1 * spec.levy_moment(2)
    )
    assert affine.pair_nu_integral(*args, r0, r1, spec) == pytest.approx(manual)


def test_performance_common_random_numbers():
    """Same seed means the J difference of two controls has tiny variance."""
    model = scenarios.linear_noisy_memory()
    g = make_grid(0.2, 1.0, 8)
    ens = sample_ensemble(g, JumpSpec.none(), seed=10, n_paths=500)
    cs = model.control_set
    _, _, per_a = evaluate_performance(model, ControlPath.constant(g, 1.0, control_set=cs), ens)
    _, _, per_b = evaluate_performance(model, ControlPath.constant(g, 1.01, control_set=cs), ens)
    diff = per_a - per_b
    assert diff.std(ddof=1) < 0.1 * per_a.std(ddof=1)
