"""First-chaos functionals: closed forms, duality, and reconstruction."""

import numpy as np
import pytest

from noisy_control.errors import OffGrid
from noisy_control.malliavin import (
    BrownianTerminal,
    Chaos1Exponential,
    bump_malliavin,
    chaos1_malliavin,
    clark_ocone_residual,
    duality_check,
)
from noisy_control.paths import JumpSpec, make_grid, sample_ensemble
from noisy_control.scenarios import duality_battery


def _grid(m=8):
    return make_grid(0.2, 1.0, m)


def test_chaos1_martingale_paths():
    """With drift_adjust = -psi^2/2 the functional is a discrete martingale."""
    g = _grid()
    psi = 0.1
    f = Chaos1Exponential(g, psi, -0.5 * psi**2)
    assert f.mean_terminal() == pytest.approx(1.0)
    ens = sample_ensemble(g, JumpSpec.none(), seed=0, n_paths=50000)
    term = f.terminal(noise=ens)
    se = term.std(ddof=1) / np.sqrt(len(term))
    assert abs(term.mean() - 1.0) < 4 * se
    paths = f.paths(ens)
    assert np.all(paths[:, 0] == 1.0)
    # one explicit path value: F_1 = exp(psi dB_0 - psi^2 h / 2)
    manual = np.exp(psi * ens.increments[:, g.index_zero] - 0.5 * psi**2 * g.step)
    assert np.allclose(paths[:, 1], manual, rtol=1e-14)


def test_chaos1_conditional_growth():
    g = _grid()
    f = Chaos1Exponential(g, 0.1, 0.05)  # not a martingale: alpha = 0.055
    alpha = 0.05 + 0.5 * 0.1**2
    assert f.growth(0, g.n_horizon_steps) == pytest.approx(np.exp(alpha * 1.0))
    ens = sample_ensemble(g, JumpSpec.none(), seed=1, n_paths=10)
    k = 12
    cond = f.conditional_terminal(ens, k)
    remaining = 1.0 - g.horizon_nodes[k]
    assert np.allclose(cond, f.paths(ens)[:, k] * np.exp(alpha * remaining), rtol=1e-13)


def test_chaos1_malliavin_is_psi_times_future_value():
    g = _grid()
    f = Chaos1Exponential(g, lambda t: 0.2 * (1.0 - 0.5 * t), 0.0)
    ens = sample_ensemble(g, JumpSpec.none(), seed=2, n_paths=6)
    d = chaos1_malliavin(f, ens, t=0.25, s=0.75)
    ks = g.index_of(0.75) - g.index_zero
    kt = g.index_of(0.25) - g.index_zero
    assert np.allclose(d, f.paths(ens)[:, ks] * f.psi[kt], rtol=0, atol=0)
    # directions after s do nothing
    assert np.all(chaos1_malliavin(f, ens, t=0.8, s=0.75) == 0.0)
    with pytest.raises(OffGrid):
        chaos1_malliavin(f, ens, t=-0.1, s=0.5)


def test_bump_malliavin_matches_closed_form():
    g = _grid()
    psi = 0.1
    f = Chaos1Exponential(g, psi, -0.5 * psi**2)
    ens = sample_ensemble(g, JumpSpec.none(), seed=3, n_paths=40)
    probe = bump_malliavin(f.terminal, ens, t=0.5)
    exact = psi * f.terminal(ens)
    assert np.allclose(probe, exact, rtol=1e-5)


def test_bump_malliavin_locality():
    """The derivative of B(0.5) in a direction at t >= 0.5 vanishes."""
    g = _grid()
    ens = sample_ensemble(g, JumpSpec.none(), seed=4, n_paths=5)

    def b_half(noise):
        incr = noise.increments if noise.increments.ndim == 2 else noise.increments[None, :]
        stop = g.index_of(0.5)
        return incr[:, g.index_zero : stop].sum(axis=1)

    assert np.all(bump_malliavin(b_half, ens, t=0.25) == pytest.approx(1.0))
    assert np.all(bump_malliavin(b_half, ens, t=0.5) == 0.0)
    assert np.all(bump_malliavin(b_half, ens, t=0.75) == 0.0)
    with pytest.raises(OffGrid):
        bump_malliavin(b_half, ens, t=1.0)  # no step starts at T


def test_duality_flat_fixture():
    g = _grid()
    psi = 0.1
    f = Chaos1Exponential(g, psi, -0.5 * psi**2)
    res = duality_check(f, 0.1, n_paths=10000, seed=0)
    assert abs(res.z_score) <= 4.0
    # rhs is deterministic-ish: its closed-form mean is psi * phi * T * E[F(T)]
    assert res.rhs == pytest.approx(0.1 * psi * 1.0, rel=0.02)


def test_duality_brownian_terminal_is_exact_per_path():
    """For F = B(T) and phi = 1 the rhs collapses to T with zero variance."""
    g = _grid()
    f = BrownianTerminal(g)
    res = duality_check(f, 1.0, n_paths=200, seed=5)
    assert res.rhs == pytest.approx(1.0, abs=1e-12)
    assert res.rhs_se <= 1e-15
    assert abs(res.z_score) <= 4.0


def test_duality_battery_all_pass():
    g = _grid()
    battery = duality_battery(g)
    assert len(battery) == 7  # six chaos fixtures plus the Brownian boundary
    for name, spec, phi in battery:
        res = duality_check(spec, phi, n_paths=4000, seed=6)
        assert abs(res.z_score) <= 4.0, name


def test_duality_accepts_adapted_weights():
    """phi may be a rule of the noise; the identity still holds for adapted phi."""
    g = _grid()
    psi = 0.1
    f = Chaos1Exponential(g, psi, -0.5 * psi**2)

    def phi(noise):
        # piecewise weight that flips sign with the first increment's sign
        if not hasattr(noise, "increments"):
            raise TypeError("adapted rule needs the noise object")
        lead = np.sign(noise.increments[:, g.index_zero])[:, None]
        flat = np.full((noise.n_paths, g.n_horizon_steps), 0.05)
        flat[:, g.n_horizon_steps // 2 :] *= lead
        return flat

    res = duality_check(f, phi, n_paths=20000, seed=7)
    assert abs(res.z_score) <= 4.0


def test_clark_ocone_zero_loading_reconstructs_exactly():
    g = _grid()
    f = Chaos1Exponential(g, 0.0, 0.1)  # deterministic exponential
    ens = sample_ensemble(g, JumpSpec.none(), seed=8, n_paths=100)
    res = clark_ocone_residual(f, ens)
    assert np.max(res) <= 1e-13


def test_clark_ocone_corrected_halves_under_refinement():
    psi = 0.1
    rms = {}
    for m in (8, 16):
        g = make_grid(0.2, 1.0, m)
        f = Chaos1Exponential(g, psi, -0.5 * psi**2)
        ens = sample_ensemble(g, JumpSpec.none(), seed=5, n_paths=2000)
        rms[m] = float(np.sqrt((clark_ocone_residual(f, ens) ** 2).mean()))
    ratio = rms[16] / rms[8]
    assert 0.35 <= ratio <= 0.65


def test_clark_ocone_euler_is_half_order_slower():
    psi = 0.1
    rms = {}
    for m in (8, 16):
        g = make_grid(0.2, 1.0, m)
        f = Chaos1Exponential(g, psi, -0.5 * psi**2)
        ens = sample_ensemble(g, JumpSpec.none(), seed=5, n_paths=2000)
        rms[m] = float(np.sqrt((clark_ocone_residual(f, ens, scheme="euler") ** 2).mean()))
    ratio = rms[16] / rms[8]
    assert 0.6 <= ratio <= 0.85
    with pytest.raises(ValueError):
        clark_ocone_residual(
            Chaos1Exponential(make_grid(0.2, 1.0, 8), psi, 0.0),
            sample_ensemble(make_grid(0.2, 1.0, 8), JumpSpec.none(), 0, 2),
            scheme="midpoint",
        )


def test_corrected_beats_euler_at_same_resolution():
    g = _grid()
    f = Chaos1Exponential(g, 0.1, -0.5 * 0.1**2)
    ens = sample_ensemble(g, JumpSpec.none(), seed=9, n_paths=2000)
    rms_corrected = np.sqrt((clark_ocone_residual(f, ens) ** 2).mean())
    rms_euler = np.sqrt((clark_ocone_residual(f, ens, scheme="euler") ** 2).mean())
    assert rms_corrected < 0.5 * rms_euler
