"""Built-in model catalog: ready-made control problems used by tests and the CLI.

Each factory returns a CoefficientModel with analytic gradients and a `.meta`
dict recording the raw parameters (so solvers that exploit the linear
structure — the closed-form adjoint, the regression cross-check — can recover
them without re-parsing coefficients).
"""

import numpy as np

from .dynamics import (
    AffineJumpCoefficient,
    ControlSet,
    CoefficientModel,
    DeterministicTerminal,
    MemoryKernel,
    StochasticLinearTerminal,
)
from .malliavin import BrownianTerminal, Chaos1Exponential


def _as_time_fn(value):
    """Normalize a constant or callable-of-t into a vectorized callable."""
    if callable(value):
        return value
    c = float(value)

    def fn(t):
        return np.full(np.shape(np.asarray(t, dtype=float)), c)

    return fn


def _log_utility():
    def cost(t, x, y, z, u):
        return np.log(u)

    def cost_grad(t, x, y, z, u):
        zero = np.zeros(np.shape(np.asarray(u, dtype=float)))
        return (zero, zero, zero, 1.0 / np.asarray(u, dtype=float))

    return cost, cost_grad


def _memory_drift(a0, a1):
    def drift(t, x, y, z, u):
        return a1 * x + a0 * z - u

    def drift_grad(t, x, y, z, u):
        shape = np.shape(np.asarray(x, dtype=float))
        return (
            np.full(shape, a1),
            np.zeros(shape),
            np.full(shape, a0),
            np.full(shape, -1.0),
        )

    return drift, drift_grad


def _proportional_diffusion(sigma0_fn):
    def diffusion(t, x, y, z, u):
        return sigma0_fn(t) * x

    def diffusion_grad(t, x, y, z, u):
        shape = np.shape(np.asarray(x, dtype=float))
        return (
            np.broadcast_to(np.asarray(sigma0_fn(t), dtype=float), shape).copy(),
            np.zeros(shape),
            np.zeros(shape),
            np.zeros(shape),
        )

    return diffusion, diffusion_grad


def _lognormal_weight(psi_fn):
    """Terminal weight exp(sum psi(t_k) dB_k) over the horizon steps."""

    def weight(noise):
        grid = noise.grid
        incr = noise.increments
        if incr.ndim == 1:
            incr = incr[None, :]
        psi_vals = np.asarray(psi_fn(grid.horizon_nodes[:-1]), dtype=float)
        w = np.exp((psi_vals * incr[:, grid.index_zero:]).sum(axis=1))
        return w if w.shape[0] > 1 else float(w[0])

    return weight


def linear_noisy_memory(
    a0=0.5,
    a1=0.3,
    sigma0=0.2,
    psi=0.1,
    delta=0.2,
    horizon=1.0,
    xi0=1.0,
    control_set=(0.05, 20.0),
):
    """Linear memory dynamics with a lognormal terminal weight.

    dX = (a1 X + a0 Z - u) dt + sigma0(t) X dB, X = xi0 on [-delta, 0],
    running payoff ln(u), terminal payoff exp(int psi dB) * X(T).

    The adjoint BSDE of this model is solved in closed form by
    adjoint.solve_linear_closed_form, which is what makes it the main
    regression/bridge test fixture.
    """
    sigma0_fn = _as_time_fn(sigma0)
    psi_fn = _as_time_fn(psi)
    drift, drift_grad = _memory_drift(a0, a1)
    diffusion, diffusion_grad = _proportional_diffusion(sigma0_fn)
    cost, cost_grad = _log_utility()
    model = CoefficientModel(
        drift=drift,
        diffusion=diffusion,
        running_cost=cost,
        terminal=StochasticLinearTerminal(_lognormal_weight(psi_fn)),
        initial_segment=_as_time_fn(xi0),
        control_set=ControlSet(*control_set),
        drift_grad=drift_grad,
        diffusion_grad=diffusion_grad,
        cost_grad=cost_grad,
        name="linear-noisy-memory",
    )
    model.meta = {
        "a0": a0,
        "a1": a1,
        "sigma0": sigma0_fn,
        "psi": psi_fn,
        "delta": delta,
        "horizon": horizon,
        "xi0": xi0,
    }
    return model


def consumption(
    a0=0.5,
    a1=0.3,
    sigma0=0.2,
    delta=0.2,
    horizon=1.0,
    xi0=1.0,
    kernel=None,
    control_set=(0.05, 20.0),
    running="log",
    linear_rate=1.0,
    jump_scale=0.0,
    jump_spec=None,
):
    """Consumption problem: same memory dynamics, terminal payoff g(x) = x.

    With g' = 1 deterministic the adjoint collapses to the deterministic path
    p(t) = e^{a1 (T - t)}, q = 0, regardless of sigma0, a0, or the memory
    kernel — which is what makes this the fixture for the first-order
    condition and the maximum-principle checkers.  With f(t,u) = ln u the
    optimal control is u*(t) = e^{-a1 (T - t)}.

    Args:
        kernel: optional MemoryKernel; the ramp kernel with a0=1 gives the
            generalized-memory variant where dX = (Z' + a1 X - u) dt + ...
        running: "log" for ln u, or "linear" for linear_rate * u (used to
            build boundary-optimum fixtures).
        jump_scale: adds the compensated jump term jump_scale * X dN~ with
            mark-proportional sizes; since the term is mean zero, the adjoint
            stays p(t) = e^{a1 (T - t)} with r = 0 — it only widens the
            ensemble.  Requires jump_spec (also stored on the model).
    """
    sigma0_fn = _as_time_fn(sigma0)
    drift, drift_grad = _memory_drift(a0, a1)
    diffusion, diffusion_grad = _proportional_diffusion(sigma0_fn)
    gamma = None
    if jump_scale:
        if jump_spec is None:
            raise ValueError("jump_scale needs a jump_spec for the mark law")
        g0 = float(jump_scale)
        zero4 = lambda t, x, y, z, u: (
            np.zeros(np.shape(np.asarray(x, dtype=float))),
        ) * 4

        def slope_grad(t, x, y, z, u):
            shape = np.shape(np.asarray(x, dtype=float))
            return (np.full(shape, g0), np.zeros(shape), np.zeros(shape), np.zeros(shape))

        gamma = AffineJumpCoefficient(
            base=lambda t, x, y, z, u: np.zeros(np.shape(np.asarray(x, dtype=float))),
            slope=lambda t, x, y, z, u: g0 * np.asarray(x, dtype=float),
            base_grad=zero4,
            slope_grad=slope_grad,
        )
    if running == "log":
        cost, cost_grad = _log_utility()
    elif running == "linear":
        c = float(linear_rate)

        def cost(t, x, y, z, u):
            return c * np.asarray(u, dtype=float)

        def cost_grad(t, x, y, z, u):
            shape = np.shape(np.asarray(u, dtype=float))
            zero = np.zeros(shape)
            return (zero, zero, zero, np.full(shape, c))

    else:
        raise ValueError("running must be 'log' or 'linear'")
    model = CoefficientModel(
        drift=drift,
        diffusion=diffusion,
        running_cost=cost,
        terminal=DeterministicTerminal(lambda x: x, grad=lambda x: np.ones(np.shape(x))),
        initial_segment=_as_time_fn(xi0),
        control_set=ControlSet(*control_set),
        jump_coefficient=gamma,
        jump_spec=jump_spec,
        drift_grad=drift_grad,
        diffusion_grad=diffusion_grad,
        cost_grad=cost_grad,
        name="consumption",
    )
    model.meta = {
        "a0": a0,
        "a1": a1,
        "sigma0": sigma0_fn,
        "psi": _as_time_fn(0.0),
        "delta": delta,
        "horizon": horizon,
        "xi0": xi0,
        "kernel": kernel,
        "running": running,
        "linear_rate": linear_rate,
        "jump_scale": jump_scale,
    }
    return model


def generalized_memory(a1=0.3, sigma0=0.2, delta=0.2, horizon=1.0, xi0=1.0,
                       control_set=(0.05, 20.0)):
    """Consumption dynamics driven by the ramp-weighted memory integral.

    dX = (Z' + a1 X - u) dt + sigma0 X dB with Z'(t) = int_{t-delta}^t
    (s - t + delta)/delta X dB.  Returns (model, kernel); pass the kernel to
    simulate_state and the adjoint machinery.
    """
    kernel = MemoryKernel.ramp(delta)
    model = consumption(
        a0=1.0, a1=a1, sigma0=sigma0, delta=delta, horizon=horizon, xi0=xi0,
        kernel=kernel, control_set=control_set,
    )
    model.name = "generalized-memory"
    return model, kernel


def custom_affine(
    bx=0.0,
    by=0.0,
    bz=0.0,
    bu=0.0,
    b_const=0.0,
    s_const=0.0,
    sx=0.0,
    running="quadratic",
    target=1.0,
    terminal_slope=0.0,
    delta=0.2,
    horizon=1.0,
    xi0=1.0,
    control_set=(-5.0, 5.0),
):
    """Fully explicit affine model for targeted checker tests.

    Drift b_const + bx x + by y + bz z + bu u, diffusion s_const + sx x,
    running payoff -(u - target)^2 / 2 ("quadratic"), target * u ("linear"),
    or +u^2 / 2 ("convex", a deliberately non-concave payoff for negative
    controls), terminal payoff terminal_slope * x.
    """
    def drift(t, x, y, z, u):
        return b_const + bx * x + by * y + bz * z + bu * u

    def drift_grad(t, x, y, z, u):
        shape = np.shape(np.asarray(x, dtype=float))
        return (np.full(shape, bx), np.full(shape, by),
                np.full(shape, bz), np.full(shape, bu))

    def diffusion(t, x, y, z, u):
        return s_const + sx * x

    def diffusion_grad(t, x, y, z, u):
        shape = np.shape(np.asarray(x, dtype=float))
        return (np.full(shape, sx), np.zeros(shape), np.zeros(shape), np.zeros(shape))

    c = float(target)
    if running == "quadratic":
        def cost(t, x, y, z, u):
            return -0.5 * (u - c) ** 2

        def cost_grad(t, x, y, z, u):
            shape = np.shape(np.asarray(u, dtype=float))
            zero = np.zeros(shape)
            return (zero, zero, zero, -(np.asarray(u, dtype=float) - c))
    elif running == "linear":
        def cost(t, x, y, z, u):
            return c * np.asarray(u, dtype=float)

        def cost_grad(t, x, y, z, u):
            shape = np.shape(np.asarray(u, dtype=float))
            zero = np.zeros(shape)
            return (zero, zero, zero, np.full(shape, c))
    elif running == "convex":
        def cost(t, x, y, z, u):
            return 0.5 * np.asarray(u, dtype=float) ** 2

        def cost_grad(t, x, y, z, u):
            shape = np.shape(np.asarray(u, dtype=float))
            zero = np.zeros(shape)
            return (zero, zero, zero, np.asarray(u, dtype=float))
    else:
        raise ValueError("running must be 'quadratic', 'linear', or 'convex'")

    k = float(terminal_slope)
    model = CoefficientModel(
        drift=drift,
        diffusion=diffusion,
        running_cost=cost,
        terminal=DeterministicTerminal(lambda x: k * x, grad=lambda x: np.full(np.shape(x), k)),
        initial_segment=_as_time_fn(xi0),
        control_set=ControlSet(*control_set),
        drift_grad=drift_grad,
        diffusion_grad=diffusion_grad,
        cost_grad=cost_grad,
        name="custom-affine",
    )
    model.meta = {
        "delta": delta,
        "horizon": horizon,
        "xi0": xi0,
        "running": running,
        "target": target,
    }
    return model


def duality_battery(grid, include_brownian=True):
    """Fixture battery for the duality checker: 3 volatility loadings x 2 weights.

    Returns a list of (name, functional, phi) triples.  All entries are
    deterministic-coefficient members of the closed-form family, so both
    sides of the duality identity also have analytic values.
    """
    def psi_flat(t):
        return np.full(np.shape(np.asarray(t, dtype=float)), 0.1)

    def psi_zero(t):
        return np.zeros(np.shape(np.asarray(t, dtype=float)))

    def psi_wave(t):
        return 0.2 * (1.0 - 0.5 * np.asarray(t, dtype=float))

    def phi_one(t):
        return np.ones(np.shape(np.asarray(t, dtype=float)))

    def phi_ramp(t):
        return 0.5 + np.asarray(t, dtype=float)

    battery = []
    for psi_name, psi in (("flat", psi_flat), ("zero", psi_zero), ("wave", psi_wave)):
        mart = lambda t, p=psi: -0.5 * np.asarray(p(t), dtype=float) ** 2
        spec = Chaos1Exponential(grid, psi, mart)
        for phi_name, phi in (("one", phi_one), ("ramp", phi_ramp)):
            battery.append(("psi-%s/phi-%s" % (psi_name, phi_name), spec, phi))
    if include_brownian:
        battery.append(("brownian/phi-one", BrownianTerminal(grid), phi_one))
    return battery


CATALOG = {
    "linear-noisy-memory": {
        "factory": linear_noisy_memory,
        "summary": "linear memory SDE, log utility, lognormal terminal weight; "
                   "closed-form adjoint available",
    },
    "consumption": {
        "factory": consumption,
        "summary": "linear memory SDE, log utility, terminal payoff x; "
                   "deterministic adjoint and explicit optimal control",
    },
    "generalized-memory": {
        "factory": generalized_memory,
        "summary": "consumption dynamics with the ramp-weighted memory window "
                   "(returns model and kernel)",
    },
    "custom-affine": {
        "factory": custom_affine,
        "summary": "fully explicit affine coefficients for targeted checker tests",
    },
}
