"""Adjoint machinery: Hamiltonian evaluation and the backward equations.

Two independent routes to the adjoint processes are implemented and checked
against each other:

* the one-dimensional backward equation with the anticipating "noisy memory"
  driver, solved in closed form for the linear family (LinearBSDESpec) and
  measured by a pathwise residual checker in general, and
* the two-dimensional time-advanced backward equation obtained from the
  memory reduction, solved by a least-squares Monte Carlo sweep.

The bridge between the two (reconstructing the second martingale component
q2 from a Malliavin window integral, and conversely lifting a 1D solution to
the 2D system) is provided in both directions.
"""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import MemoryKernel
from .errors import (
    FixedPointDiverged,
    GridMismatch,
    MalliavinUnavailable,
    RankDeficientBasis,
)
from .malliavin import Chaos1Exponential
from .paths import NoisePath

_COND_LIMIT = 1e13


# ---------------------------------------------------------------------------
# Hamiltonian


@dataclass
class HamiltonianEval:
    """Value and (x, y, z, u) gradient of the Hamiltonian at one point."""

    value: np.ndarray
    grad: tuple


def _r_pair(r):
    if r is None:
        return None
    if isinstance(r, (tuple, list)):
        r0, r1 = r
        return np.asarray(r0, dtype=float), np.asarray(r1, dtype=float)
    return np.asarray(r, dtype=float), np.zeros(np.shape(np.asarray(r)))


def hamiltonian(model, t, x, y, z, u, p, q, r=None):
    """Evaluate f + b p + sigma q + jump pairing, with its 4-gradient.

    Args:
        model: CoefficientModel.
        t: time; x, y, z, u, p, q: scalars or per-path arrays.
        r: jump adjoint as an affine pair (r0, r1) meaning r(zeta) = r0 +
            r1 * zeta, a bare array (slope taken as 0), or None.

    Returns:
        HamiltonianEval; the jump term is the nu-quadrature pairing of gamma
        with r and is dropped for models without jumps.
    """
    value = (
        model.running_cost(t, x, y, z, u)
        + model.drift(t, x, y, z, u) * p
        + model.diffusion(t, x, y, z, u) * q
    )
    fg = model.cost_grad(t, x, y, z, u)
    bg = model.drift_grad(t, x, y, z, u)
    sg = model.diffusion_grad(t, x, y, z, u)
    grad = [fg[i] + bg[i] * p + sg[i] * q for i in range(4)]
    if model.has_jumps and r is not None:
        r0, r1 = _r_pair(r)
        value = value + model.gamma.pair_nu_integral(t, x, y, z, u, r0, r1, model.jump_spec)
        gg = model.gamma.pair_grad_nu_integral(t, x, y, z, u, r0, r1, model.jump_spec)
        grad = [grad[i] + gg[i] for i in range(4)]
    return HamiltonianEval(value, tuple(grad))


def hamiltonian_2d_relation(model, t, x1, y1, x2, y2, u, p1, q1, q2, r1=None):
    """The reduced Hamiltonian H = Hcal(x1, y1, x2 - y2, u, p1, q1, r1) + x1 q2.

    Returns (H_value, residual) where the residual compares the grouped form
    against a term-by-term re-accumulation; it is zero up to rounding and
    exists to certify the bookkeeping, not the math.
    """
    base = hamiltonian(model, t, x1, y1, x2 - y2, u, p1, q1, r1)
    h_value = base.value + x1 * q2
    z = x2 - y2
    regrouped = (
        (model.running_cost(t, x1, y1, z, u) + x1 * q2)
        + model.drift(t, x1, y1, z, u) * p1
        + model.diffusion(t, x1, y1, z, u) * q1
    )
    if model.has_jumps and r1 is not None:
        r0, r1c = _r_pair(r1)
        regrouped = regrouped + model.gamma.pair_nu_integral(
            t, x1, y1, z, u, r0, r1c, model.jump_spec
        )
    residual = np.max(np.abs(h_value - regrouped))
    return h_value, float(residual)


# ---------------------------------------------------------------------------
# Closed-form solution of the linear noisy-memory backward equation


@dataclass
class LinearBSDESpec:
    """Parameters of the linear fixture whose adjoint solves in closed form.

    State: dX = (a1 X + a0 Z - u) dt + sigma0(t) X dB; terminal weight
    exp(int psi dB).  sigma0 and psi may be constants or callables of t.
    """

    a0: float
    a1: float
    sigma0: object = 0.2
    psi: object = 0.1
    delta: float = 0.2
    horizon: float = 1.0

    @classmethod
    def from_model(cls, model):
        meta = getattr(model, "meta", None)
        if not meta or "a0" not in meta:
            raise ValueError("model does not carry linear-family metadata")
        return cls(
            a0=meta["a0"], a1=meta["a1"], sigma0=meta["sigma0"], psi=meta["psi"],
            delta=meta["delta"], horizon=meta["horizon"],
        )


@dataclass
class AdjointTriple:
    """Adjoint processes on the horizon nodes.

    p, q: (n_paths, n+1); r: affine pair (r0, r1) or None; mu: the
    conditional driver E[mu(t) | F_t] per node and path.
    """

    grid: object
    p: np.ndarray
    q: np.ndarray
    r: object
    mu: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class Adjoint2D:
    """Adjoint processes of the reduced two-dimensional backward system."""

    grid: object
    p1: np.ndarray
    p2: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    r1: object
    r2: object
    mu1: np.ndarray
    mu2: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _window_growth(alpha, h, i, end):
    """Accumulated growth weights exp(sum_{r=i+1}^{s} alpha_r h) for s in [i, end).

    The inner sum is right-point, so the weight at s never involves alpha_i;
    that is what makes the backward A/alpha computation lower-triangular (the
    value at node i only consumes already-known rates at i+1..end-1).
    """
    w = np.empty(end - i)
    if end <= i:
        return w
    w[0] = 1.0
    acc = 0.0
    for s in range(i + 1, end):
        acc += alpha[s] * h
        w[s - i] = np.exp(acc)
    return w


def _time_values(grid, spec, default):
    fn = spec if spec is not None else default
    if callable(fn):
        vals = np.asarray(fn(grid.horizon_nodes), dtype=float)
        if vals.ndim == 0:
            vals = np.full(grid.n_horizon_steps + 1, float(vals))
        return vals
    return np.full(grid.n_horizon_steps + 1, float(fn))


def solve_linear_closed_form(spec, noise):
    """Closed-form adjoint for the linear fixture, evaluated on given paths.

    The driver's memory window makes the mean-reversion rate A(t) depend on
    the conditional growth rate alpha on [t, t+delta], and alpha in turn
    depends on A(t); on the grid this dependence is lower-triangular backward
    in time, so one sweep from the terminal node resolves both with no
    fixed-point iteration.  The solution is the first-chaos exponential

        p(t) = C * exp(int_0^t psi dB + int_0^t c ds),   q = psi * p,

    with log-drift c = sigma0^2/2 - (sigma0 + psi)^2/2 - A and normalization
    C = exp(-int_0^T c ds) pinning p(T) to the terminal weight exp(int psi dB).

    Returns:
        AdjointTriple with diagnostics A, alpha, beta, c, C, Q, the chaos
        representation of p, and the terminal mismatch max |p(T) - weight|.

    Raises:
        FixedPointDiverged: a non-finite value appeared in the backward sweep
            (with the node index in the message).
        GridMismatch: the noise grid disagrees with the spec's delta/horizon.
    """
    grid = noise.grid
    if abs(grid.delta - spec.delta) > 1e-12 or abs(grid.horizon - spec.horizon) > 1e-12:
        raise GridMismatch(
            "grid (delta=%g, horizon=%g) does not match spec (delta=%g, horizon=%g)"
            % (grid.delta, grid.horizon, spec.delta, spec.horizon)
        )
    n = grid.n_horizon_steps
    m = grid.steps_per_delay
    h = grid.step
    sigma0 = _time_values(grid, spec.sigma0, 0.0)
    psi = _time_values(grid, spec.psi, 0.0)

    a_path = np.empty(n + 1)
    alpha = np.empty(n + 1)
    c_path = np.empty(n + 1)
    q_window = np.empty(n + 1)
    for i in range(n, -1, -1):
        end = min(i + m, n)
        q_window[i] = h * _window_growth(alpha, h, i, end).sum()
        a_path[i] = spec.a1 + spec.a0 * psi[i] * q_window[i]
        c_path[i] = 0.5 * sigma0[i] ** 2 - 0.5 * (sigma0[i] + psi[i]) ** 2 - a_path[i]
        alpha[i] = c_path[i] + 0.5 * psi[i] ** 2
        if not (np.isfinite(a_path[i]) and np.isfinite(alpha[i])):
            raise FixedPointDiverged(
                "backward sweep produced a non-finite rate at node %d (t=%g): "
                "A=%r, alpha=%r" % (i, grid.horizon_nodes[i], a_path[i], alpha[i])
            )

    scale = float(np.exp(-h * c_path[:n].sum()))
    chaos = Chaos1Exponential(grid, psi, c_path, scale=scale)
    p = chaos.paths(noise)
    q = psi[None, :] * p
    mu = (a_path + sigma0 * psi)[None, :] * p

    incr = noise.increments
    if incr.ndim == 1:
        incr = incr[None, :]
    weight = np.exp((psi[:n] * incr[:, grid.index_zero:]).sum(axis=1))
    terminal_residual = float(np.max(np.abs(p[:, -1] - weight)))

    diagnostics = {
        "A": a_path,
        "alpha": alpha,
        "beta": psi,
        "c": c_path,
        "C": scale,
        "Q": q_window,
        "chaos": chaos,
        "terminal_residual": terminal_residual,
    }
    return AdjointTriple(grid, p, q, None, mu, diagnostics)


# ---------------------------------------------------------------------------
# Window engines: the adjoint driver's conditional and Malliavin integrals


class Chaos1WindowEngine:
    """Window integrals for dH/dz(s) = coeff(s) * F(s) with F first-chaos.

    Conditional expectations use the same right-point growth weights as the
    closed-form A sweep (shared helper), so reconstruction identities hold to
    rounding rather than to discretization error.

    Args:
        grid: TimeGrid.
        psi, alpha, coeff: deterministic horizon-node arrays — the volatility
            loading of F, its conditional growth rate, and the deterministic
            factor in dH/dz.
        f_paths: (n_paths, n+1) values of F on the horizon nodes.
    """

    def __init__(self, grid, psi, alpha, coeff, f_paths):
        self.grid = grid
        self.psi = np.asarray(psi, dtype=float)
        self.alpha = np.asarray(alpha, dtype=float)
        self.coeff = np.asarray(coeff, dtype=float)
        self.f_paths = f_paths

    def value(self, k):
        """dH/dz at node k, per path."""
        return self.coeff[k] * self.f_paths[:, k]

    def _window_sum(self, k, weights):
        n = self.grid.n_horizon_steps
        end = min(k + self.grid.steps_per_delay, n)
        if end <= k:
            return 0.0
        terms = self.coeff[k:end] * _window_growth(self.alpha, self.grid.step, k, end)
        if weights is not None:
            terms = terms * weights[: end - k]
        return self.grid.step * terms.sum()

    def conditional_window(self, k, weights=None):
        """int_t^{(t+delta) ^ T} E[dH/dz(s) | F_t] ds at t = t_k, per path."""
        return self.f_paths[:, k] * self._window_sum(k, weights)

    def malliavin_window(self, k, weights=None):
        """Same window over E[D_t dH/dz(s) | F_t] — the q2 reconstruction."""
        return self.psi[k] * self.conditional_window(k, weights)

    def advanced_conditional(self, k):
        """E[dH/dz(t_k + delta) | F_{t_k}] per path (caller checks k+m <= n)."""
        k_adv = k + self.grid.steps_per_delay
        growth = _window_growth(self.alpha, self.grid.step, k, k_adv + 1)[-1]
        return self.coeff[k_adv] * growth * self.f_paths[:, k]


class DeterministicWindowEngine:
    """Window integrals for a deterministic dH/dz path (Malliavin part zero)."""

    def __init__(self, grid, values):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)

    def value(self, k):
        return self.values[k]

    def conditional_window(self, k, weights=None):
        n = self.grid.n_horizon_steps
        end = min(k + self.grid.steps_per_delay, n)
        if end <= k:
            return 0.0
        terms = self.values[k:end]
        if weights is not None:
            terms = terms * weights[: end - k]
        return self.grid.step * terms.sum()

    def malliavin_window(self, k, weights=None):
        return 0.0

    def advanced_conditional(self, k):
        return self.values[k + self.grid.steps_per_delay]


class BumpRegressionEngine:
    """Fallback window engine: bump-and-regress Malliavin estimates.

    For a dH/dz process with no closed form, conditional expectations are
    least-squares projections on a state basis, and E[D_t dH/dz(s) | F_t] is
    estimated by bumping the Brownian increment at t, recomputing the process
    with the supplied rule, and regressing the per-path difference quotient.
    Estimates carry both regression and finite-difference error; acceptance
    checks never rely on this engine (see the exact engines above), but it is
    validated against them on the linear fixture.

    Args:
        grid: TimeGrid.
        values: (n_paths, n+1) dH/dz on the horizon nodes.
        recompute: callable noise -> (n_paths, n+1) dH/dz values, used for
            bumped noise; None disables Malliavin windows.
        noise: the ensemble the values were computed on.
        design: (n_paths, n_features, n+1) regression features per node, or a
            callable k -> (n_paths, n_features).
        ridge: Tikhonov weight for the regressions.
    """

    def __init__(self, grid, values, recompute, noise, design, ridge=1e-8):
        self.grid = grid
        self.values = values
        self.recompute = recompute
        self.noise = noise
        self._design = design
        self.ridge = ridge
        self._bumped_cache = {}

    def _design_at(self, k):
        if callable(self._design):
            return self._design(k)
        return self._design[:, :, k]

    def value(self, k):
        return self.values[:, k]

    def _fit(self, k, targets):
        return _ridge_fit(self._design_at(k), targets, self.ridge)[0]

    def conditional_window(self, k, weights=None):
        n = self.grid.n_horizon_steps
        end = min(k + self.grid.steps_per_delay, n)
        if end <= k:
            return np.zeros(self.values.shape[0])
        fitted = self._fit(k, self.values[:, k:end])
        if weights is not None:
            fitted = fitted * weights[: end - k][None, :]
        return self.grid.step * fitted.sum(axis=1)

    def _bumped_quotient(self, k):
        if k in self._bumped_cache:
            return self._bumped_cache[k]
        if self.recompute is None:
            raise MalliavinUnavailable(
                "no recompute rule was supplied, so Malliavin windows cannot "
                "be bump-estimated for this dH/dz process"
            )
        step = self.grid.index_zero + k
        incr = self.noise.increments
        if incr.ndim == 1:
            incr = incr[None, :]
        bump = np.sqrt(np.sqrt(np.finfo(float).eps)) * (1.0 + np.abs(incr[:, step]))
        bumped_vals = self.recompute(self.noise.with_bumped_increment(step, bump))
        quotient = (bumped_vals - self.values) / bump[:, None]
        self._bumped_cache[k] = quotient
        return quotient

    def malliavin_window(self, k, weights=None):
        n = self.grid.n_horizon_steps
        end = min(k + self.grid.steps_per_delay, n)
        if end <= k:
            return np.zeros(self.values.shape[0])
        quotient = self._bumped_quotient(k)
        fitted = self._fit(k, quotient[:, k:end])
        if weights is not None:
            fitted = fitted * weights[: end - k][None, :]
        return self.grid.step * fitted.sum(axis=1)

    def advanced_conditional(self, k):
        k_adv = k + self.grid.steps_per_delay
        return self._fit(k, self.values[:, k_adv])


# ---------------------------------------------------------------------------
# Driver assembly and the 1D residual checker


def _kernel_mu_weights(kernel, grid, k_horizon, end_horizon):
    """Forward kernel weights for the driver window, or None for identity."""
    if kernel is None or kernel.is_identity:
        return None
    iz = grid.index_zero
    return kernel.forward_weights(grid, iz + k_horizon, iz + end_horizon)


def mu_generalized(grid, dHx, dHy, engine, kernel=None):
    """Conditional driver E[mu(t) | F_t] on every horizon node.

    mu(t) = dH/dx(t) + dH/dy(t+delta) 1_{t+delta <= T}
          + int_t^{t+delta} E[D_t dH/dz(s) | F_t] phi(s, t) 1_{s <= T} ds,

    where phi is the memory kernel's weight as seen from the future window
    (identity when kernel is None).  dHx is (n_paths, n+1); dHy is None (no
    y-dependence), a deterministic (n+1,) path, or per-path values whose
    t+delta slice is already F_t-measurable.

    Returns an array shaped like dHx.
    """
    n = grid.n_horizon_steps
    m = grid.steps_per_delay
    dHx = np.asarray(dHx, dtype=float)
    out = np.array(dHx, dtype=float, copy=True)
    if dHy is not None:
        dHy = np.asarray(dHy, dtype=float)
        adv = np.zeros(dHy.shape[:-1] + (n + 1,))
        adv[..., : n + 1 - m] = dHy[..., m:]
        out += adv
    for k in range(n + 1):
        end = min(k + m, n)
        if end <= k:
            continue
        weights = _kernel_mu_weights(kernel, grid, k, end)
        out[:, k] += engine.malliavin_window(k, weights)
    return out


def _jump_residual_terms(model, state, adjoint):
    """Compensated jump pairing per step: int int r(zeta) Ntilde(ds, dzeta)."""
    noise = state.noise
    spec = model.jump_spec
    counts = noise.jump_counts
    if counts.ndim == 1:
        counts = counts[None, :]
    mark_sums = noise.step_mark_sums()
    if mark_sums.ndim == 1:
        mark_sums = mark_sums[None, :]
    iz = state.grid.index_zero
    n = state.grid.n_horizon_steps
    h = state.grid.step
    r0, r1 = _r_pair(adjoint.r)
    comp0 = counts[:, iz:] - spec.intensity * h
    comp1 = mark_sums[:, iz:] - spec.levy_moment(1) * h
    out = np.zeros((counts.shape[0], n))
    for k in range(n):
        rr0 = r0[:, k] if r0.ndim == 2 else r0
        rr1 = r1[:, k] if r1.ndim == 2 else r1
        out[:, k] = rr0 * comp0[:, k] + rr1 * comp1[:, k]
    return out


def bsde_residual_1d(adjoint, state, model, engine, kernel=None):
    """Pathwise Euler residual of the 1D noisy-memory backward equation.

    residual_k = p_{k+1} - p_k + E[mu | F]_k h - q_k dB_k - jump pairing,
    assembled with the model's Hamiltonian partials at the simulated state and
    the engine's window integrals.  Returns (sup, rms) over paths and steps.
    """
    grid = state.grid
    n = grid.n_horizon_steps
    h = grid.step
    iz = grid.index_zero
    p = np.atleast_2d(adjoint.p)
    q = np.atleast_2d(adjoint.q)
    u_rows = state.control.rows()
    memory = state.memory_arg

    dHx = np.empty((max(p.shape[0], state.n_paths), n + 1))
    dHy = np.empty_like(dHx)
    for k in range(n + 1):
        t_k = grid.horizon_nodes[k]
        point = (t_k, state.x[:, iz + k], state.y[:, k], memory[:, k], u_rows[:, k])
        ev = hamiltonian(model, *point, p=p[:, k], q=q[:, k], r=adjoint.r)
        dHx[:, k] = ev.grad[0]
        dHy[:, k] = ev.grad[1]

    mu = mu_generalized(grid, dHx, dHy, engine, kernel=kernel)

    incr = state.noise.increments
    if incr.ndim == 1:
        incr = incr[None, :]
    incr = incr[:, iz:]
    residual = p[:, 1:] - p[:, :-1] + mu[:, :-1] * h - q[:, :-1] * incr
    if model.has_jumps and adjoint.r is not None:
        residual = residual - _jump_residual_terms(model, state, adjoint)
    sup = float(np.max(np.abs(residual)))
    rms = float(np.sqrt(np.mean(residual**2)))
    return sup, rms


# ---------------------------------------------------------------------------
# Least-squares Monte Carlo solver for the 2D time-advanced system


class QuadXZBasis:
    """Quadratic polynomial regression basis in the state pair (x, z)."""

    names = ("1", "x", "z", "x^2", "xz", "z^2")
    size = 6

    def design(self, x, z):
        one = np.ones_like(x)
        return np.column_stack([one, x, z, x * x, x * z, z * z])


def _ridge_fit(design, targets, ridge, return_coef=False):
    """Least-squares fit with Tikhonov floor; returns fitted values.

    targets may be (N,) or (N, J) for a shared design.  Raises
    RankDeficientBasis when the regularized normal matrix is still
    ill-conditioned (condition number above 1e13), which with the default
    ridge only happens for degenerate or non-finite designs.
    """
    n = design.shape[0]
    gram = design.T @ design / n
    gram = gram + ridge * np.eye(design.shape[1])
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise RankDeficientBasis(
            "regression basis is rank deficient on this ensemble "
            "(condition number %.3e)" % cond,
            condition_number=float(cond),
        )
    rhs = design.T @ (targets if targets.ndim == 2 else targets[:, None]) / n
    coef = np.linalg.solve(gram, rhs)
    fitted = design @ coef
    if targets.ndim == 1:
        fitted = fitted[:, 0]
        coef = coef[:, 0]
    if return_coef:
        return fitted, coef, cond
    return fitted, cond


def _affine_r_from_moments(u0, u1, spec):
    """Solve the 2x2 jump-moment system for the affine pair (r0, r1).

    The projections of p against the two compensated increments satisfy
    [lam, lam m1; lam m1, lam m2] (r0, r1) = (u0, u1) nodewise.
    """
    lam = spec.intensity
    m1 = spec.levy_moment(1)
    m2 = spec.levy_moment(2)
    det = lam * (lam * m2) - (lam * m1) ** 2
    if abs(det) < 1e-300:
        return np.zeros_like(u0), np.zeros_like(u1)
    r0 = (lam * m2 * u0 - lam * m1 * u1) / det
    r1 = (lam * u1 - lam * m1 * u0) / det
    return r0, r1


def solve_absde_2d(model, state, basis=None, ridge=1e-8, kernel=None):
    """Backward least-squares sweep for the reduced time-advanced system.

    Args:
        model: CoefficientModel.
        state: StateBundle from reduce_2d (x2 populated) on an ensemble.
        basis: regression basis (default QuadXZBasis) evaluated on
            (X(t_k), Z(t_k)).
        ridge: Tikhonov weight.
        kernel: must be None/identity — the reduction does not apply to
            weighted memory.

    Returns:
        Adjoint2D with all components on the horizon nodes; q and r at the
        terminal node are zero by convention.  Conditional expectations are
        least-squares projections: each step fits the continuation values,
        estimates the martingale loadings from control-variate products with
        the step increments, assembles the drivers mu1 (which consumes the
        same-step q2 and the regressed advance term) and mu2 (the z-partial
        minus its regressed advance), and steps p back.

    Raises:
        KernelNotReducible via reduce_2d upstream; RankDeficientBasis from
        the regressions; ValueError if the ensemble is too small.
    """
    if kernel is not None and not kernel.is_identity:
        raise MalliavinUnavailable(
            "the 2D reduction only represents the unweighted memory window"
        )
    if state.x2 is None:
        raise ValueError("state must come from reduce_2d (x2 missing)")
    basis = basis if basis is not None else QuadXZBasis()
    grid = state.grid
    n = grid.n_horizon_steps
    m = grid.steps_per_delay
    h = grid.step
    iz = grid.index_zero
    n_paths = state.n_paths
    if n_paths < 10 * basis.size:
        raise ValueError(
            "need at least %d paths for a size-%d basis, got %d"
            % (10 * basis.size, basis.size, n_paths)
        )
    noise = state.noise
    incr = noise.increments
    if incr.ndim == 1:
        incr = incr[None, :]
    u_rows = state.control.rows()
    jumps_on = model.has_jumps
    if jumps_on:
        counts = noise.jump_counts
        if counts.ndim == 1:
            counts = counts[None, :]
        mark_sums = noise.step_mark_sums()
        if mark_sums.ndim == 1:
            mark_sums = mark_sums[None, :]

    shape = (n_paths, n + 1)
    p1 = np.zeros(shape)
    p2 = np.zeros(shape)
    q1 = np.zeros(shape)
    q2 = np.zeros(shape)
    mu1 = np.zeros(shape)
    mu2 = np.zeros(shape)
    r1_0 = np.zeros(shape) if jumps_on else None
    r1_1 = np.zeros(shape) if jumps_on else None
    dHy_vals = np.zeros(shape)
    dHz_vals = np.zeros(shape)

    p1[:, n] = model.terminal.grad(state.terminal_x, noise)
    ev_T = hamiltonian(
        model,
        grid.horizon,
        state.x[:, -1],
        state.y[:, n],
        state.z[:, n],
        u_rows[:, n],
        p=p1[:, n],
        q=q1[:, n],
        r=(0.0, 0.0) if jumps_on else None,
    )
    dHy_vals[:, n] = ev_T.grad[1]
    dHz_vals[:, n] = ev_T.grad[2]
    mu2[:, n] = dHz_vals[:, n]

    worst_cond = 0.0
    for k in range(n - 1, -1, -1):
        t_k = grid.horizon_nodes[k]
        xk = state.x[:, iz + k]
        zk = state.z[:, k]
        design = basis.design(xk, zk)
        db = incr[:, iz + k]

        cont = np.column_stack([p1[:, k + 1], p2[:, k + 1]])
        fitted, cond = _ridge_fit(design, cont, ridge)
        worst_cond = max(worst_cond, cond)
        pbar1 = fitted[:, 0]
        pbar2 = fitted[:, 1]

        mart = np.column_stack([
            (p1[:, k + 1] - pbar1) * db / h,
            (p2[:, k + 1] - pbar2) * db / h,
        ])
        fitted_q, cond = _ridge_fit(design, mart, ridge)
        worst_cond = max(worst_cond, cond)
        q1[:, k] = fitted_q[:, 0]
        q2[:, k] = fitted_q[:, 1]

        if jumps_on:
            spec = model.jump_spec
            comp0 = counts[:, iz + k] - spec.intensity * h
            comp1 = mark_sums[:, iz + k] - spec.levy_moment(1) * h
            jump_targets = np.column_stack([
                (p1[:, k + 1] - pbar1) * comp0 / h,
                (p1[:, k + 1] - pbar1) * comp1 / h,
            ])
            fitted_r, cond = _ridge_fit(design, jump_targets, ridge)
            worst_cond = max(worst_cond, cond)
            r1_0[:, k], r1_1[:, k] = _affine_r_from_moments(
                fitted_r[:, 0], fitted_r[:, 1], spec
            )

        r_here = (r1_0[:, k], r1_1[:, k]) if jumps_on else None
        ev = hamiltonian(
            model, t_k, xk, state.y[:, k], zk, u_rows[:, k],
            p=pbar1, q=q1[:, k], r=r_here,
        )
        dHy_vals[:, k] = ev.grad[1]
        dHz_vals[:, k] = ev.grad[2]

        mu1_k = q2[:, k] + ev.grad[0]
        if k + m <= n:
            adv_y, cond = _ridge_fit(design, dHy_vals[:, k + m], ridge)
            worst_cond = max(worst_cond, cond)
            mu1_k = mu1_k + adv_y
            adv_z, cond = _ridge_fit(design, dHz_vals[:, k + m], ridge)
            worst_cond = max(worst_cond, cond)
            mu2_k = dHz_vals[:, k] - adv_z
        else:
            mu2_k = dHz_vals[:, k]
        mu1[:, k] = mu1_k
        mu2[:, k] = mu2_k

        p1[:, k] = pbar1 + mu1_k * h
        p2[:, k] = pbar2 + mu2_k * h

    mu1[:, n] = ev_T.grad[0]
    r1 = (r1_0, r1_1) if jumps_on else None
    r2 = (np.zeros(shape), np.zeros(shape)) if jumps_on else None
    diagnostics = {
        "basis": basis.names,
        "ridge": ridge,
        "max_condition": worst_cond,
    }
    return Adjoint2D(grid, p1, p2, q1, q2, r1, r2, mu1, mu2, diagnostics)


# ---------------------------------------------------------------------------
# The bridge between the 1D and 2D formulations


def bridge_1d_from_2d(adjoint2d, engine, kernel=None):
    """Collapse a 2D solution to the 1D triple and audit q2 against its
    Malliavin-window reconstruction.

    Returns (AdjointTriple, max_reconstruction_deviation).  The triple reuses
    the (p1, q1, r1, mu1) arrays; the deviation is max over nodes and paths
    of |q2 - window reconstruction| and is the bridge-consistency statistic.
    """
    grid = adjoint2d.grid
    n = grid.n_horizon_steps
    recon = np.zeros_like(adjoint2d.q2)
    for k in range(n + 1):
        end = min(k + grid.steps_per_delay, n)
        weights = _kernel_mu_weights(kernel, grid, k, end) if end > k else None
        recon[:, k] = engine.malliavin_window(k, weights)
    deviation = float(np.max(np.abs(adjoint2d.q2 - recon)))
    triple = AdjointTriple(
        grid, adjoint2d.p1, adjoint2d.q1, adjoint2d.r1, adjoint2d.mu1,
        {"q2_reconstruction_deviation": deviation, "q2_reconstructed": recon},
    )
    return triple, deviation


def lift_2d_from_1d(adjoint, engine, model=None, state=None, kernel=None):
    """Extend a 1D triple to the 2D system via the window integrals.

    p2(t) = window conditional of dH/dz; q2(t) = its Malliavin window; r2 = 0;
    (p1, q1, r1) are the input arrays unchanged (so bridging back returns
    them bitwise).  mu1/mu2 are assembled from the engine; when model and
    state are given, dH/dx and dH/dy are recomputed from the model partials,
    otherwise adjoint.mu is carried over as mu1.

    Returns (Adjoint2D, p2_equation_residual_sup) where the residual is the
    Euler defect of the p2 equation dp2 = -mu2 dt + q2 dB.
    """
    grid = adjoint.grid
    n = grid.n_horizon_steps
    m = grid.steps_per_delay
    p = np.atleast_2d(adjoint.p)
    q = np.atleast_2d(adjoint.q)
    n_paths = p.shape[0]

    p2 = np.zeros((n_paths, n + 1))
    q2 = np.zeros((n_paths, n + 1))
    mu2 = np.zeros((n_paths, n + 1))
    for k in range(n + 1):
        end = min(k + m, n)
        weights = _kernel_mu_weights(kernel, grid, k, end) if end > k else None
        p2[:, k] = engine.conditional_window(k, weights)
        q2[:, k] = engine.malliavin_window(k, weights)
        mu2[:, k] = engine.value(k)
        if k + m <= n:
            mu2[:, k] = mu2[:, k] - engine.advanced_conditional(k)

    if model is not None and state is not None:
        iz = grid.index_zero
        u_rows = state.control.rows()
        memory = state.memory_arg
        dHx = np.zeros((max(n_paths, state.n_paths), n + 1))
        dHy = np.zeros_like(dHx)
        for k in range(n + 1):
            ev = hamiltonian(
                model, grid.horizon_nodes[k], state.x[:, iz + k], state.y[:, k],
                memory[:, k], u_rows[:, k], p=p[:, k], q=q[:, k], r=adjoint.r,
            )
            dHx[:, k] = ev.grad[0]
            dHy[:, k] = ev.grad[1]
        mu1 = dHx + q2
        mu1[:, : n + 1 - m] += dHy[:, m:]
    else:
        mu1 = np.atleast_2d(adjoint.mu)

    noise = state.noise if state is not None else None
    if noise is not None:
        incr = noise.increments
        if incr.ndim == 1:
            incr = incr[None, :]
        incr = incr[:, grid.index_zero:]
        defect = p2[:, 1:] - p2[:, :-1] + mu2[:, :-1] * grid.step - q2[:, :-1] * incr
        p2_residual = float(np.max(np.abs(defect)))
    else:
        p2_residual = float("nan")
    lifted = Adjoint2D(
        grid=grid, p1=adjoint.p, p2=p2, q1=adjoint.q, q2=q2,
        r1=adjoint.r, r2=None, mu1=mu1, mu2=mu2,
        diagnostics={"p2_equation_residual": p2_residual},
    )
    return lifted, p2_residual
