"""Coefficient models and forward simulation of the delayed, noisy-memory state.

The state follows

    dX(t) = b(t, X, Y, Z, u) dt + sigma(t, X, Y, Z, u) dB(t) + jumps,
    X(t) = xi(t) on [-delta, 0],

where Y(t) = X(t - delta) and Z(t) is the Brownian integral of X over the
trailing window (t - delta, t], optionally reweighted by a memory kernel.
Everything is simulated with the left-point Euler rule on the shared grid;
the memory integral is maintained as a running prefix sum so that Z is, bit
for bit, the difference of two anchored Ito integrals.
"""

import numpy as np

from .errors import (
    GradientMismatch,
    GridMismatch,
    KernelNotReducible,
    NonFiniteState,
    OutOfControlSet,
)
from .paths import JumpSpec, NoisePath, sample_ensemble

_FD_BUMP = 1e-5
_ARGS = ("x", "y", "z", "u")


class ControlSet:
    """Closed interval of admissible control values (endpoints may be inf)."""

    def __init__(self, lower, upper):
        if not (lower <= upper):
            raise ValueError("control set needs lower <= upper")
        self.lower = float(lower)
        self.upper = float(upper)

    def contains(self, v, tol=0.0):
        v = np.asarray(v)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def clip(self, v):
        return np.clip(v, self.lower, self.upper)

    @property
    def midpoint(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def is_singleton(self):
        return self.lower == self.upper

    def sample(self, gen, size=None):
        if not np.isfinite(self.lower) or not np.isfinite(self.upper):
            raise ValueError("can only sample from a bounded control set")
        return gen.uniform(self.lower, self.upper, size=size)

    def __repr__(self):
        return "ControlSet(%g, %g)" % (self.lower, self.upper)


class MemoryKernel:
    """Deterministic weight phi(t, s) applied inside the memory window.

    The plain memory integral corresponds to phi identically one; that case is
    flagged so the simulator can reuse the unweighted running-sum arithmetic
    (the weighted and unweighted fold then agree bit for bit by construction).

    Attributes:
        bound: sup |phi| over the window, used in error reports.
    """

    def __init__(self, fn, bound, identity=False):
        self.fn = fn
        self.bound = float(bound)
        self.is_identity = bool(identity)

    @classmethod
    def identity(cls):
        return cls(lambda t, s: np.ones_like(np.asarray(s, dtype=float)), 1.0, identity=True)

    @classmethod
    def ramp(cls, delta, scale=1.0):
        """phi(t, s) = scale * (s - t + delta) / delta, rising 0 -> scale."""

        def fn(t, s):
            return scale * (np.asarray(s, dtype=float) - t + delta) / delta

        return cls(fn, abs(scale))

    def weights(self, grid, k):
        """phi(t_k, t_j) for the window nodes j in [k - m, k)."""
        j = np.arange(k - grid.steps_per_delay, k)
        return np.asarray(self.fn(grid.nodes[k], grid.nodes[j]), dtype=float)

    def forward_weights(self, grid, k, end):
        """phi(t_s, t_k) for s in [k, end) — the weight that the window ending
        at the future node s assigns to the current node t_k.

        This is what the adjoint driver needs: its window integral runs over
        the future times whose memory window still contains t_k.  Indices are
        full-grid node indices; `end` must not exceed the last node.
        """
        if self.is_identity:
            return np.ones(end - k)
        s = np.arange(k, end)
        return np.asarray(self.fn(grid.nodes[s], grid.nodes[k]), dtype=float)


class ControlPath:
    """Control values on the nodes of [0, horizon].

    values has shape (n_horizon_steps + 1,) for controls that are identical
    across noise paths (always the case under the trivial information flow)
    or (n_paths, n_horizon_steps + 1) for adapted per-path controls.
    """

    def __init__(self, grid, values, information="trivial", control_set=None):
        if information not in ("full", "trivial"):
            raise ValueError("information must be 'full' or 'trivial'")
        values = np.asarray(values, dtype=float)
        width = grid.n_horizon_steps + 1
        if values.ndim == 0:
            values = np.full(width, float(values))
        if values.shape[-1] != width:
            raise ValueError("control needs one value per node of [0, horizon]")
        if information == "trivial" and values.ndim != 1:
            raise ValueError("trivial-information controls are one value per node")
        if control_set is not None and not control_set.contains(values):
            raise OutOfControlSet(
                "control leaves the admissible interval %r" % (control_set,)
            )
        self.grid = grid
        self.values = values
        self.information = information
        self.control_set = control_set
        self.values.flags.writeable = False

    @classmethod
    def constant(cls, grid, v, information="trivial", control_set=None):
        return cls(grid, np.full(grid.n_horizon_steps + 1, float(v)), information, control_set)

    def rows(self):
        """values with a leading path axis (size 1 when shared across paths)."""
        return self.values if self.values.ndim == 2 else self.values[None, :]

    def shifted_by(self, direction, s):
        """Control with values + s * direction (direction: same node layout).

        Keeps the admissible set, so a shift that leaves it raises
        OutOfControlSet.
        """
        direction = np.asarray(direction, dtype=float)
        info = self.information
        if direction.ndim == 2 or self.values.ndim == 2:
            info = "full"
        return ControlPath(self.grid, self.values + s * direction, info, self.control_set)


class DeterministicTerminal:
    """Terminal payoff g(x) with an optional analytic derivative."""

    def __init__(self, fn, grad=None):
        self.fn = fn
        self._grad = grad

    def value(self, x_terminal, noise=None):
        return self.fn(x_terminal)

    def grad(self, x_terminal, noise=None):
        if self._grad is not None:
            return self._grad(x_terminal)
        eps = _FD_BUMP * (1.0 + np.abs(x_terminal))
        return (self.fn(x_terminal + eps) - self.fn(x_terminal - eps)) / (2 * eps)


class StochasticLinearTerminal:
    """Terminal payoff weight(noise) * x with path-dependent weight.

    Linear in x (hence concave), with derivative equal to the weight itself.
    """

    def __init__(self, weight_fn):
        self.weight_fn = weight_fn

    def value(self, x_terminal, noise=None):
        return self.weight_fn(noise) * x_terminal

    def grad(self, x_terminal, noise=None):
        w = self.weight_fn(noise)
        return np.broadcast_to(np.asarray(w, dtype=float), np.shape(x_terminal)).copy()


def _central_fd(fn, t, x, y, z, u, which):
    args = [np.asarray(x, dtype=float), np.asarray(y, dtype=float),
            np.asarray(z, dtype=float), np.asarray(u, dtype=float)]
    v = args[which]
    eps = _FD_BUMP * (1.0 + np.abs(v))
    hi = list(args)
    lo = list(args)
    hi[which] = v + eps
    lo[which] = v - eps
    return (fn(t, *hi) - fn(t, *lo)) / (2 * eps)


def _grad4(fn, grad_fns, t, x, y, z, u):
    """(d/dx, d/dy, d/dz, d/du) of fn, analytic when supplied, else central FD."""
    if grad_fns is not None:
        out = grad_fns(t, x, y, z, u)
        return tuple(np.asarray(g, dtype=float) for g in out)
    return tuple(_central_fd(fn, t, x, y, z, u, i) for i in range(4))


class AffineJumpCoefficient:
    """Jump coefficient gamma(t,x,y,z,u,zeta) = base(...) + slope(...) * zeta.

    The affine structure keeps every jump-measure integral closed form: sums
    over realized marks need only per-step counts and mark sums, and pairings
    with an affine integrand reduce to the first two moments of the measure.
    """

    def __init__(self, base, slope, base_grad=None, slope_grad=None):
        self.base = base
        self.slope = slope
        self.base_grad = base_grad
        self.slope_grad = slope_grad

    def evaluate(self, t, x, y, z, u, zeta):
        return self.base(t, x, y, z, u) + self.slope(t, x, y, z, u) * zeta

    def step_sum(self, t, x, y, z, u, counts, mark_sums):
        return self.base(t, x, y, z, u) * counts + self.slope(t, x, y, z, u) * mark_sums

    def nu_integral(self, t, x, y, z, u, jump_spec):
        return (
            self.base(t, x, y, z, u) * jump_spec.levy_moment(0)
            + self.slope(t, x, y, z, u) * jump_spec.levy_moment(1)
        )

    def pair_nu_integral(self, t, x, y, z, u, r0, r1, jump_spec):
        """Integral of gamma(zeta) * (r0 + r1 zeta) against the jump measure."""
        b = self.base(t, x, y, z, u)
        s = self.slope(t, x, y, z, u)
        return (
            b * r0 * jump_spec.levy_moment(0)
            + (b * r1 + s * r0) * jump_spec.levy_moment(1)
            + s * r1 * jump_spec.levy_moment(2)
        )

    def grad(self, t, x, y, z, u, zeta):
        gb = _grad4(self.base, self.base_grad, t, x, y, z, u)
        gs = _grad4(self.slope, self.slope_grad, t, x, y, z, u)
        return tuple(b + s * zeta for b, s in zip(gb, gs))

    def grad_dot_step_sum(self, t, x, y, z, u, vec4, counts, mark_sums):
        gb = _grad4(self.base, self.base_grad, t, x, y, z, u)
        gs = _grad4(self.slope, self.slope_grad, t, x, y, z, u)
        dot_b = sum(g * v for g, v in zip(gb, vec4))
        dot_s = sum(g * v for g, v in zip(gs, vec4))
        return dot_b * counts + dot_s * mark_sums

    def grad_dot_nu_integral(self, t, x, y, z, u, vec4, jump_spec):
        gb = _grad4(self.base, self.base_grad, t, x, y, z, u)
        gs = _grad4(self.slope, self.slope_grad, t, x, y, z, u)
        dot_b = sum(g * v for g, v in zip(gb, vec4))
        dot_s = sum(g * v for g, v in zip(gs, vec4))
        return dot_b * jump_spec.levy_moment(0) + dot_s * jump_spec.levy_moment(1)

    def pair_grad_nu_integral(self, t, x, y, z, u, r0, r1, jump_spec):
        """4-tuple of integrals of (d gamma / d arg)(zeta) * (r0 + r1 zeta)."""
        gb = _grad4(self.base, self.base_grad, t, x, y, z, u)
        gs = _grad4(self.slope, self.slope_grad, t, x, y, z, u)
        lm0, lm1, lm2 = (jump_spec.levy_moment(k) for k in (0, 1, 2))
        return tuple(
            b * r0 * lm0 + (b * r1 + s * r0) * lm1 + s * r1 * lm2
            for b, s in zip(gb, gs)
        )


class CallableJumpCoefficient:
    """General gamma(t,x,y,z,u,zeta); measure integrals via mark quadrature.

    Mark sums are evaluated mark by mark, so this is meant for low-intensity
    checks rather than bulk runs; prefer AffineJumpCoefficient where it applies.
    """

    def __init__(self, fn, grad_fns=None):
        self.fn = fn
        self.grad_fns = grad_fns

    def evaluate(self, t, x, y, z, u, zeta):
        return self.fn(t, x, y, z, u, zeta)

    def step_sum_from_marks(self, t, x, y, z, u, mark_lists):
        """mark_lists: sequence (one entry per path) of mark arrays."""
        out = np.zeros(len(mark_lists))
        for i, marks in enumerate(mark_lists):
            for zeta in marks:
                out[i] += self.fn(
                    t, _row(x, i), _row(y, i), _row(z, i), _row(u, i), zeta
                )
        return out

    def nu_integral(self, t, x, y, z, u, jump_spec):
        return jump_spec.nu_expectation(lambda zeta: self.fn(t, x, y, z, u, zeta))

    def pair_nu_integral(self, t, x, y, z, u, r0, r1, jump_spec):
        return jump_spec.nu_expectation(
            lambda zeta: self.fn(t, x, y, z, u, zeta) * (r0 + r1 * zeta)
        )

    def grad(self, t, x, y, z, u, zeta):
        if self.grad_fns is not None:
            return tuple(
                np.asarray(g, dtype=float) for g in self.grad_fns(t, x, y, z, u, zeta)
            )
        return tuple(
            _central_fd(lambda tt, *a: self.fn(tt, *a, zeta), t, x, y, z, u, i)
            for i in range(4)
        )

    def grad_dot_nu_integral(self, t, x, y, z, u, vec4, jump_spec):
        def dotted(zeta):
            return sum(g * v for g, v in zip(self.grad(t, x, y, z, u, zeta), vec4))

        return jump_spec.nu_expectation(dotted)


def _row(arr, i):
    arr = np.asarray(arr)
    if not arr.ndim:
        return arr
    # a singleton axis broadcasts across paths, same as in the affine route
    return arr[i] if arr.shape[0] > 1 else arr[0]


class CoefficientModel:
    """Drift, diffusion, jump, cost and terminal data for one control problem.

    All coefficient callables take (t, x, y, z, u) with x, y, z, u possibly
    arrays (one entry per path) and must vectorize.  Gradients, when supplied,
    return the 4-tuple of partials in the order (x, y, z, u); missing gradients
    fall back to central finite differences with bump 1e-5 * (1 + |value|).

    Args:
        drift, diffusion, running_cost: coefficient callables.
        terminal: DeterministicTerminal or StochasticLinearTerminal.
        initial_segment: xi(t) on [-delta, 0], vectorized in t.
        control_set: admissible interval for the control.
        jump_coefficient / jump_spec: compound-Poisson part (both or neither).
        drift_grad, diffusion_grad, cost_grad: optional analytic 4-gradients.
    """

    def __init__(
        self,
        drift,
        diffusion,
        running_cost,
        terminal,
        initial_segment,
        control_set,
        jump_coefficient=None,
        jump_spec=None,
        drift_grad=None,
        diffusion_grad=None,
        cost_grad=None,
        name="",
    ):
        if jump_coefficient is not None and jump_spec is None:
            raise ValueError("a jump coefficient needs a jump spec")
        self.drift = drift
        self.diffusion = diffusion
        self.running_cost = running_cost
        self.terminal = terminal
        self.initial_segment = initial_segment
        self.control_set = control_set
        self.gamma = jump_coefficient
        self.jump_spec = jump_spec if jump_spec is not None else JumpSpec.none()
        self._drift_grad = drift_grad
        self._diffusion_grad = diffusion_grad
        self._cost_grad = cost_grad
        self.name = name

    @property
    def has_jumps(self):
        return self.gamma is not None and self.jump_spec.intensity > 0.0

    def drift_grad(self, t, x, y, z, u):
        return _grad4(self.drift, self._drift_grad, t, x, y, z, u)

    def diffusion_grad(self, t, x, y, z, u):
        return _grad4(self.diffusion, self._diffusion_grad, t, x, y, z, u)

    def cost_grad(self, t, x, y, z, u):
        return _grad4(self.running_cost, self._cost_grad, t, x, y, z, u)

    def check_gradients(self, seed=0, n_points=32, rtol=1e-4, atol=1e-8):
        """Compare analytic gradients against central differences.

        Random interior points; raises GradientMismatch on the worst offender
        if any partial disagrees beyond rtol/atol.  Returns the worst relative
        error seen (useful as a health number even when everything passes).
        """
        gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        worst = 0.0
        worst_what = None
        named = [
            ("drift", self.drift, self._drift_grad),
            ("diffusion", self.diffusion, self._diffusion_grad),
            ("running_cost", self.running_cost, self._cost_grad),
        ]
        lo, hi = self.control_set.lower, self.control_set.upper
        if not np.isfinite(lo):
            lo = -1.0
        if not np.isfinite(hi):
            hi = max(lo + 2.0, 2.0)
        for _ in range(n_points):
            t = float(gen.uniform(0.0, 1.0))
            x, y, z = gen.normal(0.8, 0.6, size=3)
            u = float(gen.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo)))
            for label, fn, grad_fns in named:
                if grad_fns is None:
                    continue
                analytic = _grad4(fn, grad_fns, t, x, y, z, u)
                numeric = tuple(_central_fd(fn, t, x, y, z, u, i) for i in range(4))
                for arg, a, b in zip(_ARGS, analytic, numeric):
                    denom = max(abs(float(b)), atol / rtol)
                    err = abs(float(a) - float(b)) / denom
                    if err > worst:
                        worst = err
                        worst_what = "%s d/d%s at t=%.3f" % (label, arg, t)
        if worst > rtol:
            raise GradientMismatch(
                "analytic gradient disagrees with finite differences: %s "
                "(rel err %.3e > %.1e)" % (worst_what, worst, rtol)
            )
        return worst


class StateBundle:
    """Simulated state paths on the shared grid.

    Attributes:
        x: (n_paths, n_nodes) state on [-delta, horizon].
        y: (n_paths, n_horizon+1) delayed state X(t - delta) on [0, horizon].
        z: (n_paths, n_horizon+1) trailing-window memory integral on [0, horizon].
        z_general: kernel-weighted memory integral, present when a kernel was
            supplied (identical object to z for the identity kernel).
        x2: running memory integral from the first node, present only on
            bundles built by reduce_2d; then z[k] == x2[k] - x2[k-m] exactly.
        control, noise, kernel: the inputs the bundle was built from.
    """

    def __init__(self, grid, x, y, z, control, noise, z_general=None, x2=None, kernel=None):
        self.grid = grid
        self.x = x
        self.y = y
        self.z = z
        self.z_general = z_general
        self.x2 = x2
        self.control = control
        self.noise = noise
        self.kernel = kernel
        for arr in (x, y, z):
            arr.flags.writeable = False
        if x2 is not None:
            x2.flags.writeable = False
        if z_general is not None and z_general is not z:
            z_general.flags.writeable = False

    @property
    def n_paths(self):
        return self.x.shape[0]

    @property
    def terminal_x(self):
        return self.x[:, -1]

    @property
    def memory_arg(self):
        """The memory value the coefficients actually consumed (z or z_general)."""
        return self.z if self.z_general is None else self.z_general


def _as_batch(noise):
    if isinstance(noise, NoisePath):
        incr = noise.increments[None, :]
        counts = noise.jump_counts[None, :]
        marks = [noise.jump_marks]
        return incr, counts, marks
    return noise.increments, noise.jump_counts, noise.jump_marks


def _step_marks_by_step(grid, counts, marks):
    """Regroup per-path flat marks into per-step lists of per-path arrays."""
    n_paths = counts.shape[0]
    offsets = np.zeros((n_paths, grid.n_steps + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=offsets[:, 1:])
    by_step = []
    for k in range(grid.n_steps):
        by_step.append([marks[i][offsets[i, k]:offsets[i, k + 1]] for i in range(n_paths)])
    return by_step


def simulate_state(model, control, noise, kernel=None, _expose_prefix=False):
    """Euler simulation of the delayed state with noisy memory.

    Args:
        model: CoefficientModel.
        control: ControlPath on the same grid as the noise.
        noise: NoisePath or NoiseEnsemble.
        kernel: optional MemoryKernel reweighting the memory window; the
            identity kernel reuses the plain memory integral bit for bit.

    Returns:
        StateBundle (always with a path axis; single paths become one row).

    Raises:
        GridMismatch: control and noise grids differ.
        NonFiniteState: the state left the finite range (step and time attached).
    """
    grid = noise.grid
    if control.grid != grid:
        raise GridMismatch("control grid %r vs noise grid %r" % (control.grid, grid))
    m = grid.steps_per_delay
    n = grid.n_horizon_steps
    h = grid.step
    incr, counts, marks = _as_batch(noise)
    n_paths = incr.shape[0]

    use_kernel = kernel is not None and not kernel.is_identity
    jumps_on = model.has_jumps
    affine_jumps = jumps_on and isinstance(model.gamma, AffineJumpCoefficient)
    if jumps_on:
        mark_sums = (
            noise.step_mark_sums() if not isinstance(noise, NoisePath)
            else noise.step_mark_sums()[None, :]
        )
        if mark_sums.ndim == 1:
            mark_sums = mark_sums[None, :]
        marks_by_step = None if affine_jumps else _step_marks_by_step(grid, counts, marks)

    x = np.empty((n_paths, grid.n_nodes))
    x[:, : m + 1] = model.initial_segment(grid.nodes[: m + 1])[None, :]

    # Running prefix of the memory integral, anchored at the first node; the
    # window value Z is always the difference of two prefix entries.
    prefix = np.zeros((n_paths, grid.n_nodes))
    terms = np.empty((n_paths, grid.n_steps))
    for k in range(m):
        terms[:, k] = x[:, k] * incr[:, k]
        prefix[:, k + 1] = prefix[:, k] + terms[:, k]

    z = np.empty((n_paths, n + 1))
    zg = np.empty((n_paths, n + 1)) if use_kernel else None
    u_rows = control.rows()

    for k in range(m, m + n + 1):
        z[:, k - m] = prefix[:, k] - prefix[:, k - m]
        if use_kernel:
            zg[:, k - m] = terms[:, k - m : k] @ kernel.weights(grid, k)
        if k == m + n:
            break
        t_k = grid.nodes[k]
        xk = x[:, k]
        yk = x[:, k - m]
        zk = zg[:, k - m] if use_kernel else z[:, k - m]
        uk = u_rows[:, k - m]
        bk = model.drift(t_k, xk, yk, zk, uk)
        sk = model.diffusion(t_k, xk, yk, zk, uk)
        x_next = xk + bk * h + sk * incr[:, k]
        if jumps_on:
            if affine_jumps:
                jump = model.gamma.step_sum(t_k, xk, yk, zk, uk, counts[:, k], mark_sums[:, k])
            else:
                jump = model.gamma.step_sum_from_marks(t_k, xk, yk, zk, uk, marks_by_step[k])
            comp = model.gamma.nu_integral(t_k, xk, yk, zk, uk, model.jump_spec)
            x_next = x_next + jump - h * comp
        if not np.all(np.isfinite(x_next)):
            raise NonFiniteState(
                "state became non-finite advancing from t=%g (step %d)" % (t_k, k),
                step=k,
                time=t_k,
            )
        x[:, k + 1] = x_next
        terms[:, k] = xk * incr[:, k]
        prefix[:, k + 1] = prefix[:, k] + terms[:, k]

    y = x[:, : n + 1].copy()
    bundle = StateBundle(
        grid, x, y, z,
        control=control, noise=noise,
        z_general=(z if (kernel is not None and kernel.is_identity) else zg),
        x2=(prefix if _expose_prefix else None),
        kernel=kernel,
    )
    return bundle


def reduce_2d(model, control, noise, kernel=None):
    """Simulate the equivalent two-component system (state, running memory).

    The second component is the memory integral accumulated from the first
    grid node, whose increments are X dB; the window integral is then exactly
    the difference X2(t) - X2(t - delta).  Shares every floating-point
    operation with simulate_state, so the state paths agree bitwise.

    Raises:
        KernelNotReducible: a non-identity kernel was supplied (the reduction
            only represents the unweighted window).
    """
    if kernel is not None and not kernel.is_identity:
        raise KernelNotReducible(
            "the two-component reduction represents only the plain window "
            "integral; got a weighted kernel with bound %g" % kernel.bound
        )
    return simulate_state(model, control, noise, kernel=kernel, _expose_prefix=True)


def evaluate_performance(model, control, noise, kernel=None, state=None):
    """Performance of a control on given noise: (J, std_error, per-path values).

    J is the left-point time quadrature of the running cost plus the terminal
    payoff; the quadrature factors out h so a constant cost integrates to the
    horizon exactly.
    """
    if state is None:
        state = simulate_state(model, control, noise, kernel=kernel)
    grid = state.grid
    n = grid.n_horizon_steps
    u_rows = control.rows()
    t_hor = grid.horizon_nodes
    zmem = state.memory_arg
    cost = np.zeros(state.n_paths)
    for j in range(n):
        cost = cost + model.running_cost(
            t_hor[j], state.x[:, grid.index_zero + j], state.y[:, j], zmem[:, j],
            u_rows[:, j] if u_rows.shape[0] > 1 else u_rows[0, j],
        )
    per_path = grid.step * cost + model.terminal.value(state.terminal_x, noise)
    per_path = np.broadcast_to(per_path, (state.n_paths,)).astype(float)
    j_hat = float(per_path.mean())
    se = float(per_path.std(ddof=1) / np.sqrt(state.n_paths)) if state.n_paths > 1 else 0.0
    return j_hat, se, per_path


def performance(model, control, n_paths, seed, kernel=None):
    """Monte Carlo estimate of the performance functional.

    Args:
        model, control: the problem and the control to grade.
        n_paths: ensemble size (reusing a seed gives common random numbers).
        seed: base seed for the counter-based generator.

    Returns:
        (estimate, standard_error).
    """
    grid = control.grid
    noise = sample_ensemble(grid, model.jump_spec, seed, n_paths)
    j_hat, se, _ = evaluate_performance(model, control, noise, kernel=kernel)
    return j_hat, se
