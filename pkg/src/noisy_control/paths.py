"""Time grids, driving noise, and discrete Ito integration.

Everything downstream is indexed by the shared grid: nodes t_k = -delta + k*h
with h = delta / steps_per_delay, so the delay is always an exact index shift
and no float time arithmetic is needed anywhere else.
"""

import numpy as np

from .errors import GridMismatch, NonCommensurate, OffGrid

_COMMENSURATE_RTOL = 1e-9


class TimeGrid:
    """Uniform grid on [-delta, horizon] whose step divides the delay exactly.

    Attributes:
        delta: memory lag (> 0).
        horizon: terminal time (> 0); must be an integer multiple of the step.
        steps_per_delay: number of steps per delay window (m).
        step: grid step h = delta / m.
        nodes: array of m + n + 1 node times, nodes[m] == 0.0 exactly.
        index_zero: index of the node t = 0 (equal to m).
        index_horizon: index of the terminal node.
    """

    def __init__(self, delta, horizon, steps_per_delay):
        if not (delta > 0):
            raise ValueError("delay must be positive, got %r" % (delta,))
        if not (horizon > 0):
            raise ValueError("horizon must be positive, got %r" % (horizon,))
        m = int(steps_per_delay)
        if m < 1 or m != steps_per_delay:
            raise ValueError("steps_per_delay must be a positive integer")
        h = delta / m
        n = int(round(horizon / h))
        if n < 1 or abs(n * h - horizon) > _COMMENSURATE_RTOL * h:
            raise NonCommensurate(
                "horizon %r is not an integer number of steps h=%r "
                "(delta=%r, steps_per_delay=%d)" % (horizon, h, delta, m)
            )
        self.delta = float(delta)
        self.horizon = float(horizon)
        self.steps_per_delay = m
        self.step = h
        self.n_horizon_steps = n
        self.n_steps = m + n
        self.n_nodes = m + n + 1
        self.index_zero = m
        self.index_horizon = m + n
        nodes = (np.arange(self.n_nodes) - m) * h
        nodes.flags.writeable = False
        self.nodes = nodes

    def node(self, k):
        """Time of node k (exact grid arithmetic, k may be an array)."""
        return (np.asarray(k) - self.index_zero) * self.step

    def index_of(self, t):
        """Map a time to its node index, raising OffGrid if t is not a node."""
        k = int(round(t / self.step)) + self.index_zero
        if k < 0 or k >= self.n_nodes or abs(self.node(k) - t) > _COMMENSURATE_RTOL * self.step:
            raise OffGrid("time %r is not a node of this grid (h=%r)" % (t, self.step))
        return k

    @property
    def horizon_nodes(self):
        """Node times on [0, horizon]."""
        return self.nodes[self.index_zero:]

    def __eq__(self, other):
        return (
            isinstance(other, TimeGrid)
            and self.delta == other.delta
            and self.horizon == other.horizon
            and self.steps_per_delay == other.steps_per_delay
        )

    def __hash__(self):
        return hash((self.delta, self.horizon, self.steps_per_delay))

    def __repr__(self):
        return "TimeGrid(delta=%g, horizon=%g, steps_per_delay=%d)" % (
            self.delta,
            self.horizon,
            self.steps_per_delay,
        )


def make_grid(delta, horizon, steps_per_delay):
    """Build the shared simulation grid.

    Args:
        delta: memory lag, > 0.
        horizon: terminal time, > 0; must equal an integer number of steps
            h = delta / steps_per_delay within relative tolerance 1e-9.
        steps_per_delay: subdivisions of one delay window.

    Returns:
        TimeGrid with nodes t_k = -delta + k*h; the node t = 0 sits exactly at
        index steps_per_delay, so a lag of delta is always the index shift m.

    Raises:
        NonCommensurate: if the horizon is not commensurate with the step.
    """
    return TimeGrid(delta, horizon, steps_per_delay)


class JumpSpec:
    """Compound-Poisson jump description: intensity plus mark distribution.

    The mark distribution is carried twice: as a sampler (for path generation)
    and as quadrature nodes/weights (for integrals against the jump measure,
    exact when the marks are discrete).
    """

    def __init__(self, intensity, mark_sampler=None, quad_nodes=None, quad_weights=None):
        if intensity < 0 or not np.isfinite(intensity):
            raise ValueError("jump intensity must be finite and >= 0")
        self.intensity = float(intensity)
        self.mark_sampler = mark_sampler
        if intensity > 0:
            if mark_sampler is None:
                raise ValueError("positive intensity requires a mark sampler")
            if quad_nodes is None or quad_weights is None:
                raise ValueError("positive intensity requires mark quadrature")
            quad_nodes = np.asarray(quad_nodes, dtype=float)
            quad_weights = np.asarray(quad_weights, dtype=float)
            if quad_nodes.shape != quad_weights.shape:
                raise ValueError("quadrature nodes and weights must align")
            if abs(quad_weights.sum() - 1.0) > 1e-12:
                raise ValueError("mark quadrature weights must sum to one")
        else:
            quad_nodes = np.zeros(0)
            quad_weights = np.zeros(0)
        self.quad_nodes = quad_nodes
        self.quad_weights = quad_weights

    @classmethod
    def none(cls):
        """No jumps at all."""
        return cls(0.0)

    @classmethod
    def discrete(cls, intensity, values, probs):
        """Marks drawn from a finite set; all jump-measure integrals exact."""
        values = np.asarray(values, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("mark probabilities must be a distribution")

        def sampler(gen, size):
            return gen.choice(values, size=size, p=probs)

        return cls(intensity, sampler, values, probs)

    @classmethod
    def gaussian(cls, intensity, loc, scale, n_quad=21):
        """Normal marks; jump-measure integrals via Gauss-Hermite quadrature."""
        x, w = np.polynomial.hermite_e.hermegauss(n_quad)
        nodes = loc + scale * x
        weights = w / w.sum()

        def sampler(gen, size):
            return gen.normal(loc, scale, size=size)

        return cls(intensity, sampler, nodes, weights)

    def levy_moment(self, k):
        """k-th moment of the jump measure, intensity * E[mark^k] (k=0 gives
        the intensity itself)."""
        if self.intensity == 0.0:
            return 0.0
        return self.intensity * float(np.dot(self.quad_weights, self.quad_nodes**k))

    def nu_expectation(self, fn):
        """Integral of fn against the jump measure: intensity * E[fn(mark)].

        fn may return arrays (evaluated once per quadrature node and summed
        with the node weights), so state-dependent integrands vectorize.
        """
        if self.intensity == 0.0:
            return 0.0
        total = 0.0
        for zeta, w in zip(self.quad_nodes, self.quad_weights):
            total = total + w * fn(zeta)
        return self.intensity * total

    def __eq__(self, other):
        return (
            isinstance(other, JumpSpec)
            and self.intensity == other.intensity
            and np.array_equal(self.quad_nodes, other.quad_nodes)
            and np.array_equal(self.quad_weights, other.quad_weights)
        )


def _path_generator(seed, path_index):
    # Counter-based generator keyed by (seed, path-index): regeneration of any
    # single path never depends on how many other paths were drawn.
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_one(grid, jump_spec, seed, path_index, sqrt_h):
    """Fixed draw layout per path: normals, then jump counts, marks, times."""
    gen = _path_generator(seed, path_index)
    incr = sqrt_h * gen.standard_normal(grid.n_steps)
    if jump_spec.intensity > 0.0:
        counts = gen.poisson(jump_spec.intensity * grid.step, grid.n_steps)
        total = int(counts.sum())
        marks = np.asarray(jump_spec.mark_sampler(gen, total), dtype=float)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        lefts = np.repeat(grid.nodes[:-1], counts)
        times = lefts + grid.step * gen.random(total)
    else:
        counts = np.zeros(grid.n_steps, dtype=np.int64)
        marks = np.zeros(0)
        times = np.zeros(0)
    return incr, counts.astype(np.int64), marks, times


class NoisePath:
    """One realization of the driving noise on a grid.

    Fields:
        grid: the TimeGrid.
        increments: Brownian increments, one per step (length grid.n_steps).
        jump_counts: jumps per step.
        jump_marks / jump_times: flat arrays, step-major; jumps are applied at
            the end of their step by the Euler scheme, the times are kept for
            reporting only.
        seed, path_index: the key this path was drawn under.
    """

    def __init__(self, grid, increments, jump_counts, jump_marks, jump_times, seed, path_index=0):
        self.grid = grid
        self.increments = np.asarray(increments, dtype=float)
        if self.increments.shape != (grid.n_steps,):
            raise ValueError("increments must have one entry per step")
        self.jump_counts = np.asarray(jump_counts, dtype=np.int64)
        self.jump_marks = np.asarray(jump_marks, dtype=float)
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.seed = seed
        self.path_index = path_index
        for arr in (self.increments, self.jump_counts, self.jump_marks, self.jump_times):
            arr.flags.writeable = False

    @property
    def n_paths(self):
        return 1

    def brownian(self):
        """Cumulative Brownian path on the nodes, pinned to 0 at the first."""
        out = np.zeros(self.grid.n_nodes)
        np.cumsum(self.increments, out=out[1:])
        return out

    def step_mark_sums(self):
        """Sum of marks per step (zeros when there are no jumps)."""
        out = np.zeros(self.grid.n_steps)
        if self.jump_marks.size:
            steps = np.repeat(np.arange(self.grid.n_steps), self.jump_counts)
            np.add.at(out, steps, self.jump_marks)
        return out

    def with_bumped_increment(self, step_index, bump):
        """Copy of this path with one Brownian increment shifted by `bump`."""
        incr = self.increments.copy()
        incr[step_index] += bump
        return NoisePath(
            self.grid, incr, self.jump_counts, self.jump_marks, self.jump_times,
            self.seed, self.path_index,
        )


class NoiseEnsemble:
    """A batch of independent noise paths sharing one grid and seed.

    Path i is bit-identical to sample_noise(grid, jump_spec, seed, path_index=i):
    the ensemble is just the stacked per-key draws, so results never depend on
    ensemble size or iteration order.
    """

    def __init__(self, grid, increments, jump_counts, jump_marks, jump_times, seed):
        self.grid = grid
        self.increments = np.asarray(increments, dtype=float)
        self.n_paths = self.increments.shape[0]
        self.jump_counts = np.asarray(jump_counts, dtype=np.int64)
        self.jump_marks = jump_marks  # list of flat arrays, one per path
        self.jump_times = jump_times
        self.seed = seed
        self.increments.flags.writeable = False
        self.jump_counts.flags.writeable = False

    def path(self, i):
        return NoisePath(
            self.grid,
            self.increments[i],
            self.jump_counts[i],
            self.jump_marks[i],
            self.jump_times[i],
            self.seed,
            path_index=i,
        )

    def brownian(self):
        out = np.zeros((self.n_paths, self.grid.n_nodes))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def step_mark_sums(self):
        out = np.zeros((self.n_paths, self.grid.n_steps))
        for i in range(self.n_paths):
            marks = self.jump_marks[i]
            if marks.size:
                steps = np.repeat(np.arange(self.grid.n_steps), self.jump_counts[i])
                np.add.at(out[i], steps, marks)
        return out

    def has_jumps(self):
        return any(m.size for m in self.jump_marks)

    def with_bumped_increment(self, step_index, bump):
        incr = self.increments.copy()
        incr[:, step_index] += bump
        return NoiseEnsemble(
            self.grid, incr, self.jump_counts, self.jump_marks, self.jump_times, self.seed
        )


def sample_noise(grid, jump_spec, seed, path_index=0):
    """Draw a single noise path.

    Args:
        grid: TimeGrid.
        jump_spec: JumpSpec (use JumpSpec.none() for pure diffusion).
        seed: nonnegative integer; (seed, path_index) keys the counter-based
            generator, so the same pair always reproduces the same path.

    Returns:
        NoisePath with Brownian increments of variance h per step and
        compound-Poisson jumps per step.
    """
    if seed < 0 or int(seed) != seed:
        raise ValueError("seed must be a nonnegative integer")
    sqrt_h = np.sqrt(grid.step)
    incr, counts, marks, times = _draw_one(grid, jump_spec, int(seed), path_index, sqrt_h)
    return NoisePath(grid, incr, counts, marks, times, int(seed), path_index)


def sample_ensemble(grid, jump_spec, seed, n_paths, first_path=0):
    """Draw n_paths independent noise paths keyed (seed, first_path + i).

    The per-path keying makes chunked sampling reproducible: the concatenation
    of ensembles with first_path 0, c, 2c, ... equals the monolithic ensemble
    bit for bit, whatever the chunk size.
    """
    if seed < 0 or int(seed) != seed:
        raise ValueError("seed must be a nonnegative integer")
    if n_paths < 1:
        raise ValueError("need at least one path")
    if first_path < 0 or int(first_path) != first_path:
        raise ValueError("first_path must be a nonnegative integer")
    sqrt_h = np.sqrt(grid.step)
    incr = np.empty((n_paths, grid.n_steps))
    counts = np.zeros((n_paths, grid.n_steps), dtype=np.int64)
    marks = []
    times = []
    for i in range(n_paths):
        inc_i, cnt_i, mk_i, tm_i = _draw_one(grid, jump_spec, int(seed), int(first_path) + i, sqrt_h)
        incr[i] = inc_i
        counts[i] = cnt_i
        marks.append(mk_i)
        times.append(tm_i)
    return NoiseEnsemble(grid, incr, counts, marks, times, int(seed))


def _check_same_grid(grid, other):
    if grid != other:
        raise GridMismatch("objects live on different grids: %r vs %r" % (grid, other))


def ito_integral(integrand, noise, window):
    """Left-point Ito sum of a node-indexed integrand over [a, b).

    The sum is evaluated as a difference of running prefix sums accumulated in
    increasing index order from the first grid node.  That anchoring makes the
    windowed integral reproduce, bit for bit, the running memory integrals the
    simulator maintains (so Z is exactly recomputable), and it fixes the
    floating-point summation order once and for all.

    Args:
        integrand: array of node values, shape (..., n_nodes); values at nodes
            before the window take part in the anchored accumulation (they
            cancel exactly in exact arithmetic) and must be finite.  The value
            at the last node is never used.
        noise: NoisePath or NoiseEnsemble on the same grid.
        window: pair of node times (a, b) with a <= b.

    Returns:
        Scalar for a single path, array of shape (n_paths,) for an ensemble
        (deterministic integrands broadcast).

    Raises:
        OffGrid: if either window endpoint is not a grid node.
    """
    grid = noise.grid
    a, b = window
    ia = grid.index_of(a)
    ib = grid.index_of(b)
    if ia > ib:
        raise ValueError("window must satisfy a <= b")
    integrand = np.asarray(integrand, dtype=float)
    if integrand.shape[-1] not in (grid.n_nodes, grid.n_steps):
        raise ValueError(
            "integrand must be indexed by grid nodes (length %d)" % grid.n_nodes
        )
    if not np.all(np.isfinite(integrand[..., :ib])):
        raise ValueError("integrand must be finite on every node before the window end")
    terms = integrand[..., : grid.n_steps] * noise.increments
    prefix = np.cumsum(terms, axis=-1)
    upper = prefix[..., ib - 1] if ib > 0 else 0.0
    lower = prefix[..., ia - 1] if ia > 0 else 0.0
    out = upper - lower
    if np.ndim(out) == 0:
        return float(out)
    return out


def coarsen(noise, factor):
    """Aggregate a noise path/ensemble onto a grid `factor` times coarser.

    Brownian increments over merged steps add; jumps keep their marks and
    times and land in the coarse step containing their fine step.  Used for
    strong-order checks against a common refinement.
    """
    grid = noise.grid
    factor = int(factor)
    if factor < 1 or grid.steps_per_delay % factor:
        raise ValueError("factor must divide steps_per_delay")
    coarse = make_grid(grid.delta, grid.horizon, grid.steps_per_delay // factor)

    def merge_incr(incr):
        shape = incr.shape[:-1] + (coarse.n_steps, factor)
        return incr.reshape(shape).sum(axis=-1)

    def merge_counts(counts):
        shape = counts.shape[:-1] + (coarse.n_steps, factor)
        return counts.reshape(shape).sum(axis=-1)

    if isinstance(noise, NoisePath):
        return NoisePath(
            coarse,
            merge_incr(noise.increments),
            merge_counts(noise.jump_counts),
            noise.jump_marks,
            noise.jump_times,
            noise.seed,
            noise.path_index,
        )
    return NoiseEnsemble(
        coarse,
        merge_incr(noise.increments),
        merge_counts(noise.jump_counts),
        noise.jump_marks,
        noise.jump_times,
        noise.seed,
    )
