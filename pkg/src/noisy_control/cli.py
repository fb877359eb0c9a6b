"""Command-line front end: scenario runner, catalog listing, acceptance suite.

Subcommands:
    run <config.ini>    simulate a configured scenario, solve the adjoint on
                        both available routes, run the requested checks, and
                        write report.json (+ CSV dumps) to the output directory
    list [--json]       show the scenario catalog and its config templates
    verify [--seed N] [--out DIR] [--quick]
                        run the numbered acceptance checks

Exit codes: 0 all requested checks passed, 1 a check failed, 2 bad usage or
configuration (including non-commensurate delay/horizon).

Reports are canonical JSON with no timing data, so identical config + seed
gives byte-identical output.  The NOISY_CONTROL_THREADS environment variable
caps the sampling worker pool; results are reduced in fixed chunk order, so
the thread count never changes any number.
"""

import argparse
import configparser
import csv
import inspect
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import adjoint as adjoint_mod
from . import maxprinciple as mp
from . import scenarios, verification
from .dynamics import ControlPath, MemoryKernel, evaluate_performance, reduce_2d, simulate_state
from .errors import ConfigError, NoisyControlError
from .paths import JumpSpec, NoiseEnsemble, coarsen, make_grid, sample_ensemble

_SAMPLE_CHUNK = 4096

_CHECK_NAMES = ("closed-form", "regression", "bridge", "max-principle")

# keys each scenario accepts in [model]; everything else is rejected loudly
_MODEL_KEYS = {
    "linear-noisy-memory": {
        "a0", "a1", "sigma0", "psi", "delta", "horizon", "xi0",
        "control_lower", "control_upper",
    },
    "consumption": {
        "a0", "a1", "sigma0", "delta", "horizon", "xi0",
        "control_lower", "control_upper", "kernel", "running", "linear_rate",
        "jump_intensity", "jump_marks", "jump_scale",
    },
    "generalized-memory": {
        "a1", "sigma0", "delta", "horizon", "xi0",
        "control_lower", "control_upper",
    },
    "custom-affine": {
        "bx", "by", "bz", "bu", "b_const", "s_const", "sx", "running",
        "target", "terminal_slope", "delta", "horizon", "xi0",
        "control_lower", "control_upper",
    },
}

_FLOAT_MODEL_KEYS = {
    "a0", "a1", "sigma0", "psi", "delta", "horizon", "xi0",
    "control_lower", "control_upper", "linear_rate", "jump_intensity",
    "jump_scale", "bx", "by", "bz", "bu", "b_const", "s_const", "sx",
    "target", "terminal_slope",
}

_SECTION_KEYS = {
    "model": set().union(*_MODEL_KEYS.values()) | {"name"},
    "grid": {"steps_per_delay"},
    "monte_carlo": {"n_paths", "seed"},
    "control": {"kind", "value"},
    "solver": {"basis", "ridge"},
    "checks": {
        "run", "bridge_tol", "regression_rel_tol", "zero_abs_tol",
        "terminal_tol", "order_band_low", "order_band_high",
        "se_multiplier", "spike_count", "condition_limit",
    },
    "output": {"directory", "write_paths", "write_adjoint"},
}

# checks that make sense per scenario (missing oracle => loud config error)
_APPLICABLE = {
    "linear-noisy-memory": {"closed-form", "regression", "bridge", "max-principle"},
    "consumption": {"closed-form", "regression", "bridge", "max-principle"},
    "generalized-memory": {"closed-form", "bridge", "max-principle"},
    "custom-affine": {"regression"},
}


def _key_lines(path):
    """Map (section, key) -> 1-based line number for error messages."""
    lines = {}
    section = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith(("#", ";")):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                lines[(section, None)] = lineno
                continue
            for sep in ("=", ":"):
                if sep in line:
                    key = line.split(sep, 1)[0].strip().lower()
                    lines.setdefault((section, key), lineno)
                    break
    return lines


def _fail(path, lines, section, key, message):
    lineno = lines.get((section, key)) or lines.get((section, None))
    where = "%s:%s" % (path, lineno) if lineno else path
    raise ConfigError("%s: [%s] %s: %s" % (where, section, key or "", message))


def load_config(path):
    """Parse and validate a scenario config; returns a fully resolved dict.

    Every key the run will use appears in the result, whether it came from
    the file or from a default, so the report's config echo is complete.
    Unknown sections or keys and values of the wrong type are ConfigErrors
    carrying the file line number.
    """
    if not os.path.exists(path):
        raise ConfigError("config file not found: %s" % path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError("%s: %s" % (path, exc)) from exc
    if not read:
        raise ConfigError("config file not readable: %s" % path)
    lines = _key_lines(path)

    for section in parser.sections():
        if section not in _SECTION_KEYS:
            _fail(path, lines, section, None, "unknown section")
        for key in parser[section]:
            if key not in _SECTION_KEYS[section]:
                _fail(path, lines, section, key, "unknown key")

    def get(section, key, default, conv=str):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return conv(raw)
            except (TypeError, ValueError):
                _fail(path, lines, section, key,
                      "cannot parse %r as %s" % (raw, conv.__name__))
        return default

    def get_bool(section, key, default):
        if parser.has_option(section, key):
            try:
                return parser.getboolean(section, key)
            except ValueError:
                _fail(path, lines, section, key, "expected a boolean")
        return default

    name = get("model", "name", None)
    if name is None:
        _fail(path, lines, "model", "name", "required key is missing")
    if name not in scenarios.CATALOG:
        _fail(path, lines, "model", "name",
              "unknown scenario (run `noisy-control list` for the catalog)")
    allowed = _MODEL_KEYS[name]
    for key in parser["model"] if parser.has_section("model") else ():
        if key != "name" and key not in allowed:
            _fail(path, lines, "model", key,
                  "not a parameter of scenario %r" % name)

    factory = scenarios.CATALOG[name]["factory"]
    sig = inspect.signature(factory).parameters
    model_cfg = {"name": name}
    for key in sorted(allowed):
        if key in ("control_lower", "control_upper"):
            lo, hi = sig["control_set"].default
            default = lo if key == "control_lower" else hi
            model_cfg[key] = get("model", key, float(default), float)
        elif key == "kernel":
            value = get("model", key, "none")
            if value not in ("none", "identity", "ramp"):
                _fail(path, lines, "model", key,
                      "expected one of: none, identity, ramp")
            model_cfg[key] = value
        elif key == "jump_marks":
            model_cfg[key] = get("model", key, "")
        elif key == "running":
            value = get("model", key, sig["running"].default)
            choices = (("log", "linear") if name == "consumption"
                       else ("quadratic", "linear", "convex"))
            if value not in choices:
                _fail(path, lines, "model", key,
                      "expected one of: %s" % ", ".join(choices))
            model_cfg[key] = value
        elif key in _FLOAT_MODEL_KEYS:
            default = sig[key].default if key in sig else 0.0
            model_cfg[key] = get("model", key, float(default), float)
        else:  # pragma: no cover - schema and this loop must stay in sync
            raise AssertionError(key)

    marks = _parse_marks(model_cfg.get("jump_marks", ""), path, lines)
    if model_cfg.get("jump_intensity", 0.0) > 0 and marks is None:
        _fail(path, lines, "model", "jump_marks",
              "required when jump_intensity > 0 (format: value:prob, value:prob)")
    if model_cfg.get("jump_intensity", 0.0) == 0.0 and marks is not None:
        _fail(path, lines, "model", "jump_intensity",
              "jump_marks given but intensity is zero")
    if model_cfg.get("jump_scale", 0.0) != 0.0 and marks is None:
        _fail(path, lines, "model", "jump_scale",
              "nonzero jump_scale needs jump_intensity and jump_marks")

    cfg = {
        "model": model_cfg,
        "grid": {"steps_per_delay": get("grid", "steps_per_delay", 8, int)},
        "monte_carlo": {
            "n_paths": get("monte_carlo", "n_paths", 2000, int),
            "seed": get("monte_carlo", "seed", 0, int),
        },
        "control": {
            "kind": get("control", "kind", "constant"),
            "value": get("control", "value", 1.0, float),
        },
        "solver": {
            "basis": get("solver", "basis", "quad-xz"),
            "ridge": get("solver", "ridge", 1e-8, float),
        },
        "checks": {
            "bridge_tol": get("checks", "bridge_tol", 1e-10, float),
            "regression_rel_tol": get("checks", "regression_rel_tol", 0.05, float),
            "zero_abs_tol": get("checks", "zero_abs_tol", 0.02, float),
            "terminal_tol": get("checks", "terminal_tol", 1e-12, float),
            "order_band_low": get("checks", "order_band_low", 0.7, float),
            "order_band_high": get("checks", "order_band_high", 1.3, float),
            "se_multiplier": get("checks", "se_multiplier", 3.0, float),
            "spike_count": get("checks", "spike_count", 5, int),
            "condition_limit": get("checks", "condition_limit", 1e13, float),
        },
        "output": {
            "directory": get("output", "directory", "out"),
            "write_paths": get_bool("output", "write_paths", True),
            "write_adjoint": get_bool("output", "write_adjoint", True),
        },
    }

    if cfg["control"]["kind"] not in ("constant", "foc"):
        _fail(path, lines, "control", "kind", "expected 'constant' or 'foc'")
    if cfg["control"]["kind"] == "foc" and parser.has_option("control", "value"):
        _fail(path, lines, "control", "value",
              "a value cannot be given for kind = foc")
    if cfg["solver"]["basis"] != "quad-xz":
        _fail(path, lines, "solver", "basis", "the only shipped basis is quad-xz")
    if cfg["grid"]["steps_per_delay"] < 1:
        _fail(path, lines, "grid", "steps_per_delay", "must be >= 1")
    if cfg["monte_carlo"]["n_paths"] < 2:
        _fail(path, lines, "monte_carlo", "n_paths", "need at least two paths")
    if cfg["monte_carlo"]["seed"] < 0:
        _fail(path, lines, "monte_carlo", "seed", "must be nonnegative")

    applicable = _APPLICABLE[name]
    raw_checks = get("checks", "run", None)
    if raw_checks is None:
        requested = sorted(applicable, key=_CHECK_NAMES.index)
    else:
        requested = [c.strip() for c in raw_checks.split(",") if c.strip()]
        for check in requested:
            if check not in _CHECK_NAMES:
                _fail(path, lines, "checks", "run",
                      "unknown check %r (known: %s)" % (check, ", ".join(_CHECK_NAMES)))
            if check not in applicable:
                _fail(path, lines, "checks", "run",
                      "check %r has no reference for scenario %r" % (check, name))
    cfg["checks"]["run"] = requested
    if cfg["control"]["kind"] == "foc" and name == "custom-affine":
        _fail(path, lines, "control", "kind",
              "kind = foc needs a scenario with a reference adjoint")
    if "regression" in requested and model_cfg.get("kernel") == "ramp":
        _fail(path, lines, "checks", "run",
              "the regression route needs the plain (unweighted) memory window")
    cfg["_marks"] = marks
    return cfg


def _parse_marks(text, path, lines):
    text = text.strip()
    if not text:
        return None
    values, probs = [], []
    for part in text.split(","):
        try:
            v, p = part.split(":")
            values.append(float(v))
            probs.append(float(p))
        except ValueError:
            _fail(path, lines, "model", "jump_marks",
                  "expected value:prob pairs separated by commas, got %r" % part)
    if abs(sum(probs) - 1.0) > 1e-12:
        _fail(path, lines, "model", "jump_marks", "probabilities must sum to 1")
    return values, probs


def build_scenario(cfg):
    """Instantiate (model, kernel, jump_spec) from a resolved config."""
    mc = dict(cfg["model"])
    name = mc.pop("name")
    control_set = (mc.pop("control_lower"), mc.pop("control_upper"))
    kernel = None
    kwargs = {"control_set": control_set}
    if name == "consumption":
        kernel_name = mc.pop("kernel")
        if kernel_name == "identity":
            kernel = MemoryKernel.identity()
        elif kernel_name == "ramp":
            kernel = MemoryKernel.ramp(mc["delta"])
        intensity = mc.pop("jump_intensity")
        mc.pop("jump_marks")
        marks = cfg["_marks"]
        if marks is not None:
            kwargs["jump_spec"] = JumpSpec.discrete(intensity, marks[0], marks[1])
            kwargs["jump_scale"] = mc.pop("jump_scale")
        else:
            mc.pop("jump_scale")
        kwargs["kernel"] = kernel
    kwargs.update(mc)
    made = scenarios.CATALOG[name]["factory"](**kwargs)
    if name == "generalized-memory":
        model, kernel = made
    else:
        model = made
    jump_spec = model.jump_spec if model.has_jumps else JumpSpec.none()
    return model, kernel, jump_spec


def _thread_count():
    raw = os.environ.get("NOISY_CONTROL_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError("NOISY_CONTROL_THREADS must be an integer, got %r" % raw)
    if value < 1:
        raise ConfigError("NOISY_CONTROL_THREADS must be >= 1, got %d" % value)
    return value


def sample_noise(grid, jump_spec, seed, n_paths):
    """Ensemble sampler with a bounded worker pool and fixed reduction order.

    Chunks are keyed by path index, so the result is bitwise identical to the
    single-chunk ensemble no matter how many workers run.
    """
    threads = _thread_count()
    if threads == 1 or n_paths <= _SAMPLE_CHUNK:
        return sample_ensemble(grid, jump_spec, seed, n_paths)
    offsets = list(range(0, n_paths, _SAMPLE_CHUNK))
    sizes = [min(_SAMPLE_CHUNK, n_paths - off) for off in offsets]
    with ThreadPoolExecutor(max_workers=min(threads, len(offsets))) as pool:
        parts = list(pool.map(
            lambda args: sample_ensemble(grid, jump_spec, seed, args[1], first_path=args[0]),
            zip(offsets, sizes),
        ))
    incr = np.vstack([p.increments for p in parts])
    counts = np.vstack([p.jump_counts for p in parts])
    marks, times = [], []
    for p in parts:
        marks.extend(p.jump_marks)
        times.extend(p.jump_times)
    return NoiseEnsemble(grid, incr, counts, marks, times, int(seed))


def _closed_form(model, noise):
    spec = adjoint_mod.LinearBSDESpec.from_model(model)
    return adjoint_mod.solve_linear_closed_form(spec, noise)


def _window_engine(model, grid, closed):
    """dH/dz window engine matching the scenario's volatility loading."""
    nodes = grid.horizon_nodes
    psi = np.asarray(model.meta["psi"](nodes), dtype=float)
    psi = np.broadcast_to(psi, nodes.shape).astype(float)
    a0 = float(model.meta["a0"])
    if np.any(psi != 0.0):
        return adjoint_mod.Chaos1WindowEngine(
            grid, psi, closed.diagnostics["alpha"],
            coeff=np.full(nodes.shape, a0), f_paths=closed.p,
        )
    return adjoint_mod.DeterministicWindowEngine(grid, a0 * closed.p[0])


def _dhx(model, grid, closed):
    nodes = grid.horizon_nodes
    a1 = float(model.meta["a1"])
    sigma0 = np.broadcast_to(
        np.asarray(model.meta["sigma0"](nodes), dtype=float), nodes.shape
    )
    return a1 * closed.p + sigma0[None, :] * closed.q


def check_closed_form(model, kernel, cfg, grid, noise, closed):
    """Closed-form route: terminal condition and defect order on a coupled pair."""
    tol = cfg["checks"]["terminal_tol"]
    weight = model.terminal.grad(np.ones(closed.p.shape[0]), noise)
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (closed.p.shape[0],))
    terminal_residual = float(np.max(np.abs(closed.p[:, -1] - weight)))

    m = grid.steps_per_delay
    fine_grid = make_grid(grid.delta, grid.horizon, 2 * m)
    fine = sample_noise(fine_grid, JumpSpec.none(), cfg["monte_carlo"]["seed"] + 1,
                        min(500, cfg["monte_carlo"]["n_paths"]))
    sups = {}
    for nz in (coarsen(fine, 2), fine):
        g = nz.grid
        cl = _closed_form(model, nz)
        ctrl = ControlPath.constant(g, _reference_control_value(cfg), control_set=model.control_set)
        state = simulate_state(model, ctrl, nz, kernel=kernel)
        engine = _window_engine(model, g, cl)
        sup, _ = adjoint_mod.bsde_residual_1d(cl, state, model, engine, kernel=kernel)
        sups[g.steps_per_delay] = float(sup)
    order = float(np.log2(sups[m] / sups[2 * m]))
    band = (cfg["checks"]["order_band_low"], cfg["checks"]["order_band_high"])
    # a stochastic adjoint pays an O(h) window-quadrature defect per step; a
    # deterministic one (psi = 0) leaves only the O(h^2) local truncation
    shift = 0.0 if np.any(_psi_nodes(model, grid)) else 1.0
    passed = terminal_residual <= tol and band[0] <= order - shift <= band[1]
    return {
        "passed": bool(passed),
        "terminal_residual": terminal_residual,
        "terminal_tol": tol,
        "residual_sup": sups,
        "residual_order": order,
        "deterministic_adjoint_shift": shift,
        "order_band": list(band),
        "mean_reversion_path": [float(v) for v in closed.diagnostics["A"]],
        "window_growth_path": [float(v) for v in closed.diagnostics["alpha"]],
        "log_drift_path": [float(v) for v in closed.diagnostics["c"]],
        "normalization": float(closed.diagnostics["C"]),
    }


def _reference_control_value(cfg):
    if cfg["control"]["kind"] == "constant":
        return cfg["control"]["value"]
    return 1.0


def check_bridge(model, cfg, grid, closed):
    """1D <-> 2D consistency: window reconstruction and driver assembly."""
    tol = cfg["checks"]["bridge_tol"]
    engine = _window_engine(model, grid, closed)
    a1 = float(model.meta["a1"])
    q2_closed = (closed.diagnostics["A"] - a1)[None, :] * closed.p
    n = grid.n_horizon_steps
    recon = np.empty_like(q2_closed)
    for k in range(n + 1):
        recon[:, k] = engine.malliavin_window(k)
    q2_dev = float(np.max(np.abs(q2_closed - recon)))
    mu_bridge = adjoint_mod.mu_generalized(grid, _dhx(model, grid, closed), None, engine)
    mu_dev = float(np.max(np.abs(mu_bridge - closed.mu)))
    statistic = max(q2_dev, mu_dev)
    return {
        "passed": bool(statistic <= tol),
        "q2_reconstruction_dev": q2_dev,
        "mu_assembly_dev": mu_dev,
        "tolerance": tol,
    }


def check_regression(model, cfg, grid, state, closed):
    """Regression ABSDE against the closed-form route (when one exists)."""
    sol = adjoint_mod.solve_absde_2d(model, state, ridge=cfg["solver"]["ridge"])
    cond = float(sol.diagnostics["max_condition"])
    result = {
        "basis": sol.diagnostics["basis"],
        "ridge": cfg["solver"]["ridge"],
        "max_condition": cond,
        "condition_limit": cfg["checks"]["condition_limit"],
    }
    passed = cond <= cfg["checks"]["condition_limit"]
    if closed is not None:
        rel = float(
            np.sqrt(np.mean((sol.p1 - closed.p) ** 2)) / np.sqrt(np.mean(closed.p**2))
        )
        result["p_rel_rms"] = rel
        result["p_rel_tol"] = cfg["checks"]["regression_rel_tol"]
        passed = passed and rel <= cfg["checks"]["regression_rel_tol"]
        if not np.any(_psi_nodes(model, grid)):
            zero_tol = cfg["checks"]["zero_abs_tol"]
            zeros = {"q2": float(np.sqrt((sol.q2**2).mean()))}
            if sol.r1 is not None:
                zeros["r1_level"] = float(np.sqrt((sol.r1[0] ** 2).mean()))
                zeros["r1_slope"] = float(np.sqrt((sol.r1[1] ** 2).mean()))
            result["zero_component_rms"] = zeros
            result["zero_abs_tol"] = zero_tol
            passed = passed and max(zeros.values()) <= zero_tol
    result["passed"] = bool(passed)
    return result, sol


def _psi_nodes(model, grid):
    psi = np.asarray(model.meta["psi"](grid.horizon_nodes), dtype=float)
    return np.broadcast_to(psi, grid.horizon_nodes.shape)


def check_max_principle(model, kernel, cfg, grid, noise, closed):
    """FOC control, necessary condition, sufficiency, spike battery."""
    se_mult = cfg["checks"]["se_multiplier"]
    ustar = mp.solve_foc(model, closed.p, grid)
    state = simulate_state(model, ustar, noise, kernel=kernel)
    triple = adjoint_mod.AdjointTriple(grid, closed.p, closed.q, None, closed.mu, {})
    nec = mp.check_necessary_I(ustar, triple, model, state)
    suff = mp.check_sufficient(ustar, triple, model, state,
                               seed=cfg["monte_carlo"]["seed"])
    _, _, per0 = evaluate_performance(model, ustar, noise, kernel=kernel, state=state)
    gen = np.random.Generator(
        np.random.Philox(key=np.uint64(cfg["monte_carlo"]["seed"] + 7))
    )
    tt = grid.horizon_nodes
    width = 4 * grid.step
    worst = -np.inf
    spikes = []
    lo, hi = model.control_set.lower, model.control_set.upper
    for _ in range(cfg["checks"]["spike_count"]):
        t0 = float(gen.choice(tt[: -(4 + 1)]))
        v = float(gen.uniform(max(lo, 0.1), min(hi, 3.0)))
        spike = mp.spike_perturbation(ustar, t0, width, v)
        _, _, per1 = evaluate_performance(model, spike, noise, kernel=kernel)
        diff = per1 - per0
        gain = float(diff.mean())
        se = float(diff.std(ddof=1) / np.sqrt(len(diff)))
        margin = gain - se_mult * se
        worst = max(worst, margin)
        spikes.append({"t0": t0, "value": v, "gain": gain, "se": se})
    passed = bool(nec.passed and suff.passed and worst <= 0.0)
    return {
        "passed": passed,
        "necessary_statistic": float(nec.statistic),
        "necessary_passed": bool(nec.passed),
        "sufficient_passed": bool(suff.passed),
        "concavity_gap": float(suff.details["concavity_gap"]),
        "worst_spike_margin": float(worst),
        "spikes": spikes,
        "control_head": [float(v) for v in np.atleast_2d(ustar.values)[0, :5]],
        "clamped_nodes": int(np.count_nonzero(ustar.clamped)),
    }, ustar


def run_scenario(cfg):
    """Execute the configured pipeline; returns (report_dict, passed)."""
    model, kernel, jump_spec = build_scenario(cfg)
    grid = make_grid(cfg["model"]["delta"], cfg["model"]["horizon"],
                     cfg["grid"]["steps_per_delay"])
    noise = sample_noise(grid, jump_spec, cfg["monte_carlo"]["seed"],
                         cfg["monte_carlo"]["n_paths"])

    closed = None
    if cfg["model"]["name"] != "custom-affine":
        closed = _closed_form(model, noise)

    if cfg["control"]["kind"] == "foc":
        control = mp.solve_foc(model, closed.p, grid)
    else:
        control = ControlPath.constant(grid, cfg["control"]["value"],
                                       control_set=model.control_set)
    state = simulate_state(model, control, noise, kernel=kernel)
    j_value, j_se, _ = evaluate_performance(model, control, noise, kernel=kernel,
                                            state=state)

    checks = {}
    regression_sol = None
    for check in cfg["checks"]["run"]:
        if check == "closed-form":
            checks[check] = check_closed_form(model, kernel, cfg, grid, noise, closed)
        elif check == "bridge":
            checks[check] = check_bridge(model, cfg, grid, closed)
        elif check == "regression":
            reg_state = reduce_2d(model, control, noise, kernel=kernel)
            checks[check], regression_sol = check_regression(
                model, cfg, grid, reg_state, closed
            )
        elif check == "max-principle":
            checks[check], _ = check_max_principle(model, kernel, cfg, grid, noise, closed)
    passed = all(c["passed"] for c in checks.values())

    echo = {k: v for k, v in cfg.items() if not k.startswith("_")}
    report = {
        "schema_version": 1,
        "suite": "scenario",
        "scenario": cfg["model"]["name"],
        "seed": cfg["monte_carlo"]["seed"],
        "config": echo,
        "grid": {
            "delay": grid.delta,
            "horizon": grid.horizon,
            "steps_per_delay": grid.steps_per_delay,
            "step": grid.step,
            "horizon_steps": grid.n_horizon_steps,
        },
        "performance": {"estimate": j_value, "standard_error": j_se},
        "checks": verification._jsonable(checks),
        "passed": bool(passed),
    }
    artifacts = {
        "state": state,
        "closed": closed,
        "regression": regression_sol,
        "grid": grid,
    }
    return report, passed, artifacts


def write_outputs(cfg, report, artifacts):
    out_dir = cfg["output"]["directory"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(verification.render_report(report))
    written = [os.path.join(out_dir, "report.json")]
    grid = artifacts["grid"]
    state = artifacts["state"]
    if cfg["output"]["write_paths"]:
        path = os.path.join(out_dir, "paths.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y", "z", "z_general", "x2"])
            iz = grid.index_zero
            for k, t in enumerate(grid.horizon_nodes):
                row = [
                    "%.17g" % t,
                    "%.17g" % state.x[0, iz + k],
                    "%.17g" % state.y[0, k],
                    "%.17g" % state.z[0, k],
                ]
                zg = state.z_general
                row.append("" if zg is None else "%.17g" % zg[0, k])
                row.append("" if state.x2 is None else "%.17g" % state.x2[0, iz + k])
                writer.writerow(row)
        written.append(path)
    if cfg["output"]["write_adjoint"]:
        closed = artifacts["closed"]
        reg = artifacts["regression"]
        source = None
        if closed is not None:
            source = ("closed-form", closed.p, closed.q, closed.mu)
        elif reg is not None:
            source = ("regression", reg.p1, reg.q1, reg.mu1)
        if source is not None:
            route, p, q, mu = source
            path = os.path.join(out_dir, "adjoint.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t", "p_mean", "q_mean", "mu_mean", "route"])
                for k, t in enumerate(grid.horizon_nodes):
                    writer.writerow([
                        "%.17g" % t,
                        "%.17g" % p[:, k].mean(),
                        "%.17g" % q[:, k].mean(),
                        "%.17g" % mu[:, k].mean(),
                        route if k == 0 else "",
                    ])
            written.append(path)
    return written


def _cmd_run(args):
    cfg = load_config(args.config)
    report, passed, artifacts = run_scenario(cfg)
    written = write_outputs(cfg, report, artifacts)
    for check, result in report["checks"].items():
        print("check %-14s %s" % (check, "PASS" if result["passed"] else "FAIL"))
    print("performance %.6g (se %.2g)" % (
        report["performance"]["estimate"], report["performance"]["standard_error"]
    ))
    for path in written:
        print("wrote %s" % path)
    return 0 if passed else 1


def _cmd_list(args):
    entries = []
    for name in sorted(scenarios.CATALOG):
        entries.append({
            "name": name,
            "summary": scenarios.CATALOG[name]["summary"],
            "template": "configs/%s.ini" % name,
            "checks": sorted(_APPLICABLE[name], key=_CHECK_NAMES.index),
        })
    if args.json:
        print(json.dumps({"scenarios": entries}, indent=2, sort_keys=True))
        return 0
    for e in entries:
        print("%-22s %s" % (e["name"], e["summary"]))
        print("%-22s checks: %s; template: %s"
              % ("", ", ".join(e["checks"]), e["template"]))
    return 0


def _cmd_verify(args):
    profile = "quick" if args.quick else "full"
    results, report = verification.verify_all(
        seed=args.seed, out_dir=args.out, profile=profile, echo=print
    )
    passed = report["passed"]
    print("acceptance suite: %s (%d criteria, seed %d, %s profile)" % (
        "PASS" if passed else "FAIL", len(results), args.seed, profile
    ))
    if args.out:
        print("wrote %s" % os.path.join(args.out, "report.json"))
    return 0 if passed else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="noisy-control",
        description="Delayed stochastic control with noisy memory: "
                    "simulation, adjoint solvers, and checkers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a configured scenario")
    p_run.add_argument("config", help="path to a scenario config (INI)")
    p_run.set_defaults(fn=_cmd_run)
    p_list = sub.add_parser("list", help="list the scenario catalog")
    p_list.add_argument("--json", action="store_true",
                        help="machine-readable output")
    p_list.set_defaults(fn=_cmd_list)
    p_verify = sub.add_parser("verify", help="run the acceptance checks")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out", default=None, help="directory for report.json")
    p_verify.add_argument("--quick", action="store_true",
                          help="reduced path counts for a fast smoke pass")
    p_verify.set_defaults(fn=_cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except NoisyControlError as exc:
        print("%s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
