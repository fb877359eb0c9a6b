"""Command-line front end: config parsing, runs, reports, reproducibility."""

import json
import os

import numpy as np
import pytest

from noisy_control import cli
from noisy_control.errors import ConfigError
from noisy_control.paths import JumpSpec, make_grid, sample_ensemble

FAST_LINEAR = """\
[model]
name = linear-noisy-memory

[monte_carlo]
n_paths = 400
seed = 3

[control]
kind = constant
value = 1.0

[checks]
run = closed-form, bridge

[output]
directory = {out}
"""


def _write(tmp_path, text, name="case.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_config_fills_documented_defaults(tmp_path):
    path = _write(tmp_path, "[model]\nname = consumption\n")
    cfg = cli.load_config(path)
    assert cfg["grid"]["steps_per_delay"] == 8
    assert cfg["monte_carlo"] == {"n_paths": 2000, "seed": 0}
    assert cfg["solver"] == {"basis": "quad-xz", "ridge": 1e-8}
    assert cfg["control"]["kind"] == "constant"
    assert cfg["output"]["directory"] == "out"
    # factory defaults flow through untouched
    assert cfg["model"]["a1"] == 0.3
    assert sorted(cfg["checks"]["run"]) == sorted(
        ["bridge", "closed-form", "max-principle", "regression"]
    )


def test_load_config_reports_file_and_line(tmp_path):
    path = _write(tmp_path, "[model]\nname = consumption\n\nwhatever = 1\n")
    with pytest.raises(ConfigError) as err:
        cli.load_config(path)
    msg = str(err.value)
    assert msg.startswith(path + ":4:")
    assert "whatever" in msg


def test_load_config_rejects_unknown_section_and_scenario(tmp_path):
    with pytest.raises(ConfigError) as err:
        cli.load_config(_write(tmp_path, "[model]\nname = consumption\n[wat]\nx = 1\n"))
    assert ":3:" in str(err.value)
    with pytest.raises(ConfigError) as err:
        cli.load_config(_write(tmp_path, "[model]\nname = nope\n", "b.ini"))
    assert ":2:" in str(err.value) and "unknown scenario" in str(err.value)


def test_load_config_rejects_keys_from_other_scenarios(tmp_path):
    path = _write(tmp_path, "[model]\nname = generalized-memory\npsi = 0.1\n")
    with pytest.raises(ConfigError) as err:
        cli.load_config(path)
    assert "psi" in str(err.value)


def test_load_config_jump_marks_validation(tmp_path):
    good = _write(
        tmp_path,
        "[model]\nname = consumption\njump_intensity = 1.0\n"
        "jump_marks = -0.5:0.5, 1.0:0.5\njump_scale = 0.1\n",
    )
    cfg = cli.load_config(good)
    model, kernel, jump_spec = cli.build_scenario(cfg)
    assert jump_spec is not None
    assert jump_spec.levy_moment(1) == pytest.approx(1.0 * (-0.5 * 0.5 + 1.0 * 0.5))

    bad = _write(
        tmp_path,
        "[model]\nname = consumption\njump_intensity = 1.0\n"
        "jump_marks = -0.5:0.7, 1.0:0.5\n",
        "bad.ini",
    )
    with pytest.raises(ConfigError) as err:
        cli.load_config(bad)
    assert "jump_marks" in str(err.value)


def test_load_config_control_kind_rules(tmp_path):
    both = _write(tmp_path, "[model]\nname = consumption\n[control]\nkind = foc\nvalue = 1.0\n")
    with pytest.raises(ConfigError) as err:
        cli.load_config(both)
    assert "value" in str(err.value)
    foc_affine = _write(
        tmp_path, "[model]\nname = custom-affine\n[control]\nkind = foc\n", "b.ini"
    )
    with pytest.raises(ConfigError):
        cli.load_config(foc_affine)


def test_load_config_rejects_inapplicable_checks(tmp_path):
    path = _write(
        tmp_path, "[model]\nname = custom-affine\n[checks]\nrun = closed-form\n"
    )
    with pytest.raises(ConfigError) as err:
        cli.load_config(path)
    assert "closed-form" in str(err.value)


def test_load_config_rejects_regression_under_weighted_memory(tmp_path):
    path = _write(
        tmp_path,
        "[model]\nname = consumption\nkernel = ramp\n[checks]\nrun = regression\n",
    )
    with pytest.raises(ConfigError) as err:
        cli.load_config(path)
    assert "regression" in str(err.value)


def test_run_exit_codes(tmp_path, capsys):
    ok = _write(tmp_path, FAST_LINEAR.format(out=tmp_path / "out"))
    assert cli.main(["run", ok]) == 0
    out = capsys.readouterr().out
    assert "closed-form" in out and "PASS" in out

    bad = _write(tmp_path, "[model]\nname = consumption\nbogus = 2\n", "bad.ini")
    assert cli.main(["run", bad]) == 2
    assert "config error" in capsys.readouterr().err

    # commensurability failures surface as typed errors, not tracebacks
    off = _write(
        tmp_path,
        "[model]\nname = consumption\ndelta = 0.3\nhorizon = 1.0\n",
        "off.ini",
    )
    assert cli.main(["run", off]) == 2
    assert "NonCommensurate" in capsys.readouterr().err


def test_run_report_is_byte_stable(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    cfg1 = _write(tmp_path, FAST_LINEAR.format(out=out1), "one.ini")
    cfg2 = _write(tmp_path, FAST_LINEAR.format(out=out2), "two.ini")
    assert cli.main(["run", cfg1]) == 0
    assert cli.main(["run", cfg2]) == 0
    r1 = (out1 / "report.json").read_bytes()
    r2 = (out2 / "report.json").read_bytes()
    # reports may only differ in the echoed output directory
    d1 = json.loads(r1)
    d2 = json.loads(r2)
    d1["config"]["output"].pop("directory")
    d2["config"]["output"].pop("directory")
    assert d1 == d2
    assert (out1 / "paths.csv").exists()
    assert (out1 / "adjoint.csv").exists()


def test_run_same_directory_is_identical(tmp_path):
    out = tmp_path / "out"
    cfg = _write(tmp_path, FAST_LINEAR.format(out=out))
    assert cli.main(["run", cfg]) == 0
    first = (out / "report.json").read_bytes()
    assert cli.main(["run", cfg]) == 0
    assert (out / "report.json").read_bytes() == first


def test_list_json_catalog(capsys):
    assert cli.main(["list", "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    names = [row["name"] for row in data["scenarios"]]
    assert names == sorted(names)
    assert "linear-noisy-memory" in names
    for row in data["scenarios"]:
        assert row["template"] == "configs/%s.ini" % row["name"]
        assert isinstance(row["checks"], list)


def test_chunked_sampling_matches_monolithic(monkeypatch):
    grid = make_grid(0.2, 1.0, 8)
    spec = JumpSpec.discrete(0.5, [1.0], [1.0])
    whole = sample_ensemble(grid, spec, seed=9, n_paths=5000)
    monkeypatch.setenv("NOISY_CONTROL_THREADS", "4")
    chunked = cli.sample_noise(grid, spec, seed=9, n_paths=5000)
    assert np.array_equal(whole.increments, chunked.increments)
    assert np.array_equal(whole.jump_counts, chunked.jump_counts)
    assert all(
        np.array_equal(a, b) for a, b in zip(whole.jump_marks, chunked.jump_marks)
    )


def test_thread_count_env_validation(monkeypatch):
    monkeypatch.delenv("NOISY_CONTROL_THREADS", raising=False)
    assert cli._thread_count() == 1
    monkeypatch.setenv("NOISY_CONTROL_THREADS", "3")
    assert cli._thread_count() == 3
    monkeypatch.setenv("NOISY_CONTROL_THREADS", "zero")
    with pytest.raises(ConfigError):
        cli._thread_count()
    monkeypatch.setenv("NOISY_CONTROL_THREADS", "0")
    with pytest.raises(ConfigError):
        cli._thread_count()


def test_templates_parse_cleanly():
    here = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in sorted(os.listdir(here)):
        cfg = cli.load_config(os.path.join(here, name))
        assert cfg["model"]["name"] + ".ini" == name
