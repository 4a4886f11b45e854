import numpy as np
import pytest
import yaml

from mmhaptic.cli import run
from mmhaptic.config import DEFAULTS, RunConfig
from mmhaptic.errors import ConfigurationError
from mmhaptic.evaluation import read_keyvalue, read_pgm
from mmhaptic.io import read_archive, read_surface, write_point_cloud
from mmhaptic.scanlog import read_scan_log

FAST = {
    "resolution": {"dr": 0.01, "num_theta": 60, "dz": 0.01},
    "probe": {"num_points": 400},
    "extraction": {"num_angles": 60, "slice_pitch": 0.01},
    "trajectory": {"duration": 2.0},
}


# configuration


def test_defaults_validate():
    cfg = RunConfig.load()
    assert cfg.lam == 1e-4 and cfg.seed == 0
    assert cfg.boundary().inner_value == 1.0 and cfg.boundary().outer_value == -1.0
    kind, params = cfg.trajectory()
    assert kind == "press" and params.probe_half_height == 0.04


def test_config_file_and_overrides(tmp_path):
    (tmp_path / "c.yaml").write_text("lambda: 0.01\nresolution: {dr: 0.01}\nseed: 3\n")
    cfg = RunConfig.load(tmp_path / "c.yaml", {"seed": 7})
    assert cfg.lam == 0.01 and cfg.seed == 7
    assert cfg.resolution()[0] == 0.01 and cfg.resolution()[2] == DEFAULTS["resolution"]["dz"]


@pytest.mark.parametrize("text", ["lambda: -1\n", "bogus: 1\n", "resolution: 3\n", "paths: {scan: nope.log}\n",
                                  "trajectory: {kind: poke}\n", "noise: {force: -1}\n"])
def test_invalid_configs(tmp_path, text):
    (tmp_path / "c.yaml").write_text(text)
    with pytest.raises(ConfigurationError):
        RunConfig.load(tmp_path / "c.yaml").noise()


def test_paths_resolve_relative_to_config(tmp_path):
    (tmp_path / "scan.log").write_text("")
    (tmp_path / "c.yaml").write_text("paths: {scan: scan.log}\n")
    assert RunConfig.load(tmp_path / "c.yaml").data["paths"]["scan"] == str(tmp_path / "scan.log")


def test_dump_reloads_to_the_same_config(tmp_path):
    cfg = RunConfig.load(None, {"lambda": 0.5})
    (tmp_path / "c.yaml").write_text(cfg.dump())
    assert RunConfig.load(tmp_path / "c.yaml").data == cfg.data


# command line


def test_print_config_and_version(capsys):
    assert run(["--print-config"]) == 0
    out = capsys.readouterr().out
    assert yaml.safe_load(out) == DEFAULTS
    assert run(["--version"]) == 0
    assert "0.1.0" in capsys.readouterr().out


def test_usage_errors_exit_2(capsys):
    assert run(["frobnicate"]) == 2
    assert run(["--no-such-flag"]) == 2
    assert run(["render"]) == 2


def test_categorised_error_line(tmp_path, capsys):
    (tmp_path / "empty.log").write_text("# no samples\n")
    (tmp_path / "model.mmh").write_bytes(b"junk")
    assert run(["evaluate", str(tmp_path / "model.mmh"), str(tmp_path / "empty.log")]) == 1
    assert capsys.readouterr().err.startswith("error[input]:")
    (tmp_path / "bad.yaml").write_text("lambda: -2\n")
    assert run(["--config", str(tmp_path / "bad.yaml"), "--print-config"]) == 1
    assert "error[config]" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "fast.yaml"
    cfg.write_text(yaml.safe_dump(FAST))
    base = ["--config", str(cfg)]
    assert run(base + ["simulate", "-o", str(d / "sim")]) == 0
    assert run(base + ["build-field", str(d / "sim" / "surface.json"), "-o", str(d / "plain.mmh")]) == 0
    assert run(base + ["fit", str(d / "plain.mmh"), str(d / "sim" / "scan.log"), "-o", str(d / "fit.mmh"),
                       "--lambda", "1.0"]) == 0
    return d, base


def test_simulate_fit_evaluate_round_trip(pipeline, capsys):
    d, base = pipeline
    fit = read_archive(d / "fit.mmh")
    assert fit.metadata["kind"] == "augmented" and fit.metadata["lambda"] == 1.0
    assert fit.metadata["T"] == len(read_scan_log(d / "sim" / "scan.log"))
    scores = {}
    for name in ("plain", "fit"):
        rep = d / f"{name}.txt"
        assert run(base + ["evaluate", str(d / f"{name}.mmh"), str(d / "sim" / "scan.log"),
                           "--report", str(rep)]) == 0
        scores[name] = read_keyvalue(rep)["mean_magnitude_N"]
    assert "mean_magnitude_N" in capsys.readouterr().out
    assert scores["fit"] < scores["plain"]


def test_simulate_is_reproducible(pipeline, tmp_path):
    d, base = pipeline
    assert run(base + ["simulate", "-o", str(tmp_path)]) == 0
    assert (tmp_path / "scan.log").read_bytes() == (d / "sim" / "scan.log").read_bytes()
    assert run(base + ["--seed", "5", "simulate", "-o", str(tmp_path / "s5")]) == 0
    assert (tmp_path / "s5" / "scan.log").read_bytes() != (d / "sim" / "scan.log").read_bytes()


def test_render_line_per_pose(pipeline, capsys):
    d, base = pipeline
    log = d / "sim" / "scan.log"
    n = len(read_scan_log(log))
    capsys.readouterr()
    assert run(base + ["render", str(d / "fit.mmh"), str(log)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == n and len(lines[0].split()) == 19
    assert run(base + ["render", str(d / "fit.mmh"), str(log), "-o", str(d / "wrench.log")]) == 0
    assert len(read_scan_log(d / "wrench.log")) == n


def test_heatmap_command(pipeline):
    d, base = pipeline
    out = d / "diff.pgm"
    assert run(base + ["heatmap", str(d / "fit.mmh"), "--slice", "5", "--reference", str(d / "plain.mmh"),
                       "-o", str(out)]) == 0
    grid = read_archive(d / "fit.mmh").grid
    assert read_pgm(out).shape == (grid.nr, grid.ntheta)
    assert run(base + ["heatmap", str(d / "fit.mmh"), "--slice", "999", "-o", str(out)]) == 1


def test_extract_surface_from_manifest(tmp_path):
    rng = np.random.default_rng(0)
    th = rng.uniform(0, 2 * np.pi, 20000)
    z = rng.uniform(0, 0.2, 20000)
    cloud = np.column_stack([0.12 * np.cos(th), 0.12 * np.sin(th), z])
    write_point_cloud(tmp_path / "a.xyz", cloud[:10000])
    write_point_cloud(tmp_path / "b.xyz", cloud[10000:] - [0.0, 0.0, 0.5])  # captured in a shifted frame
    (tmp_path / "m.yaml").write_text(
        "scans:\n  - cloud: a.xyz\n  - cloud: b.xyz\n    pose: [1,0,0,0, 0,1,0,0, 0,0,1,0.5]\n"
        "axis: {origin: [0,0,0], z_direction: [0,0,1]}\n"
        "extraction: {z_min: 0.01, z_max: 0.19, num_slices: 9}\n")
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"extraction": {"num_angles": 36}}))
    assert run(["--config", str(tmp_path / "c.yaml"), "extract-surface", str(tmp_path / "m.yaml"),
                "-o", str(tmp_path / "s.json")]) == 0
    s = read_surface(tmp_path / "s.json")
    assert s.radii.shape == (9, 36)
    assert np.max(np.abs(s.radii - 0.12)) <= 1e-6
