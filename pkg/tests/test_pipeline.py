import json
import subprocess
import sys

import numpy as np
import pytest
from helpers import write_driving

from relitanim.cli import main
from relitanim.io import read_latents

COMMON = ["--model", "model.json", "--lighting", "light.json", "--resolution", "64"]


def run_cli(base, *args):
    argv = [a if not a.endswith(".json") or a.startswith("/") else str(base / a) for a in args]
    return main(list(argv))


def test_hints_mode_counts(inputs):
    out = inputs / "out"
    assert run_cli(inputs, "hints", "--driving", "driving.json", *COMMON, "--output-dir", str(out)) == 0
    assert len(list((out / "hints").glob("*.png"))) == 3
    assert len(list((out / "masks").glob("*.png"))) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["mode"] == "hints-only" and len(manifest["files"]) == 6
    assert len(manifest["config_hash"]) == 64


def test_align_mode(inputs):
    (inputs / "ref.json").write_text(json.dumps({"rotation": [0.1, 0.2, 0.3], "translation": [0.0, 0.1, 0.0]}))
    out = inputs / "out"
    assert run_cli(inputs, "align", "--driving", "driving.json", "--reference", "ref.json", *COMMON,
                   "--output-dir", str(out)) == 0
    aligned = json.loads((out / "aligned.json").read_text())
    assert aligned["frames"][0]["rotation"] == [0.1, 0.2, 0.3]
    assert len(aligned["frames"]) == 3 and len(aligned["shape"]) == 4


def sample(base, out, *extra):
    code = run_cli(base, "sample", "--driving", "driving.json", *COMMON, "--output-dir", str(out), *extra)
    assert code == 0
    return read_latents(out / "latents"), read_latents(out / "mu_c1"), read_latents(out / "mu_c2")


def test_sample_oracle_omega_one_returns_mu_c2(inputs):
    z, _, mu2 = sample(inputs, inputs / "o", "--omega", "1", "--sigma0", "0")
    assert z.shape == (3, 8, 8, 4)
    assert np.max(np.abs(z - mu2)) <= 1e-4


def test_sample_oracle_guidance(inputs):
    z, mu1, mu2 = sample(inputs, inputs / "o", "--omega", "4.5", "--sigma0", "0")
    assert np.max(np.abs(z - (mu1 + 4.5 * (mu2 - mu1)))) <= 1e-4


def test_omega_zero_ignores_lighting(inputs):
    other = np.zeros((3, 9))
    other[:, 0] = 1.2
    other[:, 2] = -0.6
    (inputs / "light2.json").write_text(json.dumps({"sh": other.tolist()}))
    a, _, _ = sample(inputs, inputs / "a", "--omega", "0", "--sigma0", "0.5")
    code = run_cli(inputs, "sample", "--driving", "driving.json", "--model", "model.json", "--lighting", "light2.json",
                   "--resolution", "64", "--output-dir", str(inputs / "b"), "--omega", "0", "--sigma0", "0.5")
    assert code == 0
    assert (inputs / "a" / "latents.f32").read_bytes() == (inputs / "b" / "latents.f32").read_bytes()
    assert json.loads((inputs / "a" / "mu_c2.json").read_text())["frames"] == 3
    assert np.array_equal(a, read_latents(inputs / "b" / "latents"))
    assert not np.array_equal(read_latents(inputs / "a" / "mu_c2"), read_latents(inputs / "b" / "mu_c2"))


def test_relight_is_deterministic_and_windowed(inputs):
    write_driving(inputs / "long.json", 20)
    out = inputs / "r"
    args = ["relight", "--driving", "long.json", *COMMON, "--output-dir", str(out), "--seed", "3"]
    assert run_cli(inputs, *args) == 0
    first = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file() and p.name != "timing.json"}
    assert run_cli(inputs, *args) == 0
    second = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file() and p.name != "timing.json"}
    assert first == second
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["windows"] == [[0, 16], [4, 20]] and manifest["window_seeds"] == [3, 4]
    assert len(manifest["sampling_steps"]) == 25
    assert len(list((out / "frames").glob("*.png"))) == 20
    timing = json.loads((out / "timing.json").read_text())
    assert len(timing["windows"]) == 2


def test_config_error_exit_code(inputs, capsys):
    code = run_cli(inputs, "relight", "--driving", "missing.json", *COMMON, "--output-dir", str(inputs / "x"))
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and err["details"][0]["path"] == "driving"


def test_pipeline_error_names_stage(inputs, capsys):
    write_driving(inputs / "bad.json", 2, n_expr=5)
    code = run_cli(inputs, "hints", "--driving", "bad.json", *COMMON, "--output-dir", str(inputs / "x"))
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "PipelineError" and err["stage"] == "align"


def test_config_file_and_flag_override(inputs):
    (inputs / "cfg.json").write_text(json.dumps({
        "driving": "driving.json", "lighting": "light.json", "model": "model.json", "resolution": 64, "omega": 1.0,
    }))
    out = inputs / "c"
    assert main(["sample", "--config", str(inputs / "cfg.json"), "--sigma0", "0", "--output-dir", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["omega"] == 1.0 and manifest["config"]["sigma0"] == 0.0


def test_train_then_relight_with_toy_backend(inputs):
    out = inputs / "t"
    assert main(["train-toy", "--output-dir", str(out), "--train-steps", "3", "--lr", "0.01"]) == 0
    lines = (out / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 4
    assert (out / "weights.bin").exists()
    assert run_cli(inputs, "relight", "--driving", "driving.json", *COMMON, "--backend", "toy",
                   "--weights", str(out / "weights.json"), "--steps", "5", "--output-dir", str(inputs / "tr")) == 0
    z = read_latents(inputs / "tr" / "latents")
    assert z.shape == (3, 8, 8, 4) and np.all(np.isfinite(z))


def test_module_entry_point(inputs):
    proc = subprocess.run([sys.executable, "-m", "relitanim", "hints", "--driving", str(inputs / "nope.json"),
                           "--lighting", str(inputs / "light.json")], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"] == "ConfigError"
