import json
import time
from pathlib import Path

import numpy as np
import pytest

SUITE_BUDGET = 120.0  # seconds, whole suite
_state = {"start": 0.0, "full": False}


def pytest_sessionstart(session):
    _state["start"] = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # the runtime budget applies only when every test module is collected
    modules = {Path(item.fspath).name for item in items}
    present = {p.name for p in Path(__file__).parent.glob("test_*.py")}
    _state["full"] = bool(present) and present <= modules and not config.getoption("keyword")


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - _state["start"]
    _state["elapsed"] = elapsed
    if _state["full"] and elapsed >= SUITE_BUDGET and exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if _state["full"]:
        elapsed = _state.get("elapsed", time.perf_counter() - _state["start"])
        verdict = "PASS" if elapsed < SUITE_BUDGET else "FAIL"
        terminalreporter.write_line(f"[{verdict}] full suite runtime: {elapsed:.1f}s (<{SUITE_BUDGET:.0f}s)")


@pytest.fixture
def inputs(tmp_path):
    """Small model description, 3-frame driving sequence and a lighting file."""
    rng = np.random.default_rng(0)
    (tmp_path / "model.json").write_text(json.dumps({"m": 162, "n_shape": 4, "n_expr": 3, "seed": 0}))
    frames = [
        {"rotation": [0.0, 0.1 * i, 0.0], "translation": [0.02 * i, 0.0, 0.0], "expression": rng.normal(0, 0.5, 3).tolist()}
        for i in range(3)
    ]
    (tmp_path / "driving.json").write_text(json.dumps(frames))
    light = np.zeros((3, 9))
    light[:, 0] = [2.0, 1.8, 1.6]
    light[:, 3] = 0.4
    (tmp_path / "light.json").write_text(json.dumps({"sh": light.tolist()}))
    return tmp_path

