import numpy as np
import pytest

from app.core.config import config
from app.services import bench_service


@pytest.fixture
def golden_dir(tmp_path, monkeypatch):
    path = tmp_path / "golden"
    monkeypatch.setattr(config, "GOLDEN_DIR", path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def all_metrics():
    """Metrics of every app on its synthetic input, computed once per session."""
    return {m.app: m for m in bench_service.characterize_apps(None)}


@pytest.fixture
def small_bpfree_config(tmp_path):
    path = tmp_path / "bpfree_small.json"
    path.write_text(
        '{"app_id": "BPfree", "arithmetic": "fp32", "params": {"labels": [0, 1, 0, 1], "eta": 0.01, '
        '"margin": 1.0, "channels": [2, 4, 4, 4], "kernel": 3, "pools": [2, 2, 2], "length": 64, "hidden": 8}}',
        encoding="utf-8",
    )
    return path
