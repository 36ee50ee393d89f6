from __future__ import annotations

import numpy as np
import pytest

from mhslam.config import Config


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240417)


@pytest.fixture(autouse=True)
def _fresh_config(monkeypatch: pytest.MonkeyPatch):
    for name in ("LOG_FILE", "WORKERS", "LOG_LEVEL"):
        monkeypatch.delenv(f"MHSLAM_{name}", raising=False)
    Config.reload()
    yield
    Config.reload()
