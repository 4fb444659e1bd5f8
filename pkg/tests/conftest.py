import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path for imports
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from core import config  # noqa: E402
from core.python.fec import CodecConfig, TurboCodec  # noqa: E402

SMALL_L_INFO = 120


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_codec():
    return TurboCodec(CodecConfig(l_info=SMALL_L_INFO, iterations=8, interleaver_seed=3))


@pytest.fixture
def tmp_config_dir(tmp_path, monkeypatch):
    """Redirect result output into a temporary directory"""
    out = tmp_path / "results"
    monkeypatch.setattr(config, "OUTPUT_DIR", out)
    return tmp_path
