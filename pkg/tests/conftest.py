from __future__ import annotations

import time

import numpy as np
import pytest

from stablelpv.cli import main


@pytest.fixture(scope="session")
def experiment_dir(tmp_path_factory):
    """Default experiment run once per session through the CLI.

    ``timings.txt`` in the directory records the identify wall time.
    """
    out = tmp_path_factory.mktemp("experiment")
    assert main(["generate-data", "--out", str(out)]) == 0
    t0 = time.perf_counter()
    assert main(["identify", "--out", str(out)]) == 0
    (out / "timings.txt").write_text(f"{time.perf_counter() - t0}\n")
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
