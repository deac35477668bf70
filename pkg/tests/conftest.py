import os

for _b in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault("POT_BACKEND_DISABLE_" + _b, "1")

import numpy as np
import pytest

from brinkman_lab.config_geometry import ParticleConfiguration


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def lattice_config(k, spacing, velocities=None, origin=(0.1, 0.1, 0.1)):
    """k^3 centers on a cubic lattice; n = k^3."""
    g = np.arange(k) * spacing
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3) + np.asarray(origin)
    V = np.zeros_like(X) if velocities is None else velocities
    return ParticleConfiguration(X, V)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
