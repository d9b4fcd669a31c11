import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_lattice_job(root, k_best=6):
    """Write the lattice bracket job (config plus lattice HPVX) under ``root``."""
    import json

    from hmplan import solid

    from lattice_fixture import LATTICE, lattice_config

    ws = solid.GridSpec((32, 32, 32))
    solid.save(solid.voxelize(LATTICE, ws), root / "lattice.hpvx")
    cfg = root / "job.json"
    cfg.write_text(json.dumps(lattice_config("lattice.hpvx", k_best), indent=2))
    return cfg


@pytest.fixture
def lattice_job(tmp_path):
    return write_lattice_job(tmp_path)
