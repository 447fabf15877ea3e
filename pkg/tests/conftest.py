import sys
from pathlib import Path

import numpy as np
import pytest

# Add scripts directory to path so tests can import modules
# Assuming this conftest is in tests/ and scripts is in ../scripts
ROOT_DIR = Path(__file__).parent.parent
SCRIPTS_DIR = ROOT_DIR / "scripts"
CONFIG_DIR = ROOT_DIR / "config"

sys.path.append(str(SCRIPTS_DIR))


@pytest.fixture(scope="session")
def gmf_paths():
    return CONFIG_DIR / "cmod5_coefficients.txt", CONFIG_DIR / "polarization_ratio.csv"


@pytest.fixture(scope="session")
def gmf(gmf_paths):
    import gmf_mask
    return gmf_mask.load_gmf(*gmf_paths)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))
