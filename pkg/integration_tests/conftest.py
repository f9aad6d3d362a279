import os

import pytest
from dotenv import load_dotenv

from mechnum import audits
from mechnum.config import default_config
from mechnum.consts import Experiments

# Load MECHNUM_* settings from .env file
load_dotenv()

# Acceptance scale; lower it locally for a quick pass
SEEDS = int(os.getenv("MECHNUM_IT_SEEDS", "50"))
SEED = int(os.getenv("MECHNUM_IT_SEED", "0"))


def acceptance_config(experiment, **overrides):
    return default_config(experiment, {"seed": SEED, **overrides})


@pytest.fixture(scope="session")
def oracle_suite():
    """Verdicts and rows of the solver-vs-oracle comparison."""
    return audits.check_oracle(acceptance_config(Experiments.ORACLE_CHECK, n_samples=SEEDS))


@pytest.fixture(scope="session")
def dual_pricing_suite():
    """Verdicts and rows of the dual-pricing deviation audit."""
    return audits.check_dual_pricing(acceptance_config(Experiments.DUAL_AUDIT, n_samples=SEEDS))


@pytest.fixture(scope="session")
def sem_suite():
    return audits.check_sem(acceptance_config(Experiments.EXAMPLE2))


@pytest.fixture(scope="session")
def esem_suite():
    """Example 3 scale: 20 links, a=2, sigma=0.01, delta=1e-2."""
    return audits.check_esem(acceptance_config(Experiments.EXAMPLE3, n_samples=SEEDS))


@pytest.fixture
def output_dir(tmp_path):
    """Fresh artifact directory for one experiment run."""
    out = tmp_path / "out"
    out.mkdir()
    return out
