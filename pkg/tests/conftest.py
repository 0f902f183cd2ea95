import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hetvar.qstat import MetaSample  # noqa: E402
from hetvar.simulation import ScenarioConfig, generate_replicate  # noqa: E402

DATA = Path(__file__).parent / "data"

ACCEPTANCE_LINES: list[str] = []


def random_sample(rng: np.random.Generator, policy=None, k_choices=(3, 5, 10), tau2_max=1.0) -> MetaSample:
    """A valid simulated MetaSample drawn from a random scenario."""
    while True:
        cfg = ScenarioConfig(
            k=int(rng.choice(k_choices)),
            sizes=str(int(rng.choice([20, 40, 100, 250]))),
            p_c=float(rng.choice([0.1, 0.2, 0.5])),
            theta=float(rng.choice([0.0, 0.5, 1.0, 2.0])),
            tau2=float(rng.uniform(0, tau2_max)),
            reps=1,
        )
        rep = generate_replicate(cfg, rng)
        if rep is not None:
            return rep.sample(policy or str(rng.choice(["only", "always"])))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def data_dir():
    return DATA


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
