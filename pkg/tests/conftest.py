import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from metahar.datasets import SyntheticSpec, synth_generate  # noqa: E402


@pytest.fixture(scope="session")
def small_ds():
    """4 persons x 3 classes x 12 instances, tiny features."""
    return synth_generate(SyntheticSpec(n_persons=4, n_classes=3, instances_per_person_class=12, feature_shape=(5, 2, 3), person_strength=0.5, noise=0.2, seed=11))


@pytest.fixture(scope="session")
def mid_ds():
    return synth_generate(SyntheticSpec(n_persons=6, n_classes=5, instances_per_person_class=30, feature_shape=(5, 2, 3), person_strength=1.0, noise=0.3, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one line per criterion in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    def report(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
