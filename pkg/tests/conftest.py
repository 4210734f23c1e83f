import numpy as np
import pytest
import torch

from talkncelab.data.synth import GenConfig


def engineered_pair(s):
    """Unit vectors whose visual-audio cosine matrix is exactly ``s`` (2x2)."""
    s = np.asarray(s, dtype=np.float64)
    gram = np.eye(4)
    gram[:2, 2:] = s
    gram[2:, :2] = s.T
    chol = np.linalg.cholesky(gram)
    return chol[:2], chol[2:]


@pytest.fixture
def engineered():
    return engineered_pair([[0.9, -0.2], [0.1, 0.5]])


@pytest.fixture(scope="session")
def small_gen():
    return GenConfig(n_scenes=6, n_val=1, n_test=1, T=24, visual_size=16, seed=3)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; all lines are printed in the terminal summary."""

    def record(name: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA.append(f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
        print(_CRITERIA[-1])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
