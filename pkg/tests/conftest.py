from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from overlap_ab.simulators import BoredomSpec, boredom_policy, simulate_boredom_ab  # noqa: E402


@pytest.fixture(scope="session")
def boredom_case():
    """A small multi-step two-arm log with exact softmax-linear policies."""
    spec = BoredomSpec.generate(d=4, seed=11).with_horizon(3)
    pi_A, pi_B = boredom_policy(spec, 6.0), boredom_policy(spec, 2.0)
    data = simulate_boredom_ab(spec, pi_A, pi_B, 40, 30, seed=5)
    return data, pi_A, pi_B


_ACCEPTANCE: dict[int, str] = {}


class _Recorder:
    def __call__(self, number: int, title: str, ok: bool, detail: str, elapsed: float, budget: float) -> bool:
        in_time = elapsed < budget
        passed = bool(ok) and in_time
        line = (f"criterion {number:>2} {title}: {'PASS' if passed else 'FAIL'} "
                f"({detail}; {elapsed:.1f}s of {budget:g}s)")
        _ACCEPTANCE[number] = line
        print(line)
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
