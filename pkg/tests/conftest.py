import math

import numpy as np
import pytest

from gamelattice import JumpLaw, MertonParams, PayoffSpec, StepTooCoarse, step_params

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def desk_params():
    """Acceptance-criteria model: one jump of -20%, lambda = 0.1."""
    return MertonParams(s0=1.0, sigma=0.2, r=0.06, lam=0.1, T=1.0, jump_law=JumpLaw.point(-0.2))


@pytest.fixture
def desk_russian():
    return PayoffSpec.russian(M=1.2, delta=0.02, r=0.06)


@pytest.fixture
def crr_params():
    return MertonParams(s0=1.0, sigma=0.2, r=0.06, lam=0.0, T=1.0)


def random_params(rng: np.random.Generator, n: int | None = None, max_atoms: int = 2) -> MertonParams:
    """Random model that is valid at step count ``n`` (resampled until it is)."""
    while True:
        m = int(rng.integers(1, max_atoms + 1))
        sizes = rng.uniform(-0.5, 0.5, size=m)
        probs = rng.uniform(0.2, 1.0, size=m)
        probs = probs / probs.sum()
        probs[-1] = 1.0 - math.fsum(probs[:-1])
        params = MertonParams(
            s0=float(rng.uniform(0.5, 2.0)),
            sigma=float(rng.uniform(0.05, 0.6)),
            r=float(rng.uniform(0.005, 0.12)),
            lam=float(rng.choice([0.0, rng.uniform(0.0, 1.5)])),
            T=float(rng.uniform(0.25, 2.0)),
            jump_law=JumpLaw.from_relative(sizes.tolist(), probs.tolist()),
        )
        if n is None:
            return params
        try:
            step_params(params, n)
        except StepTooCoarse:
            continue
        return params


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion:>2}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
