import numpy as np
import pytest

from fullrank_bss.scene import SceneSpec, linear_array, simulate


def random_hermitian(rng, M, psd=False, rank=None):
    rank = M if rank is None else rank
    B = rng.standard_normal((M, rank)) + 1j * rng.standard_normal((M, rank))
    if psd:
        return B @ B.conj().T
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    return (A + A.conj().T) / 2


def random_hpd(rng, M):
    return random_hermitian(rng, M, psd=True) + 0.1 * np.eye(M)


@pytest.fixture(scope="session")
def small_scene():
    return simulate(linear_array(3, 0.04), SceneSpec(target_azimuth=30, duration=1.6, seed=7), window_len=512)


ACCEPTANCE_LINES = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"CRITERION {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
