import numpy as np
import pytest


class PinnedRNG:
    """Stand-in generator returning fixed normals and uniforms."""

    def __init__(self, normal=0.0, uniform=0.0):
        self.normal = normal
        self.uniform = uniform

    def standard_normal(self, shape):
        return np.full(shape, self.normal, dtype=np.float64)

    def random(self, shape):
        return np.full(shape, self.uniform, dtype=np.float64)


@pytest.fixture
def pinned_rng():
    return PinnedRNG


def fd_score(log_density, x, rel_step=1e-4):
    """Central-difference gradient with step ``rel_step * (1 + |x_i|)``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        h = rel_step * (1.0 + np.abs(x[:, j]))
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        out[:, j] = (log_density(xp) - log_density(xm)) / (2.0 * h)
    return out


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line ``CRITERION n: PASS|FAIL | detail``.

    Lines are printed immediately and repeated in the terminal summary.
    """

    def report(number, passed, detail):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        print(line)
        _CRITERIA.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
