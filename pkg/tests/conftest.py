import numpy as np
import pytest
from hypothesis import settings

from exechecker.skeldata import Label, SkeletonSequence, h36m_topology

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def topo():
    return h36m_topology()


def make_seq(frames, exercise="ex", subject="s0", label=Label.CORRECT, fps=30.0):
    return SkeletonSequence(frames=np.asarray(frames, dtype=np.float64), exercise_id=exercise,
                            subject_id=subject, label=label, fps=fps)


@pytest.fixture
def random_seq(topo):
    rng = np.random.default_rng(0)
    return make_seq(rng.normal(size=(12, topo.num_joints, 3)))


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` with respect to array ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


# Acceptance criteria record one line each here; printed at the end of the run.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
