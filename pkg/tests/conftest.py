import numpy as np
import pytest

from ledmarker import CameraModel, ScenePose, assign_frequencies, encode, render_frame
from ledmarker.harness import default_dictionary


@pytest.fixture(scope="session")
def camera():
    return CameraModel()


@pytest.fixture(scope="session")
def dictionary():
    return default_dictionary()


@pytest.fixture(scope="session")
def render(camera, dictionary):
    """Noiseless render of a dictionary entry; keyword args go to ScenePose."""

    def _render(marker_id=0, t0=0.0003, noise=None, **pose_kw):
        panel = assign_frequencies(encode(dictionary, marker_id))
        args = (camera, ScenePose(**pose_kw), panel, t0)
        return render_frame(*args) if noise is None else render_frame(*args, noise)

    return _render


def runs_of(column: np.ndarray, value=True) -> list[int]:
    """Lengths of complete runs of ``value`` (runs touching either end dropped)."""
    col = np.asarray(column) == value
    padded = np.concatenate([[False], col, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, ends = edges[::2], edges[1::2]
    keep = (starts > 0) & (ends < len(col))
    return list((ends - starts)[keep])


def panel_runs(column: np.ndarray, level: int = 128) -> list[int]:
    """Complete bright runs inside the lit span of one image column."""
    lit = np.flatnonzero(np.asarray(column) > 0)
    if lit.size == 0:
        return []
    return runs_of(column[lit[0] : lit[-1] + 1] > level)


# Filled by test_acceptance; printed once at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
