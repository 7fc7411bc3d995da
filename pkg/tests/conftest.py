import numpy as np
import pytest

from mfg_inverse import _kernels_py, parabolic
from mfg_inverse.grid import make_grid

try:
    from mfg_inverse import _kernels
except ImportError:  # pragma: no cover
    _kernels = None

BACKENDS = ["python"] + (["cython"] if _kernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available time-march backend."""
    impl = _kernels_py if request.param == "python" else _kernels
    monkeypatch.setattr(parabolic, "theta_march", impl.theta_march)
    return request.param


@pytest.fixture
def grid():
    return make_grid(101, 200, 1.0, 1.0)


@pytest.fixture
def desk_grid():
    return make_grid(201, 400, 1.0, 1.0)


@pytest.fixture
def cos():
    def _cos(k, g):
        from mfg_inverse.grid import SpatialField
        return SpatialField(np.cos(k * np.pi * g.x), g)
    return _cos


# -- acceptance summary ----------------------------------------------------

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line and asserts."""
    def _report(number: int, ok: bool, detail: str):
        _CRITERIA[number] = (bool(ok), detail)
        assert ok, f"criterion {number} failed: {detail}"
    return _report


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}")
