import numpy as np
import pytest

from dcnet import _pykernels, kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["compiled", "python"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "python":
        for name in ("im2col", "col2im", "band_sum", "maxpool_forward", "maxpool_backward"):
            monkeypatch.setattr(kernels, name, getattr(_pykernels, name))
    elif kernels.BACKEND != "cython":
        pytest.skip("compiled extension not built")
    return request.param


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number, text, ok):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
        print(line)
        _VERDICTS.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
