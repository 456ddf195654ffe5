import numpy as np
import pytest

from pnstrace import autodiff as ad
from pnstrace.nn import ParamStore


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def leaf(a):
    return ad.Tensor(np.array(a, dtype=np.float64), requires_grad=True)


def smooth_inputs(make, check_margin=1e-4, attempts=50):
    """Redraw inputs from ``make()`` until no piecewise op sits within ``check_margin`` of its kink.

    ``make`` returns ``(fn, tensors)``; finite differences are only valid
    where the function is differentiable.
    """
    for _ in range(attempts):
        fn, tensors = make()
        with ad.track_kinks() as margins:
            fn()
        if not margins or min(margins) > check_margin:
            return fn, tensors
    raise RuntimeError("could not draw inputs away from kinks")


@pytest.fixture
def store():
    return ParamStore()


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
