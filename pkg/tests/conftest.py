import numpy as np
import pytest

from fgnn import autodiff as ad


def fd_check(loss_fn, tensors, h=1e-5):
    """Max relative error between backprop and central differences over ``tensors``."""
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = ad.numerical_grad(lambda: loss_fn().item(), t, h)
        worst = max(worst, ad.relative_error(analytic, numeric))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape, low=-1.0, high=1.0):
    return ad.Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:<3} {status:<9} {detail}")
