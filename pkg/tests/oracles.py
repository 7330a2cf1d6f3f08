"""Shared test-side oracles, kept independent of the library's own checkers."""

import numpy as np

from negmtl import autodiff as ad
from negmtl.autodiff import Tape, Tensor, backward, no_grad


def numeric_grad(scalar_fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar_fn w.r.t. every entry of x.

    Deliberately independent of autodiff.grad_check.
    """
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = scalar_fn()
        flat_x[i] = orig - h
        down = scalar_fn()
        flat_x[i] = orig
        flat_g[i] = (up - down) / (2 * h)
    return grad


def assert_op_grads(build, arrays: dict, h: float = 1e-6, tol: float = 1e-6):
    """AD-vs-FD comparison for one op composition over named leaf arrays."""
    tensors = {
        k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in arrays.items()
    }

    with Tape():
        loss = build(tensors)
    backward(loss)

    for name, t in tensors.items():
        def value():
            with no_grad():
                return float(build(tensors).data)

        fd = numeric_grad(value, t.data, h)
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        np.testing.assert_allclose(got, fd, rtol=tol, atol=tol, err_msg=f"grad mismatch for {name!r}")


def weighted_sum(t: Tensor, seed: int = 7) -> Tensor:
    """Collapse to a scalar with fixed, non-uniform weights so each output
    entry contributes a distinct gradient path."""
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=t.data.shape))
    return ad.sum_all(ad.mul(t, w))
