"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

H = 1e-5


def numeric_grad(f, arr, h=H):
    """d f() / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_op(build_loss, tensors):
    """Max relative error over every tensor of ``build_loss()``'s gradient.

    ``build_loss`` builds a fresh graph from ``tensors`` and returns the
    scalar loss tensor.
    """
    for t in tensors:
        t.grad = None
    build_loss().backward()
    worst = 0.0
    for t in tensors:
        num = numeric_grad(lambda: float(build_loss().data), t.data)
        worst = max(worst, max_rel_error(t.grad, num))
    return worst
