"""Shared test utilities: finite-difference gradient oracle."""
import numpy as np


def numeric_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at ndarray x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        gf[i] = (up - down) / (2 * h)
    return g


def check_grads(build_loss, params, rtol=1e-4, h=1e-6):
    """Compare autodiff gradients of build_loss() against finite differences
    for every Tensor in params. build_loss must re-run the forward pass from
    the current parameter values each call.

    Returns the worst relative error seen."""
    loss = build_loss()
    for p in params:
        p.grad = None
    loss.backward()
    worst = 0.0
    for p in params:
        got = p.grad if p.grad is not None else np.zeros_like(p.values)

        def f(x, p=p):
            return float(build_loss().values)

        want = numeric_grad(f, p.values, h=h)
        scale = max(np.abs(want).max(), np.abs(got).max(), 1.0)
        err = np.abs(got - want).max() / scale
        worst = max(worst, err)
        assert err <= rtol, f"gradient mismatch {err:.3e} (shape {p.values.shape})"
    return worst
