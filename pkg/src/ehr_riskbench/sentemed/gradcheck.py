"""Central-difference verification of the hand-written backward pass."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .autodiff import Tensor, backward, zero_grads


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_entries_per_param: int | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild the scalar loss from ``params`` on every call
    (values are perturbed in place between calls). Returns the maximum
    relative error over all checked entries; entries where both gradients are
    tiny are compared on absolute error.
    """
    tensors = [params[name] for name in sorted(params)]
    zero_grads(tensors)
    loss = loss_fn()
    backward(loss)
    analytic = {name: (None if params[name].grad is None else params[name].grad.copy())
                for name in sorted(params)}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(params):
        tensor = params[name]
        grad = analytic[name]
        if grad is None:
            grad = np.zeros_like(tensor.value)
        flat = tensor.value.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            indices = rng.choice(flat.size, size=max_entries_per_param, replace=False)
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + eps
            up = float(loss_fn().value)
            flat[idx] = original - eps
            down = float(loss_fn().value)
            flat[idx] = original
            numeric = (up - down) / (2.0 * eps)
            an = float(grad.reshape(-1)[idx])
            scale = max(abs(numeric), abs(an))
            if scale < 1e-7:
                err = abs(numeric - an)
            else:
                err = abs(numeric - an) / scale
            worst = max(worst, err)
    return worst
