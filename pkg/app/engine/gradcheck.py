# app/engine/gradcheck.py

from typing import Callable, Optional, Sequence

import numpy as np

from app.engine.random import Stream, make_rng
from app.engine.tensor import Tensor, no_grad


def grad_check(fn: Callable[..., Tensor],
               inputs: Sequence[Tensor],
               eps: float = 1e-5,
               max_coordinates: Optional[int] = None,
               seed: int = 0) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    `fn(*inputs)` must return a scalar. With `max_coordinates`, a seeded uniform
    subsample of all input coordinates is checked.
    """
    for tensor in inputs:
        tensor.grad = None
    fn(*inputs).backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    coordinates = [(i, j) for i, t in enumerate(inputs) for j in range(t.size)]
    if max_coordinates is not None and max_coordinates < len(coordinates):
        rng = make_rng(seed, Stream.GRAD_CHECK)
        picked = rng.choice(len(coordinates), size=max_coordinates, replace=False)
        coordinates = [coordinates[k] for k in sorted(picked)]

    worst = 0.0
    with no_grad():
        for i, j in coordinates:
            flat = inputs[i].data.reshape(-1)
            original = flat[j]
            flat[j] = original + eps
            upper = fn(*inputs).item()
            flat[j] = original - eps
            lower = fn(*inputs).item()
            flat[j] = original
            numeric = (upper - lower) / (2.0 * eps)
            exact = analytic[i].reshape(-1)[j]
            worst = max(worst, abs(exact - numeric) / max(1.0, abs(exact)))
    return worst
