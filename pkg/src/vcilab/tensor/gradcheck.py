from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tape, Tensor


def gradcheck(loss_fn: Callable[[], Tensor], params: list[Tensor], step: float = 1e-5) -> float:
    """Worst relative error between taped and central-difference gradients.

    ``loss_fn`` must be deterministic and read the current values of
    ``params``. The error is computed per parameter tensor as
    ``|g_tape - g_fd| / max(|g_tape|, |g_fd|)`` (L2 norms) and the maximum
    over tensors is returned. Parameter values are restored afterwards.
    """
    with Tape() as tape:
        loss = loss_fn()
    analytic = tape.backward(loss, params)

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        numeric = np.zeros(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(loss_fn().data)
            flat[i] = orig - step
            f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[p.name].reshape(-1).astype(np.float64)
        diff = np.linalg.norm(a - numeric)
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric))
        if scale == 0.0:
            continue
        worst = max(worst, diff / scale)
    return worst
