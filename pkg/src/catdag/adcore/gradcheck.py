from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: str
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def rel_error(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               tol: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Central finite differences against the backward pass.

    ``f`` must rebuild the graph from the current parameter values each
    call. With ``max_entries`` only a random subset of entries per tensor is
    probed.
    """
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [np.array(p.grad, dtype=np.float64) for p in params]

    worst, worst_name, n = 0.0, "", 0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            fd = (fp - fm) / (2 * eps)
            err = float(rel_error(ga.reshape(-1)[i], fd))
            n += 1
            if err > worst:
                worst, worst_name = err, f"{p.name or 'param'}[{int(i)}]"
    return GradCheckReport(worst, n, worst_name, tol)
