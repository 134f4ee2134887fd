"""Central finite-difference gradient checking for the autodiff kernel.

Used by the test suite and the `selftest` subcommand. The loss function is
re-evaluated eagerly (no graph recording) for each perturbed coordinate, so
the only requirement is that perturbing a parameter's data in place changes
the loss value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Graph, Tensor

__all__ = ["FD_STEP", "REL_ERR_FLOOR", "GradCheckReport", "check_gradients", "relative_error"]

FD_STEP = 1e-4

# Denominator floor: coordinates where both gradients are tiny compare by
# absolute difference instead of blowing up the ratio.
REL_ERR_FLOOR = 1e-3


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERR_FLOOR)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    worst_path: str
    worst_index: tuple[int, ...]
    checked_count: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    *,
    step: float = FD_STEP,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must build and return a scalar loss from the current data of
    ``params`` each time it is called; it is invoked once under a recording
    graph for the analytic pass, then twice per coordinate (graph-free) for
    the numeric pass. Every coordinate of every parameter is checked.
    """
    params = list(params)
    with Graph() as graph:
        loss = loss_fn()
    graph.backward(loss)
    analytic = {path: t.grad.copy() for path, t in params}

    worst = 0.0
    worst_path = ""
    worst_index: tuple[int, ...] = ()
    checked = 0
    for path, t in params:
        flat = t.data.reshape(-1)
        grads = analytic[path].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            up = float(loss_fn().data)
            flat[i] = saved - step
            down = float(loss_fn().data)
            flat[i] = saved
            numeric = (up - down) / (2.0 * step)
            err = relative_error(float(grads[i]), numeric)
            checked += 1
            if err > worst:
                worst = err
                worst_path = path
                worst_index = tuple(int(v) for v in np.unravel_index(i, t.data.shape))
    return GradCheckReport(
        max_rel_err=worst,
        worst_path=worst_path,
        worst_index=worst_index,
        checked_count=checked,
    )
