"""Fixed-step explicit Euler integration on the autodiff tape."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .nn import ConstrainedMLP

DEFAULT_STEP = 0.1
# slack so that e.g. 0.3 / 0.1 = 2.9999999999999996 still counts as 3 steps
_STEP_SLACK = 1e-9


class DivergenceError(ArithmeticError):
    """The integrated state became non-finite."""

    def __init__(self, step_index: int, message: str = ""):
        self.step_index = step_index
        super().__init__(message or f"non-finite ODE state at Euler step {step_index}")


@dataclass
class IVPSpec:
    """Initial value problem y' = rhs(y, t), y(t0) = y0 on [t0, t1].

    ``t0`` and ``t1`` may be floats, or ``(batch, 1)`` columns (arrays or
    taped values) giving one interval per row of ``y0``.
    """

    rhs: Callable
    y0: DiffValue
    t0: object = 0.0
    t1: object = 1.0
    step: float = DEFAULT_STEP

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")


def num_steps(duration: float, step: float) -> int:
    if duration < 0:
        raise ValueError(f"interval end precedes start (duration {duration})")
    return max(0, math.ceil(duration / step - _STEP_SLACK))


def euler_solve(spec: IVPSpec, trajectory: bool = False):
    """Integrate ``spec`` with y_{k+1} = y_k + h_k * rhs(y_k, t_k).

    All steps have size ``spec.step`` except the last, which is shortened
    to land exactly on ``t1``. Returns ``(final_state, trajectory)`` where
    the trajectory is ``None`` unless requested.
    """
    y = DiffValue.lift(spec.y0)
    step = spec.step
    batched = not np.isscalar(spec.t0) or not np.isscalar(spec.t1)
    if batched:
        t0 = DiffValue.lift(spec.t0)
        duration = DiffValue.lift(spec.t1) - t0
        if np.any(duration.data < 0):
            raise ValueError("interval end precedes start in at least one row")
        n = num_steps(float(duration.data.max(initial=0.0)), step)
    else:
        t0 = float(spec.t0)
        duration = float(spec.t1) - t0
        n = num_steps(duration, step)

    path = [(t0, y)] if trajectory else None
    for k in range(n):
        offset = k * step
        if batched:
            dt = ad.clip(duration - offset, 0.0, step)
        else:
            dt = min(step, duration - offset)
        t_k = t0 + offset
        y = y + dt * spec.rhs(y, t_k)
        if not np.all(np.isfinite(y.data)):
            raise DivergenceError(k)
        if trajectory:
            path.append((t0 + min(offset + step, duration) if not batched else t_k + dt, y))
    return y, path


def ode_solve_segment(f_net: ConstrainedMLP, h_start, t_start, t_end, step: float = DEFAULT_STEP) -> DiffValue:
    """Approximate h(t_end) for h' = f_net([h, t]) with h(t_start) = h_start."""
    h_start = DiffValue.lift(h_start)
    rows = h_start.shape[0]

    def rhs(h, t):
        t = DiffValue.lift(t)
        if t.data.ndim < 2:
            t = DiffValue(np.full((rows, 1), float(t.data)))
        elif t.shape[0] != rows:
            t = DiffValue(np.broadcast_to(t.data, (rows, 1)))
        return f_net(ad.concat([h, t], axis=1))

    final, _ = euler_solve(IVPSpec(rhs, h_start, t_start, t_end, step))
    return final
