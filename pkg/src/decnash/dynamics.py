"""Longitudinal vehicle dynamics along a fixed path.

The decision state of a vehicle is ``(s, v)``: arc-progress and speed, with
acceleration ``u`` as the control (a double integrator). Planar position is
derived from the path polynomial.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .paths import PathPolynomial, eval_position


@dataclass(frozen=True)
class VehicleParams:
    id: str
    path: PathPolynomial
    v_target: float
    q: float = 1.0
    r: float = 1.0
    u_min: float = -5.0
    u_max: float = 3.0
    spawn_time: float = 0.0
    v0: float | None = None  # spawn speed, defaults to v_target

    def __post_init__(self):
        if not self.u_min < 0 < self.u_max:
            raise ValueError(f"{self.id}: need u_min < 0 < u_max, got [{self.u_min}, {self.u_max}]")
        if not (self.v_target > 0 and self.q > 0 and self.r > 0):
            raise ValueError(f"{self.id}: v_target, q and r must be positive")
        if self.v0 is not None and self.v0 < 0:
            raise ValueError(f"{self.id}: spawn speed must be non-negative")

    @property
    def spawn_speed(self) -> float:
        return self.v_target if self.v0 is None else self.v0


@dataclass(frozen=True)
class VehicleState:
    id: str
    s: float
    v: float
    p_x: float
    p_y: float
    complete: bool = False  # reached the end of its path

    @property
    def position(self) -> tuple[float, float]:
        return (self.p_x, self.p_y)

    @classmethod
    def on_path(cls, vid: str, path: PathPolynomial, s: float, v: float) -> "VehicleState":
        x, y = eval_position(path, s)
        return cls(vid, float(s), float(v), x, y)


def propagate(s, v, u, dt):
    """Exact double-integrator update with no clamping (arrays allowed)."""
    return s + v * dt + 0.5 * u * dt * dt, v + u * dt


def step(state: VehicleState, path: PathPolynomial, u: float, dt: float) -> VehicleState:
    """Advance one vehicle by ``dt`` under constant acceleration ``u``.

    Speed saturates at zero (the vehicle stops and stays stopped for the rest
    of the interval) and arc-progress saturates at the path end, which marks
    the vehicle complete.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    s, v = state.s, state.v
    v_new = v + u * dt
    if v_new < 0.0:
        t_stop = -v / u if u < 0 else 0.0
        s_new = s + v * t_stop + 0.5 * u * t_stop * t_stop
        v_new = 0.0
    else:
        s_new = s + v * dt + 0.5 * u * dt * dt
    s_new = max(s_new, s)
    complete = state.complete
    if s_new >= path.s_max:
        s_new = path.s_max
        complete = True
    x, y = eval_position(path, s_new)
    return replace(state, s=s_new, v=v_new, p_x=x, p_y=y, complete=complete)


def state_jacobians(s: float, v: float, path: PathPolynomial, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of the unclamped ``(s, v)`` update with respect to state and control."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    a = np.array([[1.0, dt], [0.0, 1.0]])
    b = np.array([[0.5 * dt * dt], [dt]])
    return a, b
