"""Intelligent Driver Model adapted to vehicles on fixed planar paths.

The follow vehicle is the closest other vehicle inside a narrow cone around
the ego heading. It is cast onto the ego path (closest-point projection ahead
of the ego vehicle) to get a gap along the path and a closing speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dynamics import VehicleParams, VehicleState
from .interaction_graph import in_cone
from .paths import PathPolynomial, eval_tangent, heading

@dataclass(frozen=True)
class IdmParams:
    v_target: float
    d_min: float = 2.0
    tau: float = 1.5
    a_max: float = 3.0
    b_pref: float = 2.0
    follow_half_angle: float = math.pi / 9.0
    b_emergency: float = 6.0
    search_window: float = 40.0
    sample_step: float = 0.5

    def __post_init__(self):
        vals = (self.v_target, self.d_min, self.tau, self.a_max, self.b_pref,
                self.follow_half_angle, self.b_emergency, self.search_window, self.sample_step)
        if any(x <= 0 for x in vals):
            raise ValueError("IDM parameters must be positive")


def select_follow(
    ego: VehicleState,
    ego_heading: float,
    others: Sequence[VehicleState],
    params: IdmParams,
):
    """Id of the closest vehicle within the follow cone, or None."""
    best, best_d = None, math.inf
    for o in others:
        if o.id == ego.id:
            continue
        if not in_cone(ego.position, ego_heading, o.position, math.inf, params.follow_half_angle):
            continue
        d = math.hypot(o.p_x - ego.p_x, o.p_y - ego.p_y)
        if d < best_d:
            best, best_d = o.id, d
    return best


def idm_accel(v: float, d: float | None, r: float, params: IdmParams) -> float:
    """IDM acceleration for speed ``v``, gap ``d`` and closing speed ``r``.

    ``d=None`` means free flow. ``r`` is positive when the ego vehicle is
    catching up. The result is clamped to ``[-b_emergency, a_max]``.
    """
    free = 1.0 - (v / params.v_target) ** 4
    if d is None:
        a = params.a_max * free
    elif d <= 0.0:
        return -params.b_emergency
    else:
        d_des = params.d_min + max(0.0, params.tau * v + v * r / (2.0 * math.sqrt(params.a_max * params.b_pref)))
        a = params.a_max * (free - (d_des / d) ** 2)
    return min(max(a, -params.b_emergency), params.a_max)


def project_onto_path(
    path: PathPolynomial, point, s_lo: float, s_hi: float, step: float = 0.5, tol: float = 1e-9
) -> tuple[float, float]:
    """Closest point of ``path`` on ``[s_lo, s_hi]`` to ``point``.

    Dense sampling brackets the minimum; safeguarded Newton iterations on the
    squared distance refine it inside the bracket. Returns ``(s, distance)``.
    """
    n = max(2, int(math.ceil((s_hi - s_lo) / step)) + 1)
    grid = np.linspace(s_lo, s_hi, n)
    pos, _, _ = path.evaluate_extended(grid)
    q = np.asarray(point, dtype=float)
    dist2 = np.sum((pos - q) ** 2, axis=1)
    k = int(np.argmin(dist2))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n - 1)]
    s = grid[k]
    for _ in range(30):
        p, d1, d2 = path.evaluate_extended(np.array([s]))
        e = p[0] - q
        g = float(e @ d1[0])
        h = float(d1[0] @ d1[0] + e @ d2[0])
        s_new = s - g / h if h > 0 else (a if g > 0 else b)
        if not a <= s_new <= b:
            s_new = 0.5 * (s + (a if g > 0 else b))
        if g > 0:
            b = s
        else:
            a = s
        done = abs(s_new - s) <= tol
        s = s_new
        if done:
            break
    p, _, _ = path.evaluate_extended(np.array([s]))
    d = float(np.linalg.norm(p[0] - q))
    if d * d > dist2[k]:  # never worse than the best sample
        s, d = float(grid[k]), math.sqrt(dist2[k])
    return float(s), d


def cast_to_path(
    ego: VehicleState,
    ego_path: PathPolynomial,
    follow: VehicleState,
    follow_velocity: tuple[float, float],
    params: IdmParams,
):
    """Gap along the ego path and closing speed to the follow vehicle.

    Returns ``(d, r)`` or None when the projection does not land ahead of the
    ego vehicle inside the search window.
    """
    s_lo = ego.s
    s_hi = min(ego.s + params.search_window, ego_path.s_max)
    if s_hi <= s_lo:
        return None
    s_proj, _ = project_onto_path(ego_path, follow.position, s_lo, s_hi, params.sample_step)
    d = s_proj - ego.s
    window_edge = s_hi < ego_path.s_max and s_hi - s_proj < 1e-6
    if d <= 1e-6 or window_edge:
        return None
    _, t, _ = ego_path.evaluate_extended(np.array([s_proj]))
    t = t[0] / np.linalg.norm(t[0])
    r = ego.v - float(follow_velocity[0] * t[0] + follow_velocity[1] * t[1])
    return d, r


def idm_step_controls(
    states: Sequence[VehicleState],
    params: Mapping[str, VehicleParams],
    idm: Mapping[str, IdmParams],
) -> dict:
    """IDM acceleration for every vehicle in the frame."""
    heads = {st.id: heading(params[st.id].path, st.s) for st in states}
    by_id = {st.id: st for st in states}
    out = {}
    for st in states:
        ip = idm[st.id]
        fid = select_follow(st, heads[st.id], states, ip)
        cast = None
        if fid is not None:
            f = by_id[fid]
            vel = eval_tangent(params[fid].path, f.s, f.v)
            cast = cast_to_path(st, params[st.id].path, f, vel, ip)
        if cast is None:
            out[st.id] = idm_accel(st.v, None, 0.0, ip)
        else:
            out[st.id] = idm_accel(st.v, cast[0], cast[1], ip)
    return out
