"""Minimal SVG figures for a solved game (no plotting dependency)."""

from __future__ import annotations

from html import escape

import numpy as np

from .simulation import GameSnapshot

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
W, H, PAD = 640, 480, 50


class _Axes:
    def __init__(self, xlim, ylim, equal: bool = False):
        (x0, x1), (y0, y1) = xlim, ylim
        if x1 - x0 < 1e-9:
            x0, x1 = x0 - 1, x1 + 1
        if y1 - y0 < 1e-9:
            y0, y1 = y0 - 1, y1 + 1
        sx = (W - 2 * PAD) / (x1 - x0)
        sy = (H - 2 * PAD) / (y1 - y0)
        if equal:
            sx = sy = min(sx, sy)
        self.x0, self.y0, self.sx, self.sy = x0, y0, sx, sy
        self.xlim, self.ylim = (x0, x1), (y0, y1)

    def px(self, x, y):
        return PAD + (np.asarray(x) - self.x0) * self.sx, H - PAD - (np.asarray(y) - self.y0) * self.sy


def _polyline(ax: _Axes, x, y, color, width=2.0, dash=None, opacity=1.0) -> str:
    X, Y = ax.px(x, y)
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(X, Y))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"'
            f' stroke-opacity="{opacity}"{extra}/>')


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str, body: list[str], legend: list[tuple]) -> str:
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="#444"/>',
           f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="16">{escape(title)}</text>',
           f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>',
           f'<text x="15" y="{H / 2}" text-anchor="middle" font-size="13" '
           f'transform="rotate(-90 15 {H / 2})">{escape(ylabel)}</text>']
    for v, anchor in ((ax.xlim[0], "start"), (ax.xlim[1], "end")):
        X, _ = ax.px(v, ax.ylim[0])
        out.append(f'<text x="{X:.1f}" y="{H - PAD + 15}" text-anchor="{anchor}" font-size="11">{v:.1f}</text>')
    for v in ax.ylim:
        _, Y = ax.px(ax.xlim[0], v)
        out.append(f'<text x="{PAD - 4}" y="{Y:.1f}" text-anchor="end" font-size="11">{v:.1f}</text>')
    out.extend(body)
    for k, (label, color, dash) in enumerate(legend):
        y = PAD + 16 + 16 * k
        d = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{W - PAD - 120}" y1="{y}" x2="{W - PAD - 95}" y2="{y}" stroke="{color}" stroke-width="2"{d}/>')
        out.append(f'<text x="{W - PAD - 90}" y="{y + 4}" font-size="12">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def planned_trajectory_svg(snap: GameSnapshot, path_margin: float = 15.0) -> str:
    """Planned positions of every player, over a stretch of its path."""
    spec = snap.spec
    pos = snap.positions  # (N, T+1, 2)
    plan = snap.solution.plan
    body, legend = [], []
    lo = pos.reshape(-1, 2).min(axis=0) - path_margin
    hi = pos.reshape(-1, 2).max(axis=0) + path_margin
    ax = _Axes((lo[0], hi[0]), (lo[1], hi[1]), equal=True)
    for k, p in enumerate(spec.params):
        s = np.linspace(max(0.0, plan.s[k, 0] - path_margin), min(p.path.s_max, plan.s[k, -1] + path_margin), 200)
        xy, _, _ = p.path.evaluate_extended(s)
        body.append(_polyline(ax, xy[:, 0], xy[:, 1], "#bbbbbb", width=6, opacity=0.6))
    for k, vid in enumerate(spec.ids):
        color = PALETTE[k % len(PALETTE)]
        observed = k >= spec.n_controlled
        dash = "6,4" if observed else None
        body.append(_polyline(ax, pos[k, :, 0], pos[k, :, 1], color, dash=dash))
        X, Y = ax.px(pos[k, :, 0], pos[k, :, 1])
        body.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>' for a, b in zip(X, Y))
        body.append(f'<circle cx="{X[0]:.2f}" cy="{Y[0]:.2f}" r="5" fill="none" stroke="{color}" stroke-width="2"/>')
        legend.append((f"{vid}{' (observed)' if observed else ''}", color, dash))
    title = f"Planned trajectories, t = {snap.time:.1f} s ({spec.n_controlled} controlled, {spec.n_observed} observed)"
    return _frame(ax, title, "x [m]", "y [m]", body, legend)


def velocity_profile_svg(snap: GameSnapshot) -> str:
    spec = snap.spec
    v = snap.solution.plan.v
    t = snap.time + spec.dt * np.arange(spec.horizon_steps + 1)
    vt = [p.v_target for p in spec.params]
    ax = _Axes((t[0], t[-1]), (0.0, max(float(v.max()), max(vt)) * 1.1))
    body, legend = [], []
    for k, vid in enumerate(spec.ids):
        color = PALETTE[k % len(PALETTE)]
        dash = "6,4" if k >= spec.n_controlled else None
        body.append(_polyline(ax, t, v[k], color, dash=dash))
        body.append(_polyline(ax, t[[0, -1]], [vt[k], vt[k]], color, width=1, dash="2,3", opacity=0.5))
        legend.append((vid, color, dash))
    return _frame(ax, f"Planned velocity profiles, t = {snap.time:.1f} s", "time [s]", "v [m/s]", body, legend)
