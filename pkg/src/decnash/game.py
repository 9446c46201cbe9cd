"""One generalized Nash game per strongly connected component.

Decision variables are, for every controlled player, its accelerations
``u_0..u_{T-1}`` and its states ``s_1..s_T``, ``v_1..v_T`` (direct multiple
shooting), stacked player by player::

    z = [u^1, s^1, v^1, u^2, s^2, v^2, ...]      each block of length T

Observed players are not decision variables: their trajectories are the
rollout of the forecast controls, which is how the forecast equality
``u = u_hat`` is enforced.

Inequalities use the ``<= 0`` convention and are ordered as: for each
controlled player ``u - u_max``, ``u_min - u``, ``-v`` (T each), followed by
one collision block per vehicle pair (``r_safe**2 - dist**2``, T each).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .dynamics import VehicleParams, VehicleState, propagate
from .paths import clenshaw

DEFAULT_R_SAFE = 3.0
DEFAULT_HORIZON = 20
DEFAULT_PLAN_DT = 0.2


@dataclass(frozen=True)
class ObservedPlayer:
    state: VehicleState
    params: VehicleParams
    forecast: tuple  # predicted accelerations, length T


@dataclass(frozen=True, eq=False)
class GameSpec:
    controlled: tuple  # of (VehicleState, VehicleParams)
    observed: tuple = ()  # of ObservedPlayer
    horizon_steps: int = DEFAULT_HORIZON
    dt: float = DEFAULT_PLAN_DT
    r_safe: float = DEFAULT_R_SAFE

    def __post_init__(self):
        object.__setattr__(self, "controlled", tuple(tuple(c) for c in self.controlled))
        obs = tuple(o if isinstance(o, ObservedPlayer) else ObservedPlayer(*o) for o in self.observed)
        obs = tuple(ObservedPlayer(o.state, o.params, tuple(float(u) for u in o.forecast)) for o in obs)
        object.__setattr__(self, "observed", obs)
        if len(self.controlled) < 1:
            raise ValueError("a game needs at least one controlled player")
        if self.horizon_steps < 1 or self.dt <= 0 or self.r_safe <= 0:
            raise ValueError("need horizon_steps >= 1, dt > 0 and r_safe > 0")
        for o in self.observed:
            if len(o.forecast) != self.horizon_steps:
                raise ValueError(
                    f"forecast for {o.state.id} has length {len(o.forecast)}, expected {self.horizon_steps}"
                )
        ids = [st.id for st, _ in self.controlled] + [o.state.id for o in self.observed]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate player ids in game: {ids}")

    # -- sizes and bookkeeping -------------------------------------------------

    @property
    def n_controlled(self) -> int:
        return len(self.controlled)

    @property
    def n_observed(self) -> int:
        return len(self.observed)

    @property
    def n_players(self) -> int:
        return self.n_controlled + self.n_observed

    @property
    def ids(self) -> list:
        return [st.id for st, _ in self.controlled] + [o.state.id for o in self.observed]

    @property
    def params(self) -> list[VehicleParams]:
        return [p for _, p in self.controlled] + [o.params for o in self.observed]

    @property
    def n_vars(self) -> int:
        return 3 * self.horizon_steps * self.n_controlled

    @cached_property
    def pairs(self) -> np.ndarray:
        """Vehicle pairs ``(a, b)``, ``a < b``, with at least one controlled member."""
        nc, n = self.n_controlled, self.n_players
        out = [(a, b) for a in range(nc) for b in range(a + 1, n)]
        return np.array(out, dtype=int).reshape(-1, 2)

    @property
    def n_ineq(self) -> int:
        return self.horizon_steps * (3 * self.n_controlled + len(self.pairs))

    @cached_property
    def initial(self) -> tuple[np.ndarray, np.ndarray]:
        sts = [st for st, _ in self.controlled] + [o.state for o in self.observed]
        return np.array([st.s for st in sts]), np.array([st.v for st in sts])

    @cached_property
    def _weights(self):
        ps = [p for _, p in self.controlled]
        return (
            np.array([p.q for p in ps]),
            np.array([p.r for p in ps]),
            np.array([p.v_target for p in ps]),
            np.array([p.u_min for p in ps]),
            np.array([p.u_max for p in ps]),
        )

    @cached_property
    def geometry(self) -> "_PathBank":
        return _PathBank([p.path for p in self.params])

    @cached_property
    def observed_rollout(self) -> tuple[np.ndarray, np.ndarray]:
        """Forecast trajectories ``(s, v)`` of observed players, shape (No, T+1)."""
        T = self.horizon_steps
        s0, v0 = self.initial
        no, nc = self.n_observed, self.n_controlled
        s = np.zeros((no, T + 1))
        v = np.zeros((no, T + 1))
        s[:, 0], v[:, 0] = s0[nc:], v0[nc:]
        uh = np.array([o.forecast for o in self.observed]).reshape(no, T)
        for t in range(T):
            s[:, t + 1], v[:, t + 1] = propagate(s[:, t], v[:, t], uh[:, t], self.dt)
        return s, v

    @cached_property
    def observed_positions(self) -> np.ndarray:
        s, _ = self.observed_rollout
        nc = self.n_controlled
        pos, _, _ = self.geometry.evaluate(s[:, 1:], rows=np.arange(nc, self.n_players))
        return pos

    # -- packing ---------------------------------------------------------------

    def pack(self, plan: "JointPlan") -> np.ndarray:
        nc = self.n_controlled
        z = np.stack([plan.controls, plan.s[:nc, 1:], plan.v[:nc, 1:]], axis=1)
        return z.reshape(-1).copy()

    def unpack(self, z: np.ndarray) -> "JointPlan":
        T, nc = self.horizon_steps, self.n_controlled
        blocks = np.asarray(z, dtype=float).reshape(nc, 3, T)
        s0, v0 = self.initial
        so, vo = self.observed_rollout
        s = np.vstack([np.column_stack([s0[:nc], blocks[:, 1]]), so])
        v = np.vstack([np.column_stack([v0[:nc], blocks[:, 2]]), vo])
        return JointPlan(blocks[:, 0].copy(), s, v)

    def to_dict(self) -> dict:
        def veh(st, p):
            return {
                "id": st.id,
                "s": st.s,
                "v": st.v,
                "v_target": p.v_target,
                "q": p.q,
                "r": p.r,
                "u_min": p.u_min,
                "u_max": p.u_max,
                "path": p.path.to_dict(),
            }

        return {
            "horizon_steps": self.horizon_steps,
            "dt": self.dt,
            "r_safe": self.r_safe,
            "controlled": [veh(st, p) for st, p in self.controlled],
            "observed": [{**veh(o.state, o.params), "forecast": list(o.forecast)} for o in self.observed],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameSpec":
        from .paths import PathPolynomial

        def veh(e):
            path = PathPolynomial.from_dict(e["path"])
            p = VehicleParams(e["id"], path, e["v_target"], e["q"], e["r"], e["u_min"], e["u_max"])
            return VehicleState.on_path(e["id"], path, e["s"], e["v"]), p

        return cls(
            controlled=[veh(e) for e in d["controlled"]],
            observed=[ObservedPlayer(*veh(e), tuple(e["forecast"])) for e in d["observed"]],
            horizon_steps=d["horizon_steps"],
            dt=d["dt"],
            r_safe=d["r_safe"],
        )


@dataclass
class JointPlan:
    """Controls of the controlled players and trajectories of every player.

    ``s`` and ``v`` have shape ``(N, T+1)`` with controlled players first; column
    0 is the initial state.
    """

    controls: np.ndarray  # (Nc, T)
    s: np.ndarray
    v: np.ndarray

    def trajectories(self, spec: GameSpec) -> list[list[VehicleState]]:
        pos = positions(self, spec)
        return [
            [
                VehicleState(vid, float(self.s[k, t]), float(self.v[k, t]), *map(float, pos[k, t]))
                for t in range(self.s.shape[1])
            ]
            for k, vid in enumerate(spec.ids)
        ]

    def first_controls(self, spec: GameSpec) -> dict:
        return {vid: float(self.controls[k, 0]) for k, vid in enumerate(spec.ids[: spec.n_controlled])}


class _PathBank:
    """Vectorized evaluation of several paths at once (coefficients zero-padded)."""

    def __init__(self, paths):
        deg = max(p.degree for p in paths)
        # (derivative order, Chebyshev index, path, coordinate)
        self.cheb = np.zeros((3, deg + 1, len(paths), 2))
        for k, p in enumerate(paths):
            self.cheb[:, : p.degree + 1, k] = p._cheb
        self.scale = np.array([p.s_scale for p in paths])
        self.s_max = np.array([p.s_max for p in paths])
        self.start = np.array([p._ends[0][0] for p in paths])
        self.end = np.array([p._ends[0][1] for p in paths])
        self.t_start = np.array([p._ends[1][0] for p in paths])
        self.t_end = np.array([p._ends[1][1] for p in paths])

    def evaluate(self, s: np.ndarray, rows=None):
        """Extended position and derivatives for ``s`` of shape (len(rows), T)."""
        if rows is None:
            rows = np.arange(len(self.scale))
        s = np.asarray(s, dtype=float)
        smax = self.s_max[rows][:, None]
        scale = self.scale[rows][:, None]
        x = (2.0 * np.clip(s, 0.0, smax) / scale - 1.0)[..., None]
        c = self.cheb[:, :, rows][:, :, :, None, :]  # broadcast over time
        k = (2.0 / scale)[..., None]
        pos = clenshaw(c[0], x)
        d1 = clenshaw(c[1], x) * k
        d2 = clenshaw(c[2], x) * k**2
        hi = s > smax
        lo = s < 0.0
        if hi.any():
            r, t = np.nonzero(hi)
            pr = rows[r]
            pos[r, t] = self.end[pr] + (s[r, t] - self.s_max[pr])[:, None] * self.t_end[pr]
            d1[r, t] = self.t_end[pr]
            d2[r, t] = 0.0
        if lo.any():
            r, t = np.nonzero(lo)
            pr = rows[r]
            pos[r, t] = self.start[pr] + s[r, t][:, None] * self.t_start[pr]
            d1[r, t] = self.t_start[pr]
            d2[r, t] = 0.0
        return pos, d1, d2


# -- construction ----------------------------------------------------------------


def build_game(
    scc: Sequence[Hashable],
    outgoing: Sequence[Hashable],
    states: Mapping[Hashable, VehicleState],
    params: Mapping[Hashable, VehicleParams],
    horizon_steps: int = DEFAULT_HORIZON,
    dt: float = DEFAULT_PLAN_DT,
    r_safe: float = DEFAULT_R_SAFE,
) -> GameSpec:
    """Game for one component; observed vehicles are forecast at constant velocity."""
    scc = sorted(scc, key=repr)
    outgoing = sorted(outgoing, key=repr)
    if not scc:
        raise ValueError("empty component")
    if set(scc) & set(outgoing):
        raise ValueError("component and outgoing set overlap")
    zero = (0.0,) * horizon_steps
    return GameSpec(
        controlled=[(states[i], params[i]) for i in scc],
        observed=[ObservedPlayer(states[j], params[j], zero) for j in outgoing],
        horizon_steps=horizon_steps,
        dt=dt,
        r_safe=r_safe,
    )


def rollout(spec: GameSpec, controls) -> JointPlan:
    """Exact (unclamped) rollout of controlled players' controls plus forecasts."""
    T, nc = spec.horizon_steps, spec.n_controlled
    u = np.asarray(controls, dtype=float).reshape(nc, T)
    s0, v0 = spec.initial
    s = np.zeros((nc, T + 1))
    v = np.zeros((nc, T + 1))
    s[:, 0], v[:, 0] = s0[:nc], v0[:nc]
    for t in range(T):
        s[:, t + 1], v[:, t + 1] = propagate(s[:, t], v[:, t], u[:, t], spec.dt)
    so, vo = spec.observed_rollout
    return JointPlan(u.copy(), np.vstack([s, so]), np.vstack([v, vo]))


def cold_start(spec: GameSpec) -> JointPlan:
    return rollout(spec, np.zeros((spec.n_controlled, spec.horizon_steps)))


def positions(plan: JointPlan, spec: GameSpec) -> np.ndarray:
    pos, _, _ = spec.geometry.evaluate(plan.s)
    return pos


# -- objective -------------------------------------------------------------------


def objective(plan: JointPlan, spec: GameSpec, player: int) -> float:
    """Cost of controlled player ``player`` summed over the horizon."""
    p = spec.controlled[player][1]
    dv = plan.v[player, 1:] - p.v_target
    u = plan.controls[player]
    return float(p.q * np.dot(dv, dv) + p.r * np.dot(u, u))


def objective_gradient(spec: GameSpec, z: np.ndarray, player: int) -> np.ndarray:
    """Gradient of player ``player``'s cost with respect to the full decision vector."""
    T = spec.horizon_steps
    q, r, vt, _, _ = spec._weights
    blocks = np.asarray(z).reshape(-1, 3, T)
    g = np.zeros_like(blocks)
    g[player, 0] = 2.0 * r[player] * blocks[player, 0]
    g[player, 2] = 2.0 * q[player] * (blocks[player, 2] - vt[player])
    return g.reshape(-1)


# -- constraints -----------------------------------------------------------------


@dataclass
class ConstraintEval:
    """Everything the solver needs about the constraints at one point."""

    eq: np.ndarray  # dynamics defects, (2T*Nc,)
    ineq: np.ndarray  # (n_ineq,)
    # collision derivative data, one entry per (pair, t)
    col_rows: np.ndarray = field(repr=False)
    col_ia: np.ndarray = field(repr=False)  # variable index of s_a
    col_ib: np.ndarray = field(repr=False)  # variable index of s_b, -1 if observed
    grad_a: np.ndarray = field(repr=False)
    grad_b: np.ndarray = field(repr=False)
    hess_aa: np.ndarray = field(repr=False)
    hess_bb: np.ndarray = field(repr=False)
    hess_ab: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class _Structure:
    E: sp.csr_matrix  # dynamics Jacobian
    e0: np.ndarray
    G_lin: sp.csr_matrix  # Jacobian of the linear inequalities
    h_lin: np.ndarray  # constant part: ineq_lin = G_lin z + h_lin


def structure(spec: GameSpec) -> _Structure:
    cached = spec.__dict__.get("_structure")
    if cached is not None:
        return cached
    T, nc, dt = spec.horizon_steps, spec.n_controlled, spec.dt
    s0, v0 = spec.initial
    # single-player dynamics block: rows [Ds_1..Ds_T, Dv_1..Dv_T], cols [u, s, v]
    rows, cols, vals = [], [], []
    for t in range(T):
        # Ds_t = s_t - s_{t-1} - dt v_{t-1} - dt^2/2 u_{t-1}
        rows += [t, t]
        cols += [T + t, t]
        vals += [1.0, -0.5 * dt * dt]
        # Dv_t = v_t - v_{t-1} - dt u_{t-1}
        rows += [T + t, T + t]
        cols += [2 * T + t, t]
        vals += [1.0, -dt]
        if t > 0:
            rows += [t, t, T + t]
            cols += [T + t - 1, 2 * T + t - 1, 2 * T + t - 1]
            vals += [-1.0, -dt, -1.0]
    block = sp.csr_matrix((vals, (rows, cols)), shape=(2 * T, 3 * T))
    E = sp.block_diag([block] * nc, format="csr")
    e0 = np.zeros((nc, 2, T))
    e0[:, 0, 0] = s0[:nc] + dt * v0[:nc]
    e0[:, 1, 0] = v0[:nc]

    eye = sp.identity(T, format="csr")
    zero = sp.csr_matrix((T, T))
    lin_block = sp.bmat([[eye, zero, zero], [-eye, zero, zero], [zero, zero, -eye]], format="csr")
    G_lin = sp.block_diag([lin_block] * nc, format="csr")
    _, _, _, umin, umax = spec._weights
    h = np.zeros((nc, 3, T))
    h[:, 0] = -umax[:, None]
    h[:, 1] = umin[:, None]
    out = _Structure(E, e0.reshape(-1), G_lin, h.reshape(-1))
    spec.__dict__["_structure"] = out
    return out


def evaluate_constraints(spec: GameSpec, z: np.ndarray) -> ConstraintEval:
    T, nc = spec.horizon_steps, spec.n_controlled
    st = structure(spec)
    z = np.asarray(z, dtype=float)
    eq = st.E @ z - st.e0
    lin = st.G_lin @ z + st.h_lin

    pairs = spec.pairs
    blocks = z.reshape(nc, 3, T)
    pos_c, d1_c, d2_c = spec.geometry.evaluate(blocks[:, 1], rows=np.arange(nc))
    if spec.n_observed:
        pos = np.concatenate([pos_c, spec.observed_positions])
        d1 = np.concatenate([d1_c, np.zeros_like(spec.observed_positions)])
        d2 = np.concatenate([d2_c, np.zeros_like(spec.observed_positions)])
    else:
        pos, d1, d2 = pos_c, d1_c, d2_c
    if len(pairs):
        a, b = pairs[:, 0], pairs[:, 1]
        delta = pos[a] - pos[b]  # (P, T, 2)
        col = spec.r_safe**2 - np.einsum("ptk,ptk->pt", delta, delta)
        ga = -2.0 * np.einsum("ptk,ptk->pt", delta, d1[a])
        gb = 2.0 * np.einsum("ptk,ptk->pt", delta, d1[b])
        haa = -2.0 * (np.einsum("ptk,ptk->pt", d1[a], d1[a]) + np.einsum("ptk,ptk->pt", delta, d2[a]))
        hbb = -2.0 * (np.einsum("ptk,ptk->pt", d1[b], d1[b]) - np.einsum("ptk,ptk->pt", delta, d2[b]))
        hab = 2.0 * np.einsum("ptk,ptk->pt", d1[a], d1[b])
        tt = np.arange(T)
        ia = (a[:, None] * 3 * T + T + tt[None, :]).reshape(-1)
        ib = np.where(b[:, None] < nc, b[:, None] * 3 * T + T + tt[None, :], -1).reshape(-1)
        col_rows = len(lin) + np.arange(col.size)
        ineq = np.concatenate([lin, col.reshape(-1)])
        return ConstraintEval(
            eq, ineq, col_rows, ia, ib,
            ga.reshape(-1), gb.reshape(-1), haa.reshape(-1), hbb.reshape(-1), hab.reshape(-1),
        )
    empty_i = np.zeros(0, dtype=int)
    empty = np.zeros(0)
    return ConstraintEval(eq, lin, empty_i, empty_i, empty_i, empty, empty, empty, empty, empty)


def inequality_jacobian(spec: GameSpec, ce: ConstraintEval) -> sp.csr_matrix:
    st = structure(spec)
    n = spec.n_vars
    m_col = len(ce.col_rows)
    if not m_col:
        return st.G_lin.tocsr()
    own = ce.col_ib >= 0
    rows = np.concatenate([np.arange(m_col), np.arange(m_col)[own]])
    cols = np.concatenate([ce.col_ia, ce.col_ib[own]])
    vals = np.concatenate([ce.grad_a, ce.grad_b[own]])
    G_col = sp.csr_matrix((vals, (rows, cols)), shape=(m_col, n))
    return sp.vstack([st.G_lin, G_col], format="csr")


def constraint_jacobians(spec: GameSpec, z: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Jacobians of the equality (dynamics) and inequality residuals in ``z``."""
    ce = evaluate_constraints(spec, z)
    return structure(spec).E, inequality_jacobian(spec, ce)


def constraint_residuals(plan: JointPlan, spec: GameSpec) -> tuple[np.ndarray, np.ndarray]:
    """Equality and inequality residuals of a plan.

    Equalities are the dynamics defects of every player; for observed players
    they are measured against the forecast controls, so a zero defect means
    the forecast is respected.
    """
    ce = evaluate_constraints(spec, spec.pack(plan))
    so, vo = spec.observed_rollout
    nc = spec.n_controlled
    if spec.n_observed:
        uh = np.array([o.forecast for o in spec.observed])
        s, v = plan.s[nc:], plan.v[nc:]
        ds = s[:, 1:] - s[:, :-1] - spec.dt * v[:, :-1] - 0.5 * spec.dt**2 * uh
        dv = v[:, 1:] - v[:, :-1] - spec.dt * uh
        obs_eq = np.stack([ds, dv], axis=1).reshape(-1)
        # the position expansion of observed players comes from the plan
        ce = _with_observed(spec, plan, ce)
        return np.concatenate([ce.eq, obs_eq]), ce.ineq
    return ce.eq, ce.ineq


def _with_observed(spec: GameSpec, plan: JointPlan, ce: ConstraintEval) -> ConstraintEval:
    so, _ = spec.observed_rollout
    nc = spec.n_controlled
    if np.array_equal(plan.s[nc:], so):
        return ce
    pos = positions(plan, spec)[:, 1:]
    a, b = spec.pairs[:, 0], spec.pairs[:, 1]
    delta = pos[a] - pos[b]
    col = spec.r_safe**2 - np.einsum("ptk,ptk->pt", delta, delta)
    ineq = ce.ineq.copy()
    ineq[ce.col_rows] = col.reshape(-1)
    ce.ineq = ineq
    return ce


def collision_block(spec: GameSpec, ineq: np.ndarray) -> np.ndarray:
    """Collision part of an inequality vector, shape (n_pairs, T)."""
    T = spec.horizon_steps
    return ineq[3 * T * spec.n_controlled :].reshape(-1, T)
