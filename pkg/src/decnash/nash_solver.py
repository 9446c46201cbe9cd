"""Augmented-Lagrangian Newton solver for open-loop generalized Nash equilibria.

Each controlled player ``i`` minimizes its own cost over its own decision
variables ``z_i`` subject to its dynamics and to the shared inequality
constraints. With shared inequality multipliers ``lam`` and a penalty ``rho``
the per-player stationarity conditions read::

    grad_{z_i} J_i + E_i^T mu_i + grad_{z_i} c(z)^T max(0, lam + rho c(z)) = 0
    E_i z_i - e_i = 0

Stacked over players this is one square system in ``(z, mu)``. The dynamics
are linear and determine the states from the controls, so Newton steps are
taken on the null space of the dynamics Jacobian (controls only), where the
stacked residual reduces to the gradient of the potential::

    phi(u) = sum_i J_i + sum_k (max(0, lam_k + rho c_k)^2 - lam_k^2) / (2 rho)

This holds because every player's cost depends only on its own variables
and the multipliers are shared. The line search uses ``phi`` and the
Newton matrix is made positive definite when collision curvature makes it
indefinite; a residual-norm merit cannot tell a minimum from the saddle at
coincident vehicle positions. An outer loop updates ``lam`` and ``rho``.

Control bounds are simple boxes on ``u`` and are kept out of the penalty:
the inner problem is solved by projected Newton on the box, and their
multipliers are read off the reduced gradient afterwards. Penalizing them
instead converges only linearly through the multiplier updates whenever a
bound stays active over much of the horizon.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .game import (
    GameSpec,
    JointPlan,
    cold_start,
    evaluate_constraints,
    inequality_jacobian,
    objective,
    rollout,
    structure,
)


class SpecError(ValueError):
    """Warm start or game dimensions are inconsistent."""


@dataclass(frozen=True)
class SolverConfig:
    tol_stationarity: float = 1e-6
    tol_constraint: float = 1e-6
    max_outer: int = 10
    max_inner: int = 50
    rho_init: float = 1.0
    rho_scale: float = 10.0
    ls_shrink: float = 0.5
    ls_min_step: float = 1e-8
    ls_armijo: float = 1e-4
    reg_init: float = 1e-6
    reg_max: float = 1e-2
    max_players: int | None = None  # refuse larger games (reported as failures)
    record_trace: bool = False

    def __post_init__(self):
        positive = [
            self.tol_stationarity, self.tol_constraint, self.max_outer, self.max_inner,
            self.rho_init, self.ls_min_step, self.reg_init, self.reg_max,
        ]
        if any(x <= 0 for x in positive):
            raise ValueError("solver settings must be positive")
        if self.rho_scale <= 1:
            raise ValueError(f"rho_scale must exceed 1, got {self.rho_scale}")
        if not 0 < self.ls_shrink < 1:
            raise ValueError(f"ls_shrink must lie in (0, 1), got {self.ls_shrink}")


@dataclass
class NashSolution:
    plan: JointPlan
    converged: bool
    stationarity_norm: float
    max_violation: float
    outer_iters: int
    inner_iters: int
    wall_time: float
    multipliers: np.ndarray = field(repr=False, default=None)
    complementarity: float = 0.0
    violation_history: list = field(default_factory=list, repr=False)
    trace: list = field(default_factory=list, repr=False)


# -- stacked residual ------------------------------------------------------------


def _objective_terms(spec: GameSpec):
    q, r, vt, _, _ = spec._weights
    T = spec.horizon_steps
    hdiag = np.zeros((spec.n_controlled, 3, T))
    hdiag[:, 0] = 2.0 * r[:, None]
    hdiag[:, 2] = 2.0 * q[:, None]
    return q[:, None], r[:, None], vt[:, None], hdiag.reshape(-1)


def _objective_grad(spec: GameSpec, z: np.ndarray) -> np.ndarray:
    q, r, vt, _ = _objective_terms(spec)
    b = z.reshape(-1, 3, spec.horizon_steps)
    g = np.zeros_like(b)
    g[:, 0] = 2.0 * r * b[:, 0]
    g[:, 2] = 2.0 * q * (b[:, 2] - vt)
    return g.reshape(-1)


def stacked_residual(spec: GameSpec, z: np.ndarray, mu: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Per-player stationarity rows followed by the dynamics defects.

    ``weight`` are the inequality multipliers (``max(0, lam + rho c)`` inside
    an augmented-Lagrangian iteration).
    """
    ce = evaluate_constraints(spec, z)
    G = inequality_jacobian(spec, ce)
    grad = _objective_grad(spec, z) + structure(spec).E.T @ mu + G.T @ weight
    return np.concatenate([grad, ce.eq])


def _penalty_hessian(spec: GameSpec, ce, weight: np.ndarray, G, rho: float, reg: float = 0.0):
    n = spec.n_vars
    _, _, _, h_obj = _objective_terms(spec)
    active = np.flatnonzero(weight > 0.0)
    Ga = G[active]
    H = sp.diags(h_obj + reg) + rho * (Ga.T @ Ga)
    # curvature of active collision constraints (2x2 blocks in the s variables)
    w_col = weight[ce.col_rows]
    on = w_col > 0.0
    if on.any():
        ia, ib = ce.col_ia[on], ce.col_ib[on]
        wc = w_col[on]
        own = ib >= 0
        hab = (wc * ce.hess_ab[on])[own]
        rows = np.concatenate([ia, ib[own], ia[own], ib[own]])
        cols = np.concatenate([ia, ib[own], ib[own], ia[own]])
        vals = np.concatenate([wc * ce.hess_aa[on], (wc * ce.hess_bb[on])[own], hab, hab])
        H = H + sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return H


def stationarity_residual(spec: GameSpec, z, mu, lam, rho: float) -> np.ndarray:
    """Stacked residual of the augmented-Lagrangian subproblem at ``(z, mu)``."""
    z = np.asarray(z, float)
    ce = evaluate_constraints(spec, z)
    weight = np.maximum(0.0, np.asarray(lam, float) + rho * ce.ineq)
    return stacked_residual(spec, z, np.asarray(mu, float), weight)


def stationarity_jacobian(spec: GameSpec, z, mu, lam, rho: float) -> np.ndarray:
    """Exact Jacobian of :func:`stationarity_residual` (dense, for checking)."""
    z = np.asarray(z, float)
    ce = evaluate_constraints(spec, z)
    weight = np.maximum(0.0, np.asarray(lam, float) + rho * ce.ineq)
    G = inequality_jacobian(spec, ce)
    H = _penalty_hessian(spec, ce, weight, G, rho)
    E = structure(spec).E
    return sp.bmat([[H, E.T], [E, None]]).toarray()


def dynamics_multipliers(spec: GameSpec, z: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Dynamics multipliers that zero the state rows of the stacked residual."""
    T, nc = spec.horizon_steps, spec.n_controlled
    ce = evaluate_constraints(spec, z)
    G = inequality_jacobian(spec, ce)
    gz = _objective_grad(spec, z) + G.T @ weight
    state_cols = np.flatnonzero(np.tile(np.r_[np.zeros(T, bool), np.ones(2 * T, bool)], nc))
    Ex = structure(spec).E[:, state_cols]
    return spla.spsolve(Ex.T.tocsc(), -gz[state_cols])


# -- reduced (control-space) Newton ---------------------------------------------------


class _Reduced:
    """Potential ``phi`` with its gradient and Hessian in the controls."""

    def __init__(self, spec: GameSpec, lam: np.ndarray, rho: float):
        T, nc, dt = spec.horizon_steps, spec.n_controlled, spec.dt
        self.spec, self.T, self.nc = spec, T, nc
        self.box = box_rows(spec)
        self.lam = np.where(self.box, 0.0, lam)  # control bounds are not penalized
        self.rho = rho
        _, _, _, umin, umax = spec._weights
        self.lo = np.repeat(umin[:nc], T)
        self.hi = np.repeat(umax[:nc], T)
        self.q, self.r, self.vt, _ = _objective_terms(spec)
        t = np.arange(1, T + 1)[:, None]
        k = np.arange(T)[None, :]
        self.Ls = np.where(k < t, dt * dt * (t - k - 0.5), 0.0)
        self.Lv = np.where(k < t, dt, 0.0)
        s0, v0 = spec.initial
        self.S0 = s0[:nc, None] + dt * t.T * v0[:nc, None]
        self.V0 = np.repeat(v0[:nc, None], T, axis=1)
        block = np.vstack([np.eye(T), self.Ls, self.Lv])  # (3T, T)
        self.Z = np.kron(np.eye(nc), block)

    def lift(self, u: np.ndarray) -> np.ndarray:
        u = u.reshape(self.nc, self.T)
        s = self.S0 + u @ self.Ls.T
        v = self.V0 + u @ self.Lv.T
        return np.stack([u, s, v], axis=1).reshape(-1)

    def evaluate(self, u: np.ndarray, hessian: bool = True):
        z = self.lift(u)
        ce = evaluate_constraints(self.spec, z)
        weight = np.maximum(0.0, self.lam + self.rho * ce.ineq)
        weight[self.box] = 0.0
        b = z.reshape(self.nc, 3, self.T)
        dv = b[:, 2] - self.vt
        phi = float(np.sum(self.q * dv * dv) + np.sum(self.r * b[:, 0] ** 2))
        phi += float(np.sum(weight**2 - self.lam**2) / (2.0 * self.rho))
        G = inequality_jacobian(self.spec, ce)
        g = self.Z.T @ (_objective_grad(self.spec, z) + G.T @ weight)
        if not hessian:
            return phi, g, ce, weight, None
        H = _penalty_hessian(self.spec, ce, weight, G, self.rho)
        R = self.Z.T @ (H @ self.Z)
        return phi, g, ce, weight, 0.5 * (R + R.T)


def box_rows(spec: GameSpec) -> np.ndarray:
    """Mask of the control-bound rows (upper then lower, per player) of the inequalities."""
    T = spec.horizon_steps
    mask = np.zeros(spec.n_ineq, dtype=bool)
    per = np.r_[np.ones(2 * T, bool), np.zeros(T, bool)]
    mask[: 3 * T * spec.n_controlled] = np.tile(per, spec.n_controlled)
    return mask


def _projected_gradient(u, g, lo, hi) -> float:
    return float(np.linalg.norm(u - np.clip(u - g, lo, hi)))


def _projected_direction(u, g, R, lo, hi, pg: float, config: SolverConfig):
    """Projected Newton direction: Newton on the free controls, scaled
    gradient on controls held at a bound the gradient pushes against."""
    eps = min(1e-3, pg)
    fixed = ((u <= lo + eps) & (g > 0)) | ((u >= hi - eps) & (g < 0))
    d = np.zeros_like(u)
    reg = 0.0
    free = ~fixed
    if free.any():
        d[free], reg = _descent_direction(R[np.ix_(free, free)], g[free], config)
    if fixed.any():
        d[fixed] = -g[fixed] / np.maximum(np.diag(R)[fixed], 1e-8)
    return d, reg


def _bound_multipliers(red: "_Reduced", u, g, lam: np.ndarray) -> np.ndarray:
    """Multipliers of the control bounds from the reduced gradient."""
    T, nc = red.T, red.nc
    tol = 1e-12 * np.maximum(1.0, np.abs(red.hi))
    up = np.where(u >= red.hi - tol, np.maximum(0.0, -g), 0.0).reshape(nc, T)
    tol = 1e-12 * np.maximum(1.0, np.abs(red.lo))
    dn = np.where(u <= red.lo + tol, np.maximum(0.0, g), 0.0).reshape(nc, T)
    out = lam.copy()
    blocks = out[: 3 * T * nc].reshape(nc, 3, T)
    blocks[:, 0] = up
    blocks[:, 1] = dn
    return out


def _descent_direction(R: np.ndarray, g: np.ndarray, config: SolverConfig):
    """Newton direction on a positive-definite modification of ``R``.

    Cholesky first, with Levenberg regularization for near-singular matrices.
    If the matrix is indefinite, fall back to an eigenvalue-modified Newton
    step, or follow the most negative curvature direction when the gradient
    has (nearly) vanished.
    """
    n = len(g)
    reg = 0.0
    scale = max(1.0, float(np.abs(np.diag(R)).max(initial=0.0)))
    eye = np.eye(n)
    while reg <= config.reg_max * scale:
        try:
            c = np.linalg.cholesky(R + reg * eye)
            return -_cho_solve(c, g), reg
        except np.linalg.LinAlgError:
            reg = config.reg_init * scale if reg == 0.0 else reg * 10.0
    lam, vec = np.linalg.eigh(R)
    mod = np.maximum(np.abs(lam), config.reg_max * scale)
    d = -vec @ ((vec.T @ g) / mod)
    if lam[0] < 0 and float(np.linalg.norm(g)) < 10 * config.tol_stationarity:
        v = vec[:, 0]
        d = v if float(v @ g) <= 0 else -v
    return d, -1.0


def _cho_solve(c: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = scipy.linalg.solve_triangular(c, b, lower=True)
    return scipy.linalg.solve_triangular(c.T, y, lower=False)


# -- driver --------------------------------------------------------------------------


def _initial_plan(spec: GameSpec, warm_start) -> JointPlan:
    shape = (spec.n_controlled, spec.horizon_steps)
    if warm_start is None:
        return cold_start(spec)
    controls = warm_start.controls if isinstance(warm_start, JointPlan) else warm_start
    controls = np.asarray(controls, dtype=float)
    if controls.shape != shape:
        raise SpecError(f"warm start has shape {controls.shape}, expected {shape}")
    return rollout(spec, controls)


def solve(
    spec: GameSpec,
    config: SolverConfig = SolverConfig(),
    warm_start=None,
    warm_multipliers: np.ndarray | None = None,
) -> NashSolution:
    """Local open-loop generalized Nash equilibrium of ``spec``.

    ``warm_start`` may be a ``JointPlan`` or a ``(Nc, T)`` control array; its
    trajectories are re-rolled from the game's initial state. Never raises on
    non-convergence: the best iterate is returned with ``converged=False``.
    """
    t_start = time.perf_counter()
    plan0 = _initial_plan(spec, warm_start)
    m = spec.n_ineq
    if warm_multipliers is not None:
        lam = np.asarray(warm_multipliers, dtype=float).copy()
        if lam.shape != (m,):
            raise SpecError(f"warm multipliers have shape {lam.shape}, expected {(m,)}")
    else:
        lam = np.zeros(m)

    if config.max_players is not None and spec.n_controlled > config.max_players:
        ce = evaluate_constraints(spec, spec.pack(plan0))
        viol = max(0.0, float(ce.ineq.max(initial=0.0)))
        return NashSolution(plan0, False, np.inf, viol, 0, 0, time.perf_counter() - t_start, lam)

    u = plan0.controls.reshape(-1).copy()
    rho = config.rho_init
    trace = []
    history = []
    best = None
    inner_total = 0
    prev_viol = np.inf
    converged = False
    outer = 0

    for outer in range(1, config.max_outer + 1):
        red = _Reduced(spec, lam, rho)
        u = np.clip(u, red.lo, red.hi)
        phi, g, ce, weight, R = red.evaluate(u)
        gnorm = _projected_gradient(u, g, red.lo, red.hi)
        for inner in range(config.max_inner):
            if gnorm <= config.tol_stationarity:
                break
            d, reg = _projected_direction(u, g, R, red.lo, red.hi, gnorm, config)
            inner_total += 1
            alpha = 1.0
            accepted = False
            while alpha >= config.ls_min_step:
                u_try = np.clip(u + alpha * d, red.lo, red.hi)
                phi_try = red.evaluate(u_try, hessian=False)[0]
                if phi_try <= phi + config.ls_armijo * float(g @ (u_try - u)) and phi_try < phi:
                    accepted = True
                    break
                alpha *= config.ls_shrink
            if not accepted:
                if config.record_trace:
                    trace.append({"outer": outer, "inner": inner + 1, "residual": gnorm,
                                  "violation": max(0.0, float(ce.ineq.max(initial=0.0))),
                                  "step": 0.0, "reg": reg})
                break
            u = u_try
            phi, g, ce, weight, R = red.evaluate(u)
            gnorm = _projected_gradient(u, g, red.lo, red.hi)
            if config.record_trace:
                trace.append({"outer": outer, "inner": inner + 1, "residual": gnorm,
                              "violation": max(0.0, float(ce.ineq.max(initial=0.0))),
                              "step": alpha, "reg": reg})

        viol = max(0.0, float(ce.ineq.max(initial=0.0)))
        # first-order update max(0, lam + rho c); bound multipliers read off the gradient
        lam_new = _bound_multipliers(red, u, g, weight)
        # complementarity on the feasible side; violation is checked on its own
        comp = float(np.abs(lam_new * np.minimum(ce.ineq, 0.0)).max(initial=0.0))
        history.append(viol)
        if config.record_trace:  # outer summary row, inner = 0
            trace.append({"outer": outer, "inner": 0, "residual": gnorm, "violation": viol,
                          "complementarity": comp, "rho": rho})
        done =gnorm <= config.tol_stationarity and viol <= config.tol_constraint and comp <= config.tol_constraint
        score = max(viol / config.tol_constraint, gnorm / config.tol_stationarity, comp / config.tol_constraint)
        if done or best is None or score < best[0]:
            best = (score, u.copy(), viol, lam_new.copy(), comp)
        lam = lam_new
        if done:
            converged = True
            break
        # complementarity counts as progress too, otherwise multipliers on
        # constraints that just became inactive decay only by rho * |c| per step
        progress = max(viol, comp)
        if progress > 0.25 * prev_viol:
            rho *= config.rho_scale
        prev_viol = min(prev_viol, progress)

    _, u_best, viol, lam_best, comp = best
    plan = rollout(spec, u_best.reshape(spec.n_controlled, spec.horizon_steps))
    z = spec.pack(plan)
    mu = dynamics_multipliers(spec, z, lam_best)
    F = stacked_residual(spec, z, mu, lam_best)
    return NashSolution(
        plan=plan,
        converged=converged,
        stationarity_norm=float(np.linalg.norm(F)),
        max_violation=viol,
        outer_iters=outer,
        inner_iters=inner_total,
        wall_time=time.perf_counter() - t_start,
        multipliers=lam_best,
        complementarity=comp,
        violation_history=history,
        trace=trace,
    )


# -- verification --------------------------------------------------------------------


@dataclass
class EquilibriumReport:
    max_improvement: float
    per_player: list
    n_probes: int
    radius: float


def check_equilibrium(
    plan: JointPlan,
    spec: GameSpec,
    n_probes: int = 100,
    radius: float = 1e-3,
    seed: int = 0,
) -> EquilibriumReport:
    """Search for a unilateral improvement around ``plan``.

    For each controlled player, random control perturbations (each entry within
    ``radius``, clipped to the control bounds) are rolled out with the other
    players held fixed. Perturbations that make any of that player's
    constraints more violated than in ``plan`` are rejected. Reports the
    largest cost decrease found.
    """
    rng = np.random.default_rng(seed)
    T = spec.horizon_steps
    base = rollout(spec, plan.controls)
    base_ineq = evaluate_constraints(spec, spec.pack(base)).ineq
    per_player = []
    for i in range(spec.n_controlled):
        p = spec.controlled[i][1]
        j0 = objective(base, spec, i)
        mask = _involves(spec, i)
        limit = np.maximum(base_ineq[mask], 0.0)
        best = 0.0
        for _ in range(n_probes):
            u = base.controls.copy()
            u[i] = np.clip(u[i] + rng.uniform(-radius, radius, T), p.u_min, p.u_max)
            trial = rollout(spec, u)
            ineq = evaluate_constraints(spec, spec.pack(trial)).ineq
            if np.any(ineq[mask] > limit):
                continue
            best = max(best, j0 - objective(trial, spec, i))
        per_player.append(best)
    return EquilibriumReport(max(per_player, default=0.0), per_player, n_probes, radius)


def _involves(spec: GameSpec, i: int) -> np.ndarray:
    """Mask of inequality rows that depend on player ``i``'s variables."""
    T, nc = spec.horizon_steps, spec.n_controlled
    lin = np.zeros((nc, 3, T), dtype=bool)
    lin[i] = True
    pairs = spec.pairs
    col = np.repeat(((pairs[:, 0] == i) | (pairs[:, 1] == i))[:, None], T, axis=1)
    return np.concatenate([lin.reshape(-1), col.reshape(-1)])
