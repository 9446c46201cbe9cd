"""Closed-loop simulation of a scenario under one of three policies.

``decnash``
    every frame: observation graph, strongly connected components, one game
    per component (observed vehicles forecast at constant velocity), first
    planned control applied to every controlled vehicle.
``centralized``
    one game containing every active vehicle.
``idm``
    per-vehicle adapted Intelligent Driver Model.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Sequence

import numpy as np

from .dynamics import VehicleParams, VehicleState, step
from .game import DEFAULT_R_SAFE, GameSpec, build_game, cold_start, positions
from .idm import IdmParams, idm_step_controls
from .interaction_graph import ObservationModel, build_graph, graph_record, scc_decompose
from .nash_solver import NashSolution, SolverConfig, solve

POLICIES = ("decnash", "centralized", "idm")
HYSTERESIS = 1.1
LOG_COLUMNS = ("time", "vehicle_id", "s", "v", "x", "y", "u", "game_id", "game_size")


@dataclass(frozen=True)
class Scenario:
    vehicles: tuple  # of VehicleParams
    sim_duration: float = 100.0
    sim_dt: float = 0.1
    plan_dt: float = 0.2
    plan_horizon: float = 4.0
    observation: ObservationModel = ObservationModel()
    r_safe: float = DEFAULT_R_SAFE
    collision_radius: float | None = None  # contact distance for metrics, default r_safe
    policy: str = "decnash"
    seed: int = 0
    spawn_jitter: float = 0.0
    defer_spawn: bool = False
    idm: IdmParams = IdmParams(v_target=1.0)  # template, v_target taken per vehicle
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        if self.sim_duration < 0 or self.sim_dt <= 0 or self.plan_dt <= 0 or self.r_safe <= 0:
            raise ValueError("need sim_duration >= 0 and positive sim_dt, plan_dt, r_safe")
        steps = self.plan_horizon / self.plan_dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ValueError(f"plan_horizon {self.plan_horizon} is not a positive multiple of plan_dt {self.plan_dt}")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}, expected one of {POLICIES}")
        if self.collision_radius is not None and self.collision_radius <= 0:
            raise ValueError("collision_radius must be positive")
        if self.spawn_jitter < 0:
            raise ValueError("spawn_jitter must be non-negative")
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle ids must be unique")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.plan_horizon / self.plan_dt))

    @property
    def contact_radius(self) -> float:
        return self.r_safe if self.collision_radius is None else self.collision_radius

    @property
    def n_steps(self) -> int:
        return int(round(self.sim_duration / self.sim_dt))


@dataclass
class MetricsReport:
    policy: str
    seed: int
    duration: float
    collisions: int
    collisions_per_100s: float
    mean_speed_shortfall: float
    players_per_frame: list = field(repr=False)
    max_players_per_game: int = 0
    policy_gen_time: list = field(repr=False, default_factory=list)
    active_per_frame: list = field(repr=False, default_factory=list)
    components_per_frame: list = field(repr=False, default_factory=list)
    solver_failures: int = 0
    n_solves: int = 0
    spawned: int = 0
    despawned: int = 0

    @property
    def mean_players(self) -> float:
        busy = [p for p in self.players_per_frame if p > 0]
        return float(np.mean(busy)) if busy else 0.0

    @property
    def mean_policy_time(self) -> float:
        busy = [t for t, a in zip(self.policy_gen_time, self.active_per_frame) if a > 0]
        return float(np.mean(busy)) if busy else 0.0

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "collisions": self.collisions,
            "collisions_per_100s": self.collisions_per_100s,
            "mean_speed_shortfall": self.mean_speed_shortfall,
            "mean_players": self.mean_players,
            "max_players_per_game": self.max_players_per_game,
            "mean_policy_time": self.mean_policy_time,
            "max_policy_time": max(self.policy_gen_time, default=0.0),
            "solver_failures": self.solver_failures,
            "n_solves": self.n_solves,
        }


@dataclass
class GameSnapshot:
    """A solved game kept for plotting."""

    time: float
    spec: GameSpec
    solution: NashSolution

    @property
    def positions(self) -> np.ndarray:
        return positions(self.solution.plan, self.spec)


@dataclass
class SimResult:
    log: list  # rows matching LOG_COLUMNS
    metrics: MetricsReport
    graphs: list = field(default_factory=list)
    solver_traces: list = field(default_factory=list)
    snapshot: GameSnapshot | None = None
    solutions: list = field(default_factory=list)  # (time, spec, solution) when kept

    def __iter__(self):
        return iter((self.log, self.metrics))


class CollisionMonitor:
    """Counts collision events with hysteresis.

    An event for a pair starts when the center distance drops below
    ``radius`` and ends once it exceeds ``radius * hysteresis``; a pair
    leaving the scene also ends its event.
    """

    def __init__(self, radius: float, hysteresis: float = HYSTERESIS):
        self.radius = radius
        self.release = radius * hysteresis
        self.open: set = set()
        self.events = 0
        self.log: list = []

    def update(self, states: Sequence[VehicleState], time: float | None = None) -> set:
        present = {st.id for st in states}
        self.open = {p for p in self.open if p[0] in present and p[1] in present}
        colliding = set()
        for a, b in combinations(sorted(states, key=lambda st: repr(st.id)), 2):
            pair = (a.id, b.id)
            d = math.hypot(a.p_x - b.p_x, a.p_y - b.p_y)
            if d < self.radius:
                colliding.add(pair)
                if pair not in self.open:
                    self.open.add(pair)
                    self.events += 1
                    self.log.append((time, pair, d))
            elif d > self.release:
                self.open.discard(pair)
        return colliding


def detect_collisions(frames: Sequence[Sequence[VehicleState]], r_safe: float) -> tuple[int, list]:
    """Collision events over a sequence of frames; returns (count, event log)."""
    mon = CollisionMonitor(r_safe)
    for k, frame in enumerate(frames):
        mon.update(frame, k)
    return mon.events, mon.log


def summarize(reports: Sequence[MetricsReport]) -> list[dict]:
    """Per-policy means of the run metrics, policies in first-seen order."""
    if not reports:
        raise ValueError("need at least one run")
    keys = ["collisions_per_100s", "mean_speed_shortfall", "mean_players", "max_players_per_game",
            "mean_policy_time", "max_policy_time", "solver_failures"]
    order = []
    groups: dict = {}
    for r in reports:
        if r.policy not in groups:
            order.append(r.policy)
            groups[r.policy] = []
        groups[r.policy].append(r.summary())
    rows = []
    for pol in order:
        g = groups[pol]
        row = {"policy": pol, "runs": len(g)}
        for k in keys:
            row[k] = float(np.mean([s[k] for s in g]))
        rows.append(row)
    return rows


def _threads() -> int:
    env = os.environ.get("DECNASH_THREADS")
    if env is not None:
        return max(0, int(env))
    return min(4, os.cpu_count() or 1)


def _shift_controls(u: np.ndarray, offset_steps: float) -> np.ndarray:
    idx = np.arange(len(u)) + offset_steps
    return np.interp(idx, np.arange(len(u)), u)


def run(
    scenario: Scenario,
    threads: int | None = None,
    dump_graphs: bool = False,
    keep_solutions: bool = False,
    record_trace: bool = False,
    progress=None,
) -> SimResult:
    """Simulate ``scenario`` and collect the trajectory log and metrics.

    ``threads`` overrides ``DECNASH_THREADS``; at most one thread (or zero)
    solves the games of a frame sequentially. The optional dumps (graphs,
    per-solve traces, solved games) are off by default because they grow
    with every frame.
    """
    sc = scenario
    params = {p.id: p for p in sc.vehicles}
    order = {p.id: k for k, p in enumerate(sc.vehicles)}
    rng = np.random.default_rng(sc.seed)
    jitter = rng.uniform(0.0, sc.spawn_jitter, len(sc.vehicles)) if sc.spawn_jitter > 0 else np.zeros(len(sc.vehicles))
    spawn_at = {p.id: p.spawn_time + j for p, j in zip(sc.vehicles, jitter)}
    pending = sorted(params, key=lambda i: (spawn_at[i], order[i]))
    idm_params = {i: replace(sc.idm, v_target=p.v_target) for i, p in params.items()}
    n_threads = _threads() if threads is None else threads
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None
    solver = replace(sc.solver, record_trace=True) if record_trace else sc.solver
    T = sc.horizon_steps

    active: dict = {}
    warm: dict = {}  # id -> (time planned, controls)
    warm_lam: dict = {}  # (ids, n_controlled) -> (time planned, multipliers)
    monitor = CollisionMonitor(sc.contact_radius)
    log = []
    graphs = []
    traces = []
    kept = []
    snapshot = None
    snap_size = (0, 0)
    shortfall_sum = 0.0
    shortfall_n = 0
    players, gen_time, active_n, comps_n = [], [], [], []
    failures = 0
    n_solves = 0
    spawned = despawned = 0

    def warm_start(spec: GameSpec, now: float):
        u = np.zeros((spec.n_controlled, T))
        for k, vid in enumerate(spec.ids[: spec.n_controlled]):
            if vid in warm:
                t0, prev = warm[vid]
                u[k] = _shift_controls(prev, (now - t0) / sc.plan_dt)
        return u

    def multipliers(spec: GameSpec, now: float):
        # only reusable when the game has exactly the same players
        hit = warm_lam.get((tuple(spec.ids), spec.n_controlled))
        if hit is None:
            return None
        t0, lam = hit
        rows = lam.reshape(-1, T)
        return np.array([_shift_controls(r, (now - t0) / sc.plan_dt) for r in rows]).reshape(-1)

    def solve_game(spec: GameSpec, now: float):
        try:
            return solve(spec, solver, warm_start=warm_start(spec, now), warm_multipliers=multipliers(spec, now))
        except Exception:  # a failed solve must never stop the simulation
            plan = cold_start(spec)
            return NashSolution(plan, False, math.inf, math.inf, 0, 0, 0.0)

    try:
        for k in range(sc.n_steps):
            now = k * sc.sim_dt
            # spawn
            still = []
            for vid in pending:
                if spawn_at[vid] <= now + 1e-9:
                    p = params[vid]
                    st = VehicleState.on_path(vid, p.path, 0.0, p.spawn_speed)
                    if sc.defer_spawn and any(
                        math.hypot(st.p_x - o.p_x, st.p_y - o.p_y) < sc.r_safe for o in active.values()
                    ):
                        still.append(vid)
                        continue
                    active[vid] = st
                    spawned += 1
                else:
                    still.append(vid)
            pending = still

            states = sorted(active.values(), key=lambda st: order[st.id])
            monitor.update(states, now)
            active_n.append(len(states))
            if not states:
                players.append(0)
                gen_time.append(0.0)
                comps_n.append(0)
                continue

            controls = {}
            game_of = {}
            by_id = {st.id: st for st in states}
            t0 = time.perf_counter()
            if sc.policy == "idm":
                controls = idm_step_controls(states, params, idm_params)
                frame_time = time.perf_counter() - t0
                game_of = {st.id: (-1, 1) for st in states}
                players.append(1)
                comps_n.append(len(states))
            else:
                if sc.policy == "decnash":
                    g = build_graph(states, params, sc.observation)
                    dec = scc_decompose(g)
                    comps = sorted(dec.components, key=lambda c: min(order[i] for i in c))
                    outs = [dec.outgoing[dec.components.index(c)] for c in comps]
                    if dump_graphs:
                        graphs.append(graph_record(g, dec, now))
                else:
                    comps = [frozenset(by_id)]
                    outs = [frozenset()]
                specs = [
                    build_game(sorted(c, key=order.get), sorted(o, key=order.get), by_id, params, T, sc.plan_dt, sc.r_safe)
                    for c, o in zip(comps, outs)
                ]
                overhead = time.perf_counter() - t0
                if pool is not None and len(specs) > 1:
                    sols = list(pool.map(lambda s: solve_game(s, now), specs))
                else:
                    sols = [solve_game(s, now) for s in specs]
                frame_time = overhead + max(s.wall_time for s in sols)
                players.append(max(s.n_controlled for s in specs))
                comps_n.append(len(specs))
                warm_lam.clear()
                for gid, (spec, sol) in enumerate(zip(specs, sols)):
                    n_solves += 1
                    if sol.multipliers is not None and sol.converged:
                        warm_lam[(tuple(spec.ids), spec.n_controlled)] = (now, sol.multipliers)
                    if not sol.converged:
                        failures += 1
                    for j, vid in enumerate(spec.ids[: spec.n_controlled]):
                        controls[vid] = float(sol.plan.controls[j, 0])
                        game_of[vid] = (gid, spec.n_controlled)
                        warm[vid] = (now, sol.plan.controls[j].copy())
                    if sol.trace:
                        traces.extend({"time": round(now, 9), "game": gid, **row} for row in sol.trace)
                    if keep_solutions:
                        kept.append((now, spec, sol))
                    size = (spec.n_controlled, spec.n_observed)
                    if size > snap_size:
                        snap_size = size
                        snapshot = GameSnapshot(now, spec, sol)
            gen_time.append(frame_time)

            for st in states:
                p = params[st.id]
                u = controls[st.id]
                gid, gsize = game_of[st.id]
                log.append((round(now, 9), st.id, st.s, st.v, st.p_x, st.p_y, u, gid, gsize))
                shortfall_sum += p.v_target - st.v
                shortfall_n += 1
                new = step(st, p.path, u, sc.sim_dt)
                if new.complete:
                    del active[st.id]
                    warm.pop(st.id, None)
                    despawned += 1
                else:
                    active[st.id] = new
            if progress is not None:
                progress(k, sc.n_steps)
    finally:
        if pool is not None:
            pool.shutdown()

    metrics = MetricsReport(
        policy=sc.policy,
        seed=sc.seed,
        duration=sc.sim_duration,
        collisions=monitor.events,
        collisions_per_100s=100.0 * monitor.events / sc.sim_duration if sc.sim_duration > 0 else 0.0,
        mean_speed_shortfall=shortfall_sum / shortfall_n if shortfall_n else 0.0,
        players_per_frame=players,
        max_players_per_game=max(players, default=0),
        policy_gen_time=gen_time,
        active_per_frame=active_n,
        components_per_frame=comps_n,
        solver_failures=failures,
        n_solves=n_solves,
        spawned=spawned,
        despawned=despawned,
    )
    return SimResult(log, metrics, graphs, traces, snapshot, kept)


def with_policy(scenario: Scenario, policy: str, seed: int | None = None) -> Scenario:
    return replace(scenario, policy=policy, seed=scenario.seed if seed is None else seed)


def compare(
    scenario: Scenario,
    n_runs: int,
    policies: Sequence[str] = POLICIES,
    threads: int | None = None,
    progress=None,
) -> list[MetricsReport]:
    """Run every policy ``n_runs`` times with seeds ``scenario.seed + k``.

    Policies run one after another, so timing figures are not skewed by
    concurrent runs.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    reports = []
    for pol in policies:
        for k in range(n_runs):
            res = run(with_policy(scenario, pol, scenario.seed + k), threads=threads)
            reports.append(res.metrics)
            if progress is not None:
                progress(res.metrics)
    return reports


def write_log_csv(log: Sequence[tuple], path) -> None:
    """Trajectory log as CSV; floats use ``repr`` so equal runs give equal bytes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        w.writerows(log)


def write_rows_csv(rows: Sequence[dict], path) -> None:
    if not rows:
        raise ValueError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def frame_rows(m: MetricsReport, sim_dt: float) -> list[dict]:
    return [
        {"time": round(k * sim_dt, 9), "active": a, "games": c, "max_players": p, "policy_time": t}
        for k, (a, c, p, t) in enumerate(zip(m.active_per_frame, m.components_per_frame, m.players_per_frame, m.policy_gen_time))
    ]


TABLE_COLUMNS = (
    ("policy", "Policy", "{}"),
    ("runs", "Runs", "{}"),
    ("collisions_per_100s", "Collisions/100s", "{:.2f}"),
    ("mean_speed_shortfall", "Shortfall [m/s]", "{:.3f}"),
    ("max_players_per_game", "Max players", "{:.1f}"),
    ("mean_policy_time", "Policy time [s]", "{:.4f}"),
    ("solver_failures", "Solver failures", "{:.1f}"),
)


def format_table(rows: Sequence[dict]) -> str:
    """Fixed-width rendering of :func:`summarize` output."""
    cells = [[h for _, h, _ in TABLE_COLUMNS]]
    for r in rows:
        cells.append([fmt.format(r[k]) for k, _, fmt in TABLE_COLUMNS])
    widths = [max(len(c[i]) for c in cells) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(row, widths))) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
