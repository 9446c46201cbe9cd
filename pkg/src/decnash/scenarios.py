"""Scenario files (strict JSON) and the bundled demo scenarios."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import VehicleParams
from .idm import IdmParams
from .interaction_graph import ObservationModel
from .nash_solver import SolverConfig
from .paths import PathPolynomial, fit_path, straight_path
from .simulation import Scenario

DEMOS = ("straight", "crossing", "roundabout")

_SIM_KEYS = {
    "duration": "sim_duration",
    "sim_dt": "sim_dt",
    "plan_dt": "plan_dt",
    "plan_horizon": "plan_horizon",
    "r_safe": "r_safe",
    "seed": "seed",
    "policy": "policy",
    "collision_radius": "collision_radius",
    "spawn_jitter": "spawn_jitter",
    "defer_spawn": "defer_spawn",
}
_VEHICLE_KEYS = {"id", "spawn_time", "v_target", "q", "r", "u_min", "u_max", "v0", "path", "waypoints_file", "fit_degree"}
_TOP_KEYS = {"sim", "observation", "idm", "solver", "vehicles"}


class ScenarioError(ValueError):
    pass


def _strict(block: dict, allowed, where: str) -> None:
    if not isinstance(block, dict):
        raise ScenarioError(f"{where}: expected an object")
    extra = set(block) - set(allowed)
    if extra:
        raise ScenarioError(f"{where}: unknown keys {sorted(extra)}; allowed {sorted(allowed)}")


def read_waypoints(path: str | Path) -> np.ndarray:
    """Read an ``x,y`` CSV (header optional) into an (n, 2) array."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and [c.strip().lower() for c in row[:2]] == ["x", "y"]:
                continue
            if len(row) != 2:
                raise ScenarioError(f"{path}:{lineno}: expected 2 columns x,y, got {len(row)}")
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                raise ScenarioError(f"{path}:{lineno}: cannot parse {row!r} as numbers") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ScenarioError(f"{path}:{lineno}: non-finite value")
            rows.append((x, y))
    return np.array(rows, dtype=float).reshape(-1, 2)


def _vehicle(d: dict, k: int, base: Path) -> VehicleParams:
    where = f"vehicles[{k}]"
    _strict(d, _VEHICLE_KEYS, where)
    if "id" not in d or "v_target" not in d:
        raise ScenarioError(f"{where}: 'id' and 'v_target' are required")
    has_path = "path" in d
    has_wp = "waypoints_file" in d
    if has_path == has_wp:
        raise ScenarioError(f"{where}: give exactly one of 'path' or 'waypoints_file'")
    if has_path:
        if "fit_degree" in d:
            raise ScenarioError(f"{where}: 'fit_degree' only applies to 'waypoints_file'")
        try:
            path = PathPolynomial.from_dict(d["path"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}.path: {exc}") from None
    else:
        wp_file = base / d["waypoints_file"]
        if not wp_file.is_file():
            raise ScenarioError(f"{where}: waypoints file {wp_file} not found")
        path = fit_path(read_waypoints(wp_file), int(d.get("fit_degree", 20)))
    kw = {k: d[k] for k in ("spawn_time", "q", "r", "u_min", "u_max", "v0") if k in d}
    try:
        return VehicleParams(id=str(d["id"]), path=path, v_target=float(d["v_target"]), **kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def scenario_from_dict(doc: dict, base_dir: str | Path = ".") -> Scenario:
    """Validate and build a scenario from a parsed scenario document."""
    _strict(doc, _TOP_KEYS, "scenario")
    base = Path(base_dir)
    sim = doc.get("sim", {})
    _strict(sim, _SIM_KEYS, "sim")
    kw = {_SIM_KEYS[k]: v for k, v in sim.items()}
    obs = doc.get("observation", {})
    _strict(obs, {"range", "half_angle_deg"}, "observation")
    idm_block = doc.get("idm", {})
    idm_fields = {f.name for f in fields(IdmParams)} - {"v_target"}
    _strict(idm_block, idm_fields | {"follow_half_angle_deg"} - {"follow_half_angle"}, "idm")
    solver_block = doc.get("solver", {})
    _strict(solver_block, {f.name for f in fields(SolverConfig)}, "solver")
    vehicles = doc.get("vehicles", [])
    if not isinstance(vehicles, list):
        raise ScenarioError("vehicles: expected an array")
    try:
        observation = ObservationModel(
            range=float(obs.get("range", ObservationModel.range)),
            half_angle=math.radians(float(obs.get("half_angle_deg", math.degrees(ObservationModel.half_angle)))),
        )
        idm_kw = dict(idm_block)
        if "follow_half_angle_deg" in idm_kw:
            idm_kw["follow_half_angle"] = math.radians(idm_kw.pop("follow_half_angle_deg"))
        idm = IdmParams(v_target=1.0, **idm_kw)
        solver = SolverConfig(**solver_block)
        vp = tuple(_vehicle(v, k, base) for k, v in enumerate(vehicles))
        return Scenario(vehicles=vp, observation=observation, idm=idm, solver=solver, **kw)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None


def scenario_to_dict(sc: Scenario) -> dict:
    """Inverse of :func:`scenario_from_dict`; paths are written inline."""
    sim = {k: getattr(sc, attr) for k, attr in _SIM_KEYS.items()}
    if sim["collision_radius"] is None:
        del sim["collision_radius"]
    idm = {k: v for k, v in asdict(sc.idm).items() if k not in ("v_target", "follow_half_angle")}
    idm["follow_half_angle_deg"] = math.degrees(sc.idm.follow_half_angle)
    vehicles = []
    for p in sc.vehicles:
        v = {"id": p.id, "spawn_time": p.spawn_time, "v_target": p.v_target, "q": p.q, "r": p.r,
             "u_min": p.u_min, "u_max": p.u_max}
        if p.v0 is not None:
            v["v0"] = p.v0
        v["path"] = p.path.to_dict()
        vehicles.append(v)
    return {
        "sim": sim,
        "observation": {"range": sc.observation.range, "half_angle_deg": math.degrees(sc.observation.half_angle)},
        "idm": idm,
        "solver": asdict(sc.solver),
        "vehicles": vehicles,
    }


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario file, or a bundled demo via ``demo:<name>``."""
    ref = str(ref)
    if ref.startswith("demo:"):
        name = ref[5:]
        if name not in DEMOS:
            raise ScenarioError(f"unknown demo {name!r}; available: {', '.join(DEMOS)}")
        text = resources.files("decnash").joinpath("data").joinpath(f"{name}.json").read_text()
        return scenario_from_dict(json.loads(text))
    p = Path(ref)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read {p}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return scenario_from_dict(doc, p.parent)


# ---------------------------------------------------------------- demos


def demo_straight() -> Scenario:
    path = straight_path((0.0, 0.0), (200.0, 0.0))
    v = VehicleParams("ego", path, v_target=10.0, v0=10.0)
    return Scenario(vehicles=(v,), sim_duration=15.0)


def demo_crossing() -> Scenario:
    # Both reach the intersection at about the same time; the 1 m offset
    # breaks the mirror symmetry.
    a = VehicleParams("a", straight_path((-30.0, 0.0), (40.0, 0.0)), v_target=8.0)
    b = VehicleParams("b", straight_path((0.0, -31.0), (0.0, 40.0)), v_target=8.0)
    # plan with a margin over the contact distance: the collision constraint
    # holds at plan knots, executed motion between them can cut slightly inside
    return Scenario(vehicles=(a, b), sim_duration=8.0, r_safe=3.5, collision_radius=3.0)


RING_RADIUS = 15.0
LANE_OFFSET = 3.0
FILLET_RADIUS = 8.0
ARM_LENGTH = 50.0
ARM_ANGLES = (-math.pi / 2, math.pi / 6, 5 * math.pi / 6)


def _arc(center, radius, a0, a1, step):
    n = max(2, int(math.ceil(abs(a1 - a0) * radius / step)) + 1)
    ang = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def _line(p0, p1, step):
    n = max(2, int(math.ceil(np.hypot(*(np.subtract(p1, p0))) / step)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) * np.asarray(p0) + t * np.asarray(p1)


def roundabout_waypoints(entry: int, exit_: int, step: float = 1.0) -> np.ndarray:
    """Waypoints for a counter-clockwise, right-hand-traffic roundabout route.

    Approach lane, right-turn fillet onto the ring, ring arc, fillet off the
    ring and exit lane. All joins are tangent.
    """
    R, w, rho, L = RING_RADIUS, LANE_OFFSET, FILLET_RADIUS, ARM_LENGTH
    a = math.sqrt((R + rho) ** 2 - (w + rho) ** 2)
    th_in, th_out = ARM_ANGLES[entry], ARM_ANGLES[exit_]
    e_in = np.array([math.cos(th_in), math.sin(th_in)])
    n_in = np.array([-e_in[1], e_in[0]])
    e_out = np.array([math.cos(th_out), math.sin(th_out)])
    n_out = np.array([-e_out[1], e_out[0]])

    start = L * e_in + w * n_in
    p1 = a * e_in + w * n_in
    c1 = a * e_in + (w + rho) * n_in
    c2 = a * e_out - (w + rho) * n_out
    p4 = a * e_out - w * n_out
    end = L * e_out - w * n_out

    # fillet angles measured around each fillet center
    f1_a0 = math.atan2(*(p1 - c1)[::-1])
    f1_a1 = math.atan2(-c1[1], -c1[0])
    ring_a0 = math.atan2(c1[1], c1[0])
    ring_a1 = math.atan2(c2[1], c2[0])
    while ring_a1 <= ring_a0:
        ring_a1 += 2 * math.pi
    f2_a0 = math.atan2(-c2[1], -c2[0])
    f2_a1 = math.atan2(*(p4 - c2)[::-1])

    def cw(a0, a1):  # fillets turn right
        while a1 >= a0:
            a1 -= 2 * math.pi
        return a1

    pieces = [
        _line(start, p1, step),
        _arc(c1, rho, f1_a0, cw(f1_a0, f1_a1), step),
        _arc((0.0, 0.0), R, ring_a0, ring_a1, step),
        _arc(c2, rho, f2_a0, cw(f2_a0, f2_a1), step),
        _line(p4, end, step),
    ]
    pts = [pieces[0]] + [p[1:] for p in pieces[1:]]
    return np.vstack(pts)


ROUNDABOUT_PERIOD = 3.0
ROUNDABOUT_SPEEDS = (8.0, 7.0, 7.5)


def roundabout_schedule(duration: float = 100.0, period: float = ROUNDABOUT_PERIOD) -> list[tuple]:
    """(spawn time, entry arm, arms travelled counter-clockwise, target speed).

    Entries rotate through the three arms; every other round the vehicles
    go two arms around instead of one, so ring traffic passes the next entry.
    """
    n = int(math.floor((duration - 10.0) / period)) + 1
    return [(k * period, k % 3, 1 + (k // 3) % 2, ROUNDABOUT_SPEEDS[k % 3]) for k in range(n)]


def demo_roundabout(fit_degree: int = 20, duration: float = 100.0) -> Scenario:
    paths = {}
    vehicles = []
    for k, (t0, entry, hops, vt) in enumerate(roundabout_schedule(duration)):
        key = (entry, (entry + hops) % 3)
        if key not in paths:
            paths[key] = fit_path(roundabout_waypoints(*key), fit_degree)
        vehicles.append(VehicleParams(f"v{k:02d}", paths[key], v_target=vt, spawn_time=t0))
    return Scenario(
        vehicles=tuple(vehicles),
        sim_duration=duration,
        r_safe=4.0,
        collision_radius=3.0,
        spawn_jitter=3.0,
    )


def build_demo(name: str) -> Scenario:
    if name not in DEMOS:
        raise ScenarioError(f"unknown demo {name!r}")
    return {"straight": demo_straight, "crossing": demo_crossing, "roundabout": demo_roundabout}[name]()


def with_seed(sc: Scenario, seed: int) -> Scenario:
    return replace(sc, seed=seed)
