"""Observation graph between vehicles and its strongly connected components.

An edge ``(i, j)`` means vehicle ``i`` observes vehicle ``j``. Vehicles that
observe each other (directly or through a cycle) share a component and play
one game together; vehicles a component observes but that do not observe
back are forecast instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

from .dynamics import VehicleParams, VehicleState
from .paths import DegenerateGeometryError, heading


@dataclass(frozen=True)
class ObservationModel:
    range: float = 20.0
    half_angle: float = 2.0 * math.pi / 3.0

    def __post_init__(self):
        if self.range <= 0:
            raise ValueError(f"observation range must be positive, got {self.range}")
        if not 0 < self.half_angle <= math.pi:
            raise ValueError(f"half angle must be in (0, pi], got {self.half_angle}")


@dataclass(frozen=True)
class InteractionGraph:
    nodes: tuple
    edges: frozenset
    flagged: frozenset = frozenset()  # vehicles with undefined heading

    def __post_init__(self):
        nodes = set(self.nodes)
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-edge on {i!r}")
            if i not in nodes or j not in nodes:
                raise ValueError(f"edge ({i!r}, {j!r}) has an endpoint outside the node set")

    def successors(self) -> dict:
        adj = {n: [] for n in self.nodes}
        for i, j in sorted(self.edges, key=repr):
            adj[i].append(j)
        return adj


@dataclass(frozen=True)
class SccDecomposition:
    components: tuple  # tuple of frozensets
    outgoing: dict = field(default_factory=dict)

    def component_of(self, node) -> int:
        for k, comp in enumerate(self.components):
            if node in comp:
                return k
        raise KeyError(node)


def _cone_heading(params: VehicleParams, state: VehicleState) -> float:
    return heading(params.path, min(state.s, params.path.s_max))


def in_cone(origin, heading_angle: float, target, max_range: float, half_angle: float) -> bool:
    """True if ``target`` lies within ``max_range`` and ``half_angle`` of the heading."""
    dx = target[0] - origin[0]
    dy = target[1] - origin[1]
    dist = math.hypot(dx, dy)
    if dist > max_range:
        return False
    if dist == 0.0:
        return True
    cos_angle = (dx * math.cos(heading_angle) + dy * math.sin(heading_angle)) / dist
    # small slack so the boundary itself counts as observed
    return cos_angle >= math.cos(half_angle) - 1e-12


def build_graph(
    states: Sequence[VehicleState],
    params: Mapping[Hashable, VehicleParams],
    model: ObservationModel = ObservationModel(),
) -> InteractionGraph:
    """Directed observation graph for the vehicles in ``states``."""
    headings = {}
    flagged = set()
    for st in states:
        try:
            headings[st.id] = _cone_heading(params[st.id], st)
        except DegenerateGeometryError:
            flagged.add(st.id)
    edges = set()
    for a in states:
        if a.id in flagged:
            continue
        for b in states:
            if a.id == b.id:
                continue
            if in_cone(a.position, headings[a.id], b.position, model.range, model.half_angle):
                edges.add((a.id, b.id))
    return InteractionGraph(tuple(st.id for st in states), frozenset(edges), frozenset(flagged))


def scc_decompose(g: InteractionGraph) -> SccDecomposition:
    """Kosaraju's algorithm: DFS finishing order, then DFS on the transpose.

    Both passes are iterative, so deep graphs do not hit the recursion limit.
    """
    adj = g.successors()
    radj = {n: [] for n in g.nodes}
    for i in g.nodes:
        for j in adj[i]:
            radj[j].append(i)

    visited = set()
    order = []
    for root in g.nodes:
        if root in visited:
            continue
        visited.add(root)
        stack = [(root, iter(adj[root]))]
        while stack:
            node, it = stack[-1]
            for nxt in it:
                if nxt not in visited:
                    visited.add(nxt)
                    stack.append((nxt, iter(adj[nxt])))
                    break
            else:
                stack.pop()
                order.append(node)

    assigned = {}
    components = []
    for root in reversed(order):
        if root in assigned:
            continue
        idx = len(components)
        comp = {root}
        assigned[root] = idx
        stack = [root]
        while stack:
            node = stack.pop()
            for prev in radj[node]:
                if prev not in assigned:
                    assigned[prev] = idx
                    comp.add(prev)
                    stack.append(prev)
        components.append(frozenset(comp))

    outgoing = {k: set() for k in range(len(components))}
    for i, j in g.edges:
        if assigned[i] != assigned[j]:
            outgoing[assigned[i]].add(j)
    return SccDecomposition(tuple(components), {k: frozenset(v) for k, v in outgoing.items()})


def graph_record(g: InteractionGraph, dec: SccDecomposition, time: float | None = None) -> dict:
    """JSON-ready dump of a frame's graph and decomposition."""
    rec = {
        "nodes": list(g.nodes),
        "edges": sorted([list(e) for e in g.edges]),
        "components": [sorted(c) for c in dec.components],
        "outgoing": [sorted(dec.outgoing[k]) for k in range(len(dec.components))],
    }
    if g.flagged:
        rec["flagged"] = sorted(g.flagged)
    if time is not None:
        rec = {"time": round(time, 9), **rec}
    return rec
