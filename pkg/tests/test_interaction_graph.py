import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decnash.dynamics import VehicleParams, VehicleState
from decnash.interaction_graph import (
    InteractionGraph,
    ObservationModel,
    build_graph,
    graph_record,
    in_cone,
    scc_decompose,
)
from decnash.paths import PathPolynomial, straight_path

from .oracles import brute_force_scc


def vehicle(vid, pos, ang, length=50.0):
    x, y = pos
    end = (x + length * math.cos(ang), y + length * math.sin(ang))
    path = straight_path((x, y), end)
    return VehicleState.on_path(vid, path, 0.0, 5.0), VehicleParams(vid, path, v_target=5.0)


def scene(*specs):
    states, params = [], {}
    for vid, pos, ang in specs:
        s, p = vehicle(vid, pos, ang)
        states.append(s)
        params[vid] = p
    return states, params


def as_sets(dec):
    return {c: dec.outgoing[k] for k, c in enumerate(dec.components)}


def test_dead_ahead():
    g = build_graph(*scene(("i", (0, 0), 0.0), ("j", (10, 0), 0.0)))
    assert ("i", "j") in g.edges


def test_out_of_range():
    g = build_graph(*scene(("i", (0, 0), 0.0), ("j", (25, 0), 0.0)))
    assert ("i", "j") not in g.edges


def test_blind_spot_is_asymmetric():
    g = build_graph(*scene(("i", (0, 0), 0.0), ("j", (-5, 0), math.pi)))
    assert ("i", "j") not in g.edges
    assert ("j", "i") not in g.edges  # j heads away from i
    g = build_graph(*scene(("i", (0, 0), 0.0), ("j", (-5, 0), 0.0)))
    assert ("j", "i") in g.edges and ("i", "j") not in g.edges


def test_cone_boundary_counts():
    ang = 2 * math.pi / 3
    target = (10 * math.cos(ang), 10 * math.sin(ang))
    assert in_cone((0, 0), 0.0, target, 20.0, ang)
    assert not in_cone((0, 0), 0.0, (10 * math.cos(ang + 1e-6), 10 * math.sin(ang + 1e-6)), 20.0, ang)
    assert in_cone((0, 0), 0.0, (20.0, 0.0), 20.0, ang)


def test_degenerate_heading_is_flagged():
    still = PathPolynomial([1.0], [1.0], 1.0, 1.0)
    s_ok, p_ok = vehicle("ok", (0, 0), 0.0)
    s_bad = VehicleState.on_path("bad", still, 0.5, 0.0)
    p_bad = VehicleParams("bad", still, v_target=1.0)
    g = build_graph([s_ok, s_bad], {"ok": p_ok, "bad": p_bad})
    assert g.flagged == {"bad"}
    assert all(i != "bad" for i, _ in g.edges)
    assert ("ok", "bad") in g.edges


def test_graph_validation():
    with pytest.raises(ValueError):
        InteractionGraph(("a",), frozenset({("a", "a")}))
    with pytest.raises(ValueError):
        InteractionGraph(("a",), frozenset({("a", "b")}))
    with pytest.raises(ValueError):
        ObservationModel(range=0)
    with pytest.raises(ValueError):
        ObservationModel(half_angle=4.0)


def test_scc_example():
    g = InteractionGraph((1, 2, 3), frozenset({(1, 2), (2, 1), (2, 3)}))
    got = as_sets(scc_decompose(g))
    assert got == {frozenset({1, 2}): frozenset({3}), frozenset({3}): frozenset()}


def test_scc_singletons_and_complete():
    got = as_sets(scc_decompose(InteractionGraph((1, 2, 3), frozenset())))
    assert got == {frozenset({k}): frozenset() for k in (1, 2, 3)}
    edges = frozenset((i, j) for i in range(5) for j in range(5) if i != j)
    got = as_sets(scc_decompose(InteractionGraph(tuple(range(5)), edges)))
    assert got == {frozenset(range(5)): frozenset()}


def test_long_chain_no_recursion_limit():
    n = 5000
    edges = frozenset((k, k + 1) for k in range(n - 1)) | {(n - 1, 0)}
    dec = scc_decompose(InteractionGraph(tuple(range(n)), edges))
    assert len(dec.components) == 1


@st.composite
def digraphs(draw):
    n = draw(st.integers(1, 10))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    edges = draw(st.sets(st.sampled_from(pairs), max_size=len(pairs))) if pairs else set()
    return InteractionGraph(tuple(range(n)), frozenset(edges))


@settings(max_examples=200, deadline=None)
@given(digraphs())
def test_matches_transitive_closure(g):
    dec = scc_decompose(g)
    comps, out = brute_force_scc(g.nodes, g.edges)
    assert as_sets(dec) == out
    assert set(dec.components) == comps
    # partition, and mutual edges share a component
    assert sorted(n for c in dec.components for n in c) == sorted(g.nodes)
    for i, j in g.edges:
        if (j, i) in g.edges:
            assert dec.component_of(i) == dec.component_of(j)


def rotate(p, ang, shift):
    c, s = math.cos(ang), math.sin(ang)
    return (c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30), st.floats(-math.pi, math.pi)), min_size=1, max_size=7),
    st.floats(-math.pi, math.pi),
    st.tuples(st.floats(-100, 100), st.floats(-100, 100)),
)
def test_rigid_motion_invariance(vs, ang, shift):
    base = [(f"v{k}", (x, y), h) for k, (x, y, h) in enumerate(vs)]
    moved = [(vid, rotate(p, ang, shift), h + ang) for vid, p, h in base]
    g1 = build_graph(*scene(*base))
    g2 = build_graph(*scene(*moved))
    # ignore pairs sitting within float noise of the range or angle boundary
    states, _ = scene(*base)
    model = ObservationModel()
    robust = set()
    for a, (_, pa, ha) in zip(states, base):
        for b, (_, pb, _) in zip(states, base):
            if a.id == b.id:
                continue
            d = math.dist(pa, pb)
            if d == 0:
                continue
            cosang = ((pb[0] - pa[0]) * math.cos(ha) + (pb[1] - pa[1]) * math.sin(ha)) / d
            if abs(d - model.range) > 1e-6 and abs(cosang - math.cos(model.half_angle)) > 1e-6:
                robust.add((a.id, b.id))
    assert g1.edges & robust == g2.edges & robust


def test_graph_record_is_json():
    g = InteractionGraph(("a", "b", "c"), frozenset({("a", "b"), ("b", "a"), ("b", "c")}))
    rec = graph_record(g, scc_decompose(g), 1.25)
    back = json.loads(json.dumps(rec))
    assert back["time"] == 1.25
    assert sorted(map(sorted, back["components"])) == [["a", "b"], ["c"]]
    assert set(back) == {"time", "nodes", "edges", "components", "outgoing"}
