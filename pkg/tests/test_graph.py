import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pplab import nodes
from pplab.errors import (
    ArityMismatch,
    CycleDetected,
    DimensionMismatch,
    MultipleLeaves,
    NonScalarLeaf,
    StaleTrace,
)
from pplab.graph import NodeFunction, Root, backward, build_graph, depth, forward, levels, value_and_grad
from pplab.objectives import fig1_objective

from .conftest import central_diff, rel_err


def fig1_closed_form(x, w):
    return math.log1p(math.exp(x / 2)) + abs(x / 2 - w * math.sin(x))


def fig1_specs():
    specs = {
        "x": Root(1),
        "g1": nodes.scale(1, 0.5),
        "omega": Root(1),
        "g3": nodes.sin(1),
        "g4": nodes.sub_product(),
        "g5": nodes.softplus(1),
        "g6": nodes.absolute(1),
        "g7": nodes.add(1),
    }
    edges = {
        "g1": ["x"],
        "g3": ["x"],
        "g4": ["g1", "omega", "g3"],
        "g5": ["g1"],
        "g6": ["g4"],
        "g7": ["g5", "g6"],
    }
    return specs, edges


def chain(n, dim=1):
    specs = {"x": Root(dim)}
    edges = {}
    prev = "x"
    for i in range(n - 1):
        specs[f"n{i}"] = nodes.identity(dim)
        edges[f"n{i}"] = [prev]
        prev = f"n{i}"
    specs["out"] = nodes.max_coord(dim)
    edges["out"] = [prev]
    return build_graph(specs, edges)


def brute_force_depth(graph):
    """Enumerate every directed path from every root and count non-root nodes."""
    best = 0

    def walk(node, count):
        nonlocal best
        best = max(best, count)
        for c in graph.children[node]:
            walk(c, count + 1)

    for r in graph.roots:
        walk(r, 0)
    return best


# --------------------------------------------------------------------------
# build_graph


def test_fig1_structure():
    g = build_graph(*fig1_specs())
    assert set(g.roots) == {"x", "omega"}
    assert g.n_nodes == 6
    assert g.leaf == "g7"
    assert set(g.children["x"]) == {"g1", "g3"}
    assert g.parents["g4"] == ("g1", "omega", "g3")


def test_single_node_graph():
    g = build_graph({"x": Root(1), "f": nodes.identity(1)}, {"f": ["x"]})
    assert depth(g) == 1
    assert forward(g, {"x": np.array([2.5])}).output == 2.5


def test_cycle_rejected():
    specs, edges = fig1_specs()
    specs["g4"] = NodeFunction("g4c", 4, 1, lambda u: u[0], lambda u, v: (v,) * 4)
    edges["g4"] = ["g1", "omega", "g3", "g7"]
    with pytest.raises(CycleDetected):
        build_graph(specs, edges)


def test_multiple_leaves_rejected():
    specs, edges = fig1_specs()
    specs["extra"] = nodes.identity(1)
    edges["extra"] = ["x"]
    with pytest.raises(MultipleLeaves):
        build_graph(specs, edges)


def test_arity_mismatch():
    with pytest.raises(ArityMismatch):
        build_graph({"x": Root(1), "f": nodes.add(1)}, {"f": ["x"]})


def test_non_scalar_leaf():
    with pytest.raises(NonScalarLeaf):
        build_graph({"x": Root(3), "f": nodes.identity(3)}, {"f": ["x"]})


def test_input_dim_checked_at_build():
    with pytest.raises(DimensionMismatch):
        build_graph({"x": Root(2), "f": nodes.max_coord(3)}, {"f": ["x"]})


# --------------------------------------------------------------------------
# depth


def test_fig1_depth_matches_path_enumeration():
    g = fig1_objective().graph
    assert brute_force_depth(g) == 4
    assert depth(g) == 4


@pytest.mark.parametrize("n", range(1, 65))
def test_chain_depth(n):
    assert depth(chain(n)) == n


@given(st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_depth_of_random_dag_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    specs = {"r0": Root(1), "r1": Root(1)}
    edges = {}
    names = ["r0", "r1"]
    for i in range(n):
        k = int(rng.integers(1, 3))
        parents = list(rng.choice(names, size=k, replace=False))
        specs[f"v{i}"] = nodes.identity(1) if k == 1 else nodes.add(1)
        edges[f"v{i}"] = parents
        names.append(f"v{i}")
    # tie every dangling node into a single sink
    sinks = [m for m in names if not any(m in p for p in edges.values())]
    prev = sinks[0]
    for j, s in enumerate(sinks[1:]):
        specs[f"join{j}"] = nodes.add(1)
        edges[f"join{j}"] = [prev, s]
        prev = f"join{j}"
    if prev in ("r0", "r1"):
        specs["out"] = nodes.identity(1)
        edges["out"] = [prev]
    g = build_graph(specs, edges)
    assert depth(g) == brute_force_depth(g)
    assert max(levels(g).values()) == depth(g)


# --------------------------------------------------------------------------
# forward


def test_fig1_values():
    f = fig1_objective()
    assert f.value(np.array([0.0, 1.0])) == pytest.approx(math.log(2), rel=1e-12)
    # closed form ln(1 + e^{pi/2}) + pi/2
    expected = fig1_closed_form(math.pi, 2.0)
    assert expected == pytest.approx(3.3304590596818366, rel=1e-15)
    assert f.value(np.array([math.pi, 2.0])) == pytest.approx(expected, rel=1e-12)


def test_forward_records_recursion():
    g = build_graph(*fig1_specs())
    tr = forward(g, {"x": np.array([1.3]), "omega": np.array([0.4])})
    for n in g.order:
        expect = g.nodes[n].eval(tuple(tr.values[p] for p in g.parents[n]))
        np.testing.assert_array_equal(tr.values[n], expect)
    assert tr.output == tr.values["g7"][0]


def test_forward_dimension_mismatch():
    g = build_graph(*fig1_specs())
    with pytest.raises(DimensionMismatch):
        forward(g, {"x": np.array([1.0, 2.0]), "omega": np.array([0.4])})
    with pytest.raises(DimensionMismatch):
        forward(g, {"x": np.array([1.0])})


def test_identity_graph_returns_input():
    g = build_graph({"x": Root(1), "f": nodes.identity(1)}, {"f": ["x"]})
    assert forward(g, {"x": np.array([-7.25])}).output == -7.25


@given(st.floats(-6, 6), st.floats(-3, 3))
def test_fig1_matches_closed_form(x, w):
    f = fig1_objective()
    assert f.value(np.array([x, w])) == pytest.approx(fig1_closed_form(x, w), rel=1e-12, abs=1e-300)


# --------------------------------------------------------------------------
# backward


def test_fig1_gradient_matches_finite_differences():
    f = fig1_objective()
    theta = np.array([1.0, 0.3])
    g = f.gradient(theta)
    fd = central_diff(f.value, theta)
    assert rel_err(g, fd) <= 1e-5
    np.testing.assert_allclose(g, [0.64913897, -0.84147098], atol=1e-8)


def test_linear_gradient_exact(rng):
    a = rng.normal(size=5)
    g = build_graph({"x": Root(5), "f": nodes.linear_form(a)}, {"f": ["x"]})
    _, grads = value_and_grad(g, {"x": rng.normal(size=5)})
    np.testing.assert_array_equal(grads["x"], a)


def test_abs_kink_subgradient_is_zero():
    g = build_graph({"x": Root(1), "f": nodes.absolute(1)}, {"f": ["x"]})
    _, grads = value_and_grad(g, {"x": np.array([0.0])})
    assert grads["x"][0] == 0.0


def test_max_tie_goes_to_lowest_index():
    g = build_graph({"x": Root(3), "f": nodes.max_coord(3)}, {"f": ["x"]})
    _, grads = value_and_grad(g, {"x": np.array([0.5, 2.0, 2.0])})
    np.testing.assert_array_equal(grads["x"], [0.0, 1.0, 0.0])


def test_stale_trace():
    g1 = build_graph(*fig1_specs())
    g2 = build_graph(*fig1_specs())
    tr = forward(g1, {"x": np.array([1.0]), "omega": np.array([0.3])})
    with pytest.raises(StaleTrace):
        backward(g2, tr)


def counting(fn, counter):
    def vjp(u, v):
        counter[fn.name] = counter.get(fn.name, 0) + 1
        return fn.vjp(u, v)

    return NodeFunction(fn.name, fn.arity, fn.output_dim, fn.eval, vjp, fn.input_dims)


def test_one_vjp_call_per_node():
    specs, edges = fig1_specs()
    counter = {}
    specs = {n: (s if isinstance(s, Root) else counting(NodeFunction(n, s.arity, s.output_dim, s.eval, s.vjp, s.input_dims), counter))
             for n, s in specs.items()}
    g = build_graph(specs, edges)
    backward(g, forward(g, {"x": np.array([1.0]), "omega": np.array([0.3])}))
    assert counter == {n: 1 for n in g.order}


def test_batched_sweep_is_bitwise_per_row(rng):
    f = fig1_objective()
    pts = rng.normal(size=(7, 2))
    vals, grads = f.value_and_gradient(pts)
    for i, p in enumerate(pts):
        v, gr = f.value_and_gradient(p)
        assert vals[i] == v
        np.testing.assert_array_equal(grads[i], gr)


def test_gradient_accumulates_over_children():
    # f(x) = x + x (two edges from the same root)
    g = build_graph({"x": Root(2), "s": nodes.add(2), "m": nodes.max_coord(2)}, {"s": ["x", "x"], "m": ["s"]})
    _, grads = value_and_grad(g, {"x": np.array([1.0, 3.0])})
    np.testing.assert_array_equal(grads["x"], [0.0, 2.0])


def test_constant_root_gradient_zero_when_unused():
    g = build_graph({"x": Root(1), "c": Root(1), "f": nodes.identity(1), "j": nodes.add(1)},
                    {"f": ["x"], "j": ["f", "c"]})
    _, grads = value_and_grad(g, {"x": np.array([1.0]), "c": np.array([4.0])}, wrt=["x"])
    assert set(grads) == {"x"}
    assert grads["x"][0] == 1.0


def test_brute_force_helper_on_diamond():
    g = build_graph(
        {"x": Root(1), "a": nodes.identity(1), "b": nodes.identity(1), "c": nodes.identity(1), "j": nodes.add(1)},
        {"a": ["x"], "b": ["a"], "c": ["x"], "j": ["b", "c"]},
    )
    assert brute_force_depth(g) == depth(g) == 3
    assert list(itertools.islice(g.order, 1)) == ["a"]
