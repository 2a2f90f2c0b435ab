"""Computation graphs with per-node forward and vector-Jacobian passes.

A graph is a DAG whose roots carry inputs (parameters or constants) and whose
non-root nodes each apply a local function. There is exactly one leaf, and it
produces the scalar objective value.

Values are numpy arrays whose last axis is the node's output dimension. Any
leading axes are treated as a batch and pass through every node untouched, so
one sweep can evaluate many inputs at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from weakref import WeakKeyDictionary
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    ArityMismatch,
    CycleDetected,
    DimensionMismatch,
    GraphError,
    MultipleLeaves,
    NonScalarLeaf,
    StaleTrace,
)

Array = np.ndarray


@dataclass(frozen=True)
class NodeFunction:
    """A local function f_i together with its vector-Jacobian product.

    ``eval(inputs)`` maps a tuple of parent values to the output value.
    ``vjp(inputs, v)`` returns one partial adjoint per parent, i.e. the
    product of the transposed partial Jacobian with ``v``.
    ``input_dims`` is optional; when given it is checked at build time.
    """

    name: str
    arity: int
    output_dim: int
    eval: Callable[[tuple[Array, ...]], Array]
    vjp: Callable[[tuple[Array, ...], Array], tuple[Array, ...]]
    input_dims: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.arity < 1:
            raise ArityMismatch(f"{self.name}: arity must be >= 1")
        if self.output_dim < 1:
            raise GraphError(f"{self.name}: output_dim must be positive")


@dataclass(frozen=True)
class Root:
    """An input slot of dimension ``dim``."""

    dim: int


@dataclass(frozen=True, eq=False)
class ComputationGraph:
    nodes: Mapping[str, NodeFunction | Root]
    parents: Mapping[str, tuple[str, ...]]
    children: Mapping[str, tuple[str, ...]]
    roots: tuple[str, ...]
    leaf: str
    order: tuple[str, ...]  # topological order of the non-root nodes

    def dim(self, name: str) -> int:
        node = self.nodes[name]
        return node.dim if isinstance(node, Root) else node.output_dim

    @property
    def n_nodes(self) -> int:
        return len(self.order)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    graph: ComputationGraph
    inputs: Mapping[str, Array]
    values: Mapping[str, Array]
    output: Array = field(repr=False)


def build_graph(
    node_specs: Mapping[str, NodeFunction | Root],
    edges: Mapping[str, Sequence[str]],
) -> ComputationGraph:
    """Validate ``node_specs`` and ``edges`` (parent lists) into a graph."""
    names = list(node_specs)
    parents: dict[str, tuple[str, ...]] = {}
    for name in names:
        spec = node_specs[name]
        plist = tuple(edges.get(name, ()))
        for p in plist:
            if p not in node_specs:
                raise GraphError(f"{name}: unknown parent {p!r}")
        if isinstance(spec, Root):
            if plist:
                raise GraphError(f"root {name!r} cannot have parents")
        else:
            if not plist:
                raise ArityMismatch(f"{name}: non-root node needs parents")
            if len(plist) != spec.arity:
                raise ArityMismatch(
                    f"{name}: arity {spec.arity} but {len(plist)} parents"
                )
        parents[name] = plist
    for name in edges:
        if name not in node_specs:
            raise GraphError(f"edges reference undeclared node {name!r}")

    children: dict[str, list[str]] = {n: [] for n in names}
    for name in names:
        for p in parents[name]:
            children[p].append(name)

    # Kahn's algorithm, stable with respect to declaration order
    indeg = {n: len(parents[n]) for n in names}
    ready = [n for n in names if indeg[n] == 0]
    order: list[str] = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(order) != len(names):
        stuck = sorted(n for n in names if indeg[n] > 0)
        raise CycleDetected(f"cycle through {stuck}")

    leaves = [n for n in names if not children[n]]
    if len(leaves) != 1:
        raise MultipleLeaves(f"expected one leaf, found {leaves}")
    leaf = leaves[0]
    if isinstance(node_specs[leaf], Root):
        raise GraphError("the leaf must be a function node")
    if node_specs[leaf].output_dim != 1:
        raise NonScalarLeaf(f"leaf {leaf!r} has output_dim {node_specs[leaf].output_dim}")

    def dim(n: str) -> int:
        s = node_specs[n]
        return s.dim if isinstance(s, Root) else s.output_dim

    for name in names:
        spec = node_specs[name]
        if isinstance(spec, NodeFunction) and spec.input_dims is not None:
            got = tuple(dim(p) for p in parents[name])
            if got != tuple(spec.input_dims):
                raise DimensionMismatch(f"{name}: expects inputs {spec.input_dims}, got {got}")

    return ComputationGraph(
        nodes=MappingProxyType(dict(node_specs)),
        parents=MappingProxyType(parents),
        children=MappingProxyType({n: tuple(c) for n, c in children.items()}),
        roots=tuple(n for n in names if isinstance(node_specs[n], Root)),
        leaf=leaf,
        order=tuple(n for n in order if not isinstance(node_specs[n], Root)),
    )


_DEPTHS: WeakKeyDictionary = WeakKeyDictionary()


def depth(graph: ComputationGraph) -> int:
    """Largest number of non-root nodes on any directed path."""
    # graphs are immutable, so the result is cached per instance
    if graph not in _DEPTHS:
        _DEPTHS[graph] = max(levels(graph).values())
    return _DEPTHS[graph]


def levels(graph: ComputationGraph) -> dict[str, int]:
    """Longest-path level of every non-root node (first layer is 1)."""
    level: dict[str, int] = {r: 0 for r in graph.roots}
    for n in graph.order:
        level[n] = 1 + max(level[p] for p in graph.parents[n])
    return {n: level[n] for n in graph.order}


def forward(graph: ComputationGraph, inputs: Mapping[str, Array]) -> ForwardTrace:
    values: dict[str, Array] = {}
    for r in graph.roots:
        if r not in inputs:
            raise DimensionMismatch(f"missing input for root {r!r}")
        x = np.asarray(inputs[r], dtype=np.float64)
        if x.ndim == 0 or x.shape[-1] != graph.nodes[r].dim:
            raise DimensionMismatch(
                f"root {r!r} expects last dim {graph.nodes[r].dim}, got shape {x.shape}"
            )
        values[r] = x
    for n in graph.order:
        fn = graph.nodes[n]
        out = fn.eval(tuple(values[p] for p in graph.parents[n]))
        if out.shape[-1] != fn.output_dim:
            raise DimensionMismatch(f"{n}: produced {out.shape}, declared dim {fn.output_dim}")
        values[n] = out
    output = values[graph.leaf][..., 0]
    return ForwardTrace(
        graph=graph,
        inputs=MappingProxyType({r: values[r] for r in graph.roots}),
        values=MappingProxyType(values),
        output=output,
    )


def backward(
    graph: ComputationGraph,
    trace: ForwardTrace,
    wrt: Sequence[str] | None = None,
) -> dict[str, Array]:
    """Reverse sweep seeded with adjoint 1 at the leaf.

    Returns the gradient of the output with respect to each root in ``wrt``
    (all roots by default). Every non-root node's vjp is called exactly once.
    """
    if trace.graph is not graph:
        raise StaleTrace("trace was produced by a different graph")
    values = trace.values
    leaf_val = values[graph.leaf]
    adj: dict[str, Array] = {graph.leaf: np.ones_like(leaf_val)}
    for n in reversed(graph.order):
        v = adj.pop(n)
        pnames = graph.parents[n]
        parts = graph.nodes[n].vjp(tuple(values[p] for p in pnames), v)
        for p, a in zip(pnames, parts):
            if p in adj:
                adj[p] = adj[p] + a
            else:
                adj[p] = a
    targets = graph.roots if wrt is None else tuple(wrt)
    out = {}
    for r in targets:
        if r not in graph.roots:
            raise GraphError(f"{r!r} is not a root")
        g = adj.get(r)
        if g is None:
            g = np.zeros_like(values[r])
        out[r] = np.broadcast_to(g, np.broadcast_shapes(g.shape, values[r].shape)).copy()
    return out


def value_and_grad(
    graph: ComputationGraph, inputs: Mapping[str, Array], wrt: Sequence[str] | None = None
) -> tuple[Array, dict[str, Array]]:
    trace = forward(graph, inputs)
    return trace.output, backward(graph, trace, wrt)
