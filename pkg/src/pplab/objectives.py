"""Benchmark objectives expressed as computation graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from . import nodes
from .errors import DimensionMismatch, EmptyDataset, LabelOutOfRange
from .graph import (
    ComputationGraph,
    NodeFunction,
    Root,
    backward,
    build_graph,
    depth,
    forward,
    levels,
)

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class Objective:
    """A scalar function of the parameter vector theta.

    ``params`` lists the parameter roots; theta is their concatenation in that
    order. Every other root is a constant supplied through ``constants``.
    Optimizers start from theta = 0.
    """

    graph: ComputationGraph
    params: tuple[str, ...]
    constants: Mapping[str, Array] = field(default_factory=dict)
    name: str = "objective"
    lipschitz: float | None = None
    smoothness: float | None = None
    optimum_value: float | None = None
    optimum_point: Array | None = None

    @property
    def param_dim(self) -> int:
        return sum(self.graph.dim(p) for p in self.params)

    @property
    def radius(self) -> float | None:
        if self.optimum_point is None:
            return None
        return float(np.linalg.norm(self.optimum_point))

    @property
    def initial_point(self) -> Array:
        return np.zeros(self.param_dim)

    @property
    def depth(self) -> int:
        return depth(self.graph)

    def inputs(self, theta: Array) -> dict[str, Array]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim == 0 or theta.shape[-1] != self.param_dim:
            raise DimensionMismatch(f"theta must end in dim {self.param_dim}, got {theta.shape}")
        out = dict(self.constants)
        start = 0
        for p in self.params:
            d = self.graph.dim(p)
            out[p] = theta[..., start : start + d]
            start += d
        return out

    def value(self, theta: Array) -> Array | float:
        out = forward(self.graph, self.inputs(theta)).output
        return float(out) if out.ndim == 0 else out

    def value_and_gradient(self, theta: Array) -> tuple[Array | float, Array]:
        trace = forward(self.graph, self.inputs(theta))
        grads = backward(self.graph, trace, self.params)
        g = np.concatenate([grads[p] for p in self.params], axis=-1)
        out = trace.output
        return (float(out) if out.ndim == 0 else out), g

    def gradient(self, theta: Array) -> Array:
        return self.value_and_gradient(theta)[1]


# --------------------------------------------------------------------------
# library


def fig1_objective() -> Objective:
    """f(x, w) = ln(1 + e^{x/2}) + |x/2 - w sin(x)|, one node per operation."""
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
    return Objective(build_graph(specs, edges), params=("x", "omega"), name="fig1")


def linf_objective(d: int, L: float = 1.0, radius: float = 0.0) -> Objective:
    """f(theta) = L * max_i |theta_i - c_i|.

    The minimizer c has all coordinates equal to radius / sqrt(d), so that
    ||theta_0 - c|| = radius for theta_0 = 0.
    """
    if d < 1 or L <= 0:
        raise ValueError("need d >= 1 and L > 0")
    center = np.full(d, radius / math.sqrt(d))
    specs = {
        "theta": Root(d),
        "shift": nodes.shift(center),
        "abs": nodes.absolute(d),
        "max": nodes.max_coord(d),
        "scale": nodes.scale(1, L),
    }
    edges = {"shift": ["theta"], "abs": ["shift"], "max": ["abs"], "scale": ["max"]}
    return Objective(
        build_graph(specs, edges),
        params=("theta",),
        name="linf",
        lipschitz=float(L),
        optimum_value=0.0,
        optimum_point=center,
    )


def quadratic_objective(d: int, beta: float = 1.0, center: Array | None = None) -> Objective:
    """f(theta) = (beta/2) ||theta - c||^2; c defaults to a unit-norm vector."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    c = np.full(d, 1.0 / math.sqrt(d)) if center is None else np.asarray(center, dtype=float)
    specs = {"theta": Root(d), "shift": nodes.shift(c), "sq": nodes.half_sq_norm(d, beta)}
    edges = {"shift": ["theta"], "sq": ["shift"]}
    return Objective(
        build_graph(specs, edges),
        params=("theta",),
        name="quadratic",
        smoothness=float(beta),
        optimum_value=0.0,
        optimum_point=c,
    )


def linear_objective(a: Array, offset: float = 0.0) -> Objective:
    """f(theta) = a . theta + offset (unbounded below; for diagnostics)."""
    a = np.asarray(a, dtype=np.float64)
    specs = {
        "theta": Root(a.shape[0]),
        "dot": nodes.linear_form(a),
        "offset": nodes.shift(np.array([-offset])),
    }
    edges = {"dot": ["theta"], "offset": ["dot"]}
    return Objective(
        build_graph(specs, edges),
        params=("theta",),
        name="linear",
        lipschitz=float(np.linalg.norm(a)),
    )


@dataclass(frozen=True)
class DeskNet:
    """Fixed-weight ReLU network: affine, relu, affine, relu, affine."""

    weights: tuple[tuple[Array, Array], ...]

    @property
    def input_dim(self) -> int:
        return self.weights[0][0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1][0].shape[0]

    def logits(self, x: Array) -> Array:
        h = np.asarray(x, dtype=np.float64)
        for i, (w, b) in enumerate(self.weights):
            h = h @ w.T + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
        return h


def make_desk_net(
    input_dim: int = 64,
    hidden: Sequence[int] = (32, 32),
    n_classes: int = 10,
    seed: int = 0,
    gain: float = 2.0,
    input_gain: float = 1.0,
) -> DeskNet:
    """He-style random weights scaled by ``gain``; deterministic in ``seed``.

    ``input_gain`` multiplies the first layer and sets how sensitive the
    logits are to perturbations of the input.
    """
    rng = np.random.default_rng([seed, 0xDE5C])
    dims = [input_dim, *hidden, n_classes]
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(size=(fan_out, fan_in)) * gain * math.sqrt(2.0 / fan_in)
        b = rng.normal(size=fan_out) * 0.1
        weights.append((w, b))
    weights[0] = (weights[0][0] * input_gain, weights[0][1])
    return DeskNet(tuple(weights))


def make_attack_instance(net: DeskNet, seed: int = 0, scale: float = 1.0) -> tuple[Array, int]:
    """Draw a base input in [0, scale]^d and target the least likely class under the net."""
    rng = np.random.default_rng([seed, 0xA77A])
    x = rng.uniform(0.0, scale, size=net.input_dim)
    y = int(np.argmin(net.logits(x)))
    return x, y


def margin_attack_objective(
    net: DeskNet,
    x: Array,
    y: int,
    lam: float = 300.0,
    stages: int | None = None,
) -> Objective:
    """Multi-margin loss towards class ``y`` plus ``lam * ||x_adv - x||_inf``.

    The parameter is the perturbation ``x_adv - x``, so theta = 0 is the
    unperturbed input.
    """
    x = np.asarray(x, dtype=np.float64)
    n_classes = net.n_classes
    if not 0 <= y < n_classes:
        raise LabelOutOfRange(f"label {y} outside [0, {n_classes})")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    for w, b in net.weights:
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("network weights must be finite")
    n = x.shape[0]
    if n != net.input_dim:
        raise DimensionMismatch(f"input has dim {n}, network expects {net.input_dim}")

    specs: dict[str, NodeFunction | Root] = {"delta": Root(n), "input": nodes.shift(-x)}
    edges: dict[str, list[str]] = {"input": ["delta"]}
    prev = "input"
    for i, (w, b) in enumerate(net.weights, start=1):
        specs[f"affine{i}"] = nodes.affine(w, b)
        edges[f"affine{i}"] = [prev]
        prev = f"affine{i}"
        if i < len(net.weights):
            specs[f"relu{i}"] = nodes.relu(w.shape[0])
            edges[f"relu{i}"] = [prev]
            prev = f"relu{i}"
    specs["margin"] = nodes.multi_margin(n_classes, y)
    edges["margin"] = [prev]
    specs["pert_abs"] = nodes.absolute(n)
    edges["pert_abs"] = ["delta"]
    specs["pert_max"] = nodes.max_coord(n)
    edges["pert_max"] = ["pert_abs"]
    specs["pert_reg"] = nodes.scale(1, lam)
    edges["pert_reg"] = ["pert_max"]
    specs["loss"] = nodes.add(1)
    edges["loss"] = ["margin", "pert_reg"]
    obj = Objective(build_graph(specs, edges), params=("delta",), name="margin_attack")
    return obj if stages is None else chain_partition(obj, stages)


def desk_attack_objective(
    d: int = 64,
    lam: float = 300.0,
    seed: int = 0,
    input_scale: float = 1e-3,
    stages: int | None = None,
) -> Objective:
    """The standard desk-scale attack instance.

    Inputs live in [0, input_scale]^d and the first layer is scaled by
    1 / input_scale, so hidden activations are O(1) while the logits are very
    sensitive to the input, as for an image classifier.
    """
    net = make_desk_net(d, (64, 64), 10, seed=seed, gain=1.0, input_gain=1.0 / input_scale)
    x, y = make_attack_instance(net, seed, scale=input_scale)
    return margin_attack_objective(net, x, y, lam, stages)


def abs_regression_sample(d: int) -> Objective:
    """Per-sample loss |a . theta - b|; the record (a, b) is the ``data`` root."""
    specs = {
        "theta": Root(d),
        "data": Root(d + 1),
        "resid": nodes.residual(d),
        "abs": nodes.absolute(1),
    }
    edges = {"resid": ["theta", "data"], "abs": ["resid"]}
    return Objective(
        build_graph(specs, edges),
        params=("theta",),
        constants={"data": np.zeros(d + 1)},
        name="abs_regression",
    )


# --------------------------------------------------------------------------
# chain partitioning


def _stage_blocks(n_levels: int, stages: int) -> list[list[int]]:
    if stages >= n_levels:
        return [[lv] for lv in range(1, n_levels + 1)] + [[] for _ in range(stages - n_levels)]
    return [list(map(int, b)) for b in np.array_split(np.arange(1, n_levels + 1), stages)]


def _concat(parts: list[Array]) -> Array:
    batch = np.broadcast_shapes(*(p.shape[:-1] for p in parts))
    return np.concatenate([np.broadcast_to(p, batch + p.shape[-1:]) for p in parts], axis=-1)


def _split(x: Array, names: Sequence[str], dims: Mapping[str, int]) -> dict[str, Array]:
    out, start = {}, 0
    for n in names:
        out[n] = x[..., start : start + dims[n]]
        start += dims[n]
    return out


def _stage_function(
    graph: ComputationGraph,
    members: list[str],
    carry_in: list[str],
    carry_out: list[str],
    first: bool,
) -> NodeFunction:
    """Fuse ``members`` (topologically ordered) into a single stage node.

    The first stage receives the roots as separate parents; later stages
    receive and emit one concatenated carry vector.
    """
    dims = {n: graph.dim(n) for n in set(carry_in) | set(carry_out) | set(members)}
    out_dim = sum(dims[n] for n in carry_out)
    in_dims = tuple(dims[n] for n in carry_in) if first else (sum(dims[n] for n in carry_in),)

    def unpack(u):
        return dict(zip(carry_in, u)) if first else _split(u[0], carry_in, dims)

    def run(vals):
        for m in members:
            vals[m] = graph.nodes[m].eval(tuple(vals[p] for p in graph.parents[m]))
        return vals

    if not members and not first and carry_in == carry_out:
        return NodeFunction("identity_stage", 1, out_dim, lambda u: u[0], lambda u, v: (v,), in_dims)

    def ev(u):
        vals = run(unpack(u))
        return _concat([vals[n] for n in carry_out])

    def vjp(u, v):
        vals = run(unpack(u))
        adj = _split(v, carry_out, dims)
        for m in reversed(members):
            a = adj.pop(m, None)
            if a is None:
                continue
            pnames = graph.parents[m]
            parts = graph.nodes[m].vjp(tuple(vals[p] for p in pnames), a)
            for p, g in zip(pnames, parts):
                adj[p] = adj[p] + g if p in adj else g
        grads = [adj.get(n, np.zeros_like(vals[n])) for n in carry_in]
        if first:
            return tuple(grads)
        batch = np.broadcast_shapes(v.shape[:-1], u[0].shape[:-1])
        return (_concat([np.broadcast_to(g, batch + g.shape[-1:]) for g in grads]),)

    return NodeFunction(
        f"stage[{len(members)}]", len(in_dims), out_dim, ev, vjp, in_dims
    )


def chain_partition(objective: Objective, stages: int) -> Objective:
    """Re-express ``objective`` as a chain of ``stages`` stage nodes.

    Native nodes are grouped by longest-path level into contiguous blocks.
    When the native graph is shallower than ``stages``, identity stages are
    appended after the output. Values are unchanged and the resulting graph
    has depth exactly ``stages``.
    """
    if stages < 1:
        raise ValueError("stages must be >= 1")
    g = objective.graph
    lv = levels(g)
    n_levels = max(lv.values())
    blocks = _stage_blocks(n_levels, stages)
    stage_of = {}
    for s, block in enumerate(blocks):
        for level in block:
            for n in g.order:
                if lv[n] == level:
                    stage_of[n] = s
    canonical = list(g.roots) + list(g.order)
    rank = {n: i for i, n in enumerate(canonical)}

    # last stage consuming each value
    last_use = {n: -1 for n in canonical}
    for n in g.order:
        for p in g.parents[n]:
            last_use[p] = max(last_use[p], stage_of[n])
    last_use[g.leaf] = stages
    produced_by = {r: -1 for r in g.roots} | stage_of

    specs: dict[str, NodeFunction | Root] = {r: g.nodes[r] for r in g.roots}
    edges: dict[str, list[str]] = {}
    carry_in = list(g.roots)
    prev_names = list(g.roots)
    for s in range(stages):
        members = sorted((n for n in g.order if stage_of[n] == s), key=rank.__getitem__)
        if s == stages - 1:
            carry_out = [g.leaf]
        else:
            carry_out = sorted(
                (n for n in canonical if produced_by[n] <= s and last_use[n] > s),
                key=rank.__getitem__,
            )
        name = f"stage{s + 1}"
        specs[name] = _stage_function(g, members, carry_in, carry_out, first=(s == 0))
        edges[name] = prev_names
        prev_names = [name]
        carry_in = carry_out
    new_graph = build_graph(specs, edges)
    return replace(objective, graph=new_graph, name=f"{objective.name}@{stages}")


# --------------------------------------------------------------------------
# finite sums


@dataclass(frozen=True, eq=False)
class FiniteSumObjective:
    """Uniform average of ``per_sample`` over the records in ``dataset``.

    The per-sample objective must have a constant root named ``data_root``.
    """

    per_sample: Objective
    dataset: Array
    data_root: str = "data"
    name: str = "finite_sum"

    @property
    def m(self) -> int:
        return self.dataset.shape[0]

    @property
    def param_dim(self) -> int:
        return self.per_sample.param_dim

    @property
    def initial_point(self) -> Array:
        return self.per_sample.initial_point

    def sample(self, i: int) -> Objective:
        consts = dict(self.per_sample.constants)
        consts[self.data_root] = self.dataset[i]
        return replace(self.per_sample, constants=MappingProxyType(consts))

    def per_sample_value_and_gradient(self, theta: Array, i: int):
        return self.sample(i).value_and_gradient(theta)

    def value_and_gradient(self, theta: Array):
        val, grad = self.per_sample_value_and_gradient(theta, 0)
        for i in range(1, self.m):
            v, g = self.per_sample_value_and_gradient(theta, i)
            val = val + v
            grad = grad + g
        return val / self.m, grad / self.m

    def value(self, theta: Array):
        return self.value_and_gradient(theta)[0]

    def gradient(self, theta: Array) -> Array:
        return self.value_and_gradient(theta)[1]


def finite_sum(per_sample: Objective, dataset: Array, data_root: str = "data") -> FiniteSumObjective:
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 2 or dataset.shape[0] < 1:
        raise EmptyDataset("dataset must hold at least one record")
    if data_root not in per_sample.graph.roots or data_root in per_sample.params:
        raise ValueError(f"per-sample objective needs a constant root {data_root!r}")
    if dataset.shape[1] != per_sample.graph.dim(data_root):
        raise DimensionMismatch("record dimension does not match the data root")
    return FiniteSumObjective(per_sample, dataset, data_root)


# --------------------------------------------------------------------------
# Lipschitz estimation


def _uniform_ball(rng: np.random.Generator, n: int, d: int, radius: float) -> Array:
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * (radius * rng.uniform(size=(n, 1)) ** (1.0 / d))


def estimate_lipschitz(objective: Objective, n_pairs: int, radius: float = 1.0, seed: int = 0) -> float:
    """Largest secant slope over sampled pairs in the ``radius`` ball around 0.

    Half of the pairs are independent uniform draws; the other half step
    from a uniform draw along its (sub)gradient direction, which is where
    secant slopes come closest to the true constant. The result is a lower
    estimate of L.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng([seed, 0x11B5])
    d = objective.param_dim
    n_rand = (n_pairs + 1) // 2
    n_dir = n_pairs - n_rand
    a = _uniform_ball(rng, n_rand, d, radius)
    b = _uniform_ball(rng, n_rand, d, radius)
    best = 0.0
    dist = np.linalg.norm(a - b, axis=1)
    ok = dist > 0
    if ok.any():
        fa, fb = objective.value(a[ok]), objective.value(b[ok])
        best = float(np.max(np.abs(fa - fb) / dist[ok]))
    if n_dir:
        a = _uniform_ball(rng, n_dir, d, radius)
        _, grad = objective.value_and_gradient(a)
        gn = np.linalg.norm(grad, axis=1)
        keep = gn > 0
        if keep.any():
            a, u = a[keep], grad[keep] / gn[keep, None]
            h = radius * rng.uniform(0.05, 0.5, size=(a.shape[0], 1))
            b = a - h * u
            outside = np.linalg.norm(b, axis=1) > radius
            b[outside] = a[outside] + h[outside] * u[outside]
            inside = np.linalg.norm(b, axis=1) <= radius
            if inside.any():
                num = np.abs(objective.value(a[inside]) - objective.value(b[inside]))
                best = max(best, float(np.max(num / h[inside, 0])))
    return best
