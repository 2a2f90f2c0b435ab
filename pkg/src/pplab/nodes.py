"""Registry of node functions used to assemble objective graphs.

Every constructor returns a :class:`NodeFunction` whose eval and vjp work on
arrays with arbitrary leading batch axes. Kinks use fixed subgradient
selections: ``|t|`` and ``max(0, t)`` have slope 0 at ``t = 0`` and a max over
coordinates credits the lowest index among ties.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .graph import NodeFunction

Array = np.ndarray


def identity(dim: int) -> NodeFunction:
    return NodeFunction("identity", 1, dim, lambda u: u[0], lambda u, v: (v,), (dim,))


def scale(dim: int, c: float) -> NodeFunction:
    c = float(c)
    return NodeFunction(
        f"scale({c:g})", 1, dim, lambda u: c * u[0], lambda u, v: (c * v,), (dim,)
    )


def shift(center: Array) -> NodeFunction:
    """x -> x - center."""
    center = np.asarray(center, dtype=np.float64)
    dim = center.shape[0]
    return NodeFunction("shift", 1, dim, lambda u: u[0] - center, lambda u, v: (v,), (dim,))


def add(dim: int) -> NodeFunction:
    return NodeFunction("add", 2, dim, lambda u: u[0] + u[1], lambda u, v: (v, v), (dim, dim))


def sub_product() -> NodeFunction:
    """(a, b, c) -> a - b * c on scalars."""

    def vjp(u, v):
        a, b, c = u
        return v, -v * c, -v * b

    return NodeFunction("sub_product", 3, 1, lambda u: u[0] - u[1] * u[2], vjp, (1, 1, 1))


def sin(dim: int) -> NodeFunction:
    return NodeFunction(
        "sin", 1, dim, lambda u: np.sin(u[0]), lambda u, v: (v * np.cos(u[0]),), (dim,)
    )


def softplus(dim: int) -> NodeFunction:
    """t -> ln(1 + e^t)."""

    def vjp(u, v):
        return (v * 0.5 * (1.0 + np.tanh(0.5 * u[0])),)

    return NodeFunction("softplus", 1, dim, lambda u: np.logaddexp(0.0, u[0]), vjp, (dim,))


def absolute(dim: int) -> NodeFunction:
    return NodeFunction(
        "abs", 1, dim, lambda u: np.abs(u[0]), lambda u, v: (v * np.sign(u[0]),), (dim,)
    )


def relu(dim: int) -> NodeFunction:
    def vjp(u, v):
        return (np.where(u[0] > 0.0, v, 0.0),)

    return NodeFunction("relu", 1, dim, lambda u: np.maximum(u[0], 0.0), vjp, (dim,))


def max_coord(dim: int) -> NodeFunction:
    """x -> max_i x_i as a 1-vector; ties go to the lowest index."""

    def ev(u):
        return np.max(u[0], axis=-1, keepdims=True)

    def vjp(u, v):
        x = u[0]
        idx = np.argmax(x, axis=-1)[..., None]
        g = np.zeros(np.broadcast_shapes(x.shape, v.shape[:-1] + (1,)))
        np.put_along_axis(g, np.broadcast_to(idx, g.shape[:-1] + (1,)), v, axis=-1)
        return (g,)

    return NodeFunction("max", 1, 1, ev, vjp, (dim,))


def linear_form(a: Array) -> NodeFunction:
    """x -> a . x."""
    a = np.asarray(a, dtype=np.float64)
    dim = a.shape[0]

    def ev(u):
        return np.einsum("...i,i->...", u[0], a)[..., None]

    def vjp(u, v):
        return (v * a,)

    return NodeFunction("linear_form", 1, 1, ev, vjp, (dim,))


def affine(weight: Array, bias: Array) -> NodeFunction:
    """x -> W x + b.

    Uses einsum so that a batched call gives bitwise the same rows as
    row-by-row calls.
    """
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    out_dim, in_dim = weight.shape

    def ev(u):
        return np.einsum("...i,ji->...j", u[0], weight) + bias

    def vjp(u, v):
        return (np.einsum("...j,ji->...i", v, weight),)

    return NodeFunction("affine", 1, out_dim, ev, vjp, (in_dim,))


def half_sq_norm(dim: int, beta: float) -> NodeFunction:
    """x -> (beta/2) ||x||^2."""
    beta = float(beta)

    def ev(u):
        return 0.5 * beta * np.einsum("...i,...i->...", u[0], u[0])[..., None]

    return NodeFunction("half_sq_norm", 1, 1, ev, lambda u, v: (beta * v * u[0],), (dim,))


def multi_margin(n_classes: int, target: int) -> NodeFunction:
    """logits -> sum_{i != y} max(0, 1 - l_y + l_i)."""
    others = np.array([i for i in range(n_classes) if i != target])

    def ev(u):
        l = u[0]
        h = 1.0 - l[..., target : target + 1] + l[..., others]
        return np.sum(np.maximum(h, 0.0), axis=-1, keepdims=True)

    def vjp(u, v):
        l = u[0]
        h = 1.0 - l[..., target : target + 1] + l[..., others]
        active = np.where(h > 0.0, 1.0, 0.0) * v
        g = np.zeros(np.broadcast_shapes(l.shape, v.shape[:-1] + (n_classes,)))
        g[..., others] = active
        g[..., target] = -np.sum(active, axis=-1)
        return (g,)

    return NodeFunction("multi_margin", 1, 1, ev, vjp, (n_classes,))


def residual(dim: int) -> NodeFunction:
    """(theta, record) -> a . theta - b where record = (a, b)."""

    def ev(u):
        theta, rec = u
        return (np.einsum("...i,...i->...", theta, rec[..., :dim]) - rec[..., dim])[..., None]

    def vjp(u, v):
        theta, rec = u
        vt = v * theta
        g_rec = np.concatenate([vt, np.broadcast_to(-v, vt.shape[:-1] + (1,))], axis=-1)
        return v * rec[..., :dim], g_rec

    return NodeFunction("residual", 2, 1, ev, vjp, (dim, dim + 1))


REGISTRY: dict[str, Callable[..., NodeFunction]] = {
    "identity": identity,
    "scale": scale,
    "shift": shift,
    "add": add,
    "sub_product": sub_product,
    "sin": sin,
    "softplus": softplus,
    "abs": absolute,
    "relu": relu,
    "max": max_coord,
    "linear_form": linear_form,
    "affine": affine,
    "half_sq_norm": half_sq_norm,
    "multi_margin": multi_margin,
    "residual": residual,
}
