"""Gaussian randomized smoothing and sampled Clarke subdifferentials."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteGradient
from .pipeline import simulate_iteration

Array = np.ndarray

# stream tags keep the noise of different consumers disjoint
_GRAD_STREAM = 0x5A17
_VALUE_STREAM = 0x7A1E
_CLARKE_STREAM = 0xC1A4


@dataclass(frozen=True)
class SmoothingConfig:
    gamma: float
    samples: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")


def gaussian_directions(seed: int, iteration: int, k: int, d: int) -> Array:
    """The K standard-normal perturbations used at ``iteration``.

    Row ``k`` is a fixed function of (seed, iteration, k): every iteration has
    its own counter-keyed stream and all K rows are drawn before any gradient
    is computed, so evaluation order never changes the noise.
    """
    rng = np.random.default_rng([seed, iteration, _GRAD_STREAM])
    return rng.standard_normal((k, d))


def smoothed_gradient(
    objective,
    theta: Array,
    config: SmoothingConfig,
    pipeline: int | None = None,
    iteration: int = 0,
    tau: int = 0,
) -> tuple[Array, int]:
    """Average of K gradients at Gaussian perturbations of ``theta``.

    With ``pipeline`` set to the chain depth, the K gradients are charged as one
    bubbling pass of 2(K + depth - 1) slots; otherwise 2 slots per sample.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteGradient("theta is not finite")
    k = config.samples
    points = theta + config.gamma * gaussian_directions(config.seed, iteration, k, theta.shape[-1])
    if pipeline is not None:
        if objective.depth != pipeline:
            raise DimensionMismatch(
                f"objective has depth {objective.depth}, pipeline has {pipeline} stages;"
                " chain_partition it first"
            )
        grads, elapsed = simulate_iteration(objective, points, tau)
    else:
        grads = objective.gradient(points)
        elapsed = 2 * k
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("objective returned a non-finite gradient")
    # mean shifted by the first sample: exact when all samples agree, and the
    # axis-0 sum accumulates rows in microbatch order
    return grads[0] + (grads - grads[0]).sum(axis=0) / k, elapsed


def smoothed_value(
    objective, theta: Array, gamma: float, n_mc: int, seed: int = 0, chunk: int = 100_000
) -> tuple[float, float]:
    """Monte-Carlo estimate of E f(theta + gamma X) and its 99% half-width."""
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    theta = np.asarray(theta, dtype=np.float64)
    rng = np.random.default_rng([seed, _VALUE_STREAM])
    ref = None
    s1 = s2 = 0.0
    done = 0
    while done < n_mc:
        n = min(chunk, n_mc - done)
        vals = np.asarray(objective.value(theta + gamma * rng.standard_normal((n, theta.shape[-1]))))
        if ref is None:
            ref = float(vals[0])
        dev = vals - ref
        s1 += float(dev.sum())
        s2 += float(dev @ dev)
        done += n
    mean_dev = s1 / n_mc
    var = max(s2 - s1 * mean_dev, 0.0) / (n_mc - 1)
    z = NormalDist().inv_cdf(0.995)
    return ref + mean_dev, z * math.sqrt(var / n_mc)


def smoothing_bounds(L: float, gamma: float, d: int) -> tuple[float, float]:
    """(sup-norm gap between f and its smoothing, smoothness of the smoothing)."""
    if L <= 0 or gamma <= 0 or d < 1:
        raise ValueError("need L > 0, gamma > 0, d >= 1")
    return gamma * L * math.sqrt(d), L / gamma


# --------------------------------------------------------------------------
# Clarke r-subdifferential


@dataclass(frozen=True, eq=False)
class ClarkeEstimate:
    point: Array
    radius: float
    gradients: Array  # (n, d) sampled gradients inside the ball
    weights: Array  # convex weights of the min-norm element
    min_norm_element: Array
    min_norm: float


def min_norm_point(points: Array, tol: float = 1e-10, max_iter: int = 100_000) -> Array:
    """Convex weights of the minimum-norm point of conv(points).

    Pairwise conditional gradient on the simplex for 1/2 ||P^T w||^2 with
    exact line search. Stops once the duality gap drops below ``tol``.
    """
    p = np.asarray(points, dtype=np.float64)
    n = p.shape[0]
    sq = np.einsum("ij,ij->i", p, p)
    w = np.zeros(n)
    start = int(np.argmin(sq))
    w[start] = 1.0
    x = p[start].copy()
    for it in range(max_iter):
        if it % 256 == 255:
            x = w @ p
        grad = p @ x
        s = int(np.argmin(grad))
        gap = float(x @ x - grad[s])
        if gap <= tol:
            break
        active = np.flatnonzero(w > 0)
        a = int(active[np.argmax(grad[active])])
        if a == s:
            break
        direction = p[s] - p[a]
        denom = float(direction @ direction)
        if denom == 0.0:
            break
        step = min(max(-float(x @ direction) / denom, 0.0), w[a])
        if step == 0.0:
            break
        w[s] += step
        w[a] -= step
        if w[a] <= 1e-300:
            w[a] = 0.0
        x = x + step * direction
    return w


def _uniform_ball(rng: np.random.Generator, n: int, d: int, r: float) -> Array:
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * (r * rng.uniform(size=(n, 1)) ** (1.0 / d))


def clarke_min_norm(
    objective, theta: Array, r: float, n_samples: int, seed: int | Sequence[int] = 0
) -> ClarkeEstimate:
    """Sampled inner approximation of the min-norm element of the Clarke r-subdifferential.

    The estimate is an upper bound on the true minimum norm.
    """
    if not r > 0 or n_samples < 1:
        raise ValueError("need r > 0 and n_samples >= 1")
    theta = np.asarray(theta, dtype=np.float64)
    rng = np.random.default_rng([*np.atleast_1d(seed).tolist(), _CLARKE_STREAM])
    ys = theta + _uniform_ball(rng, n_samples, theta.shape[-1], r)
    grads = np.asarray(objective.gradient(ys))
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("objective returned a non-finite gradient")
    w = min_norm_point(grads)
    elem = w @ grads
    return ClarkeEstimate(theta, r, grads, w, elem, float(np.linalg.norm(elem)))


def time_to_reach(history: Sequence[tuple[float, ClarkeEstimate | float]], epsilon: float) -> float | None:
    """First timestamp whose min-norm is at most ``epsilon``; None if never."""
    for t, est in history:
        norm = est.min_norm if isinstance(est, ClarkeEstimate) else float(est)
        if norm <= epsilon:
            return t
    return None
