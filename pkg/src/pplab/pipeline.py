"""Logical-time simulation of pipeline-parallel gradient computation.

One slot is one forward or backward pass of one stage. Stage ``i`` of a
chain may start the forward pass of microbatch ``k`` once stage ``i - 1``
finished it, plus ``tau`` slots of transfer latency. Backward passes flow the
other way and only begin after the whole forward wavefront has drained.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .errors import DimensionMismatch, UnknownMode

Kind = Literal["forward", "backward"]


class ScheduleCell(NamedTuple):  # tuple ordering sorts by slot first
    slot: int
    unit: int
    kind: Kind
    microbatch: int


@dataclass(frozen=True)
class PipelineSchedule:
    cells: tuple[ScheduleCell, ...]
    stages: int
    microbatches: int
    comm_delay: int = 0

    @property
    def makespan(self) -> int:
        return max((c.slot for c in self.cells), default=0)


@dataclass(frozen=True)
class Violation:
    rule: str
    unit: int
    microbatch: int
    slot: int
    message: str


def _wavefront(delta: int, k: int, tau: int) -> list[ScheduleCell]:
    """Cells in (slot, unit) order: a forward wavefront, then a backward one.

    Unit ``i`` runs forward ``j`` at slot ``j + (i - 1) hop`` and backward ``j``
    at slot ``fwd_end + j + (delta - i) hop``.
    """
    hop = 1 + tau
    fwd_end = k + (delta - 1) * hop
    cells = []
    for slot in range(1, fwd_end + 1):
        lo, hi = max(0, -((k - slot) // hop)), min(delta - 1, (slot - 1) // hop)
        cells += [ScheduleCell(slot, n + 1, "forward", slot - n * hop) for n in range(lo, hi + 1)]
    for slot in range(1, fwd_end + 1):
        lo, hi = max(0, -((k - slot) // hop)), min(delta - 1, (slot - 1) // hop)
        cells += [ScheduleCell(fwd_end + slot, delta - n, "backward", slot - n * hop) for n in range(hi, lo - 1, -1)]
    return cells


def bubbling_schedule(delta: int, k: int, tau: int = 0) -> PipelineSchedule:
    """K inputs fed one slot apart, forward wavefront then backward wavefront."""
    if delta < 1 or k < 1 or tau < 0:
        raise ValueError("need delta >= 1, k >= 1, tau >= 0")
    return PipelineSchedule(tuple(_wavefront(delta, k, tau)), delta, k, tau)


def nse_schedule(delta: int, tau: int = 0) -> PipelineSchedule:
    """One full gradient computed sequentially through all stages."""
    return bubbling_schedule(delta, 1, tau)


def gpipe_erm_schedule(delta: int, m: int, k: int = 1, tau: int = 0) -> PipelineSchedule:
    """m samples times K microbatches each, all pipelined in one wavefront.

    Injection ``j`` belongs to sample ``(j - 1) // k + 1``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    return bubbling_schedule(delta, m * k, tau)


def bubbling_time(delta: int, k: int, tau: int = 0) -> int:
    return 2 * k + 2 * (delta - 1) * (1 + tau)


def nse_time(delta: int, tau: int = 0) -> int:
    return bubbling_time(delta, 1, tau)


def gpipe_erm_time(delta: int, m: int, k: int = 1, tau: int = 0) -> int:
    return bubbling_time(delta, m * k, tau)


def validate(schedule: PipelineSchedule) -> Violation | None:
    """First violated rule in slot order, or None when the schedule is sound."""
    hop = 1 + schedule.comm_delay
    when: dict[tuple[int, str, int], int] = {}
    busy: dict[tuple[int, int], ScheduleCell] = {}
    for c in sorted(schedule.cells):
        if (c.unit, c.slot) in busy:
            return Violation("exclusive", c.unit, c.microbatch, c.slot,
                             f"unit {c.unit} runs two cells in slot {c.slot}")
        busy[(c.unit, c.slot)] = c
        when.setdefault((c.unit, c.kind, c.microbatch), c.slot)

    for c in sorted(schedule.cells):
        i, k = c.unit, c.microbatch
        if c.slot < 1 or not 1 <= i <= schedule.stages:
            return Violation("range", i, k, c.slot, "cell outside the schedule grid")
        if c.kind == "forward":
            if i > 1:
                prev = when.get((i - 1, "forward", k))
                if prev is None or prev > c.slot - hop:
                    return Violation("forward", i, k, c.slot,
                                     f"FP({i},{k}) before FP({i - 1},{k}) is available")
        else:
            own = when.get((i, "forward", k))
            if own is None or own >= c.slot:
                return Violation("backward", i, k, c.slot,
                                 f"BP({i},{k}) before FP({i},{k})")
            if i < schedule.stages:
                nxt = when.get((i + 1, "backward", k))
                if nxt is None or nxt > c.slot - hop:
                    return Violation("backward", i, k, c.slot,
                                     f"BP({i},{k}) before BP({i + 1},{k}) is available")
    return None


def utilization(schedule: PipelineSchedule) -> list[float]:
    busy = np.zeros(schedule.stages)
    for c in schedule.cells:
        busy[c.unit - 1] += 1
    return list(busy / schedule.makespan)


def schedule_csv(schedule: PipelineSchedule) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "slot", "kind", "microbatch"])
    for c in sorted(schedule.cells, key=lambda c: (c.slot, c.unit)):
        w.writerow([c.unit, c.slot, c.kind, c.microbatch])
    return buf.getvalue()


def make_schedule(mode: str, delta: int, k: int = 1, m: int = 1, tau: int = 0) -> PipelineSchedule:
    if mode == "bubbling":
        return bubbling_schedule(delta, k, tau)
    if mode == "nse":
        return nse_schedule(delta, tau)
    if mode == "gpipe":
        return gpipe_erm_schedule(delta, m, k, tau)
    raise UnknownMode(f"unknown schedule mode {mode!r} (bubbling, nse, gpipe)")


def simulate_iteration(objective, inputs: np.ndarray, tau: int = 0) -> tuple[np.ndarray, int]:
    """Gradients at the K rows of ``inputs`` and the slots the pipeline needs.

    The K microbatches travel through the chain together; each row's result
    is bitwise what a lone forward/backward sweep on it would return.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != objective.param_dim:
        raise DimensionMismatch(
            f"expected (K, {objective.param_dim}) inputs, got {inputs.shape}"
        )
    _, grads = objective.value_and_gradient(inputs)
    return grads, bubbling_time(objective.depth, inputs.shape[0], tau)

