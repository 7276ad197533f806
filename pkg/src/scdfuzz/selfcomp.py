"""Lockstep self-composition of two core instances.

Both instances run the same program on the two data sections of a test
case. Each global cycle steps instance A then instance B (an instance that
has terminated stays frozen), then emits the deviation vector between the
two micro-state snapshots.

The attacker sees only time, quantized by a poll interval:

    obs = ceil(cycles / poll_interval)

Verdicts over a cycle budget:
- both terminate, equal attacker observations  -> PASS
- both terminate, different observations       -> LEAK
- exactly one terminates within the budget     -> LEAK
- neither terminates                           -> TIMEOUT
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .coverage import DeviationVector
from .isa import TestCase, build_image
from .uarch import CoreConfig, make_core


class WidthMismatch(Exception):
    pass


def deviation(snap_a: tuple, snap_b: tuple) -> DeviationVector:
    n = len(snap_a)
    if n != len(snap_b):
        raise WidthMismatch(f"snapshot widths differ: {n} vs {len(snap_b)}")
    if snap_a == snap_b:
        return DeviationVector(n, 0)
    bits = 0
    bit = 1
    for x, y in zip(snap_a, snap_b):
        if x != y:
            bits |= bit
        bit <<= 1
    return DeviationVector(n, bits)


def attacker_obs(cycles: int, poll_interval: int) -> int:
    return -(-cycles // poll_interval)


class LockstepVerdict(Enum):
    PASS = "pass"
    LEAK = "leak"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class LockstepOutcome:
    verdict: LockstepVerdict
    cycles_a: int | None
    cycles_b: int | None
    obs_a: int | None
    obs_b: int | None

    @property
    def is_leak(self) -> bool:
        return self.verdict is LockstepVerdict.LEAK


def lockstep_run(cfg: CoreConfig, tc: TestCase, max_cycles: int = 100_000,
                 poll_interval: int = 1,
                 on_deviation: Callable[[DeviationVector], None] | None = None,
                 ) -> LockstepOutcome:
    core_a = make_core(cfg, build_image(tc.program, tc.data_a))
    core_b = make_core(cfg, build_image(tc.program, tc.data_b))
    term_a: int | None = None
    term_b: int | None = None
    cycle = 0
    while cycle < max_cycles:
        if term_a is None:
            core_a.step()
        if term_b is None:
            core_b.step()
        cycle += 1
        if term_a is None and core_a.terminated:
            term_a = cycle
        if term_b is None and core_b.terminated:
            term_b = cycle
        if on_deviation is not None:
            on_deviation(deviation(core_a.snapshot(), core_b.snapshot()))
        if term_a is not None and term_b is not None:
            break
    if term_a is not None and term_b is not None:
        oa = attacker_obs(term_a, poll_interval)
        ob = attacker_obs(term_b, poll_interval)
        verdict = LockstepVerdict.PASS if oa == ob else LockstepVerdict.LEAK
        return LockstepOutcome(verdict, term_a, term_b, oa, ob)
    if term_a is None and term_b is None:
        return LockstepOutcome(LockstepVerdict.TIMEOUT, None, None, None, None)
    oa = attacker_obs(term_a, poll_interval) if term_a is not None else None
    ob = attacker_obs(term_b, poll_interval) if term_b is not None else None
    return LockstepOutcome(LockstepVerdict.LEAK, term_a, term_b, oa, ob)
