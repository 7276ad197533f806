"""Leakage contracts: which architectural facts a program execution exposes.

A contract maps every executed instruction to a set of (label, value)
observations; the contract trace is the per-step sequence of those sets. Two
runs are contract-indistinguishable when their traces match step for step
(sets compare order-free; traces of different lengths always differ).

    seq-ct    loads/stores expose their effective address, everything
              exposes the pc
    seq-ct-b  seq-ct plus the taken/not-taken bit of conditional branches
    seq-arch  seq-ct plus the loaded value of every load

Observation sets are represented as tuples sorted by label, which is the
canonical order used by the trace dump; since labels are unique within a set,
tuple equality is set equality."""

from __future__ import annotations

from enum import Enum

from .isa import (
    MASK64, ArchState, DataSection, Image, MemoryLayout, DEFAULT_LAYOUT,
    K_BRANCH, K_LOAD, K_STORE, Op, Program, TestCase,
    StepLimitExceeded, arch_step, build_image, fresh_state,
)

Observation = tuple[str, int]
ObservationSet = tuple[Observation, ...]


class ContractId(Enum):
    SEQ_CT = "seq-ct"
    SEQ_CT_B = "seq-ct-b"
    SEQ_ARCH = "seq-arch"


class ContractVerdict(Enum):
    INDISTINGUISHABLE = "Indistinguishable"
    DISTINGUISHABLE = "Distinguishable"


class NonTermination(Exception):
    """A side of the pair did not reach the tohost store within the step
    budget; the test case is discarded."""


def observe(contract: ContractId, pre: ArchState, op: Op, post: ArchState) -> ObservationSet:
    """Observation set for one instruction given the states around it."""
    pc = pre.pc
    k = op.kind
    if k == K_LOAD:
        ea = (pre.regs[op.rs1] + op.imm) & MASK64
        if contract is ContractId.SEQ_ARCH:
            return (("lAddr", ea), ("lValue", post.regs[op.rd]), ("pc", pc))
        return (("lAddr", ea), ("pc", pc))
    if k == K_STORE:
        ea = (pre.regs[op.rs1] + op.imm) & MASK64
        return (("pc", pc), ("sAddr", ea))
    if k == K_BRANCH and contract is ContractId.SEQ_CT_B:
        return (("pc", pc), ("taken", int(op.fn(pre.regs[op.rs1], pre.regs[op.rs2]))))
    return (("pc", pc),)


def _step_obs(state: ArchState, image: Image, contract: ContractId) -> ObservationSet:
    """arch_step fused with observation building (same result as `observe`
    around the step, without copying states)."""
    pc = state.pc
    op = image.ops[(pc - image.text_base) >> 2]
    k = op.kind
    if k == K_LOAD:
        ea = (state.regs[op.rs1] + op.imm) & MASK64
        arch_step(state, image)
        if contract is ContractId.SEQ_ARCH:
            return (("lAddr", ea), ("lValue", state.regs[op.rd]), ("pc", pc))
        return (("lAddr", ea), ("pc", pc))
    if k == K_STORE:
        ea = (state.regs[op.rs1] + op.imm) & MASK64
        arch_step(state, image)
        return (("pc", pc), ("sAddr", ea))
    if k == K_BRANCH and contract is ContractId.SEQ_CT_B:
        t = int(op.fn(state.regs[op.rs1], state.regs[op.rs2]))
        arch_step(state, image)
        return (("pc", pc), ("taken", t))
    arch_step(state, image)
    return (("pc", pc),)


def contract_trace(contract: ContractId, program: Program, data: DataSection,
                   max_steps: int = 100_000,
                   layout: MemoryLayout = DEFAULT_LAYOUT) -> list[ObservationSet]:
    """Full per-step observation trace of one run."""
    image = build_image(program, data, layout)
    state = fresh_state(image)
    trace: list[ObservationSet] = []
    while not state.terminated:
        if len(trace) >= max_steps:
            raise NonTermination(f"no termination within {max_steps} steps")
        trace.append(_step_obs(state, image, contract))
    return trace


def distinguishable(contract: ContractId, tc: TestCase, max_steps: int = 100_000,
                    layout: MemoryLayout = DEFAULT_LAYOUT) -> ContractVerdict:
    """Compare the two sides' traces in lockstep, bailing at the first
    difference. Equivalent to comparing the two full traces."""
    img_a = build_image(tc.program, tc.data_a, layout)
    img_b = build_image(tc.program, tc.data_b, layout)
    sa, sb = fresh_state(img_a), fresh_state(img_b)
    steps = 0
    while True:
        if sa.terminated or sb.terminated:
            if sa.terminated and sb.terminated:
                return ContractVerdict.INDISTINGUISHABLE
            return ContractVerdict.DISTINGUISHABLE  # trace length mismatch
        if steps >= max_steps:
            raise NonTermination(f"no termination within {max_steps} steps")
        try:
            if _step_obs(sa, img_a, contract) != _step_obs(sb, img_b, contract):
                return ContractVerdict.DISTINGUISHABLE
        except StepLimitExceeded as e:  # pragma: no cover - defensive
            raise NonTermination(str(e)) from None
        steps += 1


def dump_trace(trace: list[ObservationSet]) -> str:
    """Canonical text form: one line per step, labels in sorted order, values
    in hex. Stable across runs, so equal traces give equal dumps."""
    lines = []
    for i, obs in enumerate(trace):
        body = ", ".join(f"{label}={value:#x}" for label, value in obs)
        lines.append(f"step {i}: {{{body}}}")
    return "".join(line + "\n" for line in lines)
