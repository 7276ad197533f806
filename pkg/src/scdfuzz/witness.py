"""A hand-built witness test case for speculative cache-timing leakage.

The program trains nothing and needs only the reset predictor state: the
guard branch is predicted not-taken on first sight, so the core runs the
fall-through shadow speculatively while the branch waits on a chain of two
cache-missing loads. The shadow reads a secret word, masks one bit out of
it, adds the bit into the probe's address register, and issues the probe
load, whose line is installed the moment the access starts. The squash
throws the shadow's results away but not the cache line. The architectural
probe then hits or misses depending on the secret bit.

Layout (data offsets from the data base):
    0x140  pointer word, value 0x1c0 (both sides)
    0x1c0  guard word, value 0 so the branch is taken (both sides)
    0x180  secret word: 0 on side A, 64 on side B (the only difference)
    0x200  probe line for secret bit 0
    0x240  probe line for secret bit 64

Both sides take the branch, so the secret load is never architecturally
executed and the two sides are contract-indistinguishable even under the
strongest contract here (seq-arch). On the speculative core the probe is a
hit on side A and a miss on side B, so the cycle counts differ by exactly
miss latency minus hit latency. An in-order core never runs the shadow and
times both sides identically."""

from __future__ import annotations

from .isa import (
    DATA_WORDS, DataSection, Instruction, InstructionWord, Program, TestCase,
)

PTR_OFF = 0x140      # holds GUARD_OFF
GUARD_OFF = 0x1C0    # holds 0 -> beq taken
SECRET_OFF = 0x180   # differs between the sides
PROBE_OFF = 0x200    # architectural probe target
SECRET_BIT = 64      # the bit the shadow copies into the probe address

SECRET_A = 0
SECRET_B = SECRET_BIT


def witness_program() -> Program:
    I = Instruction
    W = InstructionWord
    words = (
        # L0..L1: set up the data base and the clean probe address
        W((I("lui", rd=20, imm=0x80004),)),
        W((I("addi", rd=28, rs1=20, imm=PROBE_OFF),)),
        # L2..L4: pointer chase, two dependent cache misses; the branch
        # condition is not known until both finish
        W((I("ld", rd=21, rs1=20, imm=PTR_OFF),)),
        W((I("add", rd=26, rs1=21, rs2=20),)),
        W((I("ld", rd=27, rs1=26, imm=0),)),
        # L5: guard branch, taken on both sides, predicted not-taken
        W((I("beq", rs1=27, rs2=0, imm=0),), target=8),
        # L6..L7: the shadow, architecturally skipped
        W((I("ld", rd=22, rs1=20, imm=SECRET_OFF),)),
        W((I("andi", rd=23, rs1=22, imm=SECRET_BIT),
           I("add", rd=28, rs1=23, rs2=28))),
        # L8: probe, reached by both the wrong path and the branch target
        W((I("ld", rd=25, rs1=28, imm=0),)),
    )
    prog = Program(words)
    prog.validate()
    return prog


def witness_data() -> tuple[DataSection, DataSection]:
    base = [0] * DATA_WORDS
    base[PTR_OFF // 8] = GUARD_OFF
    base[GUARD_OFF // 8] = 0
    side_a = list(base)
    side_b = list(base)
    side_a[SECRET_OFF // 8] = SECRET_A
    side_b[SECRET_OFF // 8] = SECRET_B
    return DataSection(tuple(side_a)), DataSection(tuple(side_b))


def spectre_witness() -> TestCase:
    data_a, data_b = witness_data()
    return TestCase(witness_program(), data_a, data_b)
