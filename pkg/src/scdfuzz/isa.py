"""RV64I(+M) subset: instruction model, codec, program images, and the
architectural interpreter.

The interpreter here is the reference semantics for the whole package. The
cycle-level cores in `uarch` re-implement execution on purpose, so that
retirement streams can be compared against `run_arch` as two independent
routes.

Programs are lists of labeled instruction words (1..4 instructions each, the
"main" instruction last). Branch and jump targets are word labels that always
point strictly forward, which bounds every run by the instruction count.
`build_image` expands a program into a flat executable image:

    prologue (x1..x31 <- first 31 data words) . body words . epilogue

The epilogue stores 1 to the `tohost` address, which is the termination
condition. Memory addresses are computed mod 2**64 (that raw value is what
leaks into contract observations) but the physical memory and caches mask
addresses to 32 bits, so the `lui 0x80004` sign-extension alias lands on the
data region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

MASK64 = (1 << 64) - 1
PHYS_MASK = 0xFFFF_FFFF

DATA_BYTES = 3072
DATA_WORDS = DATA_BYTES // 8


class IsaError(Exception):
    pass


class UnsupportedInstruction(IsaError):
    pass


class FetchOutOfRange(IsaError):
    pass


class MisalignedAccess(IsaError):
    pass


class StepLimitExceeded(IsaError):
    pass


class ImageOverlap(IsaError):
    pass


class ProgramInvariantError(IsaError):
    pass


@dataclass(frozen=True)
class MemoryLayout:
    text_base: int = 0x8000_0000
    tohost: int = 0x8000_1000
    data_base: int = 0x8000_4000


DEFAULT_LAYOUT = MemoryLayout()


def sext(value: int, bits: int) -> int:
    m = 1 << (bits - 1)
    return ((value & ((1 << bits) - 1)) ^ m) - m


def to_signed(v: int) -> int:
    return v - (1 << 64) if v >> 63 else v


# ============================================================================
# Instruction set tables
# ============================================================================

# name -> (format, opcode, funct3, funct7)
# formats: R, I, IS (I with 6-bit shamt), ISW (I with 5-bit shamt), L (load),
#          S, B, U, J, JR (jalr)
_ENC: dict[str, tuple[str, int, int, int]] = {
    # RV64I register-register
    "add":   ("R", 0x33, 0, 0x00), "sub":  ("R", 0x33, 0, 0x20),
    "sll":   ("R", 0x33, 1, 0x00), "slt":  ("R", 0x33, 2, 0x00),
    "sltu":  ("R", 0x33, 3, 0x00), "xor":  ("R", 0x33, 4, 0x00),
    "srl":   ("R", 0x33, 5, 0x00), "sra":  ("R", 0x33, 5, 0x20),
    "or":    ("R", 0x33, 6, 0x00), "and":  ("R", 0x33, 7, 0x00),
    "addw":  ("R", 0x3B, 0, 0x00), "subw": ("R", 0x3B, 0, 0x20),
    "sllw":  ("R", 0x3B, 1, 0x00), "srlw": ("R", 0x3B, 5, 0x00),
    "sraw":  ("R", 0x3B, 5, 0x20),
    # M extension
    "mul":    ("R", 0x33, 0, 0x01), "mulh":  ("R", 0x33, 1, 0x01),
    "mulhsu": ("R", 0x33, 2, 0x01), "mulhu": ("R", 0x33, 3, 0x01),
    "div":    ("R", 0x33, 4, 0x01), "divu":  ("R", 0x33, 5, 0x01),
    "rem":    ("R", 0x33, 6, 0x01), "remu":  ("R", 0x33, 7, 0x01),
    "mulw":   ("R", 0x3B, 0, 0x01), "divw":  ("R", 0x3B, 4, 0x01),
    "divuw":  ("R", 0x3B, 5, 0x01), "remw":  ("R", 0x3B, 6, 0x01),
    "remuw":  ("R", 0x3B, 7, 0x01),
    # register-immediate
    "addi":  ("I", 0x13, 0, 0), "slti":  ("I", 0x13, 2, 0),
    "sltiu": ("I", 0x13, 3, 0), "xori":  ("I", 0x13, 4, 0),
    "ori":   ("I", 0x13, 6, 0), "andi":  ("I", 0x13, 7, 0),
    "slli":  ("IS", 0x13, 1, 0x00), "srli": ("IS", 0x13, 5, 0x00),
    "srai":  ("IS", 0x13, 5, 0x10),
    "addiw": ("I", 0x1B, 0, 0),
    "slliw": ("ISW", 0x1B, 1, 0x00), "srliw": ("ISW", 0x1B, 5, 0x00),
    "sraiw": ("ISW", 0x1B, 5, 0x20),
    # memory
    "lb":  ("L", 0x03, 0, 0), "lh":  ("L", 0x03, 1, 0),
    "lw":  ("L", 0x03, 2, 0), "ld":  ("L", 0x03, 3, 0),
    "lbu": ("L", 0x03, 4, 0), "lhu": ("L", 0x03, 5, 0),
    "lwu": ("L", 0x03, 6, 0),
    "sb": ("S", 0x23, 0, 0), "sh": ("S", 0x23, 1, 0),
    "sw": ("S", 0x23, 2, 0), "sd": ("S", 0x23, 3, 0),
    # control flow
    "beq":  ("B", 0x63, 0, 0), "bne":  ("B", 0x63, 1, 0),
    "blt":  ("B", 0x63, 4, 0), "bge":  ("B", 0x63, 5, 0),
    "bltu": ("B", 0x63, 6, 0), "bgeu": ("B", 0x63, 7, 0),
    "jal":  ("J", 0x6F, 0, 0), "jalr": ("JR", 0x67, 0, 0),
    "lui":  ("U", 0x37, 0, 0), "auipc": ("U", 0x17, 0, 0),
}

M_EXT_NAMES = frozenset(
    n for n, (_, op, f3, f7) in _ENC.items() if op in (0x33, 0x3B) and f7 == 0x01
)
LOAD_NAMES = frozenset(n for n, e in _ENC.items() if e[0] == "L")
STORE_NAMES = frozenset(n for n, e in _ENC.items() if e[0] == "S")
BRANCH_NAMES = frozenset(n for n, e in _ENC.items() if e[0] == "B")
CF_NAMES = BRANCH_NAMES | {"jal", "jalr"}

# load name -> (width, sign-extend)
_LOAD_SHAPE = {
    "lb": (1, True), "lh": (2, True), "lw": (4, True), "ld": (8, False),
    "lbu": (1, False), "lhu": (2, False), "lwu": (4, False),
}
_STORE_WIDTH = {"sb": 1, "sh": 2, "sw": 4, "sd": 8}

_R_DEC = {
    (e[1], e[2], e[3]): n for n, e in _ENC.items() if e[0] == "R"
}
_I_DEC = {
    (e[1], e[2]): n for n, e in _ENC.items() if e[0] in ("I", "L", "S", "B")
}


def _imm_bounds(fmt: str, name: str) -> tuple[int, int]:
    if fmt == "R":
        return (0, 0)
    if fmt == "I" or fmt == "L" or fmt == "S" or fmt == "JR":
        return (-2048, 2047)
    if fmt == "IS":
        return (0, 63)
    if fmt == "ISW":
        return (0, 31)
    if fmt == "B":
        return (-4096, 4094)
    if fmt == "U":
        return (0, 0xFFFFF)
    if fmt == "J":
        return (-(1 << 20), (1 << 20) - 2)
    raise AssertionError(fmt)


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction. `imm` is the sign-extended immediate except for
    U-format, where it is the raw 20-bit field."""

    name: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0

    def __post_init__(self):
        enc = _ENC.get(self.name)
        if enc is None:
            raise UnsupportedInstruction(self.name)
        for r in (self.rd, self.rs1, self.rs2):
            if not 0 <= r <= 31:
                raise ProgramInvariantError(f"register x{r} out of range")
        lo, hi = _imm_bounds(enc[0], self.name)
        if not lo <= self.imm <= hi:
            raise ProgramInvariantError(
                f"{self.name} immediate {self.imm} outside [{lo}, {hi}]"
            )
        if enc[0] in ("B", "J") and self.imm & 1:
            raise ProgramInvariantError(f"{self.name} immediate must be even")


def encode(ins: Instruction) -> int:
    """Instruction -> 32-bit word."""
    fmt, opcode, f3, f7 = _ENC[ins.name]
    rd, rs1, rs2, imm = ins.rd, ins.rs1, ins.rs2, ins.imm
    if fmt == "R":
        return (f7 << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opcode
    if fmt in ("I", "L", "JR"):
        return ((imm & 0xFFF) << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opcode
    if fmt == "IS":
        return ((f7 << 6 | imm) << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opcode
    if fmt == "ISW":
        return (f7 << 25) | (imm << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opcode
    if fmt == "S":
        lo, hi = imm & 0x1F, (imm >> 5) & 0x7F
        return (hi << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (lo << 7) | opcode
    if fmt == "B":
        b12 = (imm >> 12) & 1
        b11 = (imm >> 11) & 1
        b10_5 = (imm >> 5) & 0x3F
        b4_1 = (imm >> 1) & 0xF
        return (
            (b12 << 31) | (b10_5 << 25) | (rs2 << 20) | (rs1 << 15)
            | (f3 << 12) | (b4_1 << 8) | (b11 << 7) | opcode
        )
    if fmt == "U":
        return (imm << 12) | (rd << 7) | opcode
    if fmt == "J":
        b20 = (imm >> 20) & 1
        b19_12 = (imm >> 12) & 0xFF
        b11 = (imm >> 11) & 1
        b10_1 = (imm >> 1) & 0x3FF
        return (b20 << 31) | (b10_1 << 21) | (b11 << 20) | (b19_12 << 12) | (rd << 7) | opcode
    raise AssertionError(fmt)


def decode(word: int, m_extension: bool = False) -> Instruction:
    """32-bit word -> Instruction. Raises UnsupportedInstruction outside the
    subset, including the mul/div group when `m_extension` is off."""
    if not 0 <= word <= 0xFFFF_FFFF:
        raise UnsupportedInstruction(f"not a 32-bit word: {word:#x}")
    opcode = word & 0x7F
    rd = (word >> 7) & 0x1F
    f3 = (word >> 12) & 0x7
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    f7 = word >> 25

    def _need(name: str | None) -> str:
        if name is None:
            raise UnsupportedInstruction(f"{word:#010x}")
        if name in M_EXT_NAMES and not m_extension:
            raise UnsupportedInstruction(f"{name} requires the M extension")
        return name

    if opcode in (0x33, 0x3B):
        name = _need(_R_DEC.get((opcode, f3, f7)))
        return Instruction(name, rd=rd, rs1=rs1, rs2=rs2)
    if opcode == 0x13 and f3 in (1, 5):
        hi6 = word >> 26
        shamt = (word >> 20) & 0x3F
        name = {(1, 0x00): "slli", (5, 0x00): "srli", (5, 0x10): "srai"}.get((f3, hi6))
        return Instruction(_need(name), rd=rd, rs1=rs1, imm=shamt)
    if opcode == 0x1B and f3 in (1, 5):
        shamt = (word >> 20) & 0x1F
        name = {(1, 0x00): "slliw", (5, 0x00): "srliw", (5, 0x20): "sraiw"}.get((f3, f7))
        return Instruction(_need(name), rd=rd, rs1=rs1, imm=shamt)
    if opcode in (0x13, 0x1B, 0x03, 0x67):
        if opcode == 0x67:
            name = "jalr" if f3 == 0 else None
        else:
            name = _I_DEC.get((opcode, f3))
        return Instruction(_need(name), rd=rd, rs1=rs1, imm=sext(word >> 20, 12))
    if opcode == 0x23:
        name = _need(_I_DEC.get((opcode, f3)))
        imm = sext((f7 << 5) | rd, 12)
        return Instruction(name, rs1=rs1, rs2=rs2, imm=imm)
    if opcode == 0x63:
        name = _need(_I_DEC.get((opcode, f3)))
        imm = (
            ((word >> 31) << 12) | (((word >> 7) & 1) << 11)
            | (((word >> 25) & 0x3F) << 5) | (((word >> 8) & 0xF) << 1)
        )
        return Instruction(name, rs1=rs1, rs2=rs2, imm=sext(imm, 13))
    if opcode in (0x37, 0x17):
        name = "lui" if opcode == 0x37 else "auipc"
        return Instruction(name, rd=rd, imm=word >> 12)
    if opcode == 0x6F:
        imm = (
            ((word >> 31) << 20) | (((word >> 12) & 0xFF) << 12)
            | (((word >> 20) & 1) << 11) | (((word >> 21) & 0x3FF) << 1)
        )
        return Instruction("jal", rd=rd, imm=sext(imm, 21))
    raise UnsupportedInstruction(f"{word:#010x}")


# ============================================================================
# Semantics
# ============================================================================

def _w(x: int) -> int:
    return sext(x, 32) & MASK64


def _add(a, b): return (a + b) & MASK64
def _sub(a, b): return (a - b) & MASK64
def _sll(a, b): return (a << (b & 63)) & MASK64
def _slt(a, b): return int(to_signed(a) < to_signed(b))
def _sltu(a, b): return int(a < b)
def _xor(a, b): return a ^ b
def _srl(a, b): return a >> (b & 63)
def _sra(a, b): return (to_signed(a) >> (b & 63)) & MASK64
def _or(a, b): return a | b
def _and(a, b): return a & b
def _addw(a, b): return _w(a + b)
def _subw(a, b): return _w(a - b)
def _sllw(a, b): return _w(a << (b & 31))
def _srlw(a, b): return _w((a & 0xFFFFFFFF) >> (b & 31))
def _sraw(a, b): return _w(sext(a, 32) >> (b & 31))


def _mul(a, b): return (a * b) & MASK64
def _mulh(a, b): return ((to_signed(a) * to_signed(b)) >> 64) & MASK64
def _mulhsu(a, b): return ((to_signed(a) * b) >> 64) & MASK64
def _mulhu(a, b): return ((a * b) >> 64) & MASK64


def _divq(sa: int, sb: int) -> int:
    q = abs(sa) // abs(sb)
    return -q if (sa < 0) != (sb < 0) else q


def _div(a, b):
    sa, sb = to_signed(a), to_signed(b)
    if sb == 0:
        return MASK64
    if sa == -(1 << 63) and sb == -1:
        return a
    return _divq(sa, sb) & MASK64


def _divu(a, b): return MASK64 if b == 0 else a // b


def _rem(a, b):
    sa, sb = to_signed(a), to_signed(b)
    if sb == 0:
        return a
    if sa == -(1 << 63) and sb == -1:
        return 0
    return (sa - _divq(sa, sb) * sb) & MASK64


def _remu(a, b): return a if b == 0 else a % b
def _mulw(a, b): return _w(a * b)


def _divw(a, b):
    sa, sb = sext(a, 32), sext(b, 32)
    if sb == 0:
        return MASK64
    if sa == -(1 << 31) and sb == -1:
        return _w(sa)
    return _w(_divq(sa, sb))


def _divuw(a, b):
    ua, ub = a & 0xFFFFFFFF, b & 0xFFFFFFFF
    return MASK64 if ub == 0 else _w(ua // ub)


def _remw(a, b):
    sa, sb = sext(a, 32), sext(b, 32)
    if sb == 0:
        return _w(sa)
    if sa == -(1 << 31) and sb == -1:
        return 0
    return _w(sa - _divq(sa, sb) * sb)


def _remuw(a, b):
    ua, ub = a & 0xFFFFFFFF, b & 0xFFFFFFFF
    return _w(ua) if ub == 0 else _w(ua % ub)


ALU_FNS = {
    "add": _add, "sub": _sub, "sll": _sll, "slt": _slt, "sltu": _sltu,
    "xor": _xor, "srl": _srl, "sra": _sra, "or": _or, "and": _and,
    "addw": _addw, "subw": _subw, "sllw": _sllw, "srlw": _srlw, "sraw": _sraw,
    "mul": _mul, "mulh": _mulh, "mulhsu": _mulhsu, "mulhu": _mulhu,
    "div": _div, "divu": _divu, "rem": _rem, "remu": _remu,
    "mulw": _mulw, "divw": _divw, "divuw": _divuw, "remw": _remw, "remuw": _remuw,
}

_RI_TO_RR = {
    "addi": "add", "slti": "slt", "sltiu": "sltu", "xori": "xor",
    "ori": "or", "andi": "and", "slli": "sll", "srli": "srl", "srai": "sra",
    "addiw": "addw", "slliw": "sllw", "srliw": "srlw", "sraiw": "sraw",
}

BRANCH_FNS = {
    "beq": lambda a, b: a == b,
    "bne": lambda a, b: a != b,
    "blt": lambda a, b: to_signed(a) < to_signed(b),
    "bge": lambda a, b: to_signed(a) >= to_signed(b),
    "bltu": lambda a, b: a < b,
    "bgeu": lambda a, b: a >= b,
}


# ============================================================================
# Programs and test cases
# ============================================================================

@dataclass(frozen=True)
class InstructionWord:
    """1..4 instructions; the main instruction is last. `target` is the label
    index of the main instruction's branch/jump destination (strictly after
    this word; len(words) names the epilogue)."""

    instrs: tuple[Instruction, ...]
    target: int | None = None


@dataclass(frozen=True)
class Program:
    words: tuple[InstructionWord, ...]
    seed_id: str | None = None

    def validate(self) -> None:
        n = len(self.words)
        for k, w in enumerate(self.words):
            if not 1 <= len(w.instrs) <= 4:
                raise ProgramInvariantError(f"word L{k} has {len(w.instrs)} instructions")
            main = w.instrs[-1]
            for ins in w.instrs[:-1]:
                if ins.name in CF_NAMES:
                    raise ProgramInvariantError(
                        f"word L{k}: control flow only allowed as the main instruction"
                    )
            if main.name in CF_NAMES:
                if w.target is None:
                    raise ProgramInvariantError(f"word L{k}: {main.name} needs a target")
                if not k < w.target <= n:
                    raise ProgramInvariantError(
                        f"word L{k}: target L{w.target} is not strictly forward"
                    )
                if main.name == "jalr":
                    if len(w.instrs) < 2:
                        raise ProgramInvariantError(f"word L{k}: jalr needs its auipc pair")
                    pair = w.instrs[-2]
                    if pair.name != "auipc" or pair.rd != main.rs1 or pair.imm != 0:
                        raise ProgramInvariantError(
                            f"word L{k}: jalr must follow 'auipc x{main.rs1}, 0'"
                        )
            elif w.target is not None:
                raise ProgramInvariantError(f"word L{k}: target on non-control-flow word")


@dataclass(frozen=True)
class DataSection:
    """Exactly 384 little-endian 64-bit words (3072 bytes)."""

    words: tuple[int, ...]

    def __post_init__(self):
        if len(self.words) != DATA_WORDS:
            raise ProgramInvariantError(f"data section has {len(self.words)} words")
        for w in self.words:
            if not 0 <= w <= MASK64:
                raise ProgramInvariantError("data word out of 64-bit range")

    def to_bytes(self) -> bytes:
        return b"".join(w.to_bytes(8, "little") for w in self.words)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DataSection":
        if len(raw) != DATA_BYTES:
            raise ProgramInvariantError(f"data section is {len(raw)} bytes, want {DATA_BYTES}")
        return cls(tuple(int.from_bytes(raw[i:i + 8], "little") for i in range(0, DATA_BYTES, 8)))


@dataclass(frozen=True)
class TestCase:
    program: Program
    data_a: DataSection
    data_b: DataSection


# ============================================================================
# Images: expanded, pre-decoded programs
# ============================================================================

K_ALU_RR = 0
K_ALU_RI = 1
K_ALU_CONST = 2   # lui / auipc: value precomputed at layout time
K_LOAD = 3
K_STORE = 4
K_BRANCH = 5
K_JAL = 6
K_JALR = 7


class Op:
    """Pre-decoded instruction bound to its address. `const` holds the branch or
    jal target address, or the precomputed lui/auipc result."""

    __slots__ = ("name", "kind", "rd", "rs1", "rs2", "imm", "raw", "pc",
                 "fn", "const", "width", "load_signed", "is_mdiv")

    def __init__(self, ins: Instruction, pc: int):
        self.name = ins.name
        self.rd = ins.rd
        self.rs1 = ins.rs1
        self.rs2 = ins.rs2
        self.imm = ins.imm
        self.raw = encode(ins)
        self.pc = pc
        self.fn = None
        self.const = 0
        self.width = 0
        self.load_signed = False
        self.is_mdiv = ins.name in M_EXT_NAMES
        name = ins.name
        if name in LOAD_NAMES:
            self.kind = K_LOAD
            self.width, self.load_signed = _LOAD_SHAPE[name]
        elif name in STORE_NAMES:
            self.kind = K_STORE
            self.width = _STORE_WIDTH[name]
        elif name in BRANCH_NAMES:
            self.kind = K_BRANCH
            self.fn = BRANCH_FNS[name]
            self.const = (pc + ins.imm) & MASK64
        elif name == "jal":
            self.kind = K_JAL
            self.const = (pc + ins.imm) & MASK64
        elif name == "jalr":
            self.kind = K_JALR
        elif name == "lui":
            self.kind = K_ALU_CONST
            self.const = sext(ins.imm << 12, 32) & MASK64
        elif name == "auipc":
            self.kind = K_ALU_CONST
            self.const = (pc + sext(ins.imm << 12, 32)) & MASK64
        elif name in _RI_TO_RR:
            self.kind = K_ALU_RI
            self.fn = ALU_FNS[_RI_TO_RR[name]]
            self.imm &= MASK64
        else:
            self.kind = K_ALU_RR
            self.fn = ALU_FNS[name]

    def __repr__(self):
        return f"<op {self.name} @ {self.pc:#x}>"


@dataclass
class Image:
    ops: list[Op]
    entry: int
    text_base: int
    text_end: int
    tohost: int
    data_base: int
    data_mem: dict[int, int]          # word index (addr >> 3) -> u64
    label_addrs: list[int]            # body word index -> address; last entry = epilogue
    layout: MemoryLayout


def _prologue(layout: MemoryLayout) -> list[Instruction]:
    hi = layout.data_base >> 12
    assert layout.data_base & 0xFFF == 0
    ins = [Instruction("lui", rd=31, imm=hi)]
    ins += [Instruction("ld", rd=r, rs1=31, imm=8 * (r - 1)) for r in range(1, 32)]
    return ins


def _epilogue(layout: MemoryLayout) -> list[Instruction]:
    assert layout.tohost & 0xFFF == 0
    return [
        Instruction("lui", rd=1, imm=layout.tohost >> 12),
        Instruction("addi", rd=2, rs1=0, imm=1),
        Instruction("sd", rs2=2, rs1=1, imm=0),
    ]


def build_image(program: Program, data: DataSection,
                layout: MemoryLayout = DEFAULT_LAYOUT) -> Image:
    """Expand a program into an executable image over the given data section.

    Label displacements for branches, jal, and the auipc/jalr pair are resolved
    here; the raw encodings stored on each Op are what a core's fetch stage
    sees."""
    program.validate()
    pro = _prologue(layout)
    epi = _epilogue(layout)

    word_addrs: list[int] = []
    addr = layout.text_base + 4 * len(pro)
    for w in program.words:
        word_addrs.append(addr)
        addr += 4 * len(w.instrs)
    epilogue_addr = addr
    label_addrs = word_addrs + [epilogue_addr]
    text_end = epilogue_addr + 4 * len(epi)

    if text_end > layout.tohost:
        raise ImageOverlap(
            f"text ends at {text_end:#x}, past the tohost word at {layout.tohost:#x}"
        )

    ops: list[Op] = []
    pc = layout.text_base
    for ins in pro:
        ops.append(Op(ins, pc))
        pc += 4
    for k, w in enumerate(program.words):
        for i, ins in enumerate(w.instrs):
            if i == len(w.instrs) - 1 and w.target is not None:
                disp = label_addrs[w.target] - pc
                if ins.name == "jalr":
                    # pair: auipc rT, 0 sits at pc - 4
                    ins = Instruction("jalr", rd=ins.rd, rs1=ins.rs1,
                                      imm=label_addrs[w.target] - (pc - 4))
                else:
                    ins = Instruction(ins.name, rd=ins.rd, rs1=ins.rs1,
                                      rs2=ins.rs2, imm=disp)
            ops.append(Op(ins, pc))
            pc += 4
    for ins in epi:
        ops.append(Op(ins, pc))
        pc += 4

    data_mem = {(layout.data_base >> 3) + i: wd for i, wd in enumerate(data.words)}
    return Image(
        ops=ops, entry=layout.text_base, text_base=layout.text_base,
        text_end=text_end, tohost=layout.tohost, data_base=layout.data_base,
        data_mem=data_mem, label_addrs=label_addrs, layout=layout,
    )


# ============================================================================
# Architectural state and interpreter
# ============================================================================

class ArchState:
    __slots__ = ("pc", "regs", "mem", "terminated")

    def __init__(self, pc: int, regs: list[int], mem: dict[int, int], terminated: bool = False):
        self.pc = pc
        self.regs = regs
        self.mem = mem
        self.terminated = terminated


def fresh_state(image: Image) -> ArchState:
    return ArchState(pc=image.entry, regs=[0] * 32, mem=dict(image.data_mem))


def mem_read(mem: dict[int, int], addr: int, width: int) -> int:
    a = addr & PHYS_MASK
    off = a & 7
    if off + width <= 8:
        return (mem.get(a >> 3, 0) >> (off * 8)) & ((1 << (width * 8)) - 1)
    v = 0
    for i in range(width):
        b = a + i
        v |= ((mem.get(b >> 3, 0) >> ((b & 7) * 8)) & 0xFF) << (8 * i)
    return v


def mem_write(mem: dict[int, int], addr: int, width: int, value: int) -> None:
    a = addr & PHYS_MASK
    off = a & 7
    value &= (1 << (width * 8)) - 1
    if off + width <= 8:
        wi = a >> 3
        m = ((1 << (width * 8)) - 1) << (off * 8)
        mem[wi] = (mem.get(wi, 0) & ~m) | (value << (off * 8))
        return
    for i in range(width):
        b = a + i
        wi = b >> 3
        sh = (b & 7) * 8
        mem[wi] = (mem.get(wi, 0) & ~(0xFF << sh)) | (((value >> (8 * i)) & 0xFF) << sh)


def arch_step(state: ArchState, image: Image) -> None:
    """Execute one instruction. The pc must sit inside the image text."""
    pc = state.pc
    idx = (pc - image.text_base) >> 2
    if pc & 3 or idx < 0 or idx >= len(image.ops):
        raise FetchOutOfRange(f"pc {pc:#x}")
    op = image.ops[idx]
    regs = state.regs
    k = op.kind
    if k == K_ALU_RI:
        if op.rd:
            regs[op.rd] = op.fn(regs[op.rs1], op.imm)
        state.pc = pc + 4
    elif k == K_ALU_RR:
        if op.rd:
            regs[op.rd] = op.fn(regs[op.rs1], regs[op.rs2])
        state.pc = pc + 4
    elif k == K_LOAD:
        ea = (regs[op.rs1] + op.imm) & MASK64
        if (ea & PHYS_MASK) % op.width:
            raise MisalignedAccess(f"{op.name} at {ea:#x}")
        v = mem_read(state.mem, ea, op.width)
        if op.load_signed:
            v = sext(v, op.width * 8) & MASK64
        if op.rd:
            regs[op.rd] = v
        state.pc = pc + 4
    elif k == K_STORE:
        ea = (regs[op.rs1] + op.imm) & MASK64
        if (ea & PHYS_MASK) % op.width:
            raise MisalignedAccess(f"{op.name} at {ea:#x}")
        v = regs[op.rs2] & ((1 << (op.width * 8)) - 1)
        mem_write(state.mem, ea, op.width, v)
        if (ea & PHYS_MASK) == image.tohost and v == 1:
            state.terminated = True
        state.pc = pc + 4
    elif k == K_BRANCH:
        state.pc = op.const if op.fn(regs[op.rs1], regs[op.rs2]) else pc + 4
    elif k == K_ALU_CONST:
        if op.rd:
            regs[op.rd] = op.const
        state.pc = pc + 4
    elif k == K_JAL:
        if op.rd:
            regs[op.rd] = (pc + 4) & MASK64
        state.pc = op.const
    else:  # K_JALR
        t = (regs[op.rs1] + op.imm) & MASK64 & ~1
        if op.rd:
            regs[op.rd] = (pc + 4) & MASK64
        state.pc = t


def run_arch(program: Program, data: DataSection, max_steps: int = 100_000,
             layout: MemoryLayout = DEFAULT_LAYOUT) -> tuple[ArchState, int]:
    """Run to termination; returns (final state, steps). Raises
    StepLimitExceeded if the store to tohost never happens, which for generated
    programs means a generator bug (forward-only control flow bounds steps by
    the instruction count)."""
    image = build_image(program, data, layout)
    state = fresh_state(image)
    steps = 0
    while not state.terminated:
        if steps >= max_steps:
            raise StepLimitExceeded(f"no termination within {max_steps} steps")
        arch_step(state, image)
        steps += 1
    return state, steps


class Effect(NamedTuple):
    """Architectural effect of one retired/stepped instruction. rd == 0 means
    no register write; store_addr is None for non-stores."""

    pc: int
    raw: int
    rd: int
    rd_value: int
    store_addr: int | None
    store_value: int | None


def effect_of_step(state: ArchState, image: Image) -> Effect:
    """arch_step plus a record of what it did; used by retirement checks."""
    pc = state.pc
    idx = (pc - image.text_base) >> 2
    if pc & 3 or idx < 0 or idx >= len(image.ops):
        raise FetchOutOfRange(f"pc {pc:#x}")
    op = image.ops[idx]
    store_addr = store_value = None
    if op.kind == K_STORE:
        store_addr = (state.regs[op.rs1] + op.imm) & MASK64
        store_value = state.regs[op.rs2] & ((1 << (op.width * 8)) - 1)
    arch_step(state, image)
    rd = op.rd if op.kind != K_STORE and op.kind != K_BRANCH and op.rd else 0
    return Effect(pc, op.raw, rd, state.regs[rd] if rd else 0, store_addr, store_value)


def trace_effects(program: Program, data: DataSection, max_steps: int = 100_000,
                  layout: MemoryLayout = DEFAULT_LAYOUT) -> list[Effect]:
    image = build_image(program, data, layout)
    state = fresh_state(image)
    out: list[Effect] = []
    while not state.terminated:
        if len(out) >= max_steps:
            raise StepLimitExceeded(f"no termination within {max_steps} steps")
        out.append(effect_of_step(state, image))
    return out


def iter_instructions(program: Program) -> Iterator[Instruction]:
    for w in program.words:
        yield from w.instrs
