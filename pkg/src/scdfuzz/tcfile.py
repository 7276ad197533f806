"""Test-case files: UTF-8 text, three sections.

    == PROGRAM ==
    L0: lui x20, 0x80004
    L1: andi x5, x9, 56; ld x7, 512(x20)
    L2: beq x7, x0, L3
    == DATA_A ==
    <384 lines of 16 hex digits, one per little-endian 64-bit word>
    == DATA_B ==
    <384 lines>

Rendering is canonical (labels consecutive from L0, '; ' separators, lowercase
hex) so parse(render(tc)) == tc and render(parse(text)) == text hold bit-exact
for files this module wrote."""

from __future__ import annotations

import re
from pathlib import Path

from .isa import (
    BRANCH_NAMES, DATA_WORDS, LOAD_NAMES, STORE_NAMES,
    DataSection, Instruction, InstructionWord, Program, TestCase, _ENC,
)

PROGRAM_HDR = "== PROGRAM =="
DATA_A_HDR = "== DATA_A =="
DATA_B_HDR = "== DATA_B =="


class TestCaseFormatError(Exception):
    pass


def _render_instr(ins: Instruction, target: int | None, is_main: bool) -> str:
    n = ins.name
    if n in LOAD_NAMES:
        return f"{n} x{ins.rd}, {ins.imm}(x{ins.rs1})"
    if n in STORE_NAMES:
        return f"{n} x{ins.rs2}, {ins.imm}(x{ins.rs1})"
    if n in BRANCH_NAMES:
        return f"{n} x{ins.rs1}, x{ins.rs2}, L{target}"
    if n == "jal":
        return f"jal x{ins.rd}, L{target}"
    if n == "jalr":
        return f"jalr x{ins.rd}, x{ins.rs1}, L{target}"
    if n in ("lui", "auipc"):
        return f"{n} x{ins.rd}, {ins.imm:#x}"
    fmt = _ENC[n][0]
    if fmt == "R":
        return f"{n} x{ins.rd}, x{ins.rs1}, x{ins.rs2}"
    # register-immediate
    return f"{n} x{ins.rd}, x{ins.rs1}, {ins.imm}"


def render_program(program: Program) -> str:
    lines = []
    for k, w in enumerate(program.words):
        parts = [
            _render_instr(ins, w.target, i == len(w.instrs) - 1)
            for i, ins in enumerate(w.instrs)
        ]
        lines.append(f"L{k}: " + "; ".join(parts))
    return "".join(line + "\n" for line in lines)


def render_testcase(tc: TestCase) -> str:
    out = [PROGRAM_HDR + "\n", render_program(tc.program), DATA_A_HDR + "\n"]
    out += [f"{w:016x}\n" for w in tc.data_a.words]
    out.append(DATA_B_HDR + "\n")
    out += [f"{w:016x}\n" for w in tc.data_b.words]
    return "".join(out)


_REG = re.compile(r"^x(\d{1,2})$")
_MEM = re.compile(r"^(-?(?:0[xX][0-9a-fA-F]+|\d+))\(x(\d{1,2})\)$")
_LABEL = re.compile(r"^L(\d+)$")
_WORD_LINE = re.compile(r"^L(\d+):\s*(.*\S)\s*$")
_HEX_LINE = re.compile(r"^[0-9a-f]{16}$")


def _reg(tok: str) -> int:
    m = _REG.match(tok)
    if not m or not 0 <= int(m.group(1)) <= 31:
        raise TestCaseFormatError(f"bad register {tok!r}")
    return int(m.group(1))


def _int(tok: str) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise TestCaseFormatError(f"bad immediate {tok!r}") from None


def _parse_instr(text: str) -> tuple[Instruction, int | None]:
    """Returns (instruction, target-label-or-None)."""
    parts = text.split(None, 1)
    if not parts:
        raise TestCaseFormatError("empty instruction")
    name = parts[0]
    args = [a.strip() for a in parts[1].split(",")] if len(parts) > 1 else []
    if name not in _ENC:
        raise TestCaseFormatError(f"unknown mnemonic {name!r}")
    try:
        if name in LOAD_NAMES:
            if len(args) != 2:
                raise TestCaseFormatError(f"{name} wants 2 operands")
            m = _MEM.match(args[1])
            if not m:
                raise TestCaseFormatError(f"bad memory operand {args[1]!r}")
            return Instruction(name, rd=_reg(args[0]), rs1=int(m.group(2)),
                               imm=_int(m.group(1))), None
        if name in STORE_NAMES:
            if len(args) != 2:
                raise TestCaseFormatError(f"{name} wants 2 operands")
            m = _MEM.match(args[1])
            if not m:
                raise TestCaseFormatError(f"bad memory operand {args[1]!r}")
            return Instruction(name, rs2=_reg(args[0]), rs1=int(m.group(2)),
                               imm=_int(m.group(1))), None
        if name in BRANCH_NAMES:
            m = _LABEL.match(args[2]) if len(args) == 3 else None
            if not m:
                raise TestCaseFormatError(f"bad branch {text!r}")
            return Instruction(name, rs1=_reg(args[0]), rs2=_reg(args[1])), int(m.group(1))
        if name == "jal":
            m = _LABEL.match(args[1]) if len(args) == 2 else None
            if not m:
                raise TestCaseFormatError(f"bad jal {text!r}")
            return Instruction(name, rd=_reg(args[0])), int(m.group(1))
        if name == "jalr":
            m = _LABEL.match(args[2]) if len(args) == 3 else None
            if not m:
                raise TestCaseFormatError(f"bad jalr {text!r}")
            return Instruction(name, rd=_reg(args[0]), rs1=_reg(args[1])), int(m.group(1))
        if name in ("lui", "auipc"):
            if len(args) != 2:
                raise TestCaseFormatError(f"{name} wants 2 operands")
            return Instruction(name, rd=_reg(args[0]), imm=_int(args[1])), None
        fmt = _ENC[name][0]
        if fmt == "R":
            if len(args) != 3:
                raise TestCaseFormatError(f"{name} wants 3 operands")
            return Instruction(name, rd=_reg(args[0]), rs1=_reg(args[1]),
                               rs2=_reg(args[2])), None
        if len(args) != 3:
            raise TestCaseFormatError(f"{name} wants 3 operands")
        return Instruction(name, rd=_reg(args[0]), rs1=_reg(args[1]),
                           imm=_int(args[2])), None
    except TestCaseFormatError:
        raise
    except Exception as e:  # Instruction validation errors become format errors
        raise TestCaseFormatError(f"{text!r}: {e}") from None


def parse_program(lines: list[str]) -> Program:
    words: list[InstructionWord] = []
    for line in lines:
        m = _WORD_LINE.match(line)
        if not m:
            raise TestCaseFormatError(f"bad program line {line!r}")
        if int(m.group(1)) != len(words):
            raise TestCaseFormatError(
                f"label L{m.group(1)} out of order (expected L{len(words)})"
            )
        instrs: list[Instruction] = []
        target: int | None = None
        for chunk in m.group(2).split(";"):
            ins, tgt = _parse_instr(chunk.strip())
            instrs.append(ins)
            if tgt is not None:
                target = tgt
        words.append(InstructionWord(instrs=tuple(instrs), target=target))
    prog = Program(words=tuple(words))
    try:
        prog.validate()
    except Exception as e:
        raise TestCaseFormatError(str(e)) from None
    return prog


def _parse_data(lines: list[str], section: str) -> DataSection:
    if len(lines) != DATA_WORDS:
        raise TestCaseFormatError(
            f"{section} has {len(lines)} lines, want {DATA_WORDS}"
        )
    words = []
    for line in lines:
        if not _HEX_LINE.match(line):
            raise TestCaseFormatError(f"{section}: bad data line {line!r}")
        words.append(int(line, 16))
    return DataSection(tuple(words))


def parse_testcase(text: str) -> TestCase:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    try:
        i_p = lines.index(PROGRAM_HDR)
        i_a = lines.index(DATA_A_HDR)
        i_b = lines.index(DATA_B_HDR)
    except ValueError:
        raise TestCaseFormatError("missing section header") from None
    if not i_p < i_a < i_b:
        raise TestCaseFormatError("sections out of order")
    prog = parse_program(lines[i_p + 1:i_a])
    data_a = _parse_data(lines[i_a + 1:i_b], "DATA_A")
    data_b = _parse_data(lines[i_b + 1:], "DATA_B")
    return TestCase(program=prog, data_a=data_a, data_b=data_b)


def write_testcase(tc: TestCase, path: str | Path) -> None:
    Path(path).write_text(render_testcase(tc), encoding="utf-8")


def read_testcase(path: str | Path) -> TestCase:
    return parse_testcase(Path(path).read_text(encoding="utf-8"))
