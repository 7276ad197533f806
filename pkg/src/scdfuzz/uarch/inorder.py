"""Five-stage in-order pipeline (IF, ID, EX, MEM, WB).

Timing behavior, all of it value-independent except through addresses and
branch outcomes:

- full forwarding: ALU and link results publish when EX completes, load
  results when MEM completes; ID reads the forwarded register file.
- ID stalls on a RAW hazard against a result that has not published yet
  (the instruction still sitting in EX, or an in-flight load), and on a WAW
  hazard against an in-flight load.
- branches and jumps resolve in EX. A redirect squashes the one younger
  instruction in the f2d latch and holds fetch so that the retire-to-retire
  gap across a taken branch equals flush_penalty.
- loads and stores probe the cache when they reach MEM and occupy it for the
  hit or miss latency; the line fills at the probe. Stores write memory when
  MEM completes.
- mul/div occupy EX for mdiv_latency cycles.

Stages are processed WB first and IF last within one step() so results ripple
forward in the same cycle exactly when a real pipeline would forward them.
Invalidated latches are cleared to zero."""

from __future__ import annotations

from ..isa import (
    MASK64, Image, K_ALU_CONST, K_ALU_RI, K_ALU_RR, K_BRANCH, K_JAL, K_JALR,
    K_LOAD, K_STORE, PHYS_MASK, mem_read, mem_write, sext,
)
from .common import Cache, CoreConfig, CoreTimeout, RetireEvent, mdiv_latency

_WRITES_RD = (K_ALU_RR, K_ALU_RI, K_ALU_CONST, K_LOAD, K_JAL, K_JALR)


class InOrderCore:
    __slots__ = (
        "cfg", "image", "cache", "mem", "regs", "retire_log",
        "cycle", "fetch_pc", "fetch_hold",
        "f2d_valid", "f2d_pc", "f2d_raw", "f2d_op",
        "d2x_valid", "d2x_pc", "d2x_raw", "d2x_rs1v", "d2x_rs2v", "d2x_op",
        "x2m_valid", "x2m_pc", "x2m_raw", "x2m_val", "x2m_addr", "x2m_op",
        "mem_busy", "pending_load_rd",
        "m2w_valid", "m2w_pc", "m2w_raw", "m2w_val", "m2w_op",
        "m2w_store", "m2w_is_tohost",
        "mul_busy", "terminated_flag",
    )

    def __init__(self, cfg: CoreConfig, image: Image):
        self.cfg = cfg
        self.image = image
        self.cache = Cache(cfg.cache)
        self.mem = dict(image.data_mem)
        self.regs = [0] * 32
        self.retire_log: list[RetireEvent] = []
        self.cycle = 0
        self.fetch_pc = image.entry
        self.fetch_hold = 0
        self._clear_f2d()
        self._clear_d2x()
        self._clear_x2m()
        self._clear_m2w()
        self.mem_busy = 0
        self.pending_load_rd = 0
        self.mul_busy = 0
        self.terminated_flag = 0

    @property
    def terminated(self) -> bool:
        return bool(self.terminated_flag)

    def _clear_f2d(self):
        self.f2d_valid = 0
        self.f2d_pc = 0
        self.f2d_raw = 0
        self.f2d_op = None

    def _clear_d2x(self):
        self.d2x_valid = 0
        self.d2x_pc = 0
        self.d2x_raw = 0
        self.d2x_rs1v = 0
        self.d2x_rs2v = 0
        self.d2x_op = None

    def _clear_x2m(self):
        self.x2m_valid = 0
        self.x2m_pc = 0
        self.x2m_raw = 0
        self.x2m_val = 0
        self.x2m_addr = 0
        self.x2m_op = None

    def _clear_m2w(self):
        self.m2w_valid = 0
        self.m2w_pc = 0
        self.m2w_raw = 0
        self.m2w_val = 0
        self.m2w_op = None
        self.m2w_store = None
        self.m2w_is_tohost = False

    def snapshot(self) -> tuple:
        c = self.cache
        return (self.cycle, self.fetch_pc, self.fetch_hold,
                self.f2d_valid, self.f2d_pc, self.f2d_raw,
                self.d2x_valid, self.d2x_pc, self.d2x_raw,
                self.d2x_rs1v, self.d2x_rs2v,
                self.x2m_valid, self.x2m_pc, self.x2m_raw,
                self.x2m_val, self.x2m_addr, self.mem_busy,
                self.m2w_valid, self.m2w_pc, self.m2w_raw, self.m2w_val,
                self.mul_busy, self.terminated_flag,
                *c.valid, *c.tags, *(c.rr if c.ways > 1 else ()))

    def step(self) -> None:
        self._writeback()
        self._mem_stage()
        self._execute()
        self._decode()
        self._fetch()
        self.cycle += 1

    # -- WB ---------------------------------------------------------------
    def _writeback(self):
        if not self.m2w_valid:
            return
        op = self.m2w_op
        rd = op.rd if op.kind in _WRITES_RD and op.rd else 0
        store = self.m2w_store
        self.retire_log.append(RetireEvent(
            cycle=self.cycle + 1, pc=self.m2w_pc, raw=self.m2w_raw,
            rd=rd, rd_value=self.m2w_val if rd else 0,
            store_addr=store[0] if store else None,
            store_value=store[1] if store else None))
        if rd:
            self.regs[rd] = self.m2w_val  # WB write; forwarding published it already
        if self.m2w_is_tohost:
            self.terminated_flag = 1
        self._clear_m2w()

    # -- MEM --------------------------------------------------------------
    def _mem_stage(self):
        if not self.x2m_valid:
            return
        op = self.x2m_op
        if op.kind is not K_LOAD and op.kind is not K_STORE:
            self._to_m2w(self.x2m_val, None, False)
            return
        if self.mem_busy == 0:
            self.mem_busy = self.cache.access(self.x2m_addr)
        self.mem_busy -= 1
        if self.mem_busy:
            return
        addr = self.x2m_addr
        if op.kind is K_LOAD:
            v = mem_read(self.mem, addr, op.width)
            if op.load_signed:
                v = sext(v, op.width * 8) & MASK64
            if op.rd:
                self.regs[op.rd] = v
            self.pending_load_rd = 0
            self._to_m2w(v, None, False)
        else:
            val = self.x2m_val & ((1 << (op.width * 8)) - 1)
            mem_write(self.mem, addr, op.width, val)
            tohost = (addr & PHYS_MASK) == self.image.tohost and val == 1
            self._to_m2w(self.x2m_val, (addr, val), tohost)

    def _to_m2w(self, val, store, tohost):
        self.m2w_valid = 1
        self.m2w_pc = self.x2m_pc
        self.m2w_raw = self.x2m_raw
        self.m2w_val = val
        self.m2w_op = self.x2m_op
        self.m2w_store = store
        self.m2w_is_tohost = tohost
        self._clear_x2m()

    # -- EX ---------------------------------------------------------------
    def _execute(self):
        if not self.d2x_valid or self.x2m_valid:
            return
        op = self.d2x_op
        if op.is_mdiv:
            if self.mul_busy == 0:
                self.mul_busy = mdiv_latency(self.cfg, self.d2x_rs1v, self.d2x_rs2v)
            self.mul_busy -= 1
            if self.mul_busy:
                return
        kind = op.kind
        pc = self.d2x_pc
        a, b = self.d2x_rs1v, self.d2x_rs2v
        val, addr = 0, 0
        if kind is K_ALU_RR:
            val = op.fn(a, b)
        elif kind is K_ALU_RI:
            val = op.fn(a, op.imm)
        elif kind is K_ALU_CONST:
            val = op.const
        elif kind is K_LOAD:
            addr = (a + op.imm) & MASK64
            self.pending_load_rd = op.rd
        elif kind is K_STORE:
            addr = (a + op.imm) & MASK64
            val = b
        elif kind is K_BRANCH:
            taken = op.fn(a, b)
            val = int(taken)
            if taken:
                addr = op.const
                self._redirect(op.const)
        elif kind is K_JAL:
            val = (pc + 4) & MASK64
            self._redirect(op.const)
        else:  # K_JALR
            val = (pc + 4) & MASK64
            addr = (a + op.imm) & ~1 & MASK64
            self._redirect(addr)
        if op.rd and kind in _WRITES_RD and kind is not K_LOAD:
            self.regs[op.rd] = val  # forward at EX complete
        self.x2m_valid = 1
        self.x2m_pc = pc
        self.x2m_raw = self.d2x_raw
        self.x2m_val = val
        self.x2m_addr = addr
        self.x2m_op = op
        self._clear_d2x()

    def _redirect(self, target: int):
        self.fetch_pc = target
        self.fetch_hold = self.cfg.flush_penalty - 2
        self._clear_f2d()

    # -- ID ---------------------------------------------------------------
    def _decode(self):
        if not self.f2d_valid or self.d2x_valid:
            return
        op = self.f2d_op
        kind = op.kind
        pending = self.pending_load_rd
        if pending:
            rd = op.rd if kind in _WRITES_RD else 0
            if pending in (op.rs1, op.rs2, rd):
                reads1 = kind in (K_ALU_RR, K_ALU_RI, K_LOAD, K_STORE, K_BRANCH, K_JALR)
                reads2 = kind in (K_ALU_RR, K_STORE, K_BRANCH)
                if ((reads1 and op.rs1 == pending)
                        or (reads2 and op.rs2 == pending)
                        or rd == pending):
                    return  # stall on unfinished load
        self.d2x_valid = 1
        self.d2x_pc = self.f2d_pc
        self.d2x_raw = self.f2d_raw
        self.d2x_rs1v = self.regs[op.rs1]
        self.d2x_rs2v = self.regs[op.rs2]
        self.d2x_op = op
        self._clear_f2d()

    # -- IF ---------------------------------------------------------------
    def _fetch(self):
        if self.fetch_hold:
            self.fetch_hold -= 1
            return
        if self.f2d_valid:
            return
        idx = (self.fetch_pc - self.image.text_base) >> 2
        ops = self.image.ops
        if 0 <= idx < len(ops):
            op = ops[idx]
            self.f2d_valid = 1
            self.f2d_pc = self.fetch_pc
            self.f2d_raw = op.raw
            self.f2d_op = op
            self.fetch_pc = (self.fetch_pc + 4) & MASK64
