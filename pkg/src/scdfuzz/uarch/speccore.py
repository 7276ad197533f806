"""Speculative out-of-order core built around a small circular instruction
window.

Front end: one fetch per cycle into the window tail, steered by a bimodal
predictor (2-bit counters, reset weak-not-taken) plus a branch target buffer.
A conditional branch predicted taken with a BTB hit fetches from the buffered
target; everything else falls through. jal and jalr are also steered by the
BTB, so their first encounter fetches the fall-through path until they
resolve.

Execution: every valid slot is scanned oldest to youngest each cycle. A slot
starts once all source operands are available (from the retired register file
or from older, finished slots) and, for loads, once every older store knows
its address; a load then reads memory through the store buffer formed by the
older in-window stores. Loads and stores probe the cache the cycle they
start and the line is installed at the probe, so lines fetched down a wrong
path stay resident after the squash. Branches and jalr occupy their unit for
three cycles before resolving, jal for one; mul and div take mdiv_latency.

Resolution: the predictor and BTB are updated only by branches that actually
resolve (squashed slots never update state). A mispredicted next pc squashes
every younger slot, redirects fetch, and holds the front end for
flush_penalty cycles.

Retirement: one instruction per cycle from the head, in order. Stores write
memory at retirement, which is also where the termination store takes
effect. The register file is retirement-level state, so wrong paths never
corrupt it."""

from __future__ import annotations

from ..isa import (
    MASK64, Image, K_ALU_CONST, K_ALU_RI, K_ALU_RR, K_BRANCH, K_JAL, K_JALR,
    K_LOAD, K_STORE, PHYS_MASK, mem_read, mem_write, sext,
)
from .common import Bimodal, Btb, Cache, CoreConfig, RetireEvent, mdiv_latency

_WRITES_RD = (K_ALU_RR, K_ALU_RI, K_ALU_CONST, K_LOAD, K_JAL, K_JALR)

# slot phases
_WAIT = 0
_RUN = 1
_DONE = 2

BRANCH_RESOLVE_LATENCY = 12
JAL_RESOLVE_LATENCY = 1


class SpecCore:
    __slots__ = (
        "cfg", "image", "cache", "bimodal", "btb", "mem", "regs", "retire_log",
        "cycle", "fetch_pc", "fetch_hold", "terminated_flag", "spec_depth",
        "head", "count", "wsize",
        "w_valid", "w_pc", "w_raw", "w_phase", "w_rem", "w_res",
        "w_prednext", "w_staddr", "w_stval",
        "w_op", "w_actual", "w_taken",
    )

    def __init__(self, cfg: CoreConfig, image: Image):
        self.cfg = cfg
        self.image = image
        self.cache = Cache(cfg.cache)
        self.bimodal = Bimodal(cfg.predictor)
        self.btb = Btb(cfg.predictor)
        self.mem = dict(image.data_mem)
        self.regs = [0] * 32
        self.retire_log: list[RetireEvent] = []
        self.cycle = 0
        self.fetch_pc = image.entry
        self.fetch_hold = 0
        self.terminated_flag = 0
        self.spec_depth = 0
        self.head = 0
        self.count = 0
        w = cfg.spec_window
        self.wsize = w
        self.w_valid = [0] * w
        self.w_pc = [0] * w
        self.w_raw = [0] * w
        self.w_phase = [0] * w
        self.w_rem = [0] * w
        self.w_res = [0] * w
        self.w_prednext = [0] * w
        self.w_staddr = [0] * w
        self.w_stval = [0] * w
        self.w_op = [None] * w
        self.w_actual = [0] * w
        self.w_taken = [False] * w

    @property
    def terminated(self) -> bool:
        return bool(self.terminated_flag)

    def _clear_slot(self, j: int):
        self.w_valid[j] = 0
        self.w_pc[j] = 0
        self.w_raw[j] = 0
        self.w_phase[j] = 0
        self.w_rem[j] = 0
        self.w_res[j] = 0
        self.w_prednext[j] = 0
        self.w_staddr[j] = 0
        self.w_stval[j] = 0
        self.w_op[j] = None
        self.w_actual[j] = 0
        self.w_taken[j] = False

    def snapshot(self) -> tuple:
        c = self.cache
        parts = [self.cycle, self.fetch_pc, self.fetch_hold,
                 self.terminated_flag, self.spec_depth, self.head, self.count]
        for j in range(self.wsize):
            parts += (self.w_valid[j], self.w_pc[j], self.w_raw[j],
                      self.w_phase[j], self.w_rem[j], self.w_res[j],
                      self.w_prednext[j], self.w_staddr[j], self.w_stval[j])
        parts += self.bimodal.counters
        b = self.btb
        for i in range(b.entries):
            parts += (b.valid[i], b.pcs[i], b.targets[i])
        parts += c.valid
        parts += c.tags
        if c.ways > 1:
            parts += c.rr
        return tuple(parts)

    def step(self) -> None:
        self._retire()
        self._execute_scan()
        self._fetch()
        self.spec_depth = self._count_unresolved()
        self.cycle += 1

    def _count_unresolved(self) -> int:
        n = 0
        for i in range(self.count):
            j = (self.head + i) % self.wsize
            op = self.w_op[j]
            if op is not None and op.kind in (K_BRANCH, K_JAL, K_JALR) \
                    and self.w_phase[j] != _DONE:
                n += 1
        return n

    # -- retire -----------------------------------------------------------
    def _retire(self):
        if not self.count:
            return
        h = self.head
        if self.w_phase[h] != _DONE:
            return
        op = self.w_op[h]
        rd = op.rd if op.kind in _WRITES_RD and op.rd else 0
        store = None
        if op.kind is K_STORE:
            addr, val = self.w_staddr[h], self.w_stval[h]
            mem_write(self.mem, addr, op.width, val)
            if (addr & PHYS_MASK) == self.image.tohost and val == 1:
                self.terminated_flag = 1
            store = (addr, val)
        if rd:
            self.regs[rd] = self.w_res[h]
        self.retire_log.append(RetireEvent(
            cycle=self.cycle + 1, pc=self.w_pc[h], raw=self.w_raw[h],
            rd=rd, rd_value=self.w_res[h] if rd else 0,
            store_addr=store[0] if store else None,
            store_value=store[1] if store else None))
        self._clear_slot(h)
        self.head = (h + 1) % self.wsize
        self.count -= 1

    # -- operand / memory helpers ------------------------------------------
    def _read_src(self, r: int, age: int):
        """Value of register r as seen by the slot at the given age. Returns
        (value, ready). The youngest older writer wins; finished slots
        forward their result, unfinished ones block."""
        if r == 0:
            return 0, True
        for i in range(age - 1, -1, -1):
            j = (self.head + i) % self.wsize
            op = self.w_op[j]
            if op is not None and op.rd == r and op.kind in _WRITES_RD:
                if self.w_phase[j] == _DONE:
                    return self.w_res[j], True
                return 0, False
        return self.regs[r], True

    def _older_store_addrs_known(self, age: int) -> bool:
        for i in range(age):
            j = (self.head + i) % self.wsize
            op = self.w_op[j]
            if op is not None and op.kind is K_STORE and self.w_phase[j] == _WAIT:
                return False
        return True

    def _load_value(self, ea: int, width: int, age: int) -> int:
        """Memory read through the store buffer of older in-window stores
        (oldest applied first so the youngest match wins per byte)."""
        v = mem_read(self.mem, ea, width)
        a0 = ea & PHYS_MASK
        for i in range(age):
            j = (self.head + i) % self.wsize
            op = self.w_op[j]
            if op is None or op.kind is not K_STORE or self.w_phase[j] == _WAIT:
                continue
            s0 = self.w_staddr[j] & PHYS_MASK
            sval = self.w_stval[j]
            for b in range(width):
                off = a0 + b - s0
                if 0 <= off < op.width:
                    byte = (sval >> (8 * off)) & 0xFF
                    v = (v & ~(0xFF << (8 * b))) | (byte << (8 * b))
        return v

    # -- execute ----------------------------------------------------------
    def _execute_scan(self):
        i = 0
        while i < self.count:
            j = (self.head + i) % self.wsize
            ph = self.w_phase[j]
            if ph == _WAIT:
                self._try_start(j, i)
            elif ph == _RUN:
                self.w_rem[j] -= 1
                if self.w_rem[j] == 0:
                    self.w_phase[j] = _DONE
                    op = self.w_op[j]
                    if op.kind in (K_BRANCH, K_JAL, K_JALR):
                        if self._resolve(j, i):
                            return  # squashed everything younger
            i += 1

    def _try_start(self, j: int, age: int):
        op = self.w_op[j]
        kind = op.kind
        pc = self.w_pc[j]
        v1 = v2 = 0
        if kind in (K_ALU_RR, K_ALU_RI, K_LOAD, K_STORE, K_BRANCH, K_JALR):
            v1, ok = self._read_src(op.rs1, age)
            if not ok:
                return
        if kind in (K_ALU_RR, K_STORE, K_BRANCH):
            v2, ok = self._read_src(op.rs2, age)
            if not ok:
                return
        if kind is K_LOAD and not self._older_store_addrs_known(age):
            return
        rem = 1
        res = 0
        if kind is K_ALU_RR:
            res = op.fn(v1, v2)
            if op.is_mdiv:
                rem = mdiv_latency(self.cfg, v1, v2)
        elif kind is K_ALU_RI:
            res = op.fn(v1, op.imm)
        elif kind is K_ALU_CONST:
            res = op.const
        elif kind is K_LOAD:
            ea = (v1 + op.imm) & MASK64
            v = self._load_value(ea, op.width, age)
            if op.load_signed:
                v = sext(v, op.width * 8) & MASK64
            res = v
            self.w_staddr[j] = ea  # load address is window-visible state too
            rem = self.cache.access(ea)
        elif kind is K_STORE:
            ea = (v1 + op.imm) & MASK64
            self.w_staddr[j] = ea
            self.w_stval[j] = v2 & ((1 << (op.width * 8)) - 1)
            rem = self.cache.access(ea)
        elif kind is K_BRANCH:
            taken = op.fn(v1, v2)
            self.w_taken[j] = taken
            self.w_actual[j] = op.const if taken else (pc + 4) & MASK64
            res = int(taken)
            rem = BRANCH_RESOLVE_LATENCY
        elif kind is K_JAL:
            self.w_taken[j] = True
            self.w_actual[j] = op.const
            res = (pc + 4) & MASK64
            rem = JAL_RESOLVE_LATENCY
        else:  # K_JALR
            self.w_taken[j] = True
            self.w_actual[j] = (v1 + op.imm) & ~1 & MASK64
            res = (pc + 4) & MASK64
            rem = BRANCH_RESOLVE_LATENCY
        self.w_res[j] = res
        self.w_rem[j] = rem
        self.w_phase[j] = _RUN

    def _resolve(self, j: int, age: int) -> bool:
        """Predictor updates and, on a wrong predicted next pc, a squash of
        everything younger. Returns True if it squashed."""
        op = self.w_op[j]
        actual = self.w_actual[j]
        if op.kind is K_BRANCH:
            self.bimodal.update(self.w_pc[j], self.w_taken[j])
            if self.w_taken[j]:
                self.btb.insert(self.w_pc[j], actual)
        else:
            self.btb.insert(self.w_pc[j], actual)
        if actual == self.w_prednext[j]:
            return False
        for i in range(age + 1, self.count):
            self._clear_slot((self.head + i) % self.wsize)
        self.count = age + 1
        self.fetch_pc = actual
        self.fetch_hold = self.cfg.predictor.flush_penalty
        return True

    # -- fetch ------------------------------------------------------------
    def _fetch(self):
        if self.fetch_hold:
            self.fetch_hold -= 1
            return
        if self.count >= self.wsize:
            return
        idx = (self.fetch_pc - self.image.text_base) >> 2
        ops = self.image.ops
        if not 0 <= idx < len(ops):
            return
        op = ops[idx]
        pc = self.fetch_pc
        j = (self.head + self.count) % self.wsize
        self.w_valid[j] = 1
        self.w_pc[j] = pc
        self.w_raw[j] = op.raw
        self.w_phase[j] = _WAIT
        self.w_op[j] = op
        if op.kind is K_BRANCH:
            tgt = self.btb.lookup(pc)
            if self.bimodal.predict(pc) and tgt is not None:
                nxt = tgt
            else:
                nxt = (pc + 4) & MASK64
        elif op.kind in (K_JAL, K_JALR):
            tgt = self.btb.lookup(pc)
            nxt = tgt if tgt is not None else (pc + 4) & MASK64
        else:
            nxt = (pc + 4) & MASK64
        self.w_prednext[j] = nxt
        self.fetch_pc = nxt
        self.count += 1
