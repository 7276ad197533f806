"""Test-case generation: program generator, data-section pairing, mutate and
merge operators, the LRU data store with energy bookkeeping, and the corpus
with its prioritization strategies.

Programs are built from instruction words (1 to 4 instructions, the main
instruction last). Memory words carry a short address-forming prefix so every
access lands in the data region, either at a fixed offset or at an offset
masked out of a register value; the masked variant is what makes addresses
data-dependent. Control flow only ever moves forward, so any generated
program terminates within one pass over its text.

All randomness flows through one caller-owned random.Random, which makes a
campaign a pure function of its seed and configuration."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .coverage import CoverageMap
from .isa import (
    DATA_WORDS, DataSection, Instruction, InstructionWord, Program, TestCase,
)

DATA_HI = 0x80004  # lui immediate whose masked address is the data base
VALUE_ADDR_MASK = 0x78  # keeps derived offsets 8-aligned, spanning 2 lines
DERIVED_DISP = 0x100  # displaces derived accesses past the register-init words
CONSUMER_DISP = 0x300  # derived-store band no other access pattern touches
_CONFLICT_BASE = 0x500  # fixed-offset band mapping to the same sets as derived
_TAIL_BASE = 0x100  # first offset whose cache line holds no register-init word
# tail lines open to undirected traffic: everything past the register-init
# words except the consumer-store and primer bands, which must stay cold
_TAIL_LINES = tuple(k for k in range(_TAIL_BASE // 0x40, 32)
                    if not 12 <= k <= 13 and not 20 <= k <= 23)


class DataStrategy(Enum):
    FULLY_RANDOM = "fully-random"
    FULLY_RANDOM_SEQ_ARCH = "fully-random-seq-arch"
    FIFTY_FIFTY = "fifty-fifty"


class Strategy(Enum):
    PASS_FEEDBACK = "pass"
    PASS_FEEDBACK_100 = "pass100"
    NEW_COVERAGE = "newcov"
    WEIGHTED = "weighted"


def strategy_capacity(strategy: Strategy) -> int:
    return 100 if strategy is Strategy.PASS_FEEDBACK_100 else 1000


class EmptyCorpus(Exception):
    pass


@dataclass(frozen=True)
class GenConfig:
    m_extension: bool = False
    min_body_words: int = 6
    max_body_words: int = 12
    reuse_probability: float = 0.2
    new_program_probability: float = 0.1
    mutate_probability: float = 0.45
    merge_probability: float = 0.45
    retain_probability: float = 0.5
    delete_probability: float = 0.25
    insert_probability: float = 0.25
    data_strategy: DataStrategy = DataStrategy.FIFTY_FIFTY

    def __post_init__(self):
        for p in (self.reuse_probability, self.new_program_probability,
                  self.mutate_probability, self.merge_probability,
                  self.retain_probability, self.delete_probability,
                  self.insert_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if abs(self.new_program_probability + self.mutate_probability
               + self.merge_probability - 1.0) > 1e-9:
            raise ValueError("fresh/mutate/merge probabilities must sum to 1")
        if abs(self.retain_probability + self.delete_probability
               + self.insert_probability - 1.0) > 1e-9:
            raise ValueError("retain/delete/insert probabilities must sum to 1")
        if not 0 <= self.min_body_words <= self.max_body_words:
            raise ValueError("bad body word bounds")


@dataclass
class MutatorStats:
    """Counters over the instrumented random choices, for calibration tests.
    Only genuinely probabilistic draws are counted: forced fresh generation
    during corpus warm-up and reuse draws with an empty register pool are
    tracked separately or not at all."""

    word_retain: int = 0
    word_delete: int = 0
    word_insert: int = 0
    mode_fresh: int = 0
    mode_mutate: int = 0
    mode_merge: int = 0
    warmup_fresh: int = 0
    reuse_draws: int = 0
    reuse_hits: int = 0
    energy_regens: int = 0
    evicted_regens: int = 0


# ============================================================================
# Program generation
# ============================================================================

_BRANCH_CCS = ("beq", "bne", "blt", "bge", "bltu", "bgeu")
_ALU_RR = ("add", "sub", "and", "or", "xor", "sll", "srl", "sra",
           "slt", "sltu", "addw", "subw", "sllw", "srlw", "sraw")
_ALU_RI = ("addi", "andi", "ori", "xori", "slti", "sltiu",
           "slli", "srli", "srai", "addiw")
_M_RR = ("mul", "mulh", "mulhu", "mulhsu", "div", "divu", "rem", "remu",
         "mulw", "divw", "divuw", "remw", "remuw")

# template kinds and their relative weights
_T_ALU1, _T_ALU2, _T_LOAD, _T_LOAD_DERIVED, _T_STORE, _T_STORE_DERIVED, \
    _T_BRANCH, _T_JAL, _T_JALR, _T_GUARD, _T_MEXT = range(11)
_TEMPLATES = (_T_ALU1, _T_ALU2, _T_LOAD, _T_LOAD_DERIVED, _T_STORE,
              _T_STORE_DERIVED, _T_BRANCH, _T_JAL, _T_JALR, _T_GUARD)
_WEIGHTS = (2, 1, 3, 1, 2, 1, 2, 1, 1, 5)
_MEXT_WEIGHT = 1

_MAX_TARGET_SPAN = 6  # branch targets stay near: uniform over the next <= 6 labels
_RECENT_SPAN = 4      # derived addressing draws its source from this many
                      # most recently used registers


class ProgramGenerator:
    """Stateless between programs apart from the shared rng and stats; the
    register reuse pool is rebuilt per program (or taken from the program a
    word is being inserted into)."""

    def __init__(self, cfg: GenConfig, rng, stats: MutatorStats):
        self.cfg = cfg
        self.rng = rng
        self.stats = stats
        self._pool: list[int] = []
        self._pool_set: set[int] = set()
        self._off_pool: list[int] = []
        self._last_load_rd: int = 0  # destination of the last emitted load
        self._last_guard_off: int | None = None  # line warmed by the last guard
        self._last_guard_rw: int = 0  # register the guard's primer load wrote
        self._used_primers: set[int] = set()  # lines already primed or probed
        self._consumer_due: bool = False  # a primed-line revisit wants a reader
        self._prev_t: int | None = None  # template of the previous word
        self._prev2_t: int | None = None  # template two words back
        templates = _TEMPLATES + ((_T_MEXT,) if cfg.m_extension else ())
        weights = _WEIGHTS + ((_MEXT_WEIGHT,) if cfg.m_extension else ())
        total = sum(weights)
        self._template_cdf = []
        acc = 0
        for t, w in zip(templates, weights):
            acc += w
            self._template_cdf.append((acc / total, t))

    def _reset_pool(self, regs: Iterable[int] = ()):
        self._pool = []
        self._pool_set = set()
        self._off_pool = []
        self._last_load_rd = 0
        self._last_guard_off = None
        self._last_guard_rw = 0
        self._used_primers = set()
        self._consumer_due = False
        self._prev_t = None
        self._prev2_t = None
        for r in regs:
            self._pool_add(r)

    def _pool_add(self, r: int):
        if r and r not in self._pool_set:
            self._pool_set.add(r)
            self._pool.append(r)

    def _reg(self) -> int:
        """Register operand with the configured chance of reusing one that
        already appears in the program."""
        if self._pool:
            self.stats.reuse_draws += 1
            if self.rng.random() < self.cfg.reuse_probability:
                self.stats.reuse_hits += 1
                return self._pool[self.rng.randrange(len(self._pool))]
        r = self.rng.randrange(1, 32)
        self._pool_add(r)
        return r

    def _reg_distinct(self, avoid: int) -> int:
        r = self._reg()
        if r == avoid:
            r = 1 + (avoid % 31)
            self._pool_add(r)
        return r

    def _reg_write(self, *avoid: int) -> int:
        """Destination register that stays off the listed registers and off
        the last guard's primer register, whose value gates the probe's
        address chain and must not be rewritten between guard and probe."""
        r = self._reg()
        while r in avoid or (self._last_guard_off is not None
                             and r == self._last_guard_rw):
            r = self.rng.randrange(1, 32)
        self._pool_add(r)
        return r

    def _recent_reg(self) -> int:
        """Source register for derived addressing. Prefers the destination of
        the last load so the offset tends to chain off a loaded value, falling
        back on one of the most recently used registers."""
        if self._last_load_rd and self.rng.random() < 0.75:
            return self._last_load_rd
        if self._pool:
            span = min(_RECENT_SPAN, len(self._pool))
            return self._pool[len(self._pool) - 1 - self.rng.randrange(span)]
        return self._reg()

    def _offset(self, fresh: bool = False) -> int:
        """Byte offset for a fixed-address access. Reusing an offset already
        touched keeps the set of data words the contract constrains small and
        revisits cache lines; `fresh` forces a new draw. Fresh draws are
        quantized to one canonical word per cache line, which keeps line
        coverage wide while touching few distinct words, and half of them land
        in the band whose sets alias the derived-access window, so speculative
        fills can evict lines the program comes back to."""
        if not fresh and self._off_pool and self.rng.random() < 0.5:
            return self._off_pool[self.rng.randrange(len(self._off_pool))]
        x = self.rng.random()
        if x < 0.7:
            off = 8 * self.rng.randrange(31)
        elif x < 0.75:
            off = _CONFLICT_BASE + 0x40 * self.rng.randrange(2)
        else:
            # tail lines, skipping the bands guards prime and dependent
            # stores land in: traffic there would warm lines whose first
            # access needs to be a miss
            k = _TAIL_LINES[self.rng.randrange(len(_TAIL_LINES))]
            off = 0x40 * k
        self._off_pool.append(off)
        return off

    def _neighbor_offset(self) -> int:
        """Offset in the same cache line as the last guard's primer load but
        never the primer word itself: the line is warm by the time the shadow
        executes, and a word the architectural path never reads keeps its
        value unconstrained, while the primer word is pinned by the reading
        the guard already did. Falls back on other tail-band offsets already
        in use, then on a fresh tail draw."""
        base = self._last_guard_off
        if base is None:
            cands = [o for o in self._off_pool if o >= _TAIL_BASE]
            if cands:
                base = cands[self.rng.randrange(len(cands))]
            else:
                off = 0x40 * _TAIL_LINES[self.rng.randrange(len(_TAIL_LINES))]
                self._off_pool.append(off)
                return off
            return (base & ~0x3F) | (8 * self.rng.randrange(8))
        return (base & ~0x3F) | (8 * (1 + self.rng.randrange(7)))

    def _pick_template(self) -> int:
        x = self.rng.random()
        for cut, t in self._template_cdf:
            if x < cut:
                return t
        return self._template_cdf[-1][1]

    def _pick_template_seq(self) -> int:
        """Template choice with two words of sequence context, biased toward
        the cadence guard, load, derived, load, derived: the load right after
        a guard sits in its branch shadow, the derived load consumes it there,
        the next load revisits the line the guard primed, and the last derived
        load gives that revisit's latency a dependent reader. The derived
        steps only fire while a guard's context is live: every derived load on
        the architectural path exposes a data-dependent value, so scattering
        them outside the pattern mostly burns input pairs on the contract
        filter."""
        rng = self.rng
        prev, prev2 = self._prev_t, self._prev2_t
        if prev == _T_GUARD and rng.random() < 0.85:
            return _T_LOAD
        if prev == _T_LOAD and prev2 == _T_GUARD and rng.random() < 0.8:
            return _T_LOAD_DERIVED
        if prev == _T_LOAD_DERIVED and self._last_guard_off is not None \
                and rng.random() < 0.85:
            return _T_LOAD
        if self._consumer_due and prev == _T_LOAD and rng.random() < 0.85:
            return _T_STORE_DERIVED
        return self._pick_template()

    def _target(self, index: int, total: int) -> int:
        span = min(total - index, _MAX_TARGET_SPAN)
        return index + 1 + self.rng.randrange(span)

    def _guard_target(self, index: int, total: int) -> int:
        """Guard branches favor short skips, leaving one or two words that
        only ever execute as the wrong path while an observer of the cache
        state they perturbed sits at or past the join."""
        span = min(total - index, _MAX_TARGET_SPAN)
        x = self.rng.random()
        if span >= 3 and x < 0.75:
            return index + 3
        if span >= 2 and x < 0.9:
            return index + 2
        return index + 1 + self.rng.randrange(span)

    def _make_word(self, index: int, total: int) -> InstructionWord:
        rng = self.rng
        prev = self._prev_t
        t = self._pick_template_seq()
        self._prev2_t = prev
        self._prev_t = t
        I = Instruction
        if t == _T_ALU1 or t == _T_ALU2:
            instrs = []
            for _ in range(1 if t == _T_ALU1 else 2):
                if rng.random() < 0.5:
                    name = rng.choice(_ALU_RR)
                    instrs.append(I(name, rd=self._reg_write(),
                                    rs1=self._reg(), rs2=self._reg()))
                else:
                    name = rng.choice(_ALU_RI)
                    imm = self._alu_imm(name)
                    instrs.append(I(name, rd=self._reg_write(),
                                    rs1=self._reg(), imm=imm))
            return InstructionWord(tuple(instrs))
        if t == _T_LOAD:
            ra = self._reg_write()
            rd = self._reg_write()
            self._last_load_rd = rd
            if prev == _T_GUARD:
                off = self._neighbor_offset()
            elif prev == _T_LOAD_DERIVED:
                # probe of the line the last guard pulled in, with its address
                # chain held back (AND with x0 keeps the value out of the
                # address) until the primer's miss completes, which is after
                # any misprediction of the guard has already been unwound: the
                # probe then observes whatever the speculated window did to
                # that line instead of re-fetching it while still speculating
                if self._last_guard_off is not None and self._last_guard_rw:
                    rt = self._reg_write(ra)
                    off = self._last_guard_off
                    rw = self._last_guard_rw
                    self._last_guard_off = None  # one probe per guard
                    self._consumer_due = True
                    return InstructionWord((
                        I("lui", rd=ra, imm=DATA_HI),
                        I("and", rd=rt, rs1=rw, rs2=0),
                        I("add", rd=ra, rs1=ra, rs2=rt),
                        I("ld", rd=rd, rs1=ra, imm=off)))
                off = self._offset()
            else:
                off = self._offset()
            return InstructionWord((
                I("lui", rd=ra, imm=DATA_HI),
                I("ld", rd=rd, rs1=ra, imm=off)))
        if t == _T_LOAD_DERIVED:
            rs = self._recent_reg()
            ra = self._reg_write(rs)
            rb = self._reg_write(ra)
            rd = self._reg_write()
            self._last_load_rd = rd
            self._consumer_due = False
            return InstructionWord((
                I("andi", rd=ra, rs1=rs, imm=VALUE_ADDR_MASK),
                I("lui", rd=rb, imm=DATA_HI),
                I("add", rd=ra, rs1=ra, rs2=rb),
                I("ld", rd=rd, rs1=ra, imm=DERIVED_DISP)))
        if t == _T_STORE:
            ra = self._reg_write()
            return InstructionWord((
                I("lui", rd=ra, imm=DATA_HI),
                I("sd", rs1=ra, rs2=self._reg(), imm=self._offset())))
        if t == _T_STORE_DERIVED:
            rs = self._recent_reg()
            ra = self._reg_write(rs)
            rb = self._reg_write(ra)
            # as the reader of a primed-line revisit, the store goes to a band
            # nothing else touches: cold on both sides, its full miss starts
            # only once the revisit's value arrives, so that value's timing
            # reaches retirement past any fixed-schedule tail work
            disp = CONSUMER_DISP if self._consumer_due else DERIVED_DISP
            self._consumer_due = False
            return InstructionWord((
                I("andi", rd=ra, rs1=rs, imm=VALUE_ADDR_MASK),
                I("lui", rd=rb, imm=DATA_HI),
                I("add", rd=ra, rs1=ra, rs2=rb),
                I("sd", rs1=ra, rs2=self._reg(), imm=disp)))
        if t == _T_BRANCH:
            cc = rng.choice(_BRANCH_CCS)
            return InstructionWord(
                (I(cc, rs1=self._reg(), rs2=self._reg()),),
                target=self._target(index, total))
        if t == _T_GUARD:
            # branch gated directly by a load of a register-init word: the
            # loaded value is unconstrained by any contract yet virtually
            # never zero, so the branch goes the way a cold predictor does
            # not expect, opening a speculation window behind it. The extra
            # primer load pulls a tail-band line into the cache without
            # delaying the branch, giving a shadow load in the next word a
            # warm line to read from.
            ra = self._reg()
            rc = self._reg_distinct(ra)
            rw = self._reg()
            while rw == ra or rw == rc:
                rw = rng.randrange(1, 32)
            self._pool_add(rw)
            off = 8 * rng.randrange(31)
            fresh = [_CONFLICT_BASE + 0x40 * k for k in range(2)
                     if _CONFLICT_BASE + 0x40 * k not in self._used_primers]
            if fresh and rng.random() < 0.85:
                # a line no earlier access has warmed: the primer's miss must
                # still be in flight when the branch resolves, or the value
                # hold-back in a later revisit of this line does nothing
                primer = fresh[rng.randrange(len(fresh))]
            else:
                primer = 0x40 * _TAIL_LINES[rng.randrange(len(_TAIL_LINES))]
            self._used_primers.add(primer)
            self._last_guard_off = primer
            self._last_guard_rw = rw
            self._consumer_due = False
            cc = "bne" if rng.random() < 0.9 else "beq"
            return InstructionWord((
                I("lui", rd=ra, imm=DATA_HI),
                I("ld", rd=rc, rs1=ra, imm=off),
                I("ld", rd=rw, rs1=ra, imm=primer),
                I(cc, rs1=rc, rs2=0)),
                target=self._guard_target(index, total))
        if t == _T_JAL:
            return InstructionWord(
                (I("jal", rd=self._reg_write()),),
                target=self._target(index, total))
        if t == _T_JALR:
            rt = self._reg_write()
            return InstructionWord(
                (I("auipc", rd=rt, imm=0),
                 I("jalr", rd=self._reg_write(), rs1=rt)),
                target=self._target(index, total))
        # _T_MEXT
        name = rng.choice(_M_RR)
        return InstructionWord((I(name, rd=self._reg_write(),
                                  rs1=self._reg(), rs2=self._reg()),))

    def _alu_imm(self, name: str) -> int:
        if name in ("slli", "srli", "srai"):
            return self.rng.randrange(64)
        return self.rng.randrange(-2048, 2048)

    def _absorb(self, w: InstructionWord):
        """Refresh sequence context from a word kept as-is during mutation, so
        a word inserted right after it composes with it the same way freshly
        generated neighbors do."""
        self._prev2_t = self._prev_t
        last = w.instrs[-1]
        if w.target is not None and len(w.instrs) == 4 \
                and w.instrs[1].name == "ld" and w.instrs[2].name == "ld":
            self._prev_t = _T_GUARD
            self._last_guard_off = w.instrs[2].imm
            self._last_guard_rw = w.instrs[2].rd
            self._used_primers.add(w.instrs[2].imm)
            self._consumer_due = False
        elif last.name == "ld":
            if len(w.instrs) == 4 and w.instrs[1].name == "and":
                # a kept primed-line revisit: its value still wants a reader
                self._prev_t = _T_LOAD
                self._last_guard_off = None
                self._consumer_due = True
            elif len(w.instrs) == 4:
                self._prev_t = _T_LOAD_DERIVED
                self._consumer_due = False
            else:
                self._prev_t = _T_LOAD
            self._last_load_rd = last.rd
            if len(w.instrs) == 2:
                self._off_pool.append(last.imm)
        elif last.name == "sd":
            self._prev_t = _T_STORE_DERIVED if len(w.instrs) == 4 else _T_STORE
            if len(w.instrs) == 2:
                self._off_pool.append(last.imm)
        else:
            self._prev_t = None

    def generate(self, seed_id: str) -> Program:
        self._reset_pool()
        n = self.rng.randint(self.cfg.min_body_words, self.cfg.max_body_words)
        words = tuple(self._make_word(k, n) for k in range(n))
        prog = Program(words, seed_id=seed_id)
        prog.validate()
        return prog

    # -- mutate ------------------------------------------------------------
    def mutate(self, p: Program) -> Program:
        """Per word: retain, delete, or retain-and-insert-a-fresh-word-after.
        Labels are renormalized; a target whose word was deleted moves to the
        next surviving later label, or to the epilogue."""
        cfg = self.cfg
        rng = self.rng
        st = self.stats
        n_old = len(p.words)
        # pass 1: fates and the new layout
        fates = []
        for _ in range(n_old):
            x = rng.random()
            if x < cfg.retain_probability:
                fates.append("retain")
                st.word_retain += 1
            elif x < cfg.retain_probability + cfg.delete_probability:
                fates.append("delete")
                st.word_delete += 1
            else:
                fates.append("insert")
                st.word_insert += 1
        layout: list[tuple[str, int]] = []  # ("keep"|"new", old index)
        new_index_of_old: dict[int, int] = {}
        for k, fate in enumerate(fates):
            if fate == "delete":
                continue
            new_index_of_old[k] = len(layout)
            layout.append(("keep", k))
            if fate == "insert":
                layout.append(("new", k))
        n_new = len(layout)
        # old label -> new label (next surviving later word, else epilogue)
        label_map = [0] * (n_old + 1)
        label_map[n_old] = n_new
        for k in range(n_old - 1, -1, -1):
            label_map[k] = new_index_of_old.get(k, label_map[k + 1])
        # pass 2: build the words
        self._reset_pool(_used_registers(p))
        out: list[InstructionWord] = []
        for new_k, (what, old_k) in enumerate(layout):
            if what == "keep":
                w = p.words[old_k]
                self._absorb(w)
                if w.target is not None:
                    out.append(InstructionWord(w.instrs, target=label_map[w.target]))
                else:
                    out.append(w)
            else:
                out.append(self._make_word(new_k, n_new))
        prog = Program(tuple(out), seed_id=p.seed_id)
        prog.validate()
        return prog

    # -- merge -------------------------------------------------------------
    def merge(self, p1: Program, p2: Program) -> Program:
        """Crossover keeping p1's data seed: a prefix of p1, the middle of p2
        without its last five words, p1's last five words; then mutate. Inputs
        shorter than five words fall back to mutate(p1)."""
        len1, len2 = len(p1.words), len(p2.words)
        if len1 < 5 or len2 < 5:
            return self.mutate(p1)
        i = self.rng.randrange(min(len1, len2))
        mid = p2.words[i:len2 - 5]
        n_new = i + len(mid) + 5
        out: list[InstructionWord] = []
        for w in p1.words[:i]:
            if w.target is not None:
                t = w.target
                if t <= i:
                    new_t = t
                elif t < len1 - 5:
                    new_t = n_new - 5
                else:
                    new_t = t + n_new - len1
                w = InstructionWord(w.instrs, target=new_t)
            out.append(w)
        for w in mid:
            if w.target is not None:
                t = w.target
                new_t = t if t < len2 - 5 else n_new - 5
                w = InstructionWord(w.instrs, target=new_t)
            out.append(w)
        for w in p1.words[len1 - 5:]:
            if w.target is not None:
                w = InstructionWord(w.instrs, target=w.target + n_new - len1)
            out.append(w)
        temp = Program(tuple(out), seed_id=p1.seed_id)
        temp.validate()
        return self.mutate(temp)


def _used_registers(p: Program) -> list[int]:
    regs: list[int] = []
    seen: set[int] = set()
    for w in p.words:
        for ins in w.instrs:
            for r in (ins.rd, ins.rs1, ins.rs2):
                if r and r not in seen:
                    seen.add(r)
                    regs.append(r)
    return regs


# ============================================================================
# Data sections
# ============================================================================

def generate_data_pair(strategy: DataStrategy, rng
                       ) -> tuple[DataSection, DataSection]:
    a = [rng.getrandbits(64) for _ in range(DATA_WORDS)]
    if strategy is DataStrategy.FULLY_RANDOM:
        b = [rng.getrandbits(64) for _ in range(DATA_WORDS)]
    elif strategy is DataStrategy.FULLY_RANDOM_SEQ_ARCH:
        b = a[:31] + [rng.getrandbits(64) for _ in range(DATA_WORDS - 31)]
    else:  # FIFTY_FIFTY
        if rng.random() < 0.5:
            b = [rng.getrandbits(64) for _ in range(DATA_WORDS)]
        else:
            b = a[:31] + [w if rng.random() < 0.5 else rng.getrandbits(64)
                          for w in a[31:]]
    return DataSection(tuple(a)), DataSection(tuple(b))


@dataclass
class DataSeed:
    id: str
    data_a: DataSection
    data_b: DataSection
    n_pass: int = 0
    n_fail: int = 0


class DataStore:
    """LRU-bounded map from seed id to DataSeed. A seed evicted and later
    asked for again is regenerated under the same id (fresh pair, fresh
    counters)."""

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._seeds: "OrderedDict[str, DataSeed]" = OrderedDict()

    def __len__(self) -> int:
        return len(self._seeds)

    def __contains__(self, seed_id: str) -> bool:
        return seed_id in self._seeds

    def put(self, seed: DataSeed) -> None:
        self._seeds[seed.id] = seed
        self._seeds.move_to_end(seed.id)
        while len(self._seeds) > self.capacity:
            self._seeds.popitem(last=False)

    def get(self, seed_id: str) -> DataSeed | None:
        seed = self._seeds.get(seed_id)
        if seed is not None:
            self._seeds.move_to_end(seed_id)
        return seed


# ============================================================================
# Corpus
# ============================================================================

@dataclass
class CorpusEntry:
    program: Program
    cov: CoverageMap
    index: int
    score: float = 0.0


def corpus_scores(maps: list[set[int]]) -> list[float]:
    """Score of each member: the sum over its covered elements of the inverse
    of how many members cover that element."""
    counts: dict[int, int] = {}
    for m in maps:
        for c in m:
            counts[c] = counts.get(c, 0) + 1
    return [sum(1.0 / counts[c] for c in m) for m in maps]


class Corpus:
    def __init__(self, strategy: Strategy, capacity: int | None = None):
        self.strategy = strategy
        self.capacity = strategy_capacity(strategy) if capacity is None else capacity
        self.entries: list[CorpusEntry] = []
        self._next_index = 0

    def __len__(self) -> int:
        return len(self.entries)

    def maybe_admit(self, program: Program, cov: CoverageMap,
                    new_bits: int) -> bool:
        """Admission per strategy. Callers pass test cases that already passed
        the contract check; new_bits is the count of coverage bits this run
        set that the campaign had not seen before."""
        if self.strategy in (Strategy.NEW_COVERAGE, Strategy.WEIGHTED) \
                and new_bits == 0:
            return False
        self.entries.append(CorpusEntry(program, cov, self._next_index))
        self._next_index += 1
        if len(self.entries) > self.capacity:
            self.entries.pop(0)  # oldest by insertion
        if self.strategy is Strategy.WEIGHTED:
            self._recompute_scores()
        return True

    def _recompute_scores(self) -> None:
        scores = corpus_scores([e.cov.indices for e in self.entries])
        for e, s in zip(self.entries, scores):
            e.score = s

    def select(self, rng) -> CorpusEntry:
        if not self.entries:
            raise EmptyCorpus("selection from an empty corpus")
        if self.strategy is Strategy.WEIGHTED:
            total = sum(e.score for e in self.entries)
            if total <= 0.0:
                return self.entries[rng.randrange(len(self.entries))]
            x = rng.random() * total
            acc = 0.0
            for e in self.entries:
                acc += e.score
                if x < acc:
                    return e
            return self.entries[-1]
        return self.entries[rng.randrange(len(self.entries))]

    def select_pair(self, rng) -> tuple[CorpusEntry, CorpusEntry]:
        return self.select(rng), self.select(rng)


# ============================================================================
# The mutator state machine
# ============================================================================

class MutatorState:
    """Owns the corpus, the data store, the generator, and the rng. Single
    threaded by design; the fuzzer's coordinator is the only caller."""

    def __init__(self, cfg: GenConfig, strategy: Strategy, rng,
                 data_store_capacity: int = 256,
                 corpus_capacity: int | None = None):
        self.cfg = cfg
        self.rng = rng
        self.stats = MutatorStats()
        self.corpus = Corpus(strategy, corpus_capacity)
        self.data_store = DataStore(data_store_capacity)
        self.generator = ProgramGenerator(cfg, rng, self.stats)
        self._seed_counter = 0

    def _new_seed_id(self) -> str:
        sid = f"d{self._seed_counter:06d}"
        self._seed_counter += 1
        return sid

    def _fresh_program(self) -> Program:
        sid = self._new_seed_id()
        prog = self.generator.generate(sid)
        a, b = generate_data_pair(self.cfg.data_strategy, self.rng)
        self.data_store.put(DataSeed(sid, a, b))
        return prog

    def _seed_for(self, prog: Program) -> DataSeed:
        seed = self.data_store.get(prog.seed_id)
        if seed is None:
            a, b = generate_data_pair(self.cfg.data_strategy, self.rng)
            seed = DataSeed(prog.seed_id, a, b)
            self.data_store.put(seed)
            self.stats.evicted_regens += 1
        return seed

    def next_testcase(self) -> tuple[TestCase, DataSeed]:
        cfg = self.cfg
        if len(self.corpus) < self.corpus.capacity // 10:
            self.stats.warmup_fresh += 1
            prog = self._fresh_program()
        else:
            x = self.rng.random()
            if x < cfg.new_program_probability:
                self.stats.mode_fresh += 1
                prog = self._fresh_program()
            elif x < cfg.new_program_probability + cfg.mutate_probability:
                self.stats.mode_mutate += 1
                parent = self.corpus.select(self.rng)
                prog = self.generator.mutate(parent.program)
            else:
                self.stats.mode_merge += 1
                e1, e2 = self.corpus.select_pair(self.rng)
                prog = self.generator.merge(e1.program, e2.program)
        seed = self._seed_for(prog)
        return TestCase(prog, seed.data_a, seed.data_b), seed

    def update_data_seed_energy(self, seed: DataSeed,
                                indistinguishable: bool) -> bool:
        """Counter update after a contract check; regenerates the pair when
        the seed keeps producing distinguishable inputs. Returns True when a
        regeneration happened."""
        if indistinguishable:
            seed.n_pass += 1
        else:
            seed.n_fail += 1
        if seed.n_pass - seed.n_fail < -10:
            seed.data_a, seed.data_b = generate_data_pair(
                self.cfg.data_strategy, self.rng)
            seed.n_pass = 0
            seed.n_fail = 0
            self.stats.energy_regens += 1
            return True
        return False
