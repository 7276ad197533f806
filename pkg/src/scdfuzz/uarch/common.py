"""Shared pieces of the two behavioral cores: configuration, cache and
predictor models, element naming, retirement events.

A core's observable micro state is a fixed, ordered list of named integer
elements (the element list is a pure function of the CoreConfig). Snapshots
are tuples of element values in that order; the self-composition harness
diffs two snapshots element-wise. Memory contents, cache data payloads, and
the architectural register file are deliberately not elements; register
values still surface through pipeline latch value fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

from ..isa import PHYS_MASK


class CoreKind(Enum):
    INORDER = "inorder"
    SPEC = "spec"


@dataclass(frozen=True)
class CacheConfig:
    sets: int = 16
    ways: int = 1
    line_bytes: int = 64
    hit_latency: int = 1
    miss_latency: int = 20

    def __post_init__(self):
        if self.sets < 1 or self.ways < 1:
            raise ValueError("cache needs at least one set and one way")
        if self.line_bytes < 8 or self.line_bytes & (self.line_bytes - 1):
            raise ValueError("line_bytes must be a power of two >= 8")
        if not 1 <= self.hit_latency <= self.miss_latency <= 255:
            raise ValueError("latencies must satisfy 1 <= hit <= miss <= 255")


@dataclass(frozen=True)
class PredictorConfig:
    bimodal_entries: int = 64
    btb_entries: int = 16
    flush_penalty: int = 6

    def __post_init__(self):
        if self.bimodal_entries < 1 or self.btb_entries < 1:
            raise ValueError("predictor tables need at least one entry")
        if not 1 <= self.flush_penalty <= 255:
            raise ValueError("flush penalty out of range")


@dataclass(frozen=True)
class CoreConfig:
    kind: CoreKind = CoreKind.INORDER
    cache: CacheConfig = field(default_factory=CacheConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)  # spec kind only
    flush_penalty: int = 3       # inorder taken-branch penalty (>= 2)
    spec_window: int = 16        # spec kind only: in-flight window slots
    mul_div_variable_latency: bool = False
    m_extension: bool = False

    def __post_init__(self):
        if self.flush_penalty < 2:
            raise ValueError("inorder flush penalty must be >= 2")
        if not 2 <= self.spec_window <= 64:
            raise ValueError("spec window out of range")


# mul/div latency: fixed unless variable latency is enabled, in which case it
# depends on the magnitude of the larger operand (the timing side channel).
FIXED_MDIV_LATENCY = 3


def mdiv_latency(cfg: CoreConfig, a: int, b: int) -> int:
    if not cfg.mul_div_variable_latency:
        return FIXED_MDIV_LATENCY
    clz = 64 - max(a, b).bit_length()
    return 2 + clz // 16


class Cache:
    """Valid+tag only (payloads are never modeled; data comes from memory).
    access() probes and, on a miss, immediately installs the line, returning
    the access latency. The immediate install is what makes squashed
    speculative accesses leave their footprint."""

    __slots__ = ("sets", "ways", "line_shift", "hit_latency", "miss_latency",
                 "valid", "tags", "rr")

    def __init__(self, cfg: CacheConfig):
        self.sets = cfg.sets
        self.ways = cfg.ways
        self.line_shift = cfg.line_bytes.bit_length() - 1
        self.hit_latency = cfg.hit_latency
        self.miss_latency = cfg.miss_latency
        n = cfg.sets * cfg.ways
        self.valid = [0] * n
        self.tags = [0] * n
        self.rr = [0] * cfg.sets  # round-robin fill pointer, used when ways > 1

    def access(self, addr: int) -> int:
        line = (addr & PHYS_MASK) >> self.line_shift
        s = line % self.sets
        tag = line // self.sets
        base = s * self.ways
        for w in range(self.ways):
            if self.valid[base + w] and self.tags[base + w] == tag:
                return self.hit_latency
        w = self.rr[s]
        self.valid[base + w] = 1
        self.tags[base + w] = tag
        if self.ways > 1:
            self.rr[s] = (w + 1) % self.ways
        return self.miss_latency


class Bimodal:
    """2-bit saturating counters, reset to weak-not-taken (1). Predict taken
    when the counter is >= 2."""

    __slots__ = ("entries", "counters")

    def __init__(self, cfg: PredictorConfig):
        self.entries = cfg.bimodal_entries
        self.counters = [1] * cfg.bimodal_entries

    def index(self, pc: int) -> int:
        return (pc >> 2) % self.entries

    def predict(self, pc: int) -> bool:
        return self.counters[self.index(pc)] >= 2

    def update(self, pc: int, taken: bool) -> None:
        i = self.index(pc)
        c = self.counters[i]
        self.counters[i] = min(3, c + 1) if taken else max(0, c - 1)


class Btb:
    __slots__ = ("entries", "valid", "pcs", "targets")

    def __init__(self, cfg: PredictorConfig):
        self.entries = cfg.btb_entries
        self.valid = [0] * cfg.btb_entries
        self.pcs = [0] * cfg.btb_entries
        self.targets = [0] * cfg.btb_entries

    def lookup(self, pc: int) -> int | None:
        i = (pc >> 2) % self.entries
        if self.valid[i] and self.pcs[i] == pc:
            return self.targets[i]
        return None

    def insert(self, pc: int, target: int) -> None:
        i = (pc >> 2) % self.entries
        self.valid[i] = 1
        self.pcs[i] = pc
        self.targets[i] = target


class RetireEvent(NamedTuple):
    """One retired instruction and its architectural effect. The effect fields
    line up with isa.Effect so retirement streams can be compared directly."""

    cycle: int
    pc: int
    raw: int
    rd: int
    rd_value: int
    store_addr: int | None
    store_value: int | None

    @property
    def effect(self):
        return self[1:]


class CoreTimeout(Exception):
    pass


def _cache_elements(cfg: CacheConfig) -> list[tuple[str, int]]:
    n = cfg.sets * cfg.ways
    out = [(f"cache_valid{i}", 1) for i in range(n)]
    out += [(f"cache_tag{i}", 64) for i in range(n)]
    if cfg.ways > 1:
        out += [(f"cache_rr{s}", 8) for s in range(cfg.sets)]
    return out


def element_names(cfg: CoreConfig) -> list[tuple[str, int]]:
    """(name, width) of every micro-state element, in snapshot order."""
    if cfg.kind is CoreKind.INORDER:
        out = [
            ("cycle", 64), ("fetch_pc", 64), ("fetch_hold", 8),
            ("f2d_valid", 1), ("f2d_pc", 64), ("f2d_raw", 32),
            ("d2x_valid", 1), ("d2x_pc", 64), ("d2x_raw", 32),
            ("d2x_rs1v", 64), ("d2x_rs2v", 64),
            ("x2m_valid", 1), ("x2m_pc", 64), ("x2m_raw", 32),
            ("x2m_val", 64), ("x2m_addr", 64), ("mem_busy", 8),
            ("m2w_valid", 1), ("m2w_pc", 64), ("m2w_raw", 32), ("m2w_val", 64),
            ("mul_busy", 8), ("terminated", 1),
        ]
        return out + _cache_elements(cfg.cache)
    out = [
        ("cycle", 64), ("fetch_pc", 64), ("fetch_hold", 8),
        ("terminated", 1), ("spec_depth", 8),
        ("win_head", 8), ("win_count", 8),
    ]
    for j in range(cfg.spec_window):
        out += [
            (f"w{j}_valid", 1), (f"w{j}_pc", 64), (f"w{j}_raw", 32),
            (f"w{j}_phase", 2), (f"w{j}_rem", 8), (f"w{j}_res", 64),
            (f"w{j}_prednext", 64), (f"w{j}_staddr", 64), (f"w{j}_stval", 64),
        ]
    out += [(f"bim{i}", 2) for i in range(cfg.predictor.bimodal_entries)]
    for i in range(cfg.predictor.btb_entries):
        out += [(f"btb{i}_valid", 1), (f"btb{i}_pc", 64), (f"btb{i}_tgt", 64)]
    return out + _cache_elements(cfg.cache)
