"""Cycle-accurate behavioral core models with inspectable micro state."""

from __future__ import annotations

from ..isa import DataSection, Image, Program, build_image
from .common import (
    Bimodal, Btb, Cache, CacheConfig, CoreConfig, CoreKind, CoreTimeout,
    FIXED_MDIV_LATENCY, PredictorConfig, RetireEvent, element_names,
    mdiv_latency,
)
from .inorder import InOrderCore
from .speccore import BRANCH_RESOLVE_LATENCY, JAL_RESOLVE_LATENCY, SpecCore

__all__ = [
    "Bimodal", "Btb", "Cache", "CacheConfig", "CoreConfig", "CoreKind",
    "CoreTimeout", "FIXED_MDIV_LATENCY", "PredictorConfig", "RetireEvent",
    "element_names", "mdiv_latency", "InOrderCore", "SpecCore",
    "BRANCH_RESOLVE_LATENCY", "JAL_RESOLVE_LATENCY",
    "make_core", "run_core",
]


def make_core(cfg: CoreConfig, image: Image):
    if cfg.kind is CoreKind.INORDER:
        return InOrderCore(cfg, image)
    return SpecCore(cfg, image)


def run_core(cfg: CoreConfig, program: Program, data: DataSection,
             max_cycles: int = 100_000):
    """Run one core to completion. Returns (cycles, retire_log)."""
    core = make_core(cfg, build_image(program, data))
    while not core.terminated:
        if core.cycle >= max_cycles:
            raise CoreTimeout(f"no termination within {max_cycles} cycles")
        core.step()
    return core.cycle, core.retire_log
