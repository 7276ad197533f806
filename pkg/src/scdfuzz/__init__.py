"""Differential fuzzer for microarchitectural timing leaks on toy RISC-V cores."""

__version__ = "0.1.0"
