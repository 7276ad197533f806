"""Self-composition deviation coverage.

Running two core instances in lockstep yields one deviation vector per
cycle: bit r is set when micro-state element r differs between the
instances. Each vector is hashed to 24 bits and combined with the previous
cycle's hash so that the same deviation pattern reached from a different
predecessor maps to a different coverage index:

    index_t = (H(dv_t) XOR (H(dv_{t-1}) >> 1)) mod 2^24,  H(dv_{-1}) = 0

H is the first three bytes of SHAKE128 over the little-endian packed bit
vector, read as a little-endian integer. The coverage map is a set of 2^24
bits; on disk it is the packed 2 MiB bitmap, in memory a sparse set of
indices (campaigns touch a tiny fraction of the space)."""

from __future__ import annotations

import hashlib
from typing import Iterable, NamedTuple

MAP_BITS = 1 << 24
MAP_BYTES = MAP_BITS // 8
INDEX_MASK = MAP_BITS - 1


class DeviationVector(NamedTuple):
    width: int   # number of micro-state elements
    bits: int    # bit r set iff element r differs

    @property
    def is_zero(self) -> bool:
        return self.bits == 0

    def popcount(self) -> int:
        return self.bits.bit_count()

    def to_bytes(self) -> bytes:
        return self.bits.to_bytes((self.width + 7) // 8, "little")


_hash_memo: dict[DeviationVector, int] = {}
_HASH_MEMO_CAP = 1 << 16


def hash_dv(dv: DeviationVector) -> int:
    """24-bit hash of one deviation vector."""
    h = _hash_memo.get(dv)
    if h is None:
        h = int.from_bytes(hashlib.shake_128(dv.to_bytes()).digest(3), "little")
        if len(_hash_memo) >= _HASH_MEMO_CAP:
            _hash_memo.clear()
        _hash_memo[dv] = h
    return h


class RollingHashState:
    __slots__ = ("prev",)

    def __init__(self):
        self.prev = 0


class CoverageMap:
    """2^24-bit map, sparse in memory."""

    __slots__ = ("indices",)

    def __init__(self, indices: Iterable[int] = ()):
        self.indices = set(indices)

    def set_index(self, index: int) -> None:
        self.indices.add(index)

    def popcount(self) -> int:
        return len(self.indices)

    def merge(self, other: "CoverageMap") -> None:
        self.indices |= other.indices

    def new_coverage(self, other: "CoverageMap") -> "CoverageMap":
        """Bits set in `other` but not here."""
        return CoverageMap(other.indices - self.indices)

    def __contains__(self, index: int) -> bool:
        return index in self.indices

    def __eq__(self, other) -> bool:
        return isinstance(other, CoverageMap) and self.indices == other.indices

    def __len__(self) -> int:
        return len(self.indices)

    def to_bytes(self) -> bytes:
        buf = bytearray(MAP_BYTES)
        for i in self.indices:
            buf[i >> 3] |= 1 << (i & 7)
        return bytes(buf)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CoverageMap":
        if len(data) != MAP_BYTES:
            raise ValueError(f"coverage map must be {MAP_BYTES} bytes,"
                             f" got {len(data)}")
        out = cls()
        idx = out.indices
        for bi, byte in enumerate(data):
            while byte:
                low = byte & -byte
                idx.add((bi << 3) | (low.bit_length() - 1))
                byte ^= low
        return out

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CoverageMap":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def scd_update(cmap: CoverageMap, rolling: RollingHashState,
               dv: DeviationVector) -> int:
    """Fold one per-cycle deviation vector into the map; returns the index."""
    h = hash_dv(dv)
    index = (h ^ (rolling.prev >> 1)) & INDEX_MASK
    cmap.set_index(index)
    rolling.prev = h
    return index


def coverage_of_run(deviations: Iterable[DeviationVector]) -> CoverageMap:
    cmap = CoverageMap()
    rolling = RollingHashState()
    for dv in deviations:
        scd_update(cmap, rolling, dv)
    return cmap
