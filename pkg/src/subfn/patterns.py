"""Packed activation patterns, Hamming distance and region aggregation.

Patterns are bit vectors of length m packed little-endian: bit j of the
pattern is bit (j mod 8) of byte j // 8, trailing pad bits zero. The same
packing defines the hex encoding of the on-disk pattern file, so external
producers can feed the scorer without sharing any code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "ActivationPattern",
    "RegionStats",
    "RegionIndex",
    "PatternRecord",
    "PatternFileError",
    "hamming",
    "build_region_index",
    "write_patterns",
    "read_patterns",
    "pack_bits",
    "hamming_to_rows",
]

PATTERN_FILE_HEADER = "#subfn-patterns v1"


class PatternFileError(ValueError):
    """Malformed pattern file (bad header, record or field)."""


@dataclass(frozen=True)
class ActivationPattern:
    """Canonical packed bit vector of m ReLU on/off decisions."""

    bits: bytes
    m: int

    def __post_init__(self):
        nbytes = _nbytes(self.m)
        if len(self.bits) != nbytes:
            raise ValueError(
                f"pattern of m={self.m} needs {nbytes} bytes, got {len(self.bits)}"
            )
        if self.m % 8 and nbytes and self.bits[-1] >> (self.m % 8):
            raise ValueError("non-zero pad bits beyond index m-1")

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "ActivationPattern":
        arr = np.asarray(bits, dtype=np.uint8)
        if arr.ndim != 1:
            raise ValueError("from_bits expects a 1-D bit sequence")
        packed = np.packbits(arr, bitorder="little").tobytes()
        return cls(bits=packed, m=int(arr.size))

    @classmethod
    def from_hex(cls, hexstr: str, m: int) -> "ActivationPattern":
        try:
            raw = bytes.fromhex(hexstr)
        except ValueError as exc:
            raise ValueError(f"invalid hex pattern {hexstr!r}") from exc
        return cls(bits=raw, m=m)

    def to_hex(self) -> str:
        return self.bits.hex()

    def bit(self, j: int) -> int:
        if not 0 <= j < self.m:
            raise IndexError(f"bit index {j} outside [0, {self.m})")
        return (self.bits[j // 8] >> (j % 8)) & 1

    def to_array(self) -> np.ndarray:
        """Unpacked 0/1 vector of length m."""
        if self.m == 0:
            return np.zeros(0, dtype=np.uint8)
        arr = np.frombuffer(self.bits, dtype=np.uint8)
        return np.unpackbits(arr, bitorder="little")[: self.m]

    def __repr__(self):
        return f"ActivationPattern(m={self.m}, hex={self.to_hex()!r})"


def _nbytes(m: int) -> int:
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    return (m + 7) // 8


def hamming(a: ActivationPattern, b: ActivationPattern) -> int:
    """Number of differing bits between two equal-length patterns."""
    if a.m != b.m:
        raise ValueError(f"pattern length mismatch: {a.m} vs {b.m}")
    x = int.from_bytes(a.bits, "little") ^ int.from_bytes(b.bits, "little")
    return x.bit_count()


class RegionStats(NamedTuple):
    count: int
    mean_error: float


class RegionIndex:
    """Populated activation regions: pattern -> (sample count, mean error).

    Group means come from exactly-rounded sums (math.fsum) divided once at
    finalization, so the index is invariant to sample order.
    """

    def __init__(self, m: int, regions: dict[ActivationPattern, RegionStats]):
        self.m = m
        self.regions = regions
        self.n_total = sum(s.count for s in regions.values())

    def __eq__(self, other):
        if not isinstance(other, RegionIndex):
            return NotImplemented
        return self.m == other.m and self.regions == other.regions

    def __repr__(self):
        return (
            f"RegionIndex(m={self.m}, n_total={self.n_total}, "
            f"regions={len(self.regions)})"
        )

    def sorted_items(self) -> list[tuple[ActivationPattern, RegionStats]]:
        """Regions in canonical (packed-bytes) order, for deterministic numerics."""
        return sorted(self.regions.items(), key=lambda kv: kv[0].bits)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(packed uint8 matrix [P, ceil(m/8)], counts [P], mean errors [P])."""
        items = self.sorted_items()
        nbytes = _nbytes(self.m)
        packed = np.zeros((len(items), nbytes), dtype=np.uint8)
        counts = np.zeros(len(items), dtype=np.int64)
        means = np.zeros(len(items))
        for i, (pat, stats) in enumerate(items):
            if nbytes:
                packed[i] = np.frombuffer(pat.bits, dtype=np.uint8)
            counts[i] = stats.count
            means[i] = stats.mean_error
        return packed, counts, means


def build_region_index(
    samples: Iterable[tuple[ActivationPattern, float]],
) -> RegionIndex:
    """Group samples by identical pattern and average their errors per group."""
    groups: dict[ActivationPattern, list[float]] = {}
    m = None
    for i, (pattern, error) in enumerate(samples):
        if m is None:
            m = pattern.m
        elif pattern.m != m:
            raise ValueError(
                f"sample {i}: pattern length {pattern.m} != {m} of earlier samples"
            )
        if not 0.0 <= error <= 1.0:
            raise ValueError(f"sample {i}: error {error} outside [0, 1]")
        groups.setdefault(pattern, []).append(float(error))
    if m is None:
        raise ValueError("cannot build a region index from zero samples")
    regions = {
        pat: RegionStats(count=len(errs), mean_error=math.fsum(errs) / len(errs))
        for pat, errs in groups.items()
    }
    return RegionIndex(m=m, regions=regions)


class PatternRecord(NamedTuple):
    pattern: ActivationPattern
    error: float
    label: int | None = None


def write_patterns(path, records: Iterable[PatternRecord | tuple]) -> None:
    """Write the line-oriented pattern-exchange file (see module docstring)."""
    recs = [PatternRecord(*r) for r in records]
    if not recs:
        raise ValueError("refusing to write an empty pattern file")
    m = recs[0].pattern.m
    with open(path, "w") as fh:
        fh.write(f"{PATTERN_FILE_HEADER} m={m}\n")
        fh.write("# bit j = bit (j mod 8) of little-endian byte j//8; "
                 "bits in unit-index order\n")
        for rec in recs:
            if rec.pattern.m != m:
                raise ValueError(
                    f"pattern length {rec.pattern.m} != header m={m}"
                )
            if not 0.0 <= rec.error <= 1.0:
                raise ValueError(f"error {rec.error} outside [0, 1]")
            line = f"{rec.pattern.to_hex()},{rec.error:.17g}"
            if rec.label is not None:
                line += f",{int(rec.label)}"
            fh.write(line + "\n")


def read_patterns(path) -> list[PatternRecord]:
    """Parse a pattern file; raises PatternFileError naming the offending line."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(PATTERN_FILE_HEADER + " "):
        raise PatternFileError(
            f"{path}: line 1: expected header '{PATTERN_FILE_HEADER} m=<M>'"
        )
    header = lines[0][len(PATTERN_FILE_HEADER) :].strip()
    if not header.startswith("m="):
        raise PatternFileError(f"{path}: line 1: missing m= field in header")
    try:
        m = int(header[2:])
    except ValueError as exc:
        raise PatternFileError(f"{path}: line 1: bad m value {header[2:]!r}") from exc
    if m < 0:
        raise PatternFileError(f"{path}: line 1: m must be >= 0, got {m}")

    nbytes = _nbytes(m)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) not in (2, 3):
            raise PatternFileError(
                f"{path}: line {lineno}: expected <hex>,<error>[,<label>]"
            )
        hexstr = fields[0].strip()
        if len(hexstr) != 2 * nbytes:
            raise PatternFileError(
                f"{path}: line {lineno}: pattern hex has {len(hexstr) // 2} bytes, "
                f"need {nbytes} for m={m}"
            )
        try:
            pattern = ActivationPattern.from_hex(hexstr, m)
        except ValueError as exc:
            raise PatternFileError(f"{path}: line {lineno}: {exc}") from exc
        try:
            error = float(fields[1])
        except ValueError as exc:
            raise PatternFileError(
                f"{path}: line {lineno}: bad error value {fields[1]!r}"
            ) from exc
        if not 0.0 <= error <= 1.0:
            raise PatternFileError(
                f"{path}: line {lineno}: error {error} outside [0, 1]"
            )
        label = None
        if len(fields) == 3:
            try:
                label = int(fields[2])
            except ValueError as exc:
                raise PatternFileError(
                    f"{path}: line {lineno}: bad label {fields[2]!r}"
                ) from exc
        records.append(PatternRecord(pattern, error, label))
    if not records:
        raise PatternFileError(f"{path}: no records")
    return records


# ---------------------------------------------------------------------------
# Bulk helpers shared by the scorer. Distances are computed as a +-1 matrix
# product (exact: intermediate sums stay integral and below 2**24), which is
# far faster than per-byte popcounts at query time.
# ---------------------------------------------------------------------------


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a [n, m] 0/1 matrix into [n, ceil(m/8)] bytes, little-endian."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2:
        raise ValueError("pack_bits expects a [n, m] matrix")
    if bits.shape[1] == 0:
        return np.zeros((bits.shape[0], 0), dtype=np.uint8)
    return np.packbits(bits, axis=1, bitorder="little")


def unpack_rows(packed: np.ndarray, m: int) -> np.ndarray:
    """Inverse of pack_bits: [n, ceil(m/8)] bytes -> [n, m] 0/1 matrix."""
    packed = np.asarray(packed, dtype=np.uint8)
    if m == 0:
        return np.zeros((packed.shape[0], 0), dtype=np.uint8)
    return np.unpackbits(packed, axis=1, bitorder="little")[:, :m]


def signed_rows(packed: np.ndarray, m: int) -> np.ndarray:
    """[n, m] float32 matrix with bits mapped 0 -> -1, 1 -> +1."""
    return (unpack_rows(packed, m).astype(np.float32) * 2.0 - 1.0)


def hamming_to_rows(
    queries_signed: np.ndarray, targets_signed_t: np.ndarray, chunk: int = 256
) -> np.ndarray:
    """Hamming distances [Q, P] between signed query rows and signed target
    columns (targets pre-transposed to [m, P])."""
    q, m = queries_signed.shape
    p = targets_signed_t.shape[1]
    out = np.empty((q, p), dtype=np.int32)
    if m == 0:
        out[:] = 0
        return out
    for i in range(0, q, chunk):
        g = queries_signed[i : i + chunk] @ targets_signed_t
        out[i : i + chunk] = np.rint((m - g) * 0.5).astype(np.int32)
    return out
