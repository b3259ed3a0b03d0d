"""Mask-space algebra for (N:M) semi-structured sparsity.

A pattern ``N:M`` keeps exactly ``N`` positions in every contiguous,
non-overlapping group of ``M`` weights (row-major order for matrices, so a
flat weight vector fully determines the grouping).  The per-group mask space
is the set of binary length-``M`` vectors with exactly ``N`` ones.

The probabilistic sum ``a (+) b = 1 - (1 - a) * (1 - b)`` (coordinate-wise)
reduces to OR on binary vectors; folding it over ``N`` distinct basis vectors
produces exactly the indicator of the chosen index set, which is why the
per-group space equals the image of all ordered selections of ``N`` distinct
basis vectors.  :func:`verify_representation` checks that equality by brute
force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, permutations
from pathlib import Path

import numpy as np

from .errors import CapacityError

# Exact-computation caps.  Enumeration is bounded by C(16, 8) = 12870
# per-group masks; anything larger is a hard error, never a truncation.
MAX_ENUM_GROUP_SIZE = 16
MAX_GROUP_CHOICES = math.comb(16, 8)


@dataclass(frozen=True)
class SparsityPattern:
    """The pair (N, M): keep ``n_keep`` out of every ``group_size`` weights."""

    n_keep: int
    group_size: int

    def __post_init__(self) -> None:
        n, m = self.n_keep, self.group_size
        if not (isinstance(n, int) and isinstance(m, int)):
            raise TypeError("pattern components must be integers")
        if not (1 <= n <= m):
            raise ValueError(f"need 1 <= N <= M, got N={n}, M={m}")

    @classmethod
    def parse(cls, text: str) -> "SparsityPattern":
        """Parse the conventional ``"N:M"`` notation."""
        parts = text.split(":")
        if len(parts) != 2:
            raise ValueError(f"pattern must look like 'N:M', got {text!r}")
        try:
            n, m = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ValueError(f"pattern must look like 'N:M', got {text!r}") from exc
        return cls(n, m)

    @property
    def choices_per_group(self) -> int:
        """Number of distinct per-group masks, C(M, N)."""
        return math.comb(self.group_size, self.n_keep)

    def __str__(self) -> str:
        return f"{self.n_keep}:{self.group_size}"


def oplus(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Coordinate-wise probabilistic sum ``1 - (1 - a) * (1 - b)``.

    Commutative and associative on [0, 1]-valued vectors; the coordinate-wise
    OR when both inputs are binary.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return 1.0 - (1.0 - a) * (1.0 - b)


def compose_basis(indices, group_size: int) -> np.ndarray:
    """Fold the probabilistic sum over basis vectors ``e_j`` for 1-based ``indices``.

    Equals the indicator vector of the index set.
    """
    idx = list(indices)
    if len(set(idx)) != len(idx):
        raise ValueError(f"basis indices must be distinct, got {idx}")
    out = np.zeros(group_size, dtype=np.float64)
    for j in idx:
        if not (1 <= j <= group_size):
            raise ValueError(f"basis index {j} outside [1, {group_size}]")
        basis = np.zeros(group_size, dtype=np.float64)
        basis[j - 1] = 1.0
        out = oplus(out, basis)
    return out


def enumerate_masks(pattern: SparsityPattern) -> np.ndarray:
    """All C(M, N) per-group masks as a (C, M) uint8 array, lexicographic rows."""
    m = pattern.group_size
    if m > MAX_ENUM_GROUP_SIZE:
        raise CapacityError(
            f"group size {m} exceeds enumeration cap {MAX_ENUM_GROUP_SIZE}"
        )
    rows = []
    for ones in combinations(range(m), pattern.n_keep):
        row = np.zeros(m, dtype=np.uint8)
        row[list(ones)] = 1
        rows.append(tuple(row))
    rows.sort()
    return np.array(rows, dtype=np.uint8)


def verify_representation(pattern: SparsityPattern) -> bool:
    """Check that ordered (+)-compositions of N distinct basis vectors cover
    exactly the enumerated per-group mask set.

    Brute force over all M!/(M-N)! ordered selections; the fold is computed
    literally through the probabilistic sum, not via the indicator shortcut.
    """
    m, n = pattern.group_size, pattern.n_keep
    if m > MAX_ENUM_GROUP_SIZE:
        raise CapacityError(
            f"group size {m} exceeds enumeration cap {MAX_ENUM_GROUP_SIZE}"
        )
    ordered = np.array(list(permutations(range(m), n)), dtype=np.intp)
    eye = np.eye(m, dtype=np.float64)
    acc = np.zeros((ordered.shape[0], m), dtype=np.float64)
    for j in range(n):
        acc = oplus(acc, eye[ordered[:, j]])
    produced = {tuple(row) for row in acc.astype(np.uint8)}
    expected = {tuple(row) for row in enumerate_masks(pattern)}
    return produced == expected


def top_n_mask(values: np.ndarray, pattern: SparsityPattern) -> np.ndarray:
    """Bits keeping the N largest values per group; ties go to the lowest index.

    Returns a flat uint8 vector; the caller wraps it in :class:`NMMask`.
    """
    v = np.asarray(values, dtype=np.float64)
    m = pattern.group_size
    if v.ndim != 1 or v.size % m != 0:
        raise ValueError(f"values must be flat with length divisible by M={m}")
    grouped = v.reshape(-1, m)
    order = np.argsort(-grouped, axis=1, kind="stable")[:, : pattern.n_keep]
    bits = np.zeros_like(grouped, dtype=np.uint8)
    np.put_along_axis(bits, order, 1, axis=1)
    return bits.reshape(-1)


def validate_group_bits(bits: np.ndarray, pattern: SparsityPattern) -> None:
    """Raise unless ``bits`` is a flat 0/1 vector with exactly N ones per group."""
    if bits.ndim != 1:
        raise ValueError(f"mask bits must be one-dimensional, got shape {bits.shape}")
    d = bits.shape[0]
    m = pattern.group_size
    if d == 0 or d % m != 0:
        raise ValueError(f"dimension {d} is not a positive multiple of M={m}")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("mask bits must be 0 or 1")
    group_sums = bits.reshape(-1, m).sum(axis=1)
    bad = np.nonzero(group_sums != pattern.n_keep)[0]
    if bad.size:
        raise ValueError(
            f"group {bad[0]} has {group_sums[bad[0]]} ones, expected {pattern.n_keep}"
        )


class NMMask:
    """A validated flat binary mask with exactly N ones per group of M."""

    __slots__ = ("bits", "pattern")

    def __init__(self, bits, pattern: SparsityPattern):
        arr = np.ascontiguousarray(np.asarray(bits), dtype=np.uint8)
        validate_group_bits(arr, pattern)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)
        object.__setattr__(self, "pattern", pattern)

    def __setattr__(self, name, value):
        raise AttributeError("NMMask is immutable")

    @property
    def dim(self) -> int:
        return self.bits.shape[0]

    @property
    def n_groups(self) -> int:
        return self.dim // self.pattern.group_size

    def grouped(self) -> np.ndarray:
        """Read-only (n_groups, M) view of the bits."""
        return self.bits.reshape(self.n_groups, self.pattern.group_size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NMMask):
            return NotImplemented
        return self.pattern == other.pattern and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.pattern, self.bits.tobytes()))

    def __repr__(self) -> str:
        return f"NMMask({self.pattern}, d={self.dim})"


# ---------------------------------------------------------------------------
# Serialization.
#
# Text form: header "NM <N> <M> <d>" followed by d/M lines of M characters
# from {0,1}.  Packed form: header "NMB <N> <M> <d>" followed by ceil(d/8)
# raw bytes, one bit per weight, little-endian within each byte.
# ---------------------------------------------------------------------------


def mask_to_text(mask: NMMask) -> str:
    p = mask.pattern
    lines = [f"NM {p.n_keep} {p.group_size} {mask.dim}"]
    for row in mask.grouped():
        lines.append("".join("1" if b else "0" for b in row))
    return "\n".join(lines) + "\n"


def mask_from_text(text: str) -> NMMask:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith("NM "):
        raise ValueError("mask text must start with an 'NM <N> <M> <d>' header")
    fields = lines[0].split()
    if len(fields) != 4:
        raise ValueError(f"malformed mask header: {lines[0]!r}")
    n, m, d = int(fields[1]), int(fields[2]), int(fields[3])
    pattern = SparsityPattern(n, m)
    if len(lines) - 1 != d // m:
        raise ValueError(f"expected {d // m} group lines, got {len(lines) - 1}")
    bits = np.empty(d, dtype=np.uint8)
    for i, line in enumerate(lines[1:]):
        if len(line) != m or set(line) - {"0", "1"}:
            raise ValueError(f"group line {i} is not {m} characters of 0/1: {line!r}")
        bits[i * m : (i + 1) * m] = [int(c) for c in line]
    return NMMask(bits, pattern)


def mask_to_packed(mask: NMMask) -> bytes:
    p = mask.pattern
    header = f"NMB {p.n_keep} {p.group_size} {mask.dim}\n".encode("ascii")
    return header + np.packbits(mask.bits, bitorder="little").tobytes()


def mask_from_packed(blob: bytes) -> NMMask:
    newline = blob.find(b"\n")
    if newline < 0 or not blob.startswith(b"NMB "):
        raise ValueError("packed mask must start with an 'NMB <N> <M> <d>' header line")
    fields = blob[:newline].decode("ascii").split()
    if len(fields) != 4:
        raise ValueError(f"malformed packed mask header: {blob[:newline]!r}")
    n, m, d = int(fields[1]), int(fields[2]), int(fields[3])
    body = np.frombuffer(blob[newline + 1 :], dtype=np.uint8)
    if body.size != (d + 7) // 8:
        raise ValueError(f"expected {(d + 7) // 8} payload bytes, got {body.size}")
    bits = np.unpackbits(body, bitorder="little")[:d]
    return NMMask(bits, SparsityPattern(n, m))


def write_mask_text(mask: NMMask, path) -> None:
    Path(path).write_text(mask_to_text(mask), encoding="ascii")


def read_mask_text(path) -> NMMask:
    return mask_from_text(Path(path).read_text(encoding="ascii"))


def write_mask_packed(mask: NMMask, path) -> None:
    Path(path).write_bytes(mask_to_packed(mask))


def read_mask_packed(path) -> NMMask:
    return mask_from_packed(Path(path).read_bytes())
