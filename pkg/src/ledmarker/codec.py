"""Marker dictionaries, ID encoding and the two-frequency blink mapping.

Patterns are stored border-less: a ``grid_size`` x ``grid_size`` boolean grid
where ``True`` is a white cell.  White cells blink at the high frequency and
black cells at the low one.  Rotations are in 90 degree steps, clockwise as
seen in an image whose y axis points down.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ledmarker.errors import (
    BadFrequencies,
    ConfigError,
    GenerationExhausted,
    NoMatch,
    SizeMismatch,
    UnknownId,
)

ROTATIONS = (0, 90, 180, 270)


class MarkerPattern:
    """Immutable square grid of marker bits, row-major, top-left first."""

    __slots__ = ("_bits",)

    def __init__(self, bits: Any):
        arr = np.array(bits, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ConfigError(f"pattern must be a square grid, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise ConfigError("grid_size must be at least 2")
        arr.setflags(write=False)
        self._bits = arr

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def grid_size(self) -> int:
        return self._bits.shape[0]

    @classmethod
    def from_string(cls, text: str, grid_size: int | None = None) -> MarkerPattern:
        if grid_size is None:
            grid_size = int(round(len(text) ** 0.5))
        if len(text) != grid_size * grid_size or set(text) - {"0", "1"}:
            raise ConfigError(f"bad pattern string {text!r} for grid_size {grid_size}")
        flat = np.frombuffer(text.encode(), dtype=np.uint8) == ord("1")
        return cls(flat.reshape(grid_size, grid_size))

    def to_string(self) -> str:
        return "".join("1" if b else "0" for b in self._bits.ravel())

    def key(self) -> bytes:
        return np.packbits(self._bits.ravel()).tobytes() + bytes([self.grid_size])

    def inverted(self) -> MarkerPattern:
        return MarkerPattern(~self._bits)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MarkerPattern):
            return NotImplemented
        return self._bits.shape == other._bits.shape and bool(np.array_equal(self._bits, other._bits))

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"MarkerPattern({self.to_string()!r}, grid_size={self.grid_size})"


def _check_rotation(r: int) -> int:
    r = int(r) % 360
    if r not in ROTATIONS:
        raise ConfigError(f"rotation must be a multiple of 90 degrees, got {r}")
    return r


def rotate(p: MarkerPattern, r: int) -> MarkerPattern:
    """Rotate ``p`` clockwise by ``r`` degrees (multiple of 90)."""
    r = _check_rotation(r)
    if r == 0:
        return p
    return MarkerPattern(np.rot90(p.bits, k=-(r // 90)))


def hamming(a: MarkerPattern, b: MarkerPattern) -> int:
    if a.grid_size != b.grid_size:
        raise SizeMismatch(f"grid sizes differ: {a.grid_size} vs {b.grid_size}")
    return int(np.count_nonzero(a.bits ^ b.bits))


def rotation_distance(a: MarkerPattern, b: MarkerPattern) -> int:
    """Minimum Hamming distance between ``a`` and any rotation of ``b``."""
    return min(hamming(a, rotate(b, r)) for r in ROTATIONS)


def self_rotation_distance(p: MarkerPattern) -> int:
    return min(hamming(p, rotate(p, r)) for r in ROTATIONS[1:])


@dataclass(frozen=True)
class Dictionary:
    grid_size: int
    min_hamming: int
    patterns: tuple[MarkerPattern, ...]
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        for p in self.patterns:
            if p.grid_size != self.grid_size:
                raise SizeMismatch("all patterns must share the dictionary grid_size")

    def __len__(self) -> int:
        return len(self.patterns)

    @cached_property
    def _lookup(self) -> dict[bytes, tuple[int, int]]:
        table: dict[bytes, tuple[int, int]] = {}
        for idx, p in enumerate(self.patterns):
            for r in ROTATIONS:
                table.setdefault(rotate(p, r).key(), (idx, r))
        return table

    def violations(self) -> list[tuple[int, int, int]]:
        """Brute-force check of both distance invariants.

        Returns ``(i, j, rotation)`` triples whose distance is below
        ``min_hamming``; ``i == j`` marks a rotational self-collision.
        """
        bad = []
        for i, a in enumerate(self.patterns):
            for r in ROTATIONS[1:]:
                if hamming(a, rotate(a, r)) < self.min_hamming:
                    bad.append((i, i, r))
            for j in range(i + 1, len(self.patterns)):
                b = self.patterns[j]
                for r in ROTATIONS:
                    if hamming(a, rotate(b, r)) < self.min_hamming:
                        bad.append((i, j, r))
        return bad

    def to_dict(self) -> dict[str, Any]:
        return {
            "grid_size": self.grid_size,
            "min_hamming": self.min_hamming,
            "seed": self.seed,
            "patterns": [p.to_string() for p in self.patterns],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Dictionary:
        try:
            n = int(data["grid_size"])
            patterns = tuple(MarkerPattern.from_string(s, n) for s in data["patterns"])
            return cls(n, int(data["min_hamming"]), patterns, data.get("seed"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed dictionary document: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Dictionary:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read dictionary {path}: {exc}") from exc
        return cls.from_dict(data)


def generate_dictionary(
    grid_size: int,
    count: int,
    min_hamming: int,
    seed: int,
    max_attempts: int = 50_000,
    polarity_safe: bool = True,
) -> Dictionary:
    """Build a rotation-aware dictionary by seeded rejection sampling.

    A random grid is accepted when it is at least ``min_hamming`` away from
    its own non-trivial rotations and from every rotation of every accepted
    pattern.  With ``polarity_safe`` the bitwise complement of each pattern
    must also stay ``min_hamming`` away from every rotation of every entry,
    itself included, so a reader that tries both frequency-to-color
    mappings can never land on a wrong entry.
    """
    if grid_size < 2 or count < 1 or min_hamming < 1 or min_hamming > grid_size**2:
        raise ConfigError(
            f"infeasible parameters grid_size={grid_size} count={count} min_hamming={min_hamming}"
        )
    rng = np.random.default_rng(seed)
    ncells = grid_size * grid_size
    # Rotations as index permutations over the flattened grid, applied to ints.
    idx = np.arange(ncells).reshape(grid_size, grid_size)
    perms = [np.rot90(idx, k=-k).ravel() for k in range(4)]
    weights = 1 << np.arange(ncells - 1, -1, -1, dtype=object)

    full = (1 << ncells) - 1

    def pack(flat: np.ndarray) -> int:
        return int(np.dot(flat.astype(object), weights))

    accepted_bits: list[np.ndarray] = []
    accepted_rots: list[int] = []
    for _ in range(max_attempts):
        flat = rng.integers(0, 2, size=ncells).astype(bool)
        rots = [pack(flat[p]) for p in perms]
        if any((rots[0] ^ rk).bit_count() < min_hamming for rk in rots[1:]):
            continue
        if any((rots[0] ^ other).bit_count() < min_hamming for other in accepted_rots):
            continue
        if polarity_safe:
            comp = rots[0] ^ full
            if any((comp ^ rk).bit_count() < min_hamming for rk in rots):
                continue
            if any((comp ^ other).bit_count() < min_hamming for other in accepted_rots):
                continue
        accepted_bits.append(flat.reshape(grid_size, grid_size))
        accepted_rots.extend(rots)
        if len(accepted_bits) == count:
            patterns = tuple(MarkerPattern(b) for b in accepted_bits)
            return Dictionary(grid_size, min_hamming, patterns, seed)
    raise GenerationExhausted(
        f"found {len(accepted_bits)} of {count} patterns in {max_attempts} attempts "
        f"(grid_size={grid_size}, min_hamming={min_hamming})"
    )


def encode(dictionary: Dictionary, marker_id: int) -> MarkerPattern:
    if not 0 <= marker_id < len(dictionary.patterns):
        raise UnknownId(f"id {marker_id} outside dictionary of {len(dictionary.patterns)} entries")
    return dictionary.patterns[marker_id]


def decode(dictionary: Dictionary, observed: MarkerPattern) -> tuple[int, int]:
    """Return ``(id, rotation)`` with ``observed == rotate(patterns[id], rotation)``."""
    if observed.grid_size != dictionary.grid_size:
        raise SizeMismatch(
            f"observed grid {observed.grid_size} vs dictionary grid {dictionary.grid_size}"
        )
    try:
        return dictionary._lookup[observed.key()]
    except KeyError:
        raise NoMatch(f"no dictionary entry matches {observed.to_string()}") from None


@dataclass(frozen=True)
class SquareWave:
    frequency: float
    phase: float = 0.0
    duty: float = 0.5
    amplitude: float = 1.0

    def __post_init__(self):
        if self.frequency <= 0:
            raise BadFrequencies(f"frequency must be positive, got {self.frequency}")
        if not 0.0 < self.duty <= 1.0:
            raise ConfigError(f"duty must be in (0, 1], got {self.duty}")
        if not 0.0 <= self.amplitude <= 1.0:
            raise ConfigError(f"amplitude must be in [0, 1], got {self.amplitude}")


@dataclass(frozen=True)
class BlinkAssignment:
    grid_size: int
    cell_waves: tuple[tuple[SquareWave, ...], ...]

    def wave(self, row: int, col: int) -> SquareWave:
        return self.cell_waves[row][col]

    def waves(self) -> list[SquareWave]:
        """Distinct waves in first-seen row-major order."""
        seen: dict[SquareWave, None] = {}
        for row in self.cell_waves:
            for w in row:
                seen.setdefault(w)
        return list(seen)


def assign_frequencies(
    p: MarkerPattern,
    f_low: float = 500.0,
    f_high: float = 2000.0,
    duty: float = 0.5,
    phase_low: float = 0.0,
    phase_high: float = 0.0,
    amplitude: float = 1.0,
) -> BlinkAssignment:
    """Drive black cells at ``f_low`` and white cells at ``f_high``.

    Every cell shares ``duty`` and ``amplitude`` so both classes have the
    same time-averaged brightness.
    """
    if not 0 < f_low < f_high:
        raise BadFrequencies(f"need 0 < f_low < f_high, got {f_low}, {f_high}")
    if not 0.0 < duty < 1.0:
        raise ConfigError(f"duty must be in (0, 1), got {duty}")
    low = SquareWave(f_low, phase_low, duty, amplitude)
    high = SquareWave(f_high, phase_high, duty, amplitude)
    waves = tuple(tuple(high if b else low for b in row) for row in p.bits)
    return BlinkAssignment(p.grid_size, waves)


def uniform_assignment(grid_size: int, wave: SquareWave) -> BlinkAssignment:
    """Every cell driven by one wave; handy for calibration renders."""
    return BlinkAssignment(grid_size, tuple((wave,) * grid_size for _ in range(grid_size)))


def patterns_from_strings(rows: Sequence[str]) -> MarkerPattern:
    return MarkerPattern([[c == "1" for c in row] for row in rows])
