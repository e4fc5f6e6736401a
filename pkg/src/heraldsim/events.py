"""Event containers shared by the simulator and the analysis toolkit.

All times are signed 64-bit integer picoseconds. Containers are frozen
dataclasses over numpy arrays; they are treated as immutable once built.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np


PS_PER_SECOND = 1_000_000_000_000

NO_PAIR = -1


class Arm(IntEnum):
    SIGNAL = 0
    IDLER = 1
    LASER = 2


class Origin(IntEnum):
    PHOTON = 0
    DARK = 1
    AFTERPULSE = 2
    UNKNOWN = 3
    """Truth label stripped on export."""


def seconds_to_ps(seconds: float) -> int:
    return int(round(seconds * PS_PER_SECOND))


def ps_to_seconds(ps: float) -> float:
    return ps / PS_PER_SECOND


def is_sorted(times: np.ndarray) -> bool:
    return times.size < 2 or bool(np.all(times[1:] >= times[:-1]))


def _i64(values) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=np.int64)


@dataclass(frozen=True)
class PairEvents:
    """Generated photon pairs: a pair epoch plus per-arm emission offsets."""

    mode_index: np.ndarray
    pair_time_ps: np.ndarray
    signal_offset_ps: np.ndarray
    idler_offset_ps: np.ndarray
    pair_id: np.ndarray

    def __len__(self) -> int:
        return int(self.pair_time_ps.size)

    @classmethod
    def empty(cls) -> Self:
        e = np.empty(0, dtype=np.int64)
        return cls(e, e, e, e, e)

    @classmethod
    def concatenate(cls, parts: Iterable[Self]) -> Self:
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            mode_index=_i64(np.concatenate([p.mode_index for p in parts])),
            pair_time_ps=_i64(np.concatenate([p.pair_time_ps for p in parts])),
            signal_offset_ps=_i64(np.concatenate([p.signal_offset_ps for p in parts])),
            idler_offset_ps=_i64(np.concatenate([p.idler_offset_ps for p in parts])),
            pair_id=_i64(np.concatenate([p.pair_id for p in parts])),
        )

    def emission_times(self, arm: Arm) -> np.ndarray:
        if arm == Arm.SIGNAL:
            return self.pair_time_ps + self.signal_offset_ps
        elif arm == Arm.IDLER:
            return self.pair_time_ps + self.idler_offset_ps
        raise ValueError(f"Pairs have no {arm.name.lower()} arm")


@dataclass(frozen=True)
class ArrivalStream:
    """Photon arrivals at one detector input, sorted by time."""

    time_ps: np.ndarray
    pair_id: np.ndarray
    arm: Arm

    def __len__(self) -> int:
        return int(self.time_ps.size)

    @classmethod
    def empty(cls, arm: Arm) -> Self:
        e = np.empty(0, dtype=np.int64)
        return cls(e, e, arm)

    @classmethod
    def from_arrays(cls, time_ps, pair_id, arm: Arm, sort: bool = True) -> Self:
        time_ps = _i64(time_ps)
        pair_id = _i64(pair_id)
        if sort and not is_sorted(time_ps):
            order = np.argsort(time_ps, kind="stable")
            time_ps, pair_id = time_ps[order], pair_id[order]
        return cls(time_ps, pair_id, arm)

    def take(self, mask_or_index) -> Self:
        return ArrivalStream(self.time_ps[mask_or_index], self.pair_id[mask_or_index], self.arm)

    @property
    def sorted(self) -> bool:
        return is_sorted(self.time_ps)


@dataclass(frozen=True)
class TagStream:
    """Timetags of one detector channel, sorted by time.

    `origin` and `pair_id` are simulation truth; files written without truth
    read back with `Origin.UNKNOWN` and `NO_PAIR`.
    """

    time_ps: np.ndarray
    channel: int
    origin: np.ndarray = field(default=None)
    pair_id: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "time_ps", _i64(self.time_ps))
        n = self.time_ps.size
        if self.origin is None:
            object.__setattr__(self, "origin", np.full(n, Origin.UNKNOWN, dtype=np.uint8))
        else:
            object.__setattr__(self, "origin", np.ascontiguousarray(self.origin, dtype=np.uint8))
        if self.pair_id is None:
            object.__setattr__(self, "pair_id", np.full(n, NO_PAIR, dtype=np.int64))
        else:
            object.__setattr__(self, "pair_id", _i64(self.pair_id))

    def __len__(self) -> int:
        return int(self.time_ps.size)

    @classmethod
    def empty(cls, channel: int) -> Self:
        return cls(np.empty(0, dtype=np.int64), channel, np.empty(0, dtype=np.uint8), np.empty(0, dtype=np.int64))

    @classmethod
    def concatenate(cls, parts: Iterable[Self], channel: int) -> Self:
        parts = list(parts)
        if not parts:
            return cls.empty(channel)
        return cls(
            time_ps=np.concatenate([p.time_ps for p in parts]),
            channel=channel,
            origin=np.concatenate([p.origin for p in parts]),
            pair_id=np.concatenate([p.pair_id for p in parts]),
        )

    def take(self, mask_or_index) -> Self:
        return TagStream(
            self.time_ps[mask_or_index], self.channel, self.origin[mask_or_index], self.pair_id[mask_or_index]
        )

    def count(self, origin: Origin) -> int:
        return int(np.count_nonzero(self.origin == origin))

    @property
    def sorted(self) -> bool:
        return is_sorted(self.time_ps)
