"""Flat binary and CSV formats for arrival and tag streams.

Binary record, packed little-endian, 17 bytes:

    u64 time_ps | u8 arm-or-channel | u64 label

For photon arrivals the label is the pair id. For timetags it is the pair id
of photon-origin tags, or one of the sentinels below. Files hold one stream
each, sorted by time.
"""

import logging
from pathlib import Path
from typing import Iterator

import aiofiles
import numpy as np
import pandas as pd

from .errors import DataFormatError
from .events import NO_PAIR, ArrivalStream, Arm, Origin, TagStream


logger = logging.getLogger(__name__)


RECORD_DTYPE = np.dtype([("time_ps", "<u8"), ("code", "u1"), ("label", "<u8")])

LABEL_STRIPPED = np.uint64(2**64 - 1)
LABEL_DARK = np.uint64(2**64 - 2)
LABEL_AFTERPULSE = np.uint64(2**64 - 3)


def encode_arrivals(arrivals: ArrivalStream) -> np.ndarray:
    records = np.empty(len(arrivals), dtype=RECORD_DTYPE)
    records["time_ps"] = arrivals.time_ps
    records["code"] = int(arrivals.arm)
    records["label"] = arrivals.pair_id
    return records


def decode_arrivals(records: np.ndarray) -> ArrivalStream:
    if records.size == 0:
        return ArrivalStream.empty(Arm.SIGNAL)
    arms = np.unique(records["code"])
    if arms.size != 1:
        raise DataFormatError(f"An arrival file must hold one arm, found codes {arms.tolist()}")
    return ArrivalStream(
        time_ps=records["time_ps"].astype(np.int64),
        pair_id=records["label"].astype(np.int64),
        arm=Arm(int(arms[0])),
    )


def encode_tags(tags: TagStream, include_truth: bool = False) -> np.ndarray:
    if np.any(tags.time_ps < 0):
        raise DataFormatError("Negative tag times cannot be stored")

    records = np.empty(len(tags), dtype=RECORD_DTYPE)
    records["time_ps"] = tags.time_ps
    records["code"] = tags.channel

    if not include_truth:
        records["label"] = LABEL_STRIPPED
        return records

    label = np.full(len(tags), LABEL_STRIPPED, dtype=np.uint64)
    photon = (tags.origin == Origin.PHOTON) & (tags.pair_id >= 0)
    label[photon] = tags.pair_id[photon].astype(np.uint64)
    label[tags.origin == Origin.DARK] = LABEL_DARK
    label[tags.origin == Origin.AFTERPULSE] = LABEL_AFTERPULSE
    records["label"] = label
    return records


def decode_tags(records: np.ndarray, channel: int | None = None) -> TagStream:
    if channel is None:
        channel = int(records["code"][0]) if records.size else 0

    label = records["label"]
    origin = np.full(records.size, Origin.UNKNOWN, dtype=np.uint8)
    pair_id = np.full(records.size, NO_PAIR, dtype=np.int64)

    truth = label < LABEL_AFTERPULSE
    origin[truth] = Origin.PHOTON
    pair_id[truth] = label[truth].astype(np.int64)
    origin[label == LABEL_DARK] = Origin.DARK
    origin[label == LABEL_AFTERPULSE] = Origin.AFTERPULSE

    return TagStream(records["time_ps"].astype(np.int64), channel, origin, pair_id)


def write_records(path: Path, records: np.ndarray, append: bool = False):
    with open(path, "ab" if append else "wb") as f:
        f.write(records.tobytes())


async def append_records_async(path: Path, records: np.ndarray):
    async with aiofiles.open(path, mode="ab") as f:
        await f.write(records.tobytes())


def write_tags(path: Path, tags: TagStream, include_truth: bool = False):
    write_records(Path(path), encode_tags(tags, include_truth=include_truth))


def read_tags(path: Path, channel: int | None = None) -> TagStream:
    return TagFile(path).read_all(channel=channel)


def _write_frame(frame: pd.DataFrame, path: Path, append: bool):
    if append and path.exists() and path.stat().st_size > 0:
        frame.to_csv(path, mode="a", header=False, index=False)
    else:
        frame.to_csv(path, index=False)


def write_tags_csv(path: Path, tags: TagStream, include_truth: bool = False, append: bool = False):
    frame = pd.DataFrame({
        "time_ps": tags.time_ps,
        "channel": np.full(len(tags), tags.channel, dtype=np.int64),
    })
    if include_truth:
        frame["origin"] = [Origin(o).name.lower() for o in tags.origin]
        frame["pair_id"] = tags.pair_id
    _write_frame(frame, Path(path), append)


def read_tags_csv(path: Path) -> TagStream:
    frame = pd.read_csv(path)
    if "time_ps" not in frame or "channel" not in frame:
        raise DataFormatError(f"{path} lacks the time_ps/channel columns")

    channels = frame["channel"].unique()
    if channels.size > 1:
        raise DataFormatError(f"{path} mixes channels {channels.tolist()}")
    channel = int(channels[0]) if channels.size else 0

    origin = None
    if "origin" in frame:
        origin = np.array([Origin[name.upper()] for name in frame["origin"]], dtype=np.uint8)
    pair_id = frame["pair_id"].to_numpy(np.int64) if "pair_id" in frame else None
    return TagStream(frame["time_ps"].to_numpy(np.int64), channel, origin, pair_id)


def write_arrivals_csv(path: Path, arrivals: ArrivalStream, append: bool = False):
    frame = pd.DataFrame({
        "time_ps": arrivals.time_ps,
        "arm": arrivals.arm.name.lower(),
        "pair_id": arrivals.pair_id,
    })
    _write_frame(frame, Path(path), append)


class TagFile:
    """Memory-mapped view of a binary tag file; reads stay bounded to the
    requested block or time range."""

    def __init__(self, path: Path):
        self._path = Path(path)
        if not self._path.is_file():
            raise DataFormatError(f"Tag file {self._path} does not exist")

        size = self._path.stat().st_size
        if size % RECORD_DTYPE.itemsize != 0:
            raise DataFormatError(
                f"{self._path} is {size} bytes, not a whole number of {RECORD_DTYPE.itemsize}-byte records"
            )
        self._n = size // RECORD_DTYPE.itemsize
        self._records = np.memmap(self._path, dtype=RECORD_DTYPE, mode="r") if self._n else np.empty(0, RECORD_DTYPE)

    @property
    def path(self) -> Path:
        return self._path

    def __len__(self) -> int:
        return self._n

    @property
    def channel(self) -> int | None:
        return int(self._records["code"][0]) if self._n else None

    def first_time_ps(self) -> int | None:
        return int(self._records["time_ps"][0]) if self._n else None

    def last_time_ps(self) -> int | None:
        return int(self._records["time_ps"][-1]) if self._n else None

    def index_of(self, time_ps: int) -> int:
        """Index of the first record at or after `time_ps`."""
        if time_ps <= 0:
            return 0
        return int(np.searchsorted(self._records["time_ps"], np.uint64(time_ps), side="left"))

    def read_slice(self, start: int, stop: int, channel: int | None = None) -> TagStream:
        return decode_tags(np.array(self._records[start:stop]), channel if channel is not None else self.channel or 0)

    def read_range(self, start_ps: int, stop_ps: int, channel: int | None = None) -> TagStream:
        return self.read_slice(self.index_of(start_ps), self.index_of(stop_ps), channel)

    def read_all(self, channel: int | None = None) -> TagStream:
        return self.read_slice(0, self._n, channel)

    def iter_blocks(self, block_records: int, channel: int | None = None) -> Iterator[TagStream]:
        for start in range(0, self._n, block_records):
            yield self.read_slice(start, min(start + block_records, self._n), channel)
