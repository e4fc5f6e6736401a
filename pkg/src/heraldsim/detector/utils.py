import logging

import numpy as np
from numba import njit

from ..errors import PreconditionError
from ..events import ArrivalStream, TagStream, is_sorted
from .gating import gaussian_sigma_from_fwhm


logger = logging.getLogger(__name__)


DETECTOR_STREAM = 2


def detector_rng(seed: int, channel: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(DETECTOR_STREAM, channel)))


def require_sorted(times: np.ndarray, what: str = "input stream"):
    if not is_sorted(times):
        raise PreconditionError(f"The {what} must be sorted by time")


@njit
def _greedy_deadtime(times, deadtime, last_kept, has_last):
    keep = np.zeros(times.size, dtype=np.bool_)
    for i in range(times.size):
        if not has_last or times[i] - last_kept >= deadtime:
            keep[i] = True
            last_kept = times[i]
            has_last = True
    return keep, last_kept, has_last


def greedy_deadtime_mask(
    times: np.ndarray,
    deadtime_ps: int,
    last_kept_ps: int = 0,
    has_last: bool = False,
) -> tuple[np.ndarray, int, bool]:
    """Non-extending deadtime: keeps a tag iff it comes at least `deadtime_ps`
    after the last kept tag. The last-kept state is returned so successive
    chunks can be filtered as one stream."""

    times = np.ascontiguousarray(times, dtype=np.int64)
    keep, last, has = _greedy_deadtime(times, np.int64(deadtime_ps), np.int64(last_kept_ps), bool(has_last))
    return keep, int(last), bool(has)


def jitter(times: np.ndarray, fwhm_ps: float, rng: np.random.Generator) -> np.ndarray:
    sigma = gaussian_sigma_from_fwhm(fwhm_ps)
    if sigma <= 0 or times.size == 0:
        return times
    return times + np.rint(rng.normal(0.0, sigma, size=times.size)).astype(np.int64)


def clip_to_span(arrivals: ArrivalStream, until_ps: int) -> ArrivalStream:
    stop = int(np.searchsorted(arrivals.time_ps, until_ps, side="left"))
    if stop < len(arrivals):
        logger.debug(f"Ignoring {len(arrivals) - stop} arrivals after the end of the acquisition")
    return arrivals.take(slice(0, stop))


def collect_tags(channel: int, times: list[int], origins: list[int], pair_ids: list[int]) -> TagStream:
    return TagStream(
        time_ps=np.asarray(times, dtype=np.int64),
        channel=channel,
        origin=np.asarray(origins, dtype=np.uint8),
        pair_id=np.asarray(pair_ids, dtype=np.int64),
    )


class RandomPool:
    """Scalar draws from a numpy Generator, refilled in blocks."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self._rng = rng
        self._block = block
        self._uniform = np.empty(0)
        self._normal = np.empty(0)
        self._exponential = np.empty(0)
        self._iu = self._in = self._ie = 0

    def uniform(self) -> float:
        if self._iu >= self._uniform.size:
            self._uniform, self._iu = self._rng.random(self._block), 0
        self._iu += 1
        return float(self._uniform[self._iu - 1])

    def normal(self) -> float:
        if self._in >= self._normal.size:
            self._normal, self._in = self._rng.standard_normal(self._block), 0
        self._in += 1
        return float(self._normal[self._in - 1])

    def exponential(self) -> float:
        if self._ie >= self._exponential.size:
            self._exponential, self._ie = self._rng.standard_exponential(self._block), 0
        self._ie += 1
        return float(self._exponential[self._ie - 1])
