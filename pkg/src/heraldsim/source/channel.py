import logging
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, DomainError
from ..events import ArrivalStream, Arm, PairEvents


logger = logging.getLogger(__name__)


CHANNEL_STREAM = 3
ROUTING_STREAM = 4


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    return np.random.default_rng(seed)


def apply_channel(
    pairs: PairEvents,
    arm: Arm,
    transmission: float,
    seed: int | np.random.SeedSequence,
) -> ArrivalStream:
    """Bernoulli-thins one arm of a pair stream.

    Survivors keep their pair id; emissions before t = 0 fall outside the
    acquisition and are dropped.
    """

    if not 0.0 <= transmission <= 1.0:
        raise DomainError(f"Transmission must lie in [0, 1], got {transmission}")

    rng = make_rng(seed)
    times = pairs.emission_times(arm)
    survive = rng.random(times.size) < transmission
    survive &= times >= 0

    return ArrivalStream.from_arrays(times[survive], pairs.pair_id[survive], arm)


def route_arrivals(
    arrivals: ArrivalStream,
    ratios: Sequence[float],
    seed: int | np.random.SeedSequence,
) -> list[ArrivalStream]:
    """Splits a photon stream over several outputs with independent
    categorical routing per photon (no interference)."""

    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size == 0 or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0, atol=1e-9):
        raise ConfigurationError(f"Splitter ratios must be non-negative and sum to 1, got {ratios.tolist()}")

    if ratios.size == 1:
        return [arrivals]

    rng = make_rng(seed)
    edges = np.cumsum(ratios)
    port = np.minimum(np.searchsorted(edges, rng.random(len(arrivals)), side="right"), ratios.size - 1)

    return [arrivals.take(port == i) for i in range(ratios.size)]


class ArrivalMerger:
    """Merges per-chunk arrival batches into one time-sorted stream.

    Arrivals may precede their chunk start by up to the source lookback, so
    each push only releases arrivals older than `release_before_ps` and
    carries the rest into the next merge.
    """

    def __init__(self, arm: Arm):
        self._arm = arm
        self._carry = ArrivalStream.empty(arm)

    @property
    def pending(self) -> int:
        return len(self._carry)

    def push(self, arrivals: ArrivalStream, release_before_ps: int) -> ArrivalStream:
        times = np.concatenate([self._carry.time_ps, arrivals.time_ps])
        ids = np.concatenate([self._carry.pair_id, arrivals.pair_id])
        order = np.argsort(times, kind="stable")
        times, ids = times[order], ids[order]

        split = int(np.searchsorted(times, release_before_ps, side="left"))
        self._carry = ArrivalStream(times[split:], ids[split:], self._arm)
        return ArrivalStream(times[:split], ids[:split], self._arm)

    def flush(self) -> ArrivalStream:
        out, self._carry = self._carry, ArrivalStream.empty(self._arm)
        return out
