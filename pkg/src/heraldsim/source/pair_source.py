"""CW-pumped narrowband pair source with thermal per-mode pair statistics."""

import logging
import math
from typing import Iterator, Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..errors import DomainError, ResourceLimitError
from ..events import PS_PER_SECOND, PairEvents, seconds_to_ps


logger = logging.getLogger(__name__)


SOURCE_STREAM = 0

OFFSET_CUTOFF_DECAYS = 40.0
"""Emission offsets are drawn from exponentials truncated at this many decay constants."""

DEFAULT_MAX_EVENTS = 2**31 - 1


def coherence_time_from_bandwidth(bandwidth_hz: float) -> float:
    """Returns the one-sided exponential decay constant 1/(2π·Δν) in seconds
    for a Lorentzian line of FWHM `bandwidth_hz`."""

    if not bandwidth_hz > 0:
        raise DomainError(f"Bandwidth must be positive, got {bandwidth_hz} Hz")
    return 1.0 / (2.0 * math.pi * bandwidth_hz)


def pgr_at_pump_power(reference_pgr_hz: float, reference_power_uw: float, power_uw: float) -> float:
    """Scales a pair generation rate quadratically with pump power (SFWM)."""

    if not reference_pgr_hz > 0 or not reference_power_uw > 0:
        raise DomainError("Reference pair rate and reference power must be positive")
    if power_uw < 0:
        raise DomainError(f"Pump power must be non-negative, got {power_uw} µW")
    return reference_pgr_hz * (power_uw / reference_power_uw) ** 2


class SourceParams(BaseModel):
    pair_generation_rate_hz: float = Field(gt=0)
    """Pair generation rate (PGR) at the source."""

    bandwidth_signal_hz: float = Field(gt=0)
    bandwidth_idler_hz: float = Field(gt=0)

    mode_duration_ps: float | None = Field(default=None, gt=0)
    """Temporal-mode length for the thermal statistics.
    If None, 2·max(τ_c,s, τ_c,i) is used."""

    coupling_signal: float = Field(default=1.0, ge=0.0, le=1.0)
    """Source to signal-detector transmission."""

    coupling_idler: float = Field(default=1.0, ge=0.0, le=1.0)

    statistics: Literal["thermal", "poisson"] = "thermal"
    """Per-mode pair-number distribution. `poisson` exists to test the bunching estimator."""

    @property
    def tau_c_signal_ps(self) -> float:
        return coherence_time_from_bandwidth(self.bandwidth_signal_hz) * PS_PER_SECOND

    @property
    def tau_c_idler_ps(self) -> float:
        return coherence_time_from_bandwidth(self.bandwidth_idler_hz) * PS_PER_SECOND

    @property
    def resolved_mode_duration_ps(self) -> int:
        if self.mode_duration_ps is not None:
            return max(1, int(round(self.mode_duration_ps)))
        return max(1, int(round(2.0 * max(self.tau_c_signal_ps, self.tau_c_idler_ps))))

    @property
    def max_lookback_ps(self) -> int:
        """Upper bound on how far an emission can precede its pair epoch."""
        return int(math.ceil(OFFSET_CUTOFF_DECAYS * max(self.tau_c_signal_ps, self.tau_c_idler_ps))) + 1

    @model_validator(mode="after")
    def _warn_under_resolved_modes(self):
        if self.mode_duration_ps is not None:
            tau_max = max(self.tau_c_signal_ps, self.tau_c_idler_ps)
            if self.mode_duration_ps < tau_max:
                logger.warning(
                    f"Mode duration {self.mode_duration_ps:.0f} ps is shorter than the coherence time "
                    f"{tau_max:.0f} ps; thermal bunching is under-resolved"
                )
        return self

    def with_pair_rate(self, pair_generation_rate_hz: float) -> "SourceParams":
        return self.model_copy(update={"pair_generation_rate_hz": pair_generation_rate_hz})


def _truncated_exponential(rng: np.random.Generator, tau_ps: float, size: int) -> np.ndarray:
    u = rng.random(size)
    tail = -math.expm1(-OFFSET_CUTOFF_DECAYS)
    return np.rint(-tau_ps * np.log1p(-u * tail)).astype(np.int64)


class PairSource:
    """Chunked pair generator.

    The time axis is split into temporal modes and modes are grouped into
    chunks; every chunk draws from its own seed derived from (seed, chunk index),
    so chunks can be generated independently and concatenated.
    """

    def __init__(
        self,
        params: SourceParams,
        duration_s: float,
        seed: int,
        chunk_duration_s: float = 0.01,
        max_events: int = DEFAULT_MAX_EVENTS,
    ):
        if duration_s < 0:
            raise DomainError(f"Duration must be non-negative, got {duration_s} s")
        if not chunk_duration_s > 0:
            raise DomainError(f"Chunk duration must be positive, got {chunk_duration_s} s")

        self._params = params
        self._seed = seed
        self._duration_ps = seconds_to_ps(duration_s)
        self._mode_ps = params.resolved_mode_duration_ps
        self._total_modes = -(-self._duration_ps // self._mode_ps)
        self._modes_per_chunk = max(1, int(round(seconds_to_ps(chunk_duration_s) / self._mode_ps)))
        self._mu_mode = params.pair_generation_rate_hz * self._mode_ps / PS_PER_SECOND

        expected_per_chunk = self._mu_mode * self._modes_per_chunk
        if expected_per_chunk > max_events:
            raise ResourceLimitError(
                f"A chunk would hold ~{expected_per_chunk:.3g} pairs, above the capacity of {max_events}; "
                "use a shorter chunk duration"
            )

    @property
    def params(self) -> SourceParams:
        return self._params

    @property
    def duration_ps(self) -> int:
        return self._duration_ps

    @property
    def mode_duration_ps(self) -> int:
        return self._mode_ps

    @property
    def mean_pairs_per_mode(self) -> float:
        return self._mu_mode

    @property
    def n_chunks(self) -> int:
        return -(-self._total_modes // self._modes_per_chunk)

    def chunk_bounds_ps(self, chunk_index: int) -> tuple[int, int]:
        first_mode = chunk_index * self._modes_per_chunk
        last_mode = min(first_mode + self._modes_per_chunk, self._total_modes)
        return first_mode * self._mode_ps, min(last_mode * self._mode_ps, self._duration_ps)

    def generate_chunk(self, chunk_index: int, first_pair_id: int = 0) -> PairEvents:
        if not 0 <= chunk_index < self.n_chunks:
            raise IndexError(f"Chunk {chunk_index} out of range [0, {self.n_chunks})")

        rng = np.random.default_rng(np.random.SeedSequence(self._seed, spawn_key=(SOURCE_STREAM, chunk_index)))

        first_mode = chunk_index * self._modes_per_chunk
        n_modes = min(self._modes_per_chunk, self._total_modes - first_mode)

        if self._params.statistics == "thermal":
            # Bose-Einstein with mean mu: geometric on {0, 1, ...} with p = 1/(1+mu)
            counts = rng.geometric(1.0 / (1.0 + self._mu_mode), size=n_modes) - 1
        else:
            counts = rng.poisson(self._mu_mode, size=n_modes)

        occupied = np.flatnonzero(counts)
        mode_index = np.repeat(first_mode + occupied, counts[occupied]).astype(np.int64)
        pair_time = mode_index * self._mode_ps + np.floor(rng.random(mode_index.size) * self._mode_ps).astype(np.int64)

        keep = pair_time < self._duration_ps
        mode_index, pair_time = mode_index[keep], pair_time[keep]
        order = np.argsort(pair_time, kind="stable")
        mode_index, pair_time = mode_index[order], pair_time[order]

        n = pair_time.size
        signal_offset = -_truncated_exponential(rng, self._params.tau_c_signal_ps, n)
        idler_offset = -_truncated_exponential(rng, self._params.tau_c_idler_ps, n)

        return PairEvents(
            mode_index=mode_index,
            pair_time_ps=pair_time,
            signal_offset_ps=signal_offset,
            idler_offset_ps=idler_offset,
            pair_id=np.arange(first_pair_id, first_pair_id + n, dtype=np.int64),
        )

    def iter_chunks(self) -> Iterator[PairEvents]:
        next_pair_id = 0
        for chunk_index in range(self.n_chunks):
            pairs = self.generate_chunk(chunk_index, first_pair_id=next_pair_id)
            next_pair_id += len(pairs)
            logger.debug(f"Source chunk {chunk_index}/{self.n_chunks}: {len(pairs)} pairs")
            yield pairs


def generate_pair_stream(
    params: SourceParams,
    duration_s: float,
    seed: int,
    chunk_duration_s: float = 0.01,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> PairEvents:
    """Generates every pair emitted in [0, duration) as one in-memory stream."""

    if not duration_s > 0:
        raise DomainError(f"Duration must be positive, got {duration_s} s")

    expected = params.pair_generation_rate_hz * duration_s
    if expected + 10 * math.sqrt(expected) > max_events:
        raise ResourceLimitError(
            f"~{expected:.3g} pairs exceed the in-memory capacity of {max_events} events; "
            "iterate PairSource.iter_chunks instead"
        )

    source = PairSource(params, duration_s, seed, chunk_duration_s=chunk_duration_s, max_events=max_events)
    return PairEvents.concatenate(source.iter_chunks())
