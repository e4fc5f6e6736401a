"""Superconducting nanowire detector: ungated, near-ideal reference channel."""

import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from ..events import NO_PAIR, ArrivalStream, Origin, TagStream, seconds_to_ps
from .utils import clip_to_span, detector_rng, greedy_deadtime_mask, jitter, require_sorted


logger = logging.getLogger(__name__)


class SnspdParams(BaseModel):
    kind: Literal["snspd"] = "snspd"

    efficiency: float = Field(default=0.9, ge=0.0, le=1.0)
    dark_rate_hz: float = Field(default=100.0, ge=0.0)
    deadtime_ps: int = Field(default=50_000, ge=0)
    jitter_fwhm_ps: float = Field(default=30.0, ge=0.0)

    @property
    def detection_efficiency(self) -> float:
        return self.efficiency


class SnspdDetector:
    """Stateful SNSPD channel; successive `process` calls continue one stream."""

    def __init__(self, params: SnspdParams, channel: int, seed: int):
        self._params = params
        self._channel = channel
        self._rng = detector_rng(seed, channel)
        self._cursor_ps = 0
        self._last_tag_ps = 0
        self._has_last = False

    @property
    def channel(self) -> int:
        return self._channel

    def process(self, arrivals: ArrivalStream, until_ps: int) -> TagStream:
        """Detects the arrivals in [cursor, until) plus the dark counts of that span."""

        require_sorted(arrivals.time_ps, "arrival stream")
        p = self._params
        rng = self._rng

        detected = rng.random(len(arrivals)) < p.efficiency
        photon_times = arrivals.time_ps[detected]
        photon_ids = arrivals.pair_id[detected]

        span_ps = max(0, until_ps - self._cursor_ps)
        n_dark = rng.poisson(p.dark_rate_hz * span_ps * 1e-12) if span_ps else 0
        dark_times = self._cursor_ps + np.floor(rng.random(n_dark) * span_ps).astype(np.int64)

        times = np.concatenate([photon_times, dark_times])
        origin = np.concatenate([
            np.full(photon_times.size, Origin.PHOTON, dtype=np.uint8),
            np.full(dark_times.size, Origin.DARK, dtype=np.uint8),
        ])
        pair_id = np.concatenate([photon_ids, np.full(dark_times.size, NO_PAIR, dtype=np.int64)])

        times = jitter(times, p.jitter_fwhm_ps, rng)
        order = np.argsort(times, kind="stable")
        order = order[times[order] >= 0]
        times, origin, pair_id = times[order], origin[order], pair_id[order]

        keep, self._last_tag_ps, self._has_last = greedy_deadtime_mask(
            times, p.deadtime_ps, self._last_tag_ps, self._has_last
        )
        self._cursor_ps = max(self._cursor_ps, until_ps)

        return TagStream(times[keep], self._channel, origin[keep], pair_id[keep])


def detect_snspd(
    arrivals: ArrivalStream,
    params: SnspdParams,
    duration_s: float,
    seed: int,
    channel: int = 0,
) -> TagStream:
    until = seconds_to_ps(duration_s)
    require_sorted(arrivals.time_ps, "arrival stream")
    return SnspdDetector(params, channel, seed).process(clip_to_span(arrivals, until), until)
