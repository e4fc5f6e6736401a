"""Sine-gated InGaAs/InP SPAD.

Photons are accepted only inside the gate window, dark counts fire per
gate, every avalanche may charge traps whose release produces afterpulses,
and the discriminator deadtime and the optional hold-off act on the
(jittered) tag times.
"""

import heapq
import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..events import NO_PAIR, ArrivalStream, Origin, TagStream, seconds_to_ps
from .gating import GateClock, gaussian_sigma_from_fwhm, gate_of
from .utils import RandomPool, clip_to_span, collect_tags, detector_rng, require_sorted


logger = logging.getLogger(__name__)


class TrapParams(BaseModel):
    probability: float = Field(ge=0.0, le=1.0)
    """Probability that one avalanche charges this trap."""

    lifetime_ps: float = Field(gt=0)
    """Exponential release constant."""


class SpadOperatingPoint(BaseModel):
    pde: float = Field(ge=0.0, le=1.0)
    dark_prob_per_gate: float = Field(ge=0.0, le=1.0)


class SpadParams(BaseModel):
    kind: Literal["spad"] = "spad"

    pde: float = Field(default=0.155, ge=0.0, le=1.0)
    dark_prob_per_gate: float = Field(default=1.25e-5, ge=0.0, le=1.0)

    photon_response: Literal["per_gate", "per_photon"] = "per_gate"
    """`per_gate`: a gate holding one or more photons fires with probability `pde`,
    so the click probability under a Poissonian pulse is pde·(1 − e^{−μ}).
    `per_photon`: every photon fires independently, giving 1 − e^{−μ·pde}."""

    afterpulse_total_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    trap_lifetime_ps: float = Field(default=1_000_000.0, gt=0)

    traps: list[TrapParams] | None = None
    """Multi-trap afterpulsing; overrides (afterpulse_total_prob, trap_lifetime_ps) when set."""

    max_afterpulse_generation: int = Field(default=3, ge=0)
    """Afterpulses charge traps themselves up to this cascade depth."""

    discriminator_deadtime_ps: int = Field(default=10_000, ge=0)
    holdoff_time_ps: int = Field(default=0, ge=0)
    """Physical hold-off t_d; 0 disables it."""

    jitter_fwhm_ps: float = Field(default=30.0, ge=0.0)
    gate: GateClock = Field(default_factory=GateClock)

    @model_validator(mode="after")
    def _check_traps(self):
        if self.traps is not None and sum(t.probability for t in self.traps) > 1.0:
            raise ValueError("Trap probabilities must not sum above 1")
        return self

    @property
    def trap_list(self) -> list[TrapParams]:
        if self.traps is not None:
            return [t for t in self.traps if t.probability > 0]
        if self.afterpulse_total_prob > 0:
            return [TrapParams(probability=self.afterpulse_total_prob, lifetime_ps=self.trap_lifetime_ps)]
        return []

    @property
    def detection_efficiency(self) -> float:
        return self.pde

    def at_operating_point(self, point: SpadOperatingPoint) -> "SpadParams":
        return self.model_copy(update={"pde": point.pde, "dark_prob_per_gate": point.dark_prob_per_gate})


def _dark_gate_indices(rng: np.random.Generator, first_gate: int, n_gates: int, p: float) -> np.ndarray:
    """Indices of the gates in [first, first + n) that fire dark, drawn as a
    Bernoulli process via geometric gaps."""

    if n_gates <= 0 or p <= 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(first_gate, first_gate + n_gates, dtype=np.int64)

    positions = []
    last = -1
    expected = n_gates * p
    batch = int(expected + 10 * np.sqrt(expected) + 16)
    while True:
        gaps = rng.geometric(p, size=batch)
        pos = last + np.cumsum(gaps)
        inside = pos[pos < n_gates]
        positions.append(inside)
        if inside.size < pos.size:
            break
        last = int(pos[-1])
    return first_gate + np.concatenate(positions).astype(np.int64)


class SpadDetector:
    """Stateful gated-SPAD channel.

    Successive `process` calls continue one stream: the last tag time, the
    last avalanche gate and the pending trap releases and dark counts carry
    over between calls.
    """

    def __init__(self, params: SpadParams, channel: int, seed: int):
        self._params = params
        self._channel = channel
        self._rng = detector_rng(seed, channel)
        self._pool = RandomPool(self._rng)
        self._traps = [(t.probability, t.lifetime_ps) for t in params.trap_list]
        self._sigma = gaussian_sigma_from_fwhm(params.jitter_fwhm_ps)

        # (event time, sequence, generation, origin, pair id)
        self._pending: list[tuple[int, int, int, int, int]] = []
        self._sequence = 0
        self._next_dark_gate = params.gate.first_gate_at_or_after(0)
        self._last_tag_ps = 0
        self._has_last = False
        self._last_avalanche_gate: int | None = None
        self._last_photon_gate: int | None = None

    @property
    def channel(self) -> int:
        return self._channel

    @property
    def pending_releases(self) -> int:
        return len(self._pending)

    def _push(self, time_ps: int, generation: int, origin: Origin, pair_id: int = NO_PAIR):
        heapq.heappush(self._pending, (time_ps, self._sequence, generation, int(origin), pair_id))
        self._sequence += 1

    def _resolve_release(self, release_ps: int) -> int:
        """The release fires at `release_ps` if a gate is open then, else in the next gate."""
        gate = self._params.gate
        index, offset = gate_of(release_ps, gate)
        if offset < gate.gate_width_ps:
            return release_ps
        return int(gate.gate_open_ps(index + 1)) + int(self._pool.uniform() * gate.gate_width_ps)

    def _schedule_darks(self, until_ps: int):
        p = self._params
        gate = p.gate
        stop_gate = gate.first_gate_at_or_after(until_ps)
        n_gates = stop_gate - self._next_dark_gate
        indices = _dark_gate_indices(self._rng, self._next_dark_gate, n_gates, p.dark_prob_per_gate)
        self._next_dark_gate = max(self._next_dark_gate, stop_gate)

        if indices.size == 0:
            return
        times = gate.gate_open_ps(indices) + np.floor(self._rng.random(indices.size) * gate.gate_width_ps).astype(np.int64)
        for t in times.tolist():
            self._push(t, 0, Origin.DARK)

    def _photon_candidates(self, arrivals: ArrivalStream) -> tuple[list[int], list[int]]:
        """In-gate photons that trigger an avalanche, before deadtime and hold-off."""
        p = self._params
        index, offset = gate_of(arrivals.time_ps, p.gate)
        inside = np.flatnonzero(offset < p.gate.gate_width_ps)
        index = index[inside]

        if p.photon_response == "per_gate" and inside.size:
            # First photon of every occupied gate stands for the whole gate
            first = np.empty(inside.size, dtype=bool)
            first[0] = index[0] != self._last_photon_gate
            first[1:] = index[1:] != index[:-1]
            inside = inside[first]
            self._last_photon_gate = int(index[-1])

        fired = inside[self._rng.random(inside.size) < p.pde]
        return arrivals.time_ps[fired].tolist(), arrivals.pair_id[fired].tolist()

    def process(self, arrivals: ArrivalStream, until_ps: int) -> TagStream:
        """Detects the arrivals in [cursor, until) together with the dark counts
        and afterpulses falling in that span. All arrivals must precede `until_ps`."""

        require_sorted(arrivals.time_ps, "arrival stream")
        p = self._params
        gate = p.gate

        photon_times, photon_ids = self._photon_candidates(arrivals)

        self._schedule_darks(until_ps)

        pool = self._pool
        period = gate.period_ps
        phase = gate.phase_offset_ps
        deadtime = p.discriminator_deadtime_ps
        holdoff = p.holdoff_time_ps
        max_generation = p.max_afterpulse_generation
        pending = self._pending

        out_times: list[int] = []
        out_origin: list[int] = []
        out_pair: list[int] = []

        i = 0
        n_photons = len(photon_times)
        while True:
            next_photon = photon_times[i] if i < n_photons else None
            next_pending = pending[0][0] if pending else None

            if next_pending is not None and (next_photon is None or next_pending < next_photon):
                if next_pending >= until_ps:
                    break
                event_ps, _, generation, origin, pair_id = heapq.heappop(pending)
            elif next_photon is not None:
                event_ps, generation, origin, pair_id = next_photon, 0, Origin.PHOTON, photon_ids[i]
                i += 1
            else:
                break

            gate_index = (event_ps - phase) // period
            if gate_index == self._last_avalanche_gate:
                continue

            tag_ps = event_ps + int(round(pool.normal() * self._sigma)) if self._sigma > 0 else event_ps

            if holdoff > 0 and self._has_last and tag_ps - self._last_tag_ps < holdoff:
                # Bias below breakdown: no avalanche, no trap charging
                continue

            self._last_avalanche_gate = gate_index

            if not self._has_last or tag_ps - self._last_tag_ps >= deadtime:
                if tag_ps >= 0:
                    out_times.append(tag_ps)
                    out_origin.append(origin)
                    out_pair.append(pair_id)
                    self._last_tag_ps = tag_ps
                    self._has_last = True

            if generation < max_generation:
                for probability, lifetime in self._traps:
                    if pool.uniform() < probability:
                        release = event_ps + int(round(pool.exponential() * lifetime))
                        self._push(self._resolve_release(release), generation + 1, Origin.AFTERPULSE)

        return collect_tags(self._channel, out_times, out_origin, out_pair)


def detect_spad(
    arrivals: ArrivalStream,
    params: SpadParams,
    duration_s: float,
    seed: int,
    channel: int = 0,
) -> TagStream:
    until = seconds_to_ps(duration_s)
    require_sorted(arrivals.time_ps, "arrival stream")
    return SpadDetector(params, channel, seed).process(clip_to_span(arrivals, until), until)
