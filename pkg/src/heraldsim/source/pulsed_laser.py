"""Attenuated pulsed laser used to characterize a gated detector."""

import logging

import numpy as np
from pydantic import BaseModel, Field

from ..detector.gating import GateClock, gaussian_sigma_from_fwhm
from ..errors import ConfigurationError, DomainError
from ..events import PS_PER_SECOND, ArrivalStream, Arm, seconds_to_ps


logger = logging.getLogger(__name__)


LASER_STREAM = 1


class PulsedSourceSpec(BaseModel):
    rep_rate_hz: float = Field(gt=0)
    """Laser repetition rate f_L."""

    mu: float = Field(ge=0)
    """Mean photon number per pulse at the detector input."""

    pulse_bin: int = Field(default=0, ge=0)
    """Index of the illuminated gate/bin within one laser period."""

    pulse_width_fwhm_ps: float = Field(default=50.0, ge=0)

    pulse_delay_ps: int | None = None
    """Pulse position after the opening of the illuminated gate; None centers it in the gate."""

    @property
    def period_ps(self) -> int:
        return int(round(PS_PER_SECOND / self.rep_rate_hz))

    def gates_per_period(self, gate: GateClock) -> int:
        if self.period_ps % gate.period_ps != 0:
            raise ConfigurationError(
                f"Laser period {self.period_ps} ps is not a multiple of the gate period {gate.period_ps} ps"
            )
        return self.period_ps // gate.period_ps

    def pulses_in_span(self, gate: GateClock, start_ps: int, stop_ps: int) -> tuple[np.ndarray, np.ndarray]:
        """(pulse indices, nominal pulse times) of the pulses emitted in [start, stop)."""
        n_gates = self.gates_per_period(gate)
        if self.pulse_bin >= n_gates:
            raise ConfigurationError(f"Pulse bin {self.pulse_bin} outside the {n_gates} gates of one laser period")

        delay = self.pulse_delay_ps if self.pulse_delay_ps is not None else gate.gate_width_ps // 2
        first = gate.phase_offset_ps + self.pulse_bin * gate.period_ps + delay
        k0 = max(0, -((first - start_ps) // self.period_ps))
        k1 = max(k0, -((first - stop_ps) // self.period_ps))
        index = np.arange(k0, k1, dtype=np.int64)
        return index, first + index * self.period_ps


def generate_pulse_train(
    spec: PulsedSourceSpec,
    gate: GateClock,
    start_ps: int,
    stop_ps: int,
    seed: int | np.random.SeedSequence,
) -> ArrivalStream:
    """Photons of the pulses emitted in [start, stop), Poissonian in number.

    The pair id of each photon is the index of its pulse.
    """

    if stop_ps < start_ps:
        raise DomainError(f"Empty span [{start_ps}, {stop_ps})")

    rng = np.random.default_rng(seed)
    index, pulses = spec.pulses_in_span(gate, start_ps, stop_ps)
    counts = rng.poisson(spec.mu, size=pulses.size)

    times = np.repeat(pulses, counts)
    pulse_index = np.repeat(index, counts)

    sigma = gaussian_sigma_from_fwhm(spec.pulse_width_fwhm_ps)
    if sigma > 0 and times.size:
        times = times + np.rint(rng.normal(0.0, sigma, size=times.size)).astype(np.int64)

    keep = (times >= start_ps) & (times < stop_ps)
    return ArrivalStream.from_arrays(times[keep], pulse_index[keep], Arm.LASER)


def generate_pulse_stream(
    spec: PulsedSourceSpec,
    gate: GateClock,
    duration_s: float,
    seed: int,
) -> ArrivalStream:
    return generate_pulse_train(spec, gate, 0, seconds_to_ps(duration_s), np.random.SeedSequence(seed, spawn_key=(LASER_STREAM,)))
