import math

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..events import PS_PER_SECOND


class GateClock(BaseModel):
    frequency_hz: float = Field(default=1e9, gt=0)
    phase_offset_ps: int = 0
    """Time of the opening of gate 0."""

    gate_width_ps: int = Field(default=300, gt=0)
    """Effective acceptance window per period, starting at the gate opening."""

    @property
    def period_ps(self) -> int:
        return int(round(PS_PER_SECOND / self.frequency_hz))

    @property
    def duty_cycle(self) -> float:
        return self.gate_width_ps / self.period_ps

    @model_validator(mode="after")
    def _check_width(self):
        if self.gate_width_ps >= self.period_ps:
            raise ValueError(f"Gate width {self.gate_width_ps} ps must be shorter than the period {self.period_ps} ps")
        return self

    def gate_open_ps(self, gate_index):
        return self.phase_offset_ps + np.asarray(gate_index, dtype=np.int64) * self.period_ps

    def first_gate_at_or_after(self, t_ps: int) -> int:
        """Index of the first gate opening at or after `t_ps`."""
        return -((self.phase_offset_ps - t_ps) // self.period_ps)


def gate_of(t_ps, gate: GateClock) -> tuple:
    """Maps time(s) to (gate index, offset from that gate's opening).

    The offset always lies in [0, period). Works on scalars and arrays.
    """

    period = gate.period_ps
    shifted = np.asarray(t_ps, dtype=np.int64) - gate.phase_offset_ps
    index = np.floor_divide(shifted, period)
    offset = shifted - index * period

    if np.ndim(index) == 0:
        return int(index), int(offset)
    return index, offset


def in_gate(t_ps: np.ndarray, gate: GateClock) -> np.ndarray:
    _, offset = gate_of(t_ps, gate)
    return np.asarray(offset) < gate.gate_width_ps


def gates_in_span(start_ps: int, stop_ps: int, gate: GateClock) -> tuple[int, int]:
    """Half-open range of gate indices whose opening lies in [start, stop)."""
    return gate.first_gate_at_or_after(start_ps), gate.first_gate_at_or_after(stop_ps)


def gaussian_sigma_from_fwhm(fwhm: float) -> float:
    return fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
