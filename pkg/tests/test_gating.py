import math

import numpy as np
import pytest
from pydantic import ValidationError

from heraldsim.detector import GateClock, gate_of
from heraldsim.detector.gating import gates_in_span, gaussian_sigma_from_fwhm, in_gate


def test_gate_of_scalar_and_array():
    gate = GateClock(frequency_hz=1e9, phase_offset_ps=200, gate_width_ps=300)

    assert gate_of(200, gate) == (0, 0)
    assert gate_of(1_450, gate) == (1, 250)
    assert gate_of(100, gate) == (-1, 900)

    index, offset = gate_of(np.array([200, 1_199, 1_200]), gate)
    np.testing.assert_array_equal(index, [0, 0, 1])
    np.testing.assert_array_equal(offset, [0, 999, 0])


def test_in_gate_window():
    gate = GateClock(frequency_hz=1e9, gate_width_ps=300)
    np.testing.assert_array_equal(in_gate(np.array([0, 299, 300, 1_100]), gate), [True, True, False, True])


def test_gate_index_ranges():
    gate = GateClock(frequency_hz=1e9, phase_offset_ps=200)
    assert gate.first_gate_at_or_after(200) == 0
    assert gate.first_gate_at_or_after(201) == 1
    assert gate.first_gate_at_or_after(0) == 0
    assert gates_in_span(0, 10_000, gate) == (0, 10)


def test_gate_width_must_fit_in_the_period():
    with pytest.raises(ValidationError):
        GateClock(frequency_hz=1e9, gate_width_ps=1_000)
    assert GateClock(frequency_hz=1.25e9, gate_width_ps=300).period_ps == 800


def test_gaussian_sigma_from_fwhm():
    assert gaussian_sigma_from_fwhm(2 * math.sqrt(2 * math.log(2))) == pytest.approx(1.0)
    assert gaussian_sigma_from_fwhm(0.0) == 0.0
