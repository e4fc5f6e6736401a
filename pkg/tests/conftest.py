import numpy as np
import pytest

from heraldsim.detector import GateClock, SnspdParams, SpadParams
from heraldsim.events import Arm, ArrivalStream, TagStream
from heraldsim.source import SourceParams


@pytest.fixture
def ideal_snspd() -> SnspdParams:
    return SnspdParams(efficiency=1.0, dark_rate_hz=0.0, deadtime_ps=0, jitter_fwhm_ps=0.0)


@pytest.fixture
def quiet_spad() -> SpadParams:
    """Noiseless, jitter-free SPAD that fires on every in-gate photon."""
    return SpadParams(
        pde=1.0,
        dark_prob_per_gate=0.0,
        afterpulse_total_prob=0.0,
        discriminator_deadtime_ps=0,
        jitter_fwhm_ps=0.0,
        gate=GateClock(frequency_hz=1e9, gate_width_ps=300),
    )


@pytest.fixture
def narrowband_source() -> SourceParams:
    return SourceParams(
        pair_generation_rate_hz=1e5,
        bandwidth_signal_hz=52.8e6,
        bandwidth_idler_hz=59.8e6,
        mode_duration_ps=80_000,
    )


@pytest.fixture
def make_arrivals():
    def make(times, arm: Arm = Arm.SIGNAL) -> ArrivalStream:
        times = np.asarray(times, dtype=np.int64)
        return ArrivalStream.from_arrays(times, np.arange(times.size), arm)
    return make


@pytest.fixture
def make_tags():
    def make(times, channel: int = 0) -> TagStream:
        return TagStream(np.asarray(times, dtype=np.int64), channel)
    return make


@pytest.fixture
def poisson_times():
    """Sorted Poissonian tag times at `rate_hz` over `duration_s`."""
    def make(rate_hz: float, duration_s: float, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        n = rng.poisson(rate_hz * duration_s)
        return np.sort(rng.integers(0, int(duration_s * 1e12), size=n))
    return make
