import math

import pytest

from heraldsim.analysis import AnalysisSettings, compute_hsps_metrics, cross_correlation, g2_zero_delay
from heraldsim.analysis.correlation import g2_normalize_by_singles
from heraldsim.analysis.metrics import SweepRow, compute_hsps_metrics_files
from heraldsim.detector import SnspdParams, detect_snspd
from heraldsim.errors import ConfigurationError
from heraldsim.events import Arm
from heraldsim.source import SourceParams, apply_channel, generate_pair_stream, route_arrivals
from heraldsim.tagfile import TagFile, write_tags


DURATION_S = 1.0
WITHIN_ONE_DECAY = 1 - 1 / math.e


@pytest.fixture(scope="module")
def pairs():
    params = SourceParams(
        pair_generation_rate_hz=1e5,
        bandwidth_signal_hz=52.8e6,
        bandwidth_idler_hz=59.8e6,
        mode_duration_ps=80_000,
    )
    return generate_pair_stream(params, DURATION_S, seed=11)


@pytest.fixture
def hbt_setup(pairs, ideal_snspd):
    """Lossless herald, half the signal photons lost, then a 50:50 HBT splitter."""
    idler = apply_channel(pairs, Arm.IDLER, 1.0, seed=1)
    signal = apply_channel(pairs, Arm.SIGNAL, 0.5, seed=2)
    a, b = route_arrivals(signal, [0.5, 0.5], seed=3)

    herald = detect_snspd(idler, ideal_snspd, DURATION_S, seed=4, channel=0)
    hbt = (
        detect_snspd(a, ideal_snspd, DURATION_S, seed=5, channel=1),
        detect_snspd(b, ideal_snspd, DURATION_S, seed=6, channel=2),
    )
    return herald, hbt


def test_heralding_efficiency_closed_loop(hbt_setup):
    herald, hbt = hbt_setup
    metrics, histograms = compute_hsps_metrics(herald, None, hbt, eta_d_s=1.0, integration_time_s=DURATION_S)

    assert metrics.tau_c_signal_ps == pytest.approx(3_014, rel=0.1)
    assert metrics.tau_c_idler_ps == pytest.approx(2_661, rel=0.1)
    assert metrics.coincidence_window_ps == pytest.approx(metrics.tau_c_signal_ps + metrics.tau_c_idler_ps)

    assert metrics.r_i.value == pytest.approx(1e5, rel=0.02)
    assert metrics.eta_h_s.value == pytest.approx(0.5 * WITHIN_ONE_DECAY, rel=0.05)
    assert metrics.r_h_s.value == pytest.approx(metrics.eta_h_s.value * metrics.r_i.value)

    # A lone signal photon per herald cannot fire both HBT outputs
    assert metrics.g2_h_0.value < 0.1
    assert metrics.g2_auto_0 is not None
    assert metrics.heralded_counts.n_h == len(herald)
    assert set(histograms) == {"cross", "auto"}
    assert histograms["cross"].normalization == "raw_counts"


def test_signal_detector_efficiency_is_divided_out(pairs, ideal_snspd):
    idler = apply_channel(pairs, Arm.IDLER, 1.0, seed=1)
    signal = apply_channel(pairs, Arm.SIGNAL, 1.0, seed=2)
    lossy = ideal_snspd.model_copy(update={"efficiency": 0.9})

    herald = detect_snspd(idler, ideal_snspd, DURATION_S, seed=4, channel=0)
    detected = detect_snspd(signal, lossy, DURATION_S, seed=5, channel=1)
    metrics, histograms = compute_hsps_metrics(herald, detected, None, eta_d_s=0.9, integration_time_s=DURATION_S)

    assert metrics.eta_h_s.value == pytest.approx(WITHIN_ONE_DECAY, rel=0.05)
    assert metrics.g2_h_0 is None and metrics.g2_auto_0 is None
    assert set(histograms) == {"cross"}

    row = SweepRow.from_metrics(100.0, 1e5, metrics)
    assert row.eta_h_s == metrics.eta_h_s.value
    assert row.g2_h_0 is None


def test_signal_or_hbt_is_required(make_tags):
    with pytest.raises(ConfigurationError):
        compute_hsps_metrics(make_tags([1]), None, None, eta_d_s=1.0, integration_time_s=1.0)


def test_file_metrics_equal_in_memory(tmp_path, hbt_setup):
    herald, hbt = hbt_setup
    for tags in (herald, *hbt):
        write_tags(tmp_path / f"channel_{tags.channel}.tags", tags)
    files = {c: TagFile(tmp_path / f"channel_{c}.tags") for c in (0, 1, 2)}

    settings = AnalysisSettings(fit_autocorrelation=False)
    expected, _ = compute_hsps_metrics(herald, None, hbt, 1.0, DURATION_S, settings)
    streamed, histograms = compute_hsps_metrics_files(
        files[0], [files[1], files[2]], (files[1], files[2]), 1.0, DURATION_S, settings, block_records=5_000
    )

    assert streamed.eta_h_s.value == pytest.approx(expected.eta_h_s.value)
    assert streamed.g2_h_0.value == pytest.approx(expected.g2_h_0.value)
    assert histograms["cross"].n_stop == len(hbt[0]) + len(hbt[1])


BRIGHT_S = 0.25


@pytest.fixture(scope="module")
def bright_pairs():
    """Two million pairs per second, about 0.16 per 80 ns mode."""
    def generate(statistics: str):
        params = SourceParams(
            pair_generation_rate_hz=2e6,
            bandwidth_signal_hz=52.8e6,
            bandwidth_idler_hz=59.8e6,
            mode_duration_ps=80_000,
            statistics=statistics,
        )
        return generate_pair_stream(params, BRIGHT_S, seed=31)
    return {statistics: generate(statistics) for statistics in ("thermal", "poisson")}


def _signal_g2_zero(pairs, dark_rate_hz: float = 0.0):
    signal = apply_channel(pairs, Arm.SIGNAL, 1.0, seed=32)
    a, b = route_arrivals(signal, [0.5, 0.5], seed=33)
    params = SnspdParams(efficiency=1.0, dark_rate_hz=dark_rate_hz, deadtime_ps=0, jitter_fwhm_ps=0.0)
    tags = [detect_snspd(arm, params, BRIGHT_S, seed=34 + i, channel=1 + i) for i, arm in enumerate((a, b))]

    hist = cross_correlation(*tags, bin_width_ps=1_000, tau_range_ps=200_000, integration_time_s=BRIGHT_S)
    return g2_zero_delay(g2_normalize_by_singles(hist), half_width_bins=5)


@pytest.mark.parametrize("statistics, expected", [("thermal", 2.0), ("poisson", 1.0)])
def test_unheralded_g2_follows_pair_statistics(bright_pairs, statistics, expected):
    # the thermal peak is an 80 ns triangle, 3% below its apex over ±5 ns
    assert _signal_g2_zero(bright_pairs[statistics]).value == pytest.approx(expected, abs=0.1)


def test_dark_counts_lower_purity(bright_pairs):
    ladder = [_signal_g2_zero(bright_pairs["thermal"], dark) for dark in (0.0, 2e5, 1e6)]
    purity = [g2.value - 1.0 for g2 in ladder]

    for (high, low), (e_high, e_low) in zip(zip(purity, purity[1:]), zip(ladder, ladder[1:])):
        assert high - low > 3 * math.hypot(e_high.stderr, e_low.stderr)
    # signal fraction per arm squared: 1, (1/1.2)², (1/2)²
    assert purity[2] == pytest.approx(0.25 * purity[0], abs=0.05)


def test_herald_dark_counts_lower_heralding_efficiency(pairs, ideal_snspd):
    idler = apply_channel(pairs, Arm.IDLER, 1.0, seed=1)
    signal = apply_channel(pairs, Arm.SIGNAL, 1.0, seed=2)
    detected = detect_snspd(signal, ideal_snspd, DURATION_S, seed=5, channel=1)

    eta = []
    for dark in (0.0, 5e4, 2e5):
        noisy = ideal_snspd.model_copy(update={"dark_rate_hz": dark})
        herald = detect_snspd(idler, noisy, DURATION_S, seed=4, channel=0)
        metrics, _ = compute_hsps_metrics(herald, detected, None, eta_d_s=1.0, integration_time_s=DURATION_S)
        eta.append(metrics.eta_h_s)

    for high, low in zip(eta, eta[1:]):
        assert high.value - low.value > 3 * math.hypot(high.stderr, low.stderr)
    assert eta[2].value == pytest.approx(eta[0].value / 3, rel=0.05)
