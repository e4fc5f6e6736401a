import json

import numpy as np
import pytest

from heraldsim.analysis import Histogram, build_period_histogram, load_histogram, save_histogram
from heraldsim.analysis.histogram import build_period_histogram_streaming, fold_counts, period_bin_count
from heraldsim.errors import ConfigurationError, DataFormatError, DomainError
from heraldsim.events import TagStream


def test_fold_counts():
    counts = fold_counts(np.array([0, 150, 1_050, 999, 2_000]), period_ps=1_000, bin_width_ps=100)
    assert counts.tolist() == [3, 1, 0, 0, 0, 0, 0, 0, 0, 1]


def test_fold_counts_with_origin():
    counts = fold_counts(np.array([250, 260, 1_240]), period_ps=1_000, bin_width_ps=500, origin_ps=250)
    assert counts.tolist() == [2, 1]


def test_period_must_be_a_multiple_of_the_bin_width():
    assert period_bin_count(10_000_000, 1_000) == 10_000
    with pytest.raises(ConfigurationError):
        period_bin_count(10_000, 3_000)
    with pytest.raises(ConfigurationError):
        period_bin_count(10_000, 0)


def test_period_histogram_metadata():
    tags = TagStream(np.array([5, 10_005, 20_100]), 0)
    hist = build_period_histogram(tags, period_ps=10_000, bin_width_ps=1_000, integration_time_s=1e-6, gate_frequency_hz=1e9)

    assert hist.n_bins == 10
    assert hist.n_trigger == 100
    assert hist.rep_rate_hz == pytest.approx(1e8)
    assert hist.gates_per_bin == pytest.approx(1.0)
    assert hist.total == 3

    with pytest.raises(DomainError):
        build_period_histogram(tags, 10_000, 1_000, integration_time_s=-1.0)


def test_streaming_equals_in_memory(poisson_times):
    times = poisson_times(1e6, 0.01, seed=3)
    tags = TagStream(times, 0)
    blocks = [tags.take(slice(i, i + 777)) for i in range(0, len(tags), 777)]

    whole = build_period_histogram(tags, 10_000_000, 1_000, 0.01)
    streamed = build_period_histogram_streaming(blocks, 10_000_000, 1_000, 0.01)
    np.testing.assert_array_equal(whole.counts, streamed.counts)
    assert whole.n_trigger == streamed.n_trigger


def test_histograms_add():
    a = Histogram(bin_width_ps=10, origin_ps=0, counts=np.array([1, 2]), integration_time_s=1.0, n_trigger=5)
    b = Histogram(bin_width_ps=10, origin_ps=0, counts=np.array([3, 4]), integration_time_s=2.0, n_trigger=7)

    total = a + b
    assert total.counts.tolist() == [4, 6]
    assert (total.integration_time_s, total.n_trigger) == (3.0, 12)

    with pytest.raises(ConfigurationError):
        a + Histogram(bin_width_ps=20, origin_ps=0, counts=np.array([1, 2]), integration_time_s=1.0, n_trigger=1)


def test_csv_and_sidecar(tmp_path):
    hist = Histogram(
        bin_width_ps=1_000,
        origin_ps=250,
        counts=np.array([10, 0, 3]),
        integration_time_s=2.5,
        n_trigger=250_000,
        gate_frequency_hz=1e9,
        mu=0.5,
        rep_rate_hz=1e5,
        pulse_bin=0,
    )
    path = tmp_path / "hist.csv"
    save_histogram(hist, path)

    assert path.read_text().splitlines()[:2] == ["bin_start_ps,count", "250,10"]
    assert json.loads(path.with_suffix(".json").read_text())["mu"] == 0.5

    loaded = load_histogram(path)
    np.testing.assert_array_equal(loaded.counts, hist.counts)
    assert (loaded.mu, loaded.pulse_bin, loaded.n_trigger) == (0.5, 0, 250_000)


def test_malformed_histogram_files(tmp_path):
    path = tmp_path / "hist.csv"
    path.write_text("bin_start_ps,count\n0,1\n")
    with pytest.raises(DataFormatError):
        load_histogram(path)

    path.with_suffix(".json").write_text(json.dumps({
        "bin_width_ps": 10, "n_bins": 3, "integration_time_s": 1.0, "n_trigger": 1,
    }))
    with pytest.raises(DataFormatError):
        load_histogram(path)

    path.with_suffix(".json").write_text("{not json")
    with pytest.raises(DataFormatError):
        load_histogram(path)
