import asyncio
import hashlib
import json

import numpy as np
import pytest
import yaml

from heraldsim.analysis import AnalysisSettings
from heraldsim.config import (
    OutputConfig,
    PowerSweepConfig,
    RouteConfig,
    RunConfig,
    RunnerConfig,
    SweepConfig,
    TopologyConfig,
    characterization_run_config,
)
from heraldsim.detector import SnspdParams
from heraldsim.errors import ConfigurationError, DataFormatError
from heraldsim.events import Origin
from heraldsim.experiment_runner import (
    MANIFEST_NAME,
    ExperimentRunner,
    analyze_directory,
    analyze_streams,
    bundle_report,
    characterize_file,
    load_manifest,
    write_characterization_outputs,
    write_metrics_outputs,
    write_table,
)
from heraldsim.source import SourceParams
from heraldsim.tagfile import read_tags, read_tags_csv


def hbt_run(**updates) -> RunConfig:
    """Herald on channel 0, signal split evenly over channels 1 and 2."""
    config = RunConfig(
        source=SourceParams(
            pair_generation_rate_hz=1e5,
            bandwidth_signal_hz=52.8e6,
            bandwidth_idler_hz=59.8e6,
            mode_duration_ps=80_000,
        ),
        detectors={0: SnspdParams(), 1: SnspdParams(), 2: SnspdParams()},
        topology=TopologyConfig(
            routes=[RouteConfig(arm="idler", channels=[0]), RouteConfig(arm="signal", channels=[1, 2])],
            herald_channel=0,
            hbt_channels=(1, 2),
        ),
        duration_s=0.05,
        seed=21,
        outputs=OutputConfig(include_truth=True),
        analysis=AnalysisSettings(software_deadtime_ps={2: 100_000}, fit_autocorrelation=False),
    )
    return config.model_copy(update=updates)


def simulate(run: RunConfig, directory, max_workers: int = 2):
    return asyncio.run(ExperimentRunner(RunnerConfig(max_workers=max_workers)).simulate(run, directory))


def tag_hashes(manifest) -> dict[int, str]:
    return {f.channel: f.sha256 for f in manifest.files if f.kind == "tags"}


def test_same_seed_same_files_regardless_of_workers(tmp_path):
    first = simulate(hbt_run(), tmp_path / "one", max_workers=1)
    second = simulate(hbt_run(), tmp_path / "four", max_workers=4)
    reseeded = simulate(hbt_run(seed=22), tmp_path / "reseeded")

    assert tag_hashes(first) == tag_hashes(second)
    assert tag_hashes(first) != tag_hashes(reseeded)
    assert first.config_hash == second.config_hash != reseeded.config_hash


def test_manifest_describes_the_files(tmp_path):
    manifest = simulate(hbt_run(), tmp_path)

    assert manifest == load_manifest(tmp_path)
    assert manifest.channels == [0, 1, 2]
    assert {f.kind for f in manifest.files} == {"config", "tags"}
    for entry in manifest.files:
        assert hashlib.sha256((tmp_path / entry.path).read_bytes()).hexdigest() == entry.sha256
    for channel in manifest.channels:
        assert len(read_tags(tmp_path / manifest.tag_file(channel).path)) == manifest.tag_file(channel).records

    assert yaml.safe_load((tmp_path / "config.yaml").read_text())["seed"] == 21
    with pytest.raises(DataFormatError):
        manifest.tag_file(9)


def test_files_equal_the_in_memory_run(tmp_path):
    run = hbt_run(outputs=OutputConfig(include_truth=True, write_arrivals=True))
    manifest = simulate(run, tmp_path)
    result = asyncio.run(ExperimentRunner().simulate_streams(run, keep_arrivals=True))

    for channel, tags in result.tags.items():
        stored = read_tags(tmp_path / manifest.tag_file(channel).path)
        np.testing.assert_array_equal(stored.time_ps, tags.time_ps)
        np.testing.assert_array_equal(stored.origin, tags.origin)
        assert tags.sorted

    assert len(result.arrivals[0]) > 0
    assert sum(f.kind == "arrivals" for f in manifest.files) == 3

    herald = result.tags[0]
    photons = herald.take(herald.origin == Origin.PHOTON)
    assert np.all(photons.pair_id >= 0)


def test_zero_duration_run(tmp_path):
    manifest = simulate(hbt_run(duration_s=0.0), tmp_path)

    for channel in manifest.channels:
        entry = manifest.tag_file(channel)
        assert entry.records == 0
        assert (tmp_path / entry.path).stat().st_size == 0
    assert (tmp_path / MANIFEST_NAME).is_file()


def test_csv_output(tmp_path):
    run = hbt_run(outputs=OutputConfig(tag_format="csv", include_truth=True))
    manifest = simulate(run, tmp_path)
    result = asyncio.run(ExperimentRunner().simulate_streams(run))

    assert manifest.tag_file(1).path == "channel_1.csv"
    stored = read_tags_csv(tmp_path / "channel_1.csv")
    np.testing.assert_array_equal(stored.time_ps, result.tags[1].time_ps)
    np.testing.assert_array_equal(stored.pair_id, result.tags[1].pair_id)


@pytest.mark.parametrize("tag_format", ["binary", "csv"])
def test_directory_analysis_equals_stream_analysis(tmp_path, tag_format):
    run = hbt_run(outputs=OutputConfig(tag_format=tag_format))
    simulate(run, tmp_path)
    result = asyncio.run(ExperimentRunner().simulate_streams(run))

    expected, _ = analyze_streams(run, result.tags)
    before = sorted(p.name for p in tmp_path.iterdir())
    from_files, histograms = asyncio.run(analyze_directory(run, tmp_path, RunnerConfig(block_records=1_000)))

    assert sorted(p.name for p in tmp_path.iterdir()) == before
    assert from_files.eta_h_s.value == pytest.approx(expected.eta_h_s.value)
    assert from_files.purity.value == pytest.approx(expected.purity.value)
    assert from_files.g2_h_0.value == pytest.approx(expected.g2_h_0.value)
    assert from_files.eta_d_s == pytest.approx(0.9)

    written = write_metrics_outputs(tmp_path / "analysis", from_files, histograms)
    assert {p.name for p in written} == {"metrics.json", "cross_correlation.csv", "auto_correlation.csv"}
    assert json.loads(written[0].read_text())["eta_h_s"]["value"] == pytest.approx(from_files.eta_h_s.value)


def test_analysis_needs_a_manifest(tmp_path):
    with pytest.raises(DataFormatError):
        asyncio.run(analyze_directory(hbt_run(), tmp_path))


def test_characterize_a_simulated_spad(tmp_path):
    run = characterization_run_config(duration_s=0.2, seed=4)
    simulate(run, tmp_path)

    result, hist = characterize_file(tmp_path / "channel_0.tags", run)
    assert result.n_trigger == 20_000
    assert hist.n_bins == 10_000
    assert result.pde_direct.value == pytest.approx(0.155, abs=5 * result.pde_direct.stderr)
    assert [p.holdoff_ps for p in result.app_curve] == run.characterization.holdoffs_ps

    dark_only, _ = characterize_file(tmp_path / "channel_0.tags", run, laser_off=True)
    assert dark_only.pde_direct is None

    written = write_characterization_outputs(tmp_path / "report", result, hist)
    assert {p.name for p in written} == {
        "characterization.json", "period_histogram.csv", "period_histogram.json", "afterpulse_curve.csv",
    }

    with pytest.raises(ConfigurationError):
        characterize_file(tmp_path / "channel_0.tags", hbt_run())


def test_power_sweep(tmp_path):
    run = hbt_run(sweeps=SweepConfig(power=PowerSweepConfig(reference_power_uw=100.0, powers_uw=[70.0, 100.0])))
    rows = asyncio.run(ExperimentRunner().power_sweep(run))

    assert [r.power_uw for r in rows] == [70.0, 100.0]
    assert rows[0].pgr_hz == pytest.approx(0.49e5)
    assert rows[1].pgr_hz == pytest.approx(1e5)
    assert rows[0].r_h_s_hz < rows[1].r_h_s_hz

    table = write_table(tmp_path / "sweep.csv", rows)
    assert table.read_text().splitlines()[0].startswith("power_uw,pgr_hz,eta_h_s")

    with pytest.raises(ConfigurationError):
        asyncio.run(ExperimentRunner().power_sweep(hbt_run()))


def test_operating_point_sweep():
    run = characterization_run_config(duration_s=0.05, seed=2)
    rows = asyncio.run(ExperimentRunner().operating_point_sweep(run))
    assert [r.injected_pde for r in rows] == [p.pde for p in run.sweeps.operating_points]

    with pytest.raises(ConfigurationError):
        asyncio.run(ExperimentRunner().operating_point_sweep(hbt_run()))


def test_bundle_report(tmp_path):
    first, second = tmp_path / "analysis", tmp_path / "characterization"
    first.mkdir()
    second.mkdir()
    (first / "metrics.json").write_text("{}")
    (second / "afterpulse_curve.csv").write_text("holdoff_ps,p_ap\n")
    (second / "channel_0.tags").write_bytes(b"")

    index_path = asyncio.run(bundle_report([first, second], tmp_path / "report"))
    index = yaml.safe_load(index_path.read_text())

    assert [entry["file"] for entry in index] == ["analysis__metrics.json", "characterization__afterpulse_curve.csv"]
    assert (tmp_path / "report" / "analysis__metrics.json").read_text() == "{}"

    with pytest.raises(DataFormatError):
        asyncio.run(bundle_report([tmp_path / "missing"], tmp_path / "report"))
