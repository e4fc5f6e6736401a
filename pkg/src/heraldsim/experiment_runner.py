import asyncio
import hashlib
import importlib.metadata
import logging
import platform
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import AsyncIterator, Literal

import aiofiles
import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel

from . import __version__
from .analysis.characterization import CharacterizationResult, OperatingPointRow, characterize_histogram, characterize_operating_points
from .analysis.correlation import CorrelationHistogram, g2_normalize_by_singles, save_correlation
from .analysis.histogram import Histogram, build_period_histogram_streaming, save_histogram
from .analysis.metrics import HspsMetrics, SweepRow, compute_hsps_metrics, compute_hsps_metrics_files
from .config import RunConfig, RunnerConfig, config_hash, save_run_config
from .detector import SnspdDetector, SnspdParams, SpadDetector, SpadParams
from .detector.utils import greedy_deadtime_mask
from .errors import ConfigurationError, DataFormatError
from .events import ArrivalStream, Arm, Origin, TagStream, seconds_to_ps
from .source import ArrivalMerger, PairSource, apply_channel, generate_pulse_train, route_arrivals
from .source.channel import CHANNEL_STREAM, ROUTING_STREAM
from .source.pulsed_laser import LASER_STREAM
from .tagfile import (
    TagFile,
    append_records_async,
    encode_arrivals,
    encode_tags,
    read_tags_csv,
    write_arrivals_csv,
    write_tags_csv,
)


logger = logging.getLogger(__name__)


MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.yaml"

_ARM = {"signal": Arm.SIGNAL, "idler": Arm.IDLER}


class FileEntry(BaseModel):
    path: str
    """Relative to the manifest."""

    kind: Literal["tags", "arrivals", "config", "report"]
    channel: int | None = None
    records: int | None = None
    sha256: str


class Manifest(BaseModel):
    heraldsim_version: str
    config_hash: str
    seed: int
    duration_s: float
    tag_format: Literal["binary", "csv"]
    include_truth: bool
    channels: list[int]
    files: list[FileEntry]
    versions: dict[str, str]

    def tag_file(self, channel: int) -> FileEntry:
        for entry in self.files:
            if entry.kind == "tags" and entry.channel == channel:
                return entry
        raise DataFormatError(f"The manifest lists no tag file for channel {channel}")


def library_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for package in ("numpy", "numba", "scipy", "pandas", "pydantic", "pyyaml"):
        try:
            versions[package] = importlib.metadata.version(package)
        except importlib.metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


async def sha256_of(path: Path, block: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    async with aiofiles.open(path, mode="rb") as f:
        while chunk := await f.read(block):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class SimulationResult:
    tags: dict[int, TagStream]
    arrivals: dict[int, ArrivalStream] = field(default_factory=dict)


@dataclass
class _ChunkOutput:
    tags: dict[int, TagStream]
    arrivals: dict[int, ArrivalStream]


def _make_detector(params: SpadParams | SnspdParams, channel: int, seed: int) -> SpadDetector | SnspdDetector:
    if isinstance(params, SpadParams):
        return SpadDetector(params, channel, seed)
    return SnspdDetector(params, channel, seed)


def _chunk_grid(run: RunConfig) -> list[tuple[int, int]]:
    if run.source is not None:
        source = PairSource(run.source, run.duration_s, run.seed, chunk_duration_s=run.chunk_duration_s)
        return [source.chunk_bounds_ps(i) for i in range(source.n_chunks)]

    duration = seconds_to_ps(run.duration_s)
    step = seconds_to_ps(run.chunk_duration_s)
    return [(start, min(start + step, duration)) for start in range(0, duration, step)]


class ExperimentRunner:

    def __init__(self, config: RunnerConfig = RunnerConfig()):
        self._config = config

    @property
    def config(self) -> RunnerConfig:
        return self._config

    async def _detect_all(
        self,
        detectors: dict[int, SpadDetector | SnspdDetector],
        arrivals: dict[int, ArrivalStream],
        until_ps: dict[int, int],
        semaphore: asyncio.Semaphore,
    ) -> dict[int, TagStream]:
        """One chunk through every channel. Channels hold independent state
        and seeds, so running them concurrently does not change the result."""

        async def detect(channel: int) -> TagStream:
            async with semaphore:
                return await asyncio.to_thread(detectors[channel].process, arrivals[channel], until_ps[channel])

        channels = sorted(detectors)
        results = await asyncio.gather(*(detect(c) for c in channels))
        return dict(zip(channels, results))

    async def _run_chunks(self, run: RunConfig) -> AsyncIterator[_ChunkOutput]:
        """Source → channels → splitters → detectors, one chunk at a time."""

        semaphore = asyncio.Semaphore(self._config.max_workers)
        detectors = {c: _make_detector(p, c, run.seed) for c, p in run.detectors.items()}
        routes = run.topology.routes
        laser = run.pulsed_laser

        mergers = {c: ArrivalMerger(_ARM[route.arm]) for route in routes for c in route.channels}
        source = None
        lookback = 0
        if run.source is not None:
            source = PairSource(run.source, run.duration_s, run.seed, chunk_duration_s=run.chunk_duration_s)
            lookback = run.source.max_lookback_ps

        grid = _chunk_grid(run)
        duration_ps = seconds_to_ps(run.duration_s)
        next_pair_id = 0

        for chunk_index, (start_ps, stop_ps) in enumerate(grid):
            last = chunk_index == len(grid) - 1
            # The last push releases everything: no arrival reaches past the run
            release_ps = duration_ps if last else max(0, stop_ps - lookback)
            arrivals: dict[int, ArrivalStream] = {c: ArrivalStream.empty(Arm.SIGNAL) for c in detectors}
            until = {c: release_ps for c in detectors}

            if source is not None:
                pairs = source.generate_chunk(chunk_index, first_pair_id=next_pair_id)
                next_pair_id += len(pairs)

                for route_index, route in enumerate(routes):
                    arm = _ARM[route.arm]
                    coupling = run.source.coupling_signal if arm == Arm.SIGNAL else run.source.coupling_idler
                    thinned = apply_channel(
                        pairs, arm, coupling * route.transmission,
                        np.random.SeedSequence(run.seed, spawn_key=(CHANNEL_STREAM, route_index, chunk_index)),
                    )
                    outputs = route_arrivals(
                        thinned, route.ratios,
                        np.random.SeedSequence(run.seed, spawn_key=(ROUTING_STREAM, route_index, chunk_index)),
                    )
                    for channel, out in zip(route.channels, outputs):
                        arrivals[channel] = mergers[channel].push(out, release_ps)

            if laser is not None:
                gate = run.detectors[laser.channel].gate
                arrivals[laser.channel] = generate_pulse_train(
                    laser, gate, start_ps, stop_ps,
                    np.random.SeedSequence(run.seed, spawn_key=(LASER_STREAM, chunk_index)),
                )
                until[laser.channel] = stop_ps

            tags = await self._detect_all(detectors, arrivals, until, semaphore)
            logger.debug(
                f"Chunk {chunk_index + 1}/{len(grid)}: "
                + ", ".join(f"ch{c} {len(t)} tags" for c, t in tags.items())
            )
            yield _ChunkOutput(tags, arrivals)

        if not grid:
            # Zero-length run: still give every channel its (empty) stream
            yield _ChunkOutput({c: TagStream.empty(c) for c in detectors}, {})

    async def simulate_streams(self, run: RunConfig, keep_arrivals: bool = False) -> SimulationResult:
        """Runs the whole simulation in memory."""

        tag_parts: dict[int, list[TagStream]] = {c: [] for c in run.detectors}
        arrival_parts: dict[int, list[ArrivalStream]] = {c: [] for c in run.detectors}
        async for chunk in self._run_chunks(run):
            for channel, tags in chunk.tags.items():
                tag_parts[channel].append(tags)
            if keep_arrivals:
                for channel, arrivals in chunk.arrivals.items():
                    arrival_parts[channel].append(arrivals)

        result = SimulationResult({c: TagStream.concatenate(parts, c) for c, parts in tag_parts.items()})
        if keep_arrivals:
            for channel, parts in arrival_parts.items():
                if parts:
                    result.arrivals[channel] = ArrivalStream.from_arrays(
                        np.concatenate([p.time_ps for p in parts]),
                        np.concatenate([p.pair_id for p in parts]),
                        parts[-1].arm,
                        sort=False,
                    )
        return result

    async def simulate(self, run: RunConfig, output_dir: Path | None = None) -> Manifest:
        """Writes one tag file per channel, the resolved config and a manifest."""

        outputs = run.outputs
        directory = Path(output_dir) if output_dir is not None else outputs.resolve_directory()
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigurationError(f"Cannot create the output directory {directory}: {e}") from e

        suffix = ".tags" if outputs.tag_format == "binary" else ".csv"
        tag_paths = {c: directory / f"channel_{c}{suffix}" for c in run.detectors}
        arrival_paths = {c: directory / f"arrivals_{c}{suffix}" for c in run.detectors} if outputs.write_arrivals else {}
        for path in [*tag_paths.values(), *arrival_paths.values()]:
            path.unlink(missing_ok=True)

        counts = {c: 0 for c in run.detectors}
        origins = {c: np.zeros(len(Origin), dtype=np.int64) for c in run.detectors}
        csv_parts: dict[Path, list[pd.DataFrame]] = {}

        logger.info(f"Simulating {run.duration_s} s into {directory}")
        async for chunk in self._run_chunks(run):
            for channel, tags in chunk.tags.items():
                counts[channel] += len(tags)
                origins[channel] += np.bincount(tags.origin, minlength=len(Origin))[:len(Origin)]
                if outputs.tag_format == "binary":
                    await append_records_async(tag_paths[channel], encode_tags(tags, include_truth=outputs.include_truth))
                else:
                    write_tags_csv(tag_paths[channel], tags, include_truth=outputs.include_truth, append=True)
            for channel, arrivals in chunk.arrivals.items():
                if channel not in arrival_paths:
                    continue
                if outputs.tag_format == "binary":
                    await append_records_async(arrival_paths[channel], encode_arrivals(arrivals))
                else:
                    write_arrivals_csv(arrival_paths[channel], arrivals, append=True)

        for channel in run.detectors:
            by_origin = ", ".join(f"{o.name.lower()} {origins[channel][o]}" for o in Origin if origins[channel][o])
            logger.info(f"Channel {channel}: {counts[channel]} tags ({by_origin or 'none'})")
            for path in (tag_paths[channel], arrival_paths.get(channel)):
                if path is not None and not path.exists():
                    path.touch()

        config_path = directory / CONFIG_NAME
        await save_run_config(run, config_path)

        files = [FileEntry(path=CONFIG_NAME, kind="config", sha256=await sha256_of(config_path))]
        for channel in sorted(run.detectors):
            files.append(FileEntry(
                path=tag_paths[channel].name,
                kind="tags",
                channel=channel,
                records=counts[channel],
                sha256=await sha256_of(tag_paths[channel]),
            ))
            if channel in arrival_paths:
                files.append(FileEntry(
                    path=arrival_paths[channel].name,
                    kind="arrivals",
                    channel=channel,
                    sha256=await sha256_of(arrival_paths[channel]),
                ))

        manifest = Manifest(
            heraldsim_version=__version__,
            config_hash=config_hash(run),
            seed=run.seed,
            duration_s=run.duration_s,
            tag_format=outputs.tag_format,
            include_truth=outputs.include_truth,
            channels=sorted(run.detectors),
            files=files,
            versions=library_versions(),
        )
        async with aiofiles.open(directory / MANIFEST_NAME, mode="w") as f:
            await f.write(manifest.model_dump_json(indent=2))
        return manifest

    async def power_sweep(self, run: RunConfig) -> list[SweepRow]:
        """Heralding figures against pump power, PGR scaled quadratically.
        Point i runs with seed + i."""

        if run.sweeps is None or run.sweeps.power is None:
            raise ConfigurationError("The config declares no power sweep")

        rows = []
        for i, power in enumerate(run.sweeps.power.powers_uw):
            point = run.with_power(power).model_copy(update={"seed": run.seed + i})
            result = await self.simulate_streams(point)
            metrics, _ = analyze_streams(point, result.tags)
            logger.info(f"{power:.0f} µW: η_h,s = {metrics.eta_h_s.value:.4f}, R_h,s = {metrics.r_h_s.value:.0f} Hz")
            rows.append(SweepRow.from_metrics(power, point.source.pair_generation_rate_hz, metrics))
        return rows

    async def operating_point_sweep(self, run: RunConfig) -> list[OperatingPointRow]:
        if run.sweeps is None or not run.sweeps.operating_points or run.pulsed_laser is None:
            raise ConfigurationError("An operating-point sweep needs `pulsed_laser` and `sweeps.operating_points`")
        laser = run.pulsed_laser
        return await asyncio.to_thread(
            characterize_operating_points,
            run.sweeps.operating_points,
            run.detectors[laser.channel],
            laser,
            run.duration_s,
            run.seed,
        )


def _apply_deadtimes(run: RunConfig, tags: dict[int, TagStream]) -> dict[int, TagStream]:
    out = dict(tags)
    for channel, deadtime in run.analysis.software_deadtime_ps.items():
        if channel in out and deadtime > 0:
            keep, _, _ = greedy_deadtime_mask(out[channel].time_ps, deadtime)
            out[channel] = out[channel].take(keep)
    return out


def analyze_streams(run: RunConfig, tags: dict[int, TagStream]) -> tuple[HspsMetrics, dict[str, CorrelationHistogram]]:
    topology = run.topology
    if topology.herald_channel is None:
        raise ConfigurationError("Analysis needs `topology.herald_channel`")

    tags = _apply_deadtimes(run, tags)
    hbt = tuple(tags[c] for c in topology.hbt_channels) if topology.hbt_channels else None
    signal = tags[topology.signal_channel] if topology.signal_channel is not None else None
    return compute_hsps_metrics(
        tags[topology.herald_channel], signal, hbt,
        run.signal_detection_efficiency(), run.duration_s, run.analysis,
    )


def load_manifest(directory: Path) -> Manifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise DataFormatError(f"No {MANIFEST_NAME} in {directory}")
    try:
        return Manifest.model_validate_json(path.read_text())
    except ValueError as e:
        raise DataFormatError(f"Invalid manifest {path}: {e}") from e


async def _deadtime_filtered_file(source: TagFile, deadtime_ps: int, block_records: int, scratch: Path) -> TagFile:
    """Streams a software deadtime over a tag file into `scratch`; the run
    directory is left as written."""

    target = scratch / source.path.name
    last, has_last = 0, False
    async with aiofiles.open(target, mode="wb") as f:
        for block in source.iter_blocks(block_records):
            keep, last, has_last = greedy_deadtime_mask(block.time_ps, deadtime_ps, last, has_last)
            await f.write(encode_tags(block.take(keep), include_truth=True).tobytes())
    return TagFile(target)


async def analyze_directory(
    run: RunConfig,
    directory: Path,
    runner_config: RunnerConfig = RunnerConfig(),
) -> tuple[HspsMetrics, dict[str, CorrelationHistogram]]:
    """Analysis of a simulate output directory. Binary tag files are read
    block-wise; CSV tag files are loaded whole. Software deadtimes are applied
    to copies in a temporary directory."""

    directory = Path(directory)
    manifest = load_manifest(directory)
    topology = run.topology
    if topology.herald_channel is None:
        raise ConfigurationError("Analysis needs `topology.herald_channel`")

    channels = {topology.herald_channel}
    if topology.signal_channel is not None:
        channels.add(topology.signal_channel)
    if topology.hbt_channels is not None:
        channels.update(topology.hbt_channels)

    if manifest.tag_format == "csv":
        tags = {c: read_tags_csv(directory / manifest.tag_file(c).path) for c in channels}
        return await asyncio.to_thread(analyze_streams, run, tags)

    files = {c: TagFile(directory / manifest.tag_file(c).path) for c in channels}
    hbt_channels = topology.hbt_channels
    if hbt_channels is None and topology.signal_channel is None:
        raise ConfigurationError("Analysis needs `topology.signal_channel` or `topology.hbt_channels`")

    with tempfile.TemporaryDirectory(prefix="heraldsim-") as scratch:
        for channel, deadtime in run.analysis.software_deadtime_ps.items():
            if channel in files and deadtime > 0:
                files[channel] = await _deadtime_filtered_file(
                    files[channel], deadtime, runner_config.block_records, Path(scratch),
                )

        hbt = tuple(files[c] for c in hbt_channels) if hbt_channels else None
        signal = [files[topology.signal_channel]] if topology.signal_channel is not None else list(hbt or ())
        return await asyncio.to_thread(
            compute_hsps_metrics_files,
            files[topology.herald_channel], signal, hbt,
            run.signal_detection_efficiency(), run.duration_s, run.analysis, runner_config.block_records,
        )


def characterize_file(
    tags_path: Path,
    run: RunConfig,
    laser_off: bool = False,
    holdoffs_ps: list[int] | None = None,
    far_window: tuple[int, int] | None = None,
    runner_config: RunnerConfig = RunnerConfig(),
) -> tuple[CharacterizationResult, Histogram]:
    """Folds a SPAD tag file over the laser period and runs every estimator on it."""

    laser = run.pulsed_laser
    if laser is None:
        raise ConfigurationError("Characterization needs `pulsed_laser` (rep_rate_hz, mu, pulse_bin) in the config")
    params = run.detectors[laser.channel]
    gate = params.gate

    tags_path = Path(tags_path)
    if tags_path.suffix == ".csv":
        tags = read_tags_csv(tags_path)
        blocks = [tags]
    else:
        blocks = TagFile(tags_path).iter_blocks(runner_config.block_records)

    hist = build_period_histogram_streaming(
        blocks,
        period_ps=laser.period_ps,
        bin_width_ps=gate.period_ps,
        integration_time_s=run.duration_s,
        origin_ps=gate.phase_offset_ps,
        gate_frequency_hz=gate.frequency_hz,
    )

    if laser_off:
        return characterize_histogram(hist, None, far_window=far_window), hist

    hist = hist.with_metadata(mu=laser.mu, rep_rate_hz=laser.rep_rate_hz, pulse_bin=laser.pulse_bin)
    settings = run.characterization
    result = characterize_histogram(
        hist, laser,
        holdoffs_ps=settings.holdoffs_ps if holdoffs_ps is None else holdoffs_ps,
        far_window=far_window or settings.far_window,
    )
    return result, hist


def write_metrics_outputs(
    directory: Path,
    metrics: HspsMetrics,
    histograms: dict[str, CorrelationHistogram],
) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / "metrics.json"]
    written[0].write_text(metrics.model_dump_json(indent=2))
    for name, hist in histograms.items():
        path = directory / f"{name}_correlation.csv"
        if hist.g2 is None and hist.integration_time_s > 0 and hist.n_trigger and hist.n_stop:
            hist = g2_normalize_by_singles(hist)
        save_correlation(hist, path)
        written.append(path)
    return written


def write_characterization_outputs(directory: Path, result: CharacterizationResult, hist: Histogram) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    report = directory / "characterization.json"
    report.write_text(result.model_dump_json(indent=2))
    hist_path = directory / "period_histogram.csv"
    save_histogram(hist, hist_path)
    written = [report, hist_path, hist_path.with_suffix(".json")]
    if result.app_curve:
        curve = directory / "afterpulse_curve.csv"
        pd.DataFrame([p.model_dump() for p in result.app_curve]).to_csv(curve, index=False)
        written.append(curve)
    return written


def write_table(path: Path, rows: list[BaseModel]) -> Path:
    pd.DataFrame([r.model_dump() for r in rows]).to_csv(path, index=False)
    return path


async def bundle_report(sources: list[Path], target: Path) -> Path:
    """Copies the CSV and JSON outputs of earlier stages into one folder and
    writes an index listing every file with its content hash."""

    target = Path(target)
    target.mkdir(parents=True, exist_ok=True)
    index = []
    for source in sources:
        source = Path(source)
        if not source.is_dir():
            raise DataFormatError(f"Report source {source} is not a directory")
        for path in sorted([*source.glob("*.csv"), *source.glob("*.json")]):
            name = f"{source.name}__{path.name}"
            async with aiofiles.open(path, mode="rb") as src, aiofiles.open(target / name, mode="wb") as dst:
                await dst.write(await src.read())
            index.append({"file": name, "from": str(path), "sha256": await sha256_of(target / name)})

    async with aiofiles.open(target / "index.yaml", mode="w") as f:
        await f.write(yaml.dump(index, sort_keys=False) if index else "[]\n")
    logger.info(f"Bundled {len(index)} files into {target}")
    return target / "index.yaml"
