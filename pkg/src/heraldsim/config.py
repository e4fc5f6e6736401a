"""Run configuration: one YAML file describing source, detectors, wiring and outputs.

Every physical quantity carries its unit in the key name (`*_ps`, `*_hz`,
`*_s`, `*_uw`).
"""

import hashlib
import logging
import os
from pathlib import Path
from typing import Annotated, Literal

import aiofiles
import psutil
import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from .analysis.metrics import AnalysisSettings
from .detector import GateClock, SnspdParams, SpadOperatingPoint, SpadParams
from .errors import ConfigurationError
from .source import PulsedSourceSpec, SourceParams, pgr_at_pump_power


logger = logging.getLogger(__name__)


OUTPUT_DIR_ENV = "HERALDSIM_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "heraldsim-output"

DetectorConfig = Annotated[SpadParams | SnspdParams, Field(discriminator="kind")]


class RouteConfig(BaseModel):
    arm: Literal["signal", "idler"]
    channels: list[int] = Field(min_length=1)
    split_ratios: list[float] | None = None
    """Splitter ratios over `channels`; None splits evenly."""

    transmission: float = Field(default=1.0, ge=0.0, le=1.0)
    """Path transmission after the source coupling (filters, splices, fibre)."""

    @property
    def ratios(self) -> list[float]:
        if self.split_ratios is None:
            return [1.0 / len(self.channels)] * len(self.channels)
        return self.split_ratios

    @model_validator(mode="after")
    def _check_ratios(self):
        if self.split_ratios is not None:
            if len(self.split_ratios) != len(self.channels):
                raise ValueError(f"{len(self.split_ratios)} split ratios for {len(self.channels)} channels")
            if any(r < 0 for r in self.split_ratios) or abs(sum(self.split_ratios) - 1.0) > 1e-9:
                raise ValueError(f"Split ratios must be non-negative and sum to 1, got {self.split_ratios}")
        return self


class LaserRouteConfig(PulsedSourceSpec):
    channel: int
    """Detector channel illuminated by the laser."""


class TopologyConfig(BaseModel):
    routes: list[RouteConfig] = []

    herald_channel: int | None = None
    signal_channel: int | None = None
    """Heralded-arm detector used for the coincidence rate; None uses the merged HBT outputs."""

    hbt_channels: tuple[int, int] | None = None


class OutputConfig(BaseModel):
    directory: Path | None = None
    """None falls back to $HERALDSIM_OUTPUT_DIR, then ./heraldsim-output."""

    tag_format: Literal["binary", "csv"] = "binary"
    include_truth: bool = False
    """Keep origin labels and pair ids in the tag files."""

    write_arrivals: bool = False
    """Also dump the photon arrivals at every detector input."""

    def resolve_directory(self) -> Path:
        if self.directory is not None:
            return self.directory
        return Path(os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR))


class CharacterizationSettings(BaseModel):
    holdoffs_ps: list[int] = [100_000, 1_000_000, 5_000_000]
    far_window: tuple[int, int] | None = None
    """Half-open bin range of the dark-count window; None takes the last quarter of the period."""


class PowerSweepConfig(BaseModel):
    reference_power_uw: float = Field(gt=0)
    """Pump power at which `source.pair_generation_rate_hz` holds."""

    powers_uw: list[float] = Field(min_length=1)
    duration_s: float | None = Field(default=None, gt=0)
    """Per-point simulated time; None reuses the run duration."""


class SweepConfig(BaseModel):
    power: PowerSweepConfig | None = None
    operating_points: list[SpadOperatingPoint] | None = None
    """(PDE, P_DC) table for the characterization sweep of the laser channel."""


class RunConfig(BaseModel):
    source: SourceParams | None = None
    pulsed_laser: LaserRouteConfig | None = None

    detectors: dict[int, DetectorConfig]
    topology: TopologyConfig = TopologyConfig()

    duration_s: float = Field(ge=0)
    seed: int
    chunk_duration_s: float = Field(default=0.01, gt=0)

    outputs: OutputConfig = OutputConfig()
    analysis: AnalysisSettings = AnalysisSettings()
    characterization: CharacterizationSettings = CharacterizationSettings()
    sweeps: SweepConfig | None = None

    @model_validator(mode="after")
    def _check_wiring(self):
        if self.source is None and self.pulsed_laser is None:
            raise ValueError("A run needs a pair source, a pulsed laser or both")
        if self.topology.routes and self.source is None:
            raise ValueError("Routes are declared but there is no pair source")

        referenced = []
        for route in self.topology.routes:
            referenced += route.channels
        if self.pulsed_laser is not None:
            referenced.append(self.pulsed_laser.channel)
        for channel in (self.topology.herald_channel, self.topology.signal_channel):
            if channel is not None:
                referenced.append(channel)
        if self.topology.hbt_channels is not None:
            referenced += list(self.topology.hbt_channels)

        missing = sorted(set(referenced) - set(self.detectors))
        if missing:
            raise ValueError(f"Channels {missing} are referenced but not declared under `detectors`")

        routed = [c for route in self.topology.routes for c in route.channels]
        if len(routed) != len(set(routed)):
            raise ValueError("A channel may be fed by one route only")
        if self.pulsed_laser is not None and self.pulsed_laser.channel in routed:
            raise ValueError(f"Channel {self.pulsed_laser.channel} is fed by both the laser and a route")
        if self.pulsed_laser is not None and not isinstance(self.detectors[self.pulsed_laser.channel], SpadParams):
            raise ValueError("The pulsed laser characterizes a gated SPAD channel")
        return self

    def channel_transmission(self, channel: int) -> float:
        """Source-to-detector transmission of a routed channel, splitter included."""
        for route in self.topology.routes:
            if channel in route.channels:
                coupling = self.source.coupling_signal if route.arm == "signal" else self.source.coupling_idler
                return coupling * route.transmission * route.ratios[route.channels.index(channel)]
        raise ConfigurationError(f"Channel {channel} is not fed by the pair source")

    def signal_detection_efficiency(self) -> float:
        """η_d,s of the heralded-arm detection: one detector, or the
        ratio-weighted mean over the HBT outputs."""

        topology = self.topology
        if topology.signal_channel is not None:
            return self.detectors[topology.signal_channel].detection_efficiency
        if topology.hbt_channels is None:
            raise ConfigurationError("Neither `signal_channel` nor `hbt_channels` is set")

        weights = []
        for channel in topology.hbt_channels:
            for route in topology.routes:
                if channel in route.channels:
                    weights.append(route.ratios[route.channels.index(channel)])
        total = sum(weights) or 1.0
        return sum(w / total * self.detectors[c].detection_efficiency for w, c in zip(weights, topology.hbt_channels))

    def with_power(self, power_uw: float) -> "RunConfig":
        sweep = self.sweeps.power
        pgr = pgr_at_pump_power(self.source.pair_generation_rate_hz, sweep.reference_power_uw, power_uw)
        update = {"source": self.source.with_pair_rate(pgr)}
        if sweep.duration_s is not None:
            update["duration_s"] = sweep.duration_s
        return self.model_copy(update=update)


def default_worker_count() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


class RunnerConfig(BaseModel):
    max_workers: int = Field(default_factory=default_worker_count, ge=1)
    """Upper bound on detector channels simulated concurrently.
    Results do not depend on it."""

    block_records: int = Field(default=1 << 20, gt=0)
    """Records read per block when analysing tag files."""


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(config.model_dump_json().encode()).hexdigest()


def parse_run_config(text: str, origin: str = "<string>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{origin} is not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{origin} must hold a mapping at the top level")

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid run configuration {origin}:\n{e}") from e


async def load_run_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file {path} does not exist")
    async with aiofiles.open(path, mode="r") as f:
        return parse_run_config(await f.read(), origin=str(path))


def dump_run_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json", exclude_none=True), sort_keys=False)


async def save_run_config(config: RunConfig, path: Path):
    async with aiofiles.open(path, mode="w") as f:
        await f.write(dump_run_config(config))


REFERENCE_POWER_UW = 660.0
HERALDED_G2_POWER_UW = 235.0


def gated_spad(**overrides) -> SpadParams:
    """The gated SPAD at its chosen working point: PDE 15.5 %, P_DC 1.25e-5 per gate."""
    params = dict(
        pde=0.155,
        dark_prob_per_gate=1.25e-5,
        afterpulse_total_prob=0.1,
        trap_lifetime_ps=1_000_000.0,
        discriminator_deadtime_ps=10_000,
        jitter_fwhm_ps=30.0,
        gate=GateClock(frequency_hz=1e9, gate_width_ps=300),
    )
    params.update(overrides)
    return SpadParams(**params)


def reference_run_config(
    hbt_detector: Literal["snspd", "spad"] = "snspd",
    duration_s: float = 10.0,
    seed: int = 1,
    power_uw: float = REFERENCE_POWER_UW,
) -> RunConfig:
    """Heralded source with the idler heralded on the gated SPAD and the signal
    sent to an HBT pair.

    Path transmissions bring the effective couplings to about 0.08 (signal)
    and 0.11 (idler), and the 80 ns mode duration resolves the thermal
    bunching; see DESIGN.md for the calibration. `hbt_detector="spad"`
    replaces one HBT detector by a second SPAD.
    """

    source = SourceParams(
        pair_generation_rate_hz=pgr_at_pump_power(7.5e6, REFERENCE_POWER_UW, power_uw),
        bandwidth_signal_hz=52.8e6,
        bandwidth_idler_hz=59.8e6,
        mode_duration_ps=80_000,
        coupling_signal=0.44,
        coupling_idler=0.44,
    )
    detectors: dict[int, SpadParams | SnspdParams] = {0: gated_spad(), 1: SnspdParams()}
    if hbt_detector == "spad":
        detectors[2] = gated_spad()
        signal_transmission = 0.49
        software_deadtime = {2: 5_000_000}
    else:
        detectors[2] = SnspdParams()
        signal_transmission = 0.18
        software_deadtime = {}

    return RunConfig(
        source=source,
        detectors=detectors,
        topology=TopologyConfig(
            routes=[
                RouteConfig(arm="idler", channels=[0], transmission=0.25),
                RouteConfig(arm="signal", channels=[1, 2], split_ratios=[0.5, 0.5], transmission=signal_transmission),
            ],
            herald_channel=0,
            hbt_channels=(1, 2),
        ),
        duration_s=duration_s,
        seed=seed,
        analysis=AnalysisSettings(software_deadtime_ps=software_deadtime),
        sweeps=SweepConfig(power=PowerSweepConfig(
            reference_power_uw=power_uw,
            powers_uw=[235.0, 330.0, 440.0, 550.0, 660.0],
        )),
    )


def characterization_run_config(duration_s: float = 10.0, seed: int = 1) -> RunConfig:
    """100 kHz laser at μ = 0.5 into the gated SPAD; one gate per histogram bin."""

    return RunConfig(
        pulsed_laser=LaserRouteConfig(rep_rate_hz=100e3, mu=0.5, pulse_bin=100, channel=0),
        detectors={0: gated_spad()},
        duration_s=duration_s,
        seed=seed,
        sweeps=SweepConfig(operating_points=[
            SpadOperatingPoint(pde=0.05, dark_prob_per_gate=1e-6),
            SpadOperatingPoint(pde=0.10, dark_prob_per_gate=4e-6),
            SpadOperatingPoint(pde=0.155, dark_prob_per_gate=1.25e-5),
            SpadOperatingPoint(pde=0.20, dark_prob_per_gate=4e-5),
            SpadOperatingPoint(pde=0.30, dark_prob_per_gate=1e-4),
        ]),
    )


PRESETS = {
    "reference": reference_run_config,
    "reference-spad-hbt": lambda: reference_run_config(hbt_detector="spad"),
    "characterization": characterization_run_config,
}
