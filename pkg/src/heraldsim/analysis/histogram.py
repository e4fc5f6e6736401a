"""Period-folded count histograms and their CSV + JSON sidecar format."""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from ..errors import ConfigurationError, DataFormatError, DomainError
from ..events import PS_PER_SECOND, TagStream


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Histogram:
    bin_width_ps: int
    origin_ps: int
    counts: np.ndarray
    integration_time_s: float
    n_trigger: int
    """Number of laser pulses (or heralds) folded into the histogram."""

    gate_frequency_hz: float | None = None
    mu: float | None = None
    rep_rate_hz: float | None = None
    pulse_bin: int | None = None

    def __post_init__(self):
        if self.bin_width_ps <= 0:
            raise DomainError(f"Bin width must be positive, got {self.bin_width_ps} ps")
        object.__setattr__(self, "counts", np.ascontiguousarray(self.counts, dtype=np.int64))

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def span_ps(self) -> int:
        return self.n_bins * self.bin_width_ps

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def gates_per_bin(self) -> float:
        """Gate openings covered by one bin; one when no gate clock is attached."""
        if self.gate_frequency_hz is None:
            return 1.0
        return self.bin_width_ps * self.gate_frequency_hz / PS_PER_SECOND

    def bin_starts_ps(self) -> np.ndarray:
        return self.origin_ps + np.arange(self.n_bins, dtype=np.int64) * self.bin_width_ps

    def with_metadata(self, **updates) -> Self:
        return replace(self, **updates)

    def __add__(self, other: Self) -> Self:
        if (self.bin_width_ps, self.origin_ps, self.n_bins) != (other.bin_width_ps, other.origin_ps, other.n_bins):
            raise ConfigurationError("Only histograms with identical binning can be added")
        return replace(
            self,
            counts=self.counts + other.counts,
            integration_time_s=self.integration_time_s + other.integration_time_s,
            n_trigger=self.n_trigger + other.n_trigger,
        )


def period_bin_count(period_ps: int, bin_width_ps: int) -> int:
    if bin_width_ps <= 0 or period_ps <= 0:
        raise ConfigurationError(f"Period {period_ps} ps and bin width {bin_width_ps} ps must be positive")
    n_bins = int(round(period_ps / bin_width_ps))
    if n_bins == 0 or abs(n_bins * bin_width_ps - period_ps) > 1:
        raise ConfigurationError(f"Period {period_ps} ps is not a multiple of the bin width {bin_width_ps} ps")
    return n_bins


def fold_counts(times_ps: np.ndarray, period_ps: int, bin_width_ps: int, origin_ps: int = 0) -> np.ndarray:
    n_bins = period_bin_count(period_ps, bin_width_ps)
    phase = np.mod(np.asarray(times_ps, dtype=np.int64) - origin_ps, period_ps)
    index = np.minimum(phase // bin_width_ps, n_bins - 1)
    return np.bincount(index, minlength=n_bins).astype(np.int64)


def build_period_histogram(
    tags: TagStream,
    period_ps: int,
    bin_width_ps: int,
    integration_time_s: float,
    origin_ps: int = 0,
    gate_frequency_hz: float | None = None,
) -> Histogram:
    """Folds every tag modulo the laser period into bins of `bin_width_ps`.

    `n_trigger` is the number of periods in the integration time. Bin k
    starts at origin + k·bin_width.
    """

    if integration_time_s < 0:
        raise DomainError(f"Integration time must be non-negative, got {integration_time_s} s")

    counts = fold_counts(tags.time_ps, period_ps, bin_width_ps, origin_ps)
    return Histogram(
        bin_width_ps=bin_width_ps,
        origin_ps=origin_ps,
        counts=counts,
        integration_time_s=integration_time_s,
        n_trigger=int(round(integration_time_s * PS_PER_SECOND / period_ps)),
        gate_frequency_hz=gate_frequency_hz,
        rep_rate_hz=PS_PER_SECOND / period_ps,
    )


def build_period_histogram_streaming(
    blocks: Iterable[TagStream],
    period_ps: int,
    bin_width_ps: int,
    integration_time_s: float,
    origin_ps: int = 0,
    gate_frequency_hz: float | None = None,
) -> Histogram:
    """Same as `build_period_histogram`, accumulated over successive tag blocks."""

    counts = np.zeros(period_bin_count(period_ps, bin_width_ps), dtype=np.int64)
    for block in blocks:
        counts += fold_counts(block.time_ps, period_ps, bin_width_ps, origin_ps)
    return replace(
        build_period_histogram(TagStream.empty(0), period_ps, bin_width_ps, integration_time_s, origin_ps, gate_frequency_hz),
        counts=counts,
    )


class HistogramMetadata(BaseModel):
    bin_width_ps: int
    origin_ps: int = 0
    n_bins: int
    integration_time_s: float
    n_trigger: int
    gate_frequency_hz: float | None = None
    mu: float | None = None
    rep_rate_hz: float | None = None
    pulse_bin: int | None = None


def sidecar_path(csv_path: Path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_histogram(hist: Histogram, csv_path: Path):
    """Writes `bin_start_ps,count` rows plus a JSON sidecar with the metadata."""

    csv_path = Path(csv_path)
    pd.DataFrame({"bin_start_ps": hist.bin_starts_ps(), "count": hist.counts}).to_csv(csv_path, index=False)

    metadata = HistogramMetadata(
        bin_width_ps=hist.bin_width_ps,
        origin_ps=hist.origin_ps,
        n_bins=hist.n_bins,
        integration_time_s=hist.integration_time_s,
        n_trigger=hist.n_trigger,
        gate_frequency_hz=hist.gate_frequency_hz,
        mu=hist.mu,
        rep_rate_hz=hist.rep_rate_hz,
        pulse_bin=hist.pulse_bin,
    )
    sidecar_path(csv_path).write_text(metadata.model_dump_json(indent=2))


def load_histogram(csv_path: Path) -> Histogram:
    csv_path = Path(csv_path)
    sidecar = sidecar_path(csv_path)
    if not sidecar.is_file():
        raise DataFormatError(f"Histogram {csv_path} has no metadata sidecar {sidecar.name}")

    try:
        metadata = HistogramMetadata.model_validate(json.loads(sidecar.read_text()))
    except (json.JSONDecodeError, ValidationError) as e:
        raise DataFormatError(f"Invalid histogram metadata in {sidecar}: {e}") from e

    frame = pd.read_csv(csv_path)
    if list(frame.columns[:2]) != ["bin_start_ps", "count"]:
        raise DataFormatError(f"{csv_path} must have the columns bin_start_ps,count")
    if len(frame) != metadata.n_bins:
        raise DataFormatError(f"{csv_path} holds {len(frame)} bins, the sidecar declares {metadata.n_bins}")

    return Histogram(
        bin_width_ps=metadata.bin_width_ps,
        origin_ps=metadata.origin_ps,
        counts=frame["count"].to_numpy(np.int64),
        integration_time_s=metadata.integration_time_s,
        n_trigger=metadata.n_trigger,
        gate_frequency_hz=metadata.gate_frequency_hz,
        mu=metadata.mu,
        rep_rate_hz=metadata.rep_rate_hz,
        pulse_bin=metadata.pulse_bin,
    )
