"""Start-stop-free timetag correlators and the heralded source figures built on them.

Correlation bins are centered on multiples of the bin width Δ: bin k holds the
delays τ = t_b − t_a with round-half-away(|τ|/Δ) = |k| and sign(τ) = sign(k).
With K = round(tau_range/Δ) the histogram spans the open interval
(−(K+½)Δ, (K+½)Δ): a delay of exactly ±(K+½)Δ falls in neither end bin.

For the signal-idler cross-correlation the convention is a = idler (herald),
b = signal, so the right flank decays with the idler coherence time and the
left flank with the signal coherence time.
"""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Literal, NamedTuple

import numpy as np
import pandas as pd
from numba import njit

from ..detector.utils import require_sorted
from ..errors import ConfigurationError, DomainError, EstimationError
from ..events import PS_PER_SECOND, TagStream
from ..tagfile import TagFile
from .histogram import Histogram
from .utils import Estimate

if TYPE_CHECKING:
    from .fitting import CoherenceFit


logger = logging.getLogger(__name__)


@njit(cache=True)
def _correlate(a, b, delta, k_max, counts):
    limit = (2 * k_max + 1) * delta
    n_b = b.size
    lo = 0
    for i in range(a.size):
        ta = a[i]
        while lo < n_b and 2 * (ta - b[lo]) >= limit:
            lo += 1
        j = lo
        while j < n_b:
            tau = b[j] - ta
            if 2 * tau >= limit:
                break
            mag = (2 * abs(tau) + delta) // (2 * delta)
            if tau < 0:
                counts[k_max - mag] += 1
            else:
                counts[k_max + mag] += 1
            j += 1


@njit(cache=True)
def _window_counts(heralds, tags, window):
    """Tags within the closed window 2|t − h| ≤ window around every herald."""
    counts = np.zeros(heralds.size, dtype=np.int64)
    n = tags.size
    lo = 0
    for i in range(heralds.size):
        h = heralds[i]
        while lo < n and 2 * (h - tags[lo]) > window:
            lo += 1
        j = lo
        while j < n and 2 * (tags[j] - h) <= window:
            j += 1
        counts[i] = j - lo
    return counts


@dataclass(frozen=True)
class CorrelationHistogram(Histogram):
    """Delay histogram between two channels.

    `counts` always holds the raw pair counts; `g2` is filled by
    `g2_normalize`. `n_trigger` is the number of start (a) tags.
    """

    channel_a: int = 0
    channel_b: int = 0
    tau_range_ps: int = 0
    n_stop: int = 0
    normalization: Literal["raw_counts", "g2_normalized"] = "raw_counts"
    g2: np.ndarray | None = None
    accidental_level: float | None = None

    @property
    def k_max(self) -> int:
        return (self.n_bins - 1) // 2

    def tau_ps(self) -> np.ndarray:
        """Bin centers."""
        return np.arange(-self.k_max, self.k_max + 1, dtype=np.int64) * self.bin_width_ps

    def zero_bin(self) -> int:
        return self.k_max

    def values(self) -> np.ndarray:
        return self.g2 if self.g2 is not None else self.counts.astype(np.float64)


def _bin_layout(bin_width_ps: int, tau_range_ps: int) -> int:
    if bin_width_ps <= 0:
        raise DomainError(f"Bin width must be positive, got {bin_width_ps} ps")
    if tau_range_ps < 0:
        raise DomainError(f"Delay range must be non-negative, got {tau_range_ps} ps")
    return int(round(tau_range_ps / bin_width_ps))


def correlation_counts(a_ps: np.ndarray, b_ps: np.ndarray, bin_width_ps: int, k_max: int) -> np.ndarray:
    counts = np.zeros(2 * k_max + 1, dtype=np.int64)
    _correlate(
        np.ascontiguousarray(a_ps, dtype=np.int64),
        np.ascontiguousarray(b_ps, dtype=np.int64),
        np.int64(bin_width_ps),
        np.int64(k_max),
        counts,
    )
    return counts


def cross_correlation(
    a: TagStream,
    b: TagStream,
    bin_width_ps: int,
    tau_range_ps: int,
    integration_time_s: float = 0.0,
) -> CorrelationHistogram:
    """Counts every pair (t_a, t_b) by the bin of t_b − t_a, exactly."""

    require_sorted(a.time_ps, f"tag stream of channel {a.channel}")
    require_sorted(b.time_ps, f"tag stream of channel {b.channel}")
    k_max = _bin_layout(bin_width_ps, tau_range_ps)

    return CorrelationHistogram(
        bin_width_ps=bin_width_ps,
        origin_ps=-k_max * bin_width_ps - bin_width_ps // 2,
        counts=correlation_counts(a.time_ps, b.time_ps, bin_width_ps, k_max),
        integration_time_s=integration_time_s,
        n_trigger=len(a),
        channel_a=a.channel,
        channel_b=b.channel,
        tau_range_ps=k_max * bin_width_ps,
        n_stop=len(b),
    )


def cross_correlation_files(
    file_a: TagFile,
    file_b: TagFile,
    bin_width_ps: int,
    tau_range_ps: int,
    integration_time_s: float = 0.0,
    block_records: int = 1 << 20,
) -> CorrelationHistogram:
    """`cross_correlation` over two tag files in bounded memory.

    Start tags are read in blocks; for each block only the stop tags within
    the delay span of it are loaded. The result equals the in-memory one.
    """

    k_max = _bin_layout(bin_width_ps, tau_range_ps)
    reach = (k_max + 1) * bin_width_ps
    counts = np.zeros(2 * k_max + 1, dtype=np.int64)

    for block in file_a.iter_blocks(block_records):
        if not len(block):
            continue
        require_sorted(block.time_ps, f"tag file {file_a.path.name}")
        stops = file_b.read_range(int(block.time_ps[0]) - reach, int(block.time_ps[-1]) + reach)
        require_sorted(stops.time_ps, f"tag file {file_b.path.name}")
        counts += correlation_counts(block.time_ps, stops.time_ps, bin_width_ps, k_max)

    return CorrelationHistogram(
        bin_width_ps=bin_width_ps,
        origin_ps=-k_max * bin_width_ps - bin_width_ps // 2,
        counts=counts,
        integration_time_s=integration_time_s,
        n_trigger=len(file_a),
        channel_a=file_a.channel or 0,
        channel_b=file_b.channel or 0,
        tau_range_ps=k_max * bin_width_ps,
        n_stop=len(file_b),
    )


def singles_rate(tags: TagStream | int, integration_time_s: float) -> Estimate:
    if not integration_time_s > 0:
        raise DomainError(f"Integration time must be positive, got {integration_time_s} s")
    n = tags if isinstance(tags, int) else len(tags)
    return Estimate(n / integration_time_s, math.sqrt(n) / integration_time_s)


def g2_normalize(hist: CorrelationHistogram, rate_a: float, rate_b: float) -> CorrelationHistogram:
    """Divides every bin by the accidental level rate_a·rate_b·Δt·ΔT."""

    if not rate_a > 0 or not rate_b > 0:
        raise DomainError(f"Singles rates must be positive, got {rate_a} Hz and {rate_b} Hz")
    if not hist.integration_time_s > 0:
        raise DomainError("The histogram carries no integration time")

    accidental = rate_a * rate_b * (hist.bin_width_ps / PS_PER_SECOND) * hist.integration_time_s
    return replace(hist, normalization="g2_normalized", g2=hist.counts / accidental, accidental_level=accidental)


def g2_normalize_by_singles(hist: CorrelationHistogram) -> CorrelationHistogram:
    """`g2_normalize` with the singles rates taken from the histogram's own tag counts."""
    return g2_normalize(
        hist,
        singles_rate(hist.n_trigger, hist.integration_time_s).value,
        singles_rate(hist.n_stop, hist.integration_time_s).value,
    )


def g2_zero_delay(hist: CorrelationHistogram, half_width_bins: int = 0) -> Estimate:
    """Mean normalized g² over the bins |k| ≤ half_width_bins around τ = 0."""

    if hist.accidental_level is None:
        raise ConfigurationError("g² at zero delay needs a g2-normalized histogram")
    if not 0 <= half_width_bins <= hist.k_max:
        raise ConfigurationError(f"Half width of {half_width_bins} bins exceeds the histogram span")

    center = hist.zero_bin()
    counts = float(hist.counts[center - half_width_bins:center + half_width_bins + 1].sum())
    level = hist.accidental_level * (2 * half_width_bins + 1)
    return Estimate(counts / level, math.sqrt(counts) / level)


def coincidence_window_bins(hist: CorrelationHistogram, left_ps: float, right_ps: float) -> np.ndarray:
    """Bins whose centers lie in the open interval (−left, +right)."""
    if left_ps > hist.tau_range_ps or right_ps > hist.tau_range_ps:
        raise ConfigurationError(
            f"Coincidence window (−{left_ps:.0f}, +{right_ps:.0f}) ps exceeds the histogram span ±{hist.tau_range_ps} ps"
        )
    tau = hist.tau_ps()
    return np.flatnonzero((tau > -left_ps) & (tau < right_ps))


def coincidence_rate(hist: CorrelationHistogram, fit: "CoherenceFit", integration_time_s: float) -> Estimate:
    """R_s,i: raw idler-signal coincidences per second with delays inside
    (−τ_c,s, +τ_c,i), the window set by the fitted coherence times."""

    if not integration_time_s > 0:
        raise DomainError(f"Integration time must be positive, got {integration_time_s} s")
    bins = coincidence_window_bins(hist, fit.tau_c_signal_ps, fit.tau_c_idler_ps)
    n = float(hist.counts[bins].sum())
    return Estimate(n / integration_time_s, math.sqrt(n) / integration_time_s)


def heralding_efficiency(r_si: float, r_i: float, eta_d_s: float) -> float:
    """η_h,s = R_s,i / (R_i · η_d,s)."""
    if not r_i > 0:
        raise DomainError(f"Idler rate must be positive, got {r_i} Hz")
    if not 0 < eta_d_s <= 1:
        raise DomainError(f"Signal detector efficiency must lie in (0, 1], got {eta_d_s}")
    return r_si / (r_i * eta_d_s)


def heralded_rate(eta_h_s: float, r_i: float) -> float:
    return eta_h_s * r_i


class HeraldedCounts(NamedTuple):
    n_h: int
    n_ha: int
    n_hb: int
    n_hab: int

    def __add__(self, other: "HeraldedCounts") -> "HeraldedCounts":
        return HeraldedCounts(*(x + y for x, y in zip(self, other)))


class HeraldedG2(NamedTuple):
    value: float
    stderr: float
    counts: HeraldedCounts


def heralded_counts(heralds: np.ndarray, hbt_a: np.ndarray, hbt_b: np.ndarray, window_ps: int) -> HeraldedCounts:
    ca = _window_counts(np.ascontiguousarray(heralds, dtype=np.int64), np.ascontiguousarray(hbt_a, dtype=np.int64), np.int64(window_ps))
    cb = _window_counts(np.ascontiguousarray(heralds, dtype=np.int64), np.ascontiguousarray(hbt_b, dtype=np.int64), np.int64(window_ps))
    return HeraldedCounts(int(heralds.size), int(ca.sum()), int(cb.sum()), int((ca * cb).sum()))


def heralded_g2_from_counts(counts: HeraldedCounts) -> HeraldedG2:
    n_h, n_ha, n_hb, n_hab = counts
    if n_ha == 0 or n_hb == 0:
        raise EstimationError(f"No herald coincidences (N_ha={n_ha}, N_hb={n_hb}); g²_h(0) is undefined")

    scale = n_h / (n_ha * n_hb)
    value = n_hab * scale
    if n_hab > 0:
        stderr = value * math.sqrt(1.0 / n_hab + 1.0 / n_ha + 1.0 / n_hb)
    else:
        stderr = scale
    return HeraldedG2(value, stderr, counts)


def heralded_g2(heralds: TagStream, hbt_a: TagStream, hbt_b: TagStream, window_ps: int) -> HeraldedG2:
    """g²_h(0) = N_hab·N_h / (N_ha·N_hb).

    For every herald the tags of each HBT arm within ±window/2 are counted;
    N_ha and N_hb sum those counts and N_hab sums their products, which is
    the number of (herald, a, b) triples.
    """

    if not window_ps > 0:
        raise DomainError(f"Coincidence window must be positive, got {window_ps} ps")
    for tags in (heralds, hbt_a, hbt_b):
        require_sorted(tags.time_ps, f"tag stream of channel {tags.channel}")

    return heralded_g2_from_counts(heralded_counts(heralds.time_ps, hbt_a.time_ps, hbt_b.time_ps, window_ps))


def heralded_g2_files(
    heralds: TagFile,
    hbt_a: TagFile,
    hbt_b: TagFile,
    window_ps: int,
    block_records: int = 1 << 20,
) -> HeraldedG2:
    if not window_ps > 0:
        raise DomainError(f"Coincidence window must be positive, got {window_ps} ps")

    total = HeraldedCounts(0, 0, 0, 0)
    for block in heralds.iter_blocks(block_records):
        if not len(block):
            continue
        require_sorted(block.time_ps, f"tag file {heralds.path.name}")
        start, stop = int(block.time_ps[0]) - window_ps, int(block.time_ps[-1]) + window_ps + 1
        a = hbt_a.read_range(start, stop)
        b = hbt_b.read_range(start, stop)
        total = total + heralded_counts(block.time_ps, a.time_ps, b.time_ps, window_ps)

    return heralded_g2_from_counts(total)


def save_correlation(hist: CorrelationHistogram, csv_path: Path):
    frame = pd.DataFrame({"tau_ps": hist.tau_ps(), "counts": hist.counts})
    if hist.g2 is not None:
        frame["g2"] = hist.g2
    frame.to_csv(csv_path, index=False)
