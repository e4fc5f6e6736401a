"""Heralded-source figures of merit from herald, signal and HBT tag streams."""

import logging
import math
from dataclasses import replace

import numpy as np
from pydantic import BaseModel, Field

from ..errors import ConfigurationError, FitError
from ..events import TagStream
from ..tagfile import TagFile
from .correlation import (
    CorrelationHistogram,
    HeraldedCounts,
    HeraldedG2,
    coincidence_rate,
    cross_correlation,
    cross_correlation_files,
    g2_normalize_by_singles,
    g2_zero_delay,
    heralded_g2,
    heralded_g2_files,
    heralded_rate,
    heralding_efficiency,
    singles_rate,
)
from .fitting import fit_g2_peak
from .utils import ValueWithError, product_stderr


logger = logging.getLogger(__name__)


class AnalysisSettings(BaseModel):
    cross_bin_width_ps: int = Field(default=100, gt=0)
    """Bin width of the herald-signal cross-correlation."""

    cross_tau_range_ps: int = Field(default=60_000, gt=0)

    auto_bin_width_ps: int = Field(default=1_000, gt=0)
    """Bin width of the HBT autocorrelation."""

    auto_tau_range_ps: int = Field(default=400_000, gt=0)

    zero_delay_half_width_bins: int = Field(default=0, ge=0)
    """g²_auto(0) averages the normalized bins |k| ≤ this around τ = 0."""

    heralded_window_ps: int = Field(default=3_000, gt=0)
    """Full width of the heralded-g² coincidence window (±window/2 around the herald)."""

    software_deadtime_ps: dict[int, int] = {}
    """Per-channel deadtime applied to the tags before analysis."""

    fit_autocorrelation: bool = True


class HspsMetrics(BaseModel):
    r_si: ValueWithError
    r_i: ValueWithError
    eta_h_s: ValueWithError
    r_h_s: ValueWithError
    g2_auto_0: ValueWithError | None = None
    g2_auto_0_fit: ValueWithError | None = None
    purity: ValueWithError | None = None
    g2_h_0: ValueWithError | None = None
    heralded_counts: HeraldedCounts | None = None
    """(N_h, N_ha, N_hb, N_hab) behind `g2_h_0`."""

    coincidence_window_ps: float
    """Full width τ_c,s + τ_c,i of the coincidence window."""

    tau_c_signal_ps: float
    tau_c_idler_ps: float
    eta_d_s: float
    integration_time_s: float


class SweepRow(BaseModel):
    power_uw: float
    pgr_hz: float
    eta_h_s: float
    eta_h_s_stderr: float
    r_h_s_hz: float
    r_h_s_stderr_hz: float
    g2_h_0: float | None = None
    g2_h_0_stderr: float | None = None

    @classmethod
    def from_metrics(cls, power_uw: float, pgr_hz: float, metrics: HspsMetrics) -> "SweepRow":
        return cls(
            power_uw=power_uw,
            pgr_hz=pgr_hz,
            eta_h_s=metrics.eta_h_s.value,
            eta_h_s_stderr=metrics.eta_h_s.stderr,
            r_h_s_hz=metrics.r_h_s.value,
            r_h_s_stderr_hz=metrics.r_h_s.stderr,
            g2_h_0=metrics.g2_h_0.value if metrics.g2_h_0 else None,
            g2_h_0_stderr=metrics.g2_h_0.stderr if metrics.g2_h_0 else None,
        )


def merge_tags(streams: list[TagStream], channel: int) -> TagStream:
    merged = TagStream.concatenate(streams, channel)
    return merged.take(np.argsort(merged.time_ps, kind="stable"))


def assemble_metrics(
    cross: CorrelationHistogram,
    auto: CorrelationHistogram | None,
    g2_h: HeraldedG2 | None,
    eta_d_s: float,
    settings: AnalysisSettings,
) -> HspsMetrics:
    """Figures of merit from the raw herald-signal histogram, the raw HBT
    histogram and the heralded triple counts.

    Singles come from the histograms' tag counts: the herald is the start
    channel of `cross`.
    """

    T = cross.integration_time_s
    cross = g2_normalize_by_singles(cross)
    fit = fit_g2_peak(cross)

    r_i = singles_rate(cross.n_trigger, T)
    r_si = coincidence_rate(cross, fit, T)
    eta = heralding_efficiency(r_si.value, r_i.value, eta_d_s)
    if r_si.value > 0:
        eta_err = eta * math.sqrt((r_si.stderr / r_si.value) ** 2 + (r_i.stderr / r_i.value) ** 2)
    else:
        eta_err = 1.0 / (T * r_i.value * eta_d_s)
    r_h_s = heralded_rate(eta, r_i.value)

    metrics = HspsMetrics(
        r_si=ValueWithError.of(r_si),
        r_i=ValueWithError.of(r_i),
        eta_h_s=ValueWithError(value=eta, stderr=eta_err),
        r_h_s=ValueWithError(value=r_h_s, stderr=product_stderr(eta, eta_err, r_i.value, r_i.stderr)),
        coincidence_window_ps=fit.tau_c_signal_ps + fit.tau_c_idler_ps,
        tau_c_signal_ps=fit.tau_c_signal_ps,
        tau_c_idler_ps=fit.tau_c_idler_ps,
        eta_d_s=eta_d_s,
        integration_time_s=T,
    )

    if auto is not None:
        auto = g2_normalize_by_singles(auto)
        g2_0 = g2_zero_delay(auto, settings.zero_delay_half_width_bins)
        metrics.g2_auto_0 = ValueWithError.of(g2_0)
        metrics.purity = ValueWithError(value=g2_0.value - 1.0, stderr=g2_0.stderr)

        if settings.fit_autocorrelation:
            try:
                auto_fit = fit_g2_peak(auto)
                metrics.g2_auto_0_fit = ValueWithError(value=auto_fit.g2_zero, stderr=auto_fit.g2_zero_stderr)
            except FitError as e:
                logger.warning(f"Autocorrelation fit failed, reporting the zero-delay bins only: {e}")

    if g2_h is not None:
        metrics.g2_h_0 = ValueWithError(value=g2_h.value, stderr=g2_h.stderr)
        metrics.heralded_counts = g2_h.counts

    logger.info(
        f"η_h,s = {metrics.eta_h_s.value:.4f} ± {metrics.eta_h_s.stderr:.4f}, R_h,s = {metrics.r_h_s.value:.1f} Hz"
        + (f", g²_auto(0) = {metrics.g2_auto_0.value:.3f}" if metrics.g2_auto_0 else "")
        + (f", g²_h(0) = {metrics.g2_h_0.value:.3f}" if metrics.g2_h_0 else "")
    )
    return metrics


def compute_hsps_metrics(
    herald: TagStream,
    signal: TagStream | None,
    hbt: tuple[TagStream, TagStream] | None,
    eta_d_s: float,
    integration_time_s: float,
    settings: AnalysisSettings = AnalysisSettings(),
) -> tuple[HspsMetrics, dict[str, CorrelationHistogram]]:
    """Every figure of merit of the source, plus the raw histograms behind them.

    `signal` is the heralded-arm detection stream; when None, the two HBT
    outputs merged stand for it. `eta_d_s` is the efficiency of whatever
    detects that stream.
    """

    if signal is None:
        if hbt is None:
            raise ConfigurationError("Either a signal stream or an HBT pair is required")
        signal = merge_tags(list(hbt), channel=hbt[0].channel)

    T = integration_time_s
    histograms = {
        "cross": cross_correlation(herald, signal, settings.cross_bin_width_ps, settings.cross_tau_range_ps, T),
    }
    g2_h = None
    if hbt is not None:
        histograms["auto"] = cross_correlation(hbt[0], hbt[1], settings.auto_bin_width_ps, settings.auto_tau_range_ps, T)
        g2_h = heralded_g2(herald, hbt[0], hbt[1], settings.heralded_window_ps)

    metrics = assemble_metrics(histograms["cross"], histograms.get("auto"), g2_h, eta_d_s, settings)
    return metrics, histograms


def compute_hsps_metrics_files(
    herald: TagFile,
    signal: list[TagFile],
    hbt: tuple[TagFile, TagFile] | None,
    eta_d_s: float,
    integration_time_s: float,
    settings: AnalysisSettings = AnalysisSettings(),
    block_records: int = 1 << 20,
) -> tuple[HspsMetrics, dict[str, CorrelationHistogram]]:
    """`compute_hsps_metrics` over tag files in bounded memory.

    The herald-signal histogram of several signal files is the sum of the
    per-file histograms, which equals correlating against their merge.
    """

    T = integration_time_s
    parts = [
        cross_correlation_files(herald, f, settings.cross_bin_width_ps, settings.cross_tau_range_ps, T, block_records)
        for f in signal
    ]
    cross = parts[0]
    for part in parts[1:]:
        cross = replace(cross, counts=cross.counts + part.counts, n_stop=cross.n_stop + part.n_stop)
    histograms = {"cross": cross}

    g2_h = None
    if hbt is not None:
        histograms["auto"] = cross_correlation_files(
            hbt[0], hbt[1], settings.auto_bin_width_ps, settings.auto_tau_range_ps, T, block_records
        )
        g2_h = heralded_g2_files(herald, hbt[0], hbt[1], settings.heralded_window_ps, block_records)

    metrics = assemble_metrics(histograms["cross"], histograms.get("auto"), g2_h, eta_d_s, settings)
    return metrics, histograms
