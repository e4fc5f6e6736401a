"""Single-histogram characterization of a gated detector under a pulsed laser.

One histogram folded over the laser period holds everything: the illuminated
bin gives the detection efficiency, the bins far from the pulse give the dark
count floor and the bins following the pulse give the afterpulse probability
for any hold-off chosen in post-processing.
"""

import logging
import math
from typing import NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel

from ..detector.spad import SpadOperatingPoint, SpadParams, detect_spad
from ..detector.utils import greedy_deadtime_mask, require_sorted
from ..errors import ConfigurationError, DomainError, EstimationError
from ..events import PS_PER_SECOND, TagStream
from ..source.pulsed_laser import PulsedSourceSpec, generate_pulse_stream
from .histogram import Histogram, build_period_histogram
from .utils import Estimate, ValueWithError, ratio_stderr


logger = logging.getLogger(__name__)


FAR_WINDOW_FRACTION = 0.25
"""Default dark-count window: this trailing fraction of the laser period."""


class DarkCountEstimate(NamedTuple):
    per_gate: float
    hz: float
    stderr: float
    """Standard error of `per_gate`."""


class AfterpulseEstimate(NamedTuple):
    value: float
    stderr: float
    retained_bins: int


class AfterpulsePoint(BaseModel):
    holdoff_ps: int
    p_ap: float
    stderr: float
    retained_bins: int


class CharacterizationResult(BaseModel):
    mu: float | None = None
    rep_rate_hz: float | None = None
    pulse_bin: int | None = None
    n_trigger: int
    integration_time_s: float

    pde_direct: ValueWithError | None = None
    pde_poissonian: ValueWithError | None = None
    dcr_per_gate: ValueWithError
    dcr_hz: float
    app_curve: list[AfterpulsePoint] = []


def mu_corrected(mu: float) -> float:
    """Probability of at least one photon in a Poissonian pulse of mean `mu`."""
    if not mu >= 0:
        raise DomainError(f"Mean photon number must be non-negative, got {mu}")
    return -math.expm1(-mu)


def _require_triggers(hist: Histogram):
    if hist.n_trigger <= 0:
        raise DomainError("The histogram holds no laser pulses (N_L = 0)")


def _require_pulse_bin(hist: Histogram, spec: PulsedSourceSpec) -> int:
    if not 0 <= spec.pulse_bin < hist.n_bins:
        raise ConfigurationError(f"Pulse bin {spec.pulse_bin} outside the {hist.n_bins} histogram bins")
    return spec.pulse_bin


def expected_dark_counts(hist: Histogram, dcr_per_gate: float, n_bins: int = 1) -> float:
    """Dark counts expected in `n_bins` bins over the whole integration."""
    return dcr_per_gate * hist.gates_per_bin * hist.n_trigger * n_bins


def pde_direct(hist: Histogram, spec: PulsedSourceSpec, dcr_per_gate: float) -> Estimate:
    """PDE = (C_L − expected darks in the illuminated bin) / (μ'·N_L)."""

    _require_triggers(hist)
    pulse_bin = _require_pulse_bin(hist, spec)

    c_l = float(hist.counts[pulse_bin])
    denominator = mu_corrected(spec.mu) * hist.n_trigger
    if denominator == 0:
        raise DomainError("μ = 0: the laser delivers no photons")

    value = (c_l - expected_dark_counts(hist, dcr_per_gate)) / denominator
    if value < 0:
        logger.warning(f"Raw PDE is negative ({value:.3g}); dark counts exceed the illuminated-bin counts")
    return Estimate(value, math.sqrt(c_l) / denominator)


def pde_poissonian(p_d: float, p_t: float, mu: float) -> float:
    """PDE = ln((1 − p_d)/(1 − p_t)) / μ."""

    if not mu > 0:
        raise DomainError(f"Mean photon number must be positive, got {mu}")
    if not 0 <= p_d <= p_t < 1:
        raise DomainError(f"Probabilities must satisfy 0 ≤ p_d ≤ p_t < 1, got p_d={p_d}, p_t={p_t}")
    return math.log((1.0 - p_d) / (1.0 - p_t)) / mu


def pde_poissonian_from_histogram(
    hist: Histogram,
    spec: PulsedSourceSpec,
    dcr_per_gate: float,
    holdoff_bins: int = 0,
) -> Estimate:
    """Applies `pde_poissonian` to the total count probability per laser pulse.

    p_t takes every count of the period outside the `holdoff_bins` bins
    discarded after the pulse, afterpulses included, and p_d the darks
    expected in those same bins. The afterpulse excess keeps this estimate at
    or above `pde_direct` once μ is large.
    """

    _require_triggers(hist)
    pulse_bin = _require_pulse_bin(hist, spec)
    keep = _retained_mask(hist, pulse_bin, holdoff_bins)

    c_t = float(hist.counts[keep].sum())
    p_t = c_t / hist.n_trigger
    p_d = min(expected_dark_counts(hist, dcr_per_gate, int(keep.sum())) / hist.n_trigger, p_t)
    value = pde_poissonian(p_d, p_t, spec.mu)
    return Estimate(value, math.sqrt(c_t) / hist.n_trigger / (spec.mu * (1.0 - p_t)))


def _poissonian_or_none(hist: Histogram, spec: PulsedSourceSpec, dcr_per_gate: float) -> Estimate | None:
    try:
        return pde_poissonian_from_histogram(hist, spec, dcr_per_gate)
    except DomainError as e:
        logger.warning(f"Poissonian PDE is undefined at this operating point: {e}")
        return None


def default_far_window(hist: Histogram, pulse_bin: int | None) -> tuple[int, int]:
    """The last quarter of the period as seen from the pulse (wrapping)."""
    n = hist.n_bins
    width = max(1, int(n * FAR_WINDOW_FRACTION))
    start = (pulse_bin or 0) + n - width
    return start, start + width


def estimate_dcr(
    hist: Histogram,
    far_window: tuple[int, int] | None = None,
    pulse_bin: int | None = None,
) -> DarkCountEstimate:
    """Dark count probability per gate from the mean counts per bin of a window.

    Window bounds are half-open bin indices and wrap modulo the period. With
    no window the whole histogram is used, which is the laser-off estimate.
    """

    _require_triggers(hist)

    if far_window is None:
        bins = np.arange(hist.n_bins)
    else:
        start, stop = far_window
        if stop <= start:
            raise ConfigurationError(f"Empty dark-count window [{start}, {stop})")
        if stop - start > hist.n_bins:
            raise ConfigurationError(f"Dark-count window [{start}, {stop}) is longer than the period")
        bins = np.arange(start, stop) % hist.n_bins
        if pulse_bin is not None and pulse_bin in bins:
            raise ConfigurationError(f"Dark-count window [{start}, {stop}) contains the illuminated bin {pulse_bin}")

    counts = float(hist.counts[bins].sum())
    exposure = bins.size * hist.n_trigger * hist.gates_per_bin
    per_gate = counts / exposure

    if hist.gate_frequency_hz is not None:
        hz = per_gate * hist.gate_frequency_hz
    else:
        hz = per_gate * PS_PER_SECOND / hist.bin_width_ps
    return DarkCountEstimate(per_gate, hz, math.sqrt(counts) / exposure)


def discarded_bins(hist: Histogram, pulse_bin: int, holdoff_bins: int) -> np.ndarray:
    return (pulse_bin + 1 + np.arange(holdoff_bins)) % hist.n_bins


def _retained_mask(hist: Histogram, pulse_bin: int, holdoff_bins: int) -> np.ndarray:
    if not 0 <= holdoff_bins < hist.n_bins - 1:
        raise ConfigurationError(f"Hold-off of {holdoff_bins} bins must lie in [0, {hist.n_bins - 1})")
    keep = np.ones(hist.n_bins, dtype=bool)
    keep[discarded_bins(hist, pulse_bin, holdoff_bins)] = False
    return keep


def app_postprocess(
    hist: Histogram,
    holdoff_bins: int,
    spec: PulsedSourceSpec,
    dcr_per_gate: float,
) -> AfterpulseEstimate:
    """Afterpulse probability for a hold-off applied in post-processing.

    The `holdoff_bins` bins following the illuminated bin are discarded; C_T
    sums the rest, and the dark subtraction uses the retained bins only:

        P_ap = (C_T − C_L − darks(retained bins)) / (C_L − darks(illuminated bin))
    """

    _require_triggers(hist)
    pulse_bin = _require_pulse_bin(hist, spec)

    keep = _retained_mask(hist, pulse_bin, holdoff_bins)
    retained = int(keep.sum()) - 1

    c_t = float(hist.counts[keep].sum())
    c_l = float(hist.counts[pulse_bin])

    numerator = c_t - c_l - expected_dark_counts(hist, dcr_per_gate, retained)
    denominator = c_l - expected_dark_counts(hist, dcr_per_gate)
    if denominator <= 0:
        raise EstimationError(
            f"Illuminated-bin counts ({c_l:.0f}) do not exceed the dark floor; afterpulsing cannot be estimated"
        )

    value = numerator / denominator
    return AfterpulseEstimate(value, ratio_stderr(numerator, c_t - c_l, denominator, c_l), retained)


def holdoff_bins_for(hist: Histogram, holdoff_ps: int) -> int:
    return int(round(holdoff_ps / hist.bin_width_ps))


def holdoff_sweep(
    hist: Histogram,
    holdoffs_ps: Sequence[int],
    spec: PulsedSourceSpec,
    dcr_per_gate: float,
) -> list[AfterpulsePoint]:
    curve = []
    for holdoff in sorted(holdoffs_ps):
        estimate = app_postprocess(hist, holdoff_bins_for(hist, holdoff), spec, dcr_per_gate)
        curve.append(AfterpulsePoint(
            holdoff_ps=holdoff,
            p_ap=estimate.value,
            stderr=estimate.stderr,
            retained_bins=estimate.retained_bins,
        ))
    return curve


def apply_software_deadtime(tags: TagStream, deadtime_ps: int) -> TagStream:
    """Greedy forward pass keeping a tag iff it is at least `deadtime_ps` after
    the previous kept tag."""

    require_sorted(tags.time_ps, "tag stream")
    if deadtime_ps < 0:
        raise DomainError(f"Deadtime must be non-negative, got {deadtime_ps} ps")
    keep, _, _ = greedy_deadtime_mask(tags.time_ps, deadtime_ps)
    return tags.take(keep)


def characterize_histogram(
    hist: Histogram,
    spec: PulsedSourceSpec | None,
    holdoffs_ps: Sequence[int] = (),
    far_window: tuple[int, int] | None = None,
) -> CharacterizationResult:
    """Full report from one histogram; `spec=None` is a laser-off (dark-only) run."""

    if spec is None:
        dcr = estimate_dcr(hist, far_window)
        return CharacterizationResult(
            n_trigger=hist.n_trigger,
            integration_time_s=hist.integration_time_s,
            dcr_per_gate=ValueWithError(value=dcr.per_gate, stderr=dcr.stderr),
            dcr_hz=dcr.hz,
        )

    window = far_window or default_far_window(hist, spec.pulse_bin)
    dcr = estimate_dcr(hist, window, pulse_bin=spec.pulse_bin)
    poissonian = _poissonian_or_none(hist, spec, dcr.per_gate)
    return CharacterizationResult(
        mu=spec.mu,
        rep_rate_hz=spec.rep_rate_hz,
        pulse_bin=spec.pulse_bin,
        n_trigger=hist.n_trigger,
        integration_time_s=hist.integration_time_s,
        pde_direct=ValueWithError.of(pde_direct(hist, spec, dcr.per_gate)),
        pde_poissonian=ValueWithError.of(poissonian) if poissonian is not None else None,
        dcr_per_gate=ValueWithError(value=dcr.per_gate, stderr=dcr.stderr),
        dcr_hz=dcr.hz,
        app_curve=holdoff_sweep(hist, holdoffs_ps, spec, dcr.per_gate),
    )


def simulate_characterization_histogram(
    params: SpadParams,
    spec: PulsedSourceSpec,
    duration_s: float,
    seed: int,
    channel: int = 0,
) -> Histogram:
    """Pulsed laser into a gated SPAD, folded into one-gate-per-bin bins."""

    gate = params.gate
    photons = generate_pulse_stream(spec, gate, duration_s, seed)
    tags = detect_spad(photons, params, duration_s, seed, channel=channel)
    hist = build_period_histogram(
        tags,
        period_ps=spec.period_ps,
        bin_width_ps=gate.period_ps,
        integration_time_s=duration_s,
        origin_ps=gate.phase_offset_ps,
        gate_frequency_hz=gate.frequency_hz,
    )
    return hist.with_metadata(mu=spec.mu, rep_rate_hz=spec.rep_rate_hz, pulse_bin=spec.pulse_bin)


class OperatingPointRow(BaseModel):
    injected_pde: float
    injected_dark_prob_per_gate: float
    pde_direct: float
    pde_direct_stderr: float
    pde_poissonian: float | None = None
    pde_poissonian_stderr: float | None = None
    dcr_per_gate: float
    dcr_per_gate_stderr: float


def characterize_operating_points(
    points: Sequence[SpadOperatingPoint],
    base_params: SpadParams,
    spec: PulsedSourceSpec,
    duration_s: float,
    seed: int,
) -> list[OperatingPointRow]:
    """PDE against dark probability per gate, with both PDE estimators, over a
    table of operating points. Point i is simulated with seed + i."""

    rows = []
    for i, point in enumerate(points):
        params = base_params.at_operating_point(point)
        hist = simulate_characterization_histogram(params, spec, duration_s, seed + i)
        dcr = estimate_dcr(hist, default_far_window(hist, spec.pulse_bin), pulse_bin=spec.pulse_bin)
        direct = pde_direct(hist, spec, dcr.per_gate)
        poissonian = _poissonian_or_none(hist, spec, dcr.per_gate)
        logger.info(
            f"Operating point {i}: PDE {point.pde:.3f} → direct {direct.value:.4f}, "
            f"poissonian {poissonian.value if poissonian is not None else float('nan'):.4f}, "
            f"P_DC {dcr.per_gate:.3g}"
        )
        rows.append(OperatingPointRow(
            injected_pde=point.pde,
            injected_dark_prob_per_gate=point.dark_prob_per_gate,
            pde_direct=direct.value,
            pde_direct_stderr=direct.stderr,
            pde_poissonian=poissonian.value if poissonian is not None else None,
            pde_poissonian_stderr=poissonian.stderr if poissonian is not None else None,
            dcr_per_gate=dcr.per_gate,
            dcr_per_gate_stderr=dcr.stderr,
        ))
    return rows
