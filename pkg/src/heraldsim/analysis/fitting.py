import logging
import math
import warnings

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import OptimizeWarning, curve_fit

from ..errors import FitError
from .correlation import CorrelationHistogram


logger = logging.getLogger(__name__)


MIN_BIN_COUNTS = 10
"""Bins with fewer raw counts are left out of the fit."""

MIN_SPAN_DECAYS = 10.0


class CoherenceFit(BaseModel):
    tau_c_signal_ps: float = Field(gt=0)
    """Left-flank (τ < 0) decay constant."""

    tau_c_idler_ps: float = Field(gt=0)
    """Right-flank (τ > 0) decay constant."""

    peak_amplitude: float
    baseline: float
    fit_residual: float
    """RMS residual over the fitted bins, relative to the baseline."""

    g2_zero: float
    g2_zero_stderr: float
    tau_c_signal_stderr_ps: float
    tau_c_idler_stderr_ps: float
    fitted_bins: int


def two_sided_exponential(tau, baseline, amplitude, tau_left, tau_right):
    decay = np.where(tau < 0, np.exp(tau / tau_left), np.exp(-tau / tau_right))
    return baseline + amplitude * decay


def _decay_guess(tau: np.ndarray, excess: np.ndarray, amplitude: float, default: float) -> float:
    """|τ| of the first bin whose excess has fallen below amplitude/e."""
    if amplitude <= 0:
        return default
    below = np.flatnonzero(excess < amplitude / math.e)
    if below.size == 0:
        return default
    return max(float(abs(tau[below[0]])), 1.0)


def fit_g2_peak(hist: CorrelationHistogram) -> CoherenceFit:
    """Least-squares fit of baseline + A·exp(−|τ|/τ_side) with independent
    left and right decay constants.

    Unweighted, over the bins holding at least `MIN_BIN_COUNTS` raw counts.
    Fits the g² values when the histogram is normalized, the counts otherwise.
    """

    tau_all = hist.tau_ps().astype(np.float64)
    values_all = hist.values()

    mask = hist.counts >= MIN_BIN_COUNTS
    excluded = int(hist.n_bins - mask.sum())
    if excluded:
        logger.warning(f"{excluded} of {hist.n_bins} bins hold fewer than {MIN_BIN_COUNTS} counts and are excluded from the fit")

    tau, values = tau_all[mask], values_all[mask]
    if tau.size < 5:
        raise FitError(
            f"Only {tau.size} bins hold at least {MIN_BIN_COUNTS} counts; too few to fit",
            diagnostics={"fitted_bins": int(tau.size), "total_counts": hist.total},
        )

    outer = np.abs(tau) > hist.tau_range_ps / 2
    baseline0 = float(np.median(values[outer])) if outer.any() else float(values.min())
    center = int(np.argmin(np.abs(tau)))
    amplitude0 = float(values[center]) - baseline0
    default_tau = max(hist.tau_range_ps / 10.0, 1.0)

    left, right = tau <= 0, tau >= 0
    tau_left0 = _decay_guess(tau[left][::-1], values[left][::-1] - baseline0, amplitude0, default_tau)
    tau_right0 = _decay_guess(tau[right], values[right] - baseline0, amplitude0, default_tau)

    p0 = [baseline0, amplitude0, tau_left0, tau_right0]
    upper_tau = 10.0 * max(hist.tau_range_ps, hist.bin_width_ps)
    bounds = ([0.0, -np.inf, 1.0, 1.0], [np.inf, np.inf, upper_tau, upper_tau])

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(two_sided_exponential, tau, values, p0=p0, bounds=bounds, maxfev=20000)
    except (RuntimeError, ValueError) as e:
        raise FitError(
            f"Correlation peak fit did not converge: {e}",
            diagnostics={"initial_guess": p0, "fitted_bins": int(tau.size)},
        ) from e

    baseline, amplitude, tau_left, tau_right = (float(x) for x in popt)
    errors = np.sqrt(np.clip(np.diag(pcov), 0, np.inf))
    g2_zero_var = pcov[0, 0] + pcov[1, 1] + 2 * pcov[0, 1]

    residual = values - two_sided_exponential(tau, *popt)
    rms = float(np.sqrt(np.mean(residual**2)))

    if hist.tau_range_ps < MIN_SPAN_DECAYS * max(tau_left, tau_right) and abs(amplitude) > 0:
        logger.warning(
            f"Histogram span ±{hist.tau_range_ps} ps covers fewer than {MIN_SPAN_DECAYS:.0f} decay constants "
            f"({tau_left:.0f} ps, {tau_right:.0f} ps); the baseline may be biased"
        )

    return CoherenceFit(
        tau_c_signal_ps=tau_left,
        tau_c_idler_ps=tau_right,
        peak_amplitude=amplitude,
        baseline=baseline,
        fit_residual=rms / baseline if baseline > 0 else rms,
        g2_zero=baseline + amplitude,
        g2_zero_stderr=float(np.sqrt(g2_zero_var)) if np.isfinite(g2_zero_var) and g2_zero_var >= 0 else math.inf,
        tau_c_signal_stderr_ps=float(errors[2]),
        tau_c_idler_stderr_ps=float(errors[3]),
        fitted_bins=int(tau.size),
    )
