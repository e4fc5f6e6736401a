"""End-to-end runs at the calibrated preset. Slow: run with `pytest -m slow`.

Orderings and the reference intervals of the heralding figures are asserted.
At the lowest power g²_h(0) rests on a handful of triples, so its interval is
checked on the triple count. The SPAD-HBT purity interval only warns.
"""

import asyncio
import math
import warnings

import numpy as np
import pytest
from scipy.stats import poisson

from heraldsim.analysis import characterize_histogram, simulate_characterization_histogram
from heraldsim.config import PRESETS, gated_spad, reference_run_config
from heraldsim.experiment_runner import ExperimentRunner, analyze_streams
from heraldsim.source import PulsedSourceSpec


pytestmark = pytest.mark.slow


def soft_interval(name: str, value: float, low: float, high: float):
    if not low <= value <= high:
        warnings.warn(f"{name} = {value:.4g} outside the reference interval [{low}, {high}]")


def simulate(run) -> tuple:
    return run, asyncio.run(ExperimentRunner().simulate_streams(run)).tags


def analyze(simulated, **settings):
    run, tags = simulated
    if settings:
        run = run.model_copy(update={"analysis": run.analysis.model_copy(update=settings)})
    metrics, _ = analyze_streams(run, tags)
    return metrics


LADDER = [(235.0, 160.0), (440.0, 45.0), (660.0, 20.0)]
"""(pump power µW, integration s): about five heralded triples or more per point."""


@pytest.fixture(scope="module")
def snspd_hbt():
    return simulate(reference_run_config(duration_s=10.0, seed=101))


@pytest.fixture(scope="module")
def power_ladder():
    return [
        analyze(simulate(reference_run_config(duration_s=duration, seed=202 + i, power_uw=power)))
        for i, (power, duration) in enumerate(LADDER)
    ]


def test_thermal_purity(snspd_hbt):
    metrics = analyze(snspd_hbt)
    g2 = metrics.g2_auto_0
    assert 1.90 <= g2.value <= 2.05
    assert metrics.purity.value == pytest.approx(g2.value - 1.0)


def test_spad_in_the_hbt_dilutes_the_purity(snspd_hbt):
    spad_hbt = simulate(PRESETS["reference-spad-hbt"]().model_copy(update={"duration_s": 15.0, "seed": 303}))

    # ±10 bins of the 80 ns bunching peak
    reference = analyze(snspd_hbt, zero_delay_half_width_bins=10).purity
    diluted = analyze(spad_hbt, zero_delay_half_width_bins=10).purity

    sigma = math.hypot(diluted.stderr, reference.stderr)
    assert diluted.value < reference.value - 3 * sigma
    soft_interval("purity with a SPAD in the HBT", analyze(spad_hbt).purity.value, 0.63, 0.83)


def triple_count_bounds(counts, low: float, high: float, tail: float = 0.00135) -> tuple[float, float]:
    """Triple counts a g²_h(0) in [low, high] produces with 3σ-equivalent Poisson tails."""
    n_h, n_ha, n_hb, _ = counts
    per_unit_g2 = n_ha * n_hb / n_h
    return poisson.ppf(tail, low * per_unit_g2), poisson.isf(tail, high * per_unit_g2)


def test_heralded_antibunching(power_ladder):
    g2 = [metrics.g2_h_0 for metrics in power_ladder]

    lowest_power = power_ladder[0].heralded_counts
    fewest, most = triple_count_bounds(lowest_power, 0.10, 0.30)
    assert fewest <= lowest_power.n_hab <= most
    assert all(g.value < 1.0 for g in g2)
    for a, b in zip(g2, g2[1:]):
        assert a.value <= b.value + 3 * math.hypot(a.stderr, b.stderr)
    assert g2[-1].value > g2[0].value


def test_heralding_figures(power_ladder):
    eta = [metrics.eta_h_s.value for metrics in power_ladder]
    assert eta == sorted(eta)
    assert all(0.0 < e < 1.0 for e in eta)

    full_power = power_ladder[-1]
    assert full_power.r_h_s.value > power_ladder[0].r_h_s.value
    assert 0.03 <= full_power.eta_h_s.value <= 0.05
    assert 1_500.0 <= full_power.r_h_s.value <= 2_500.0


def test_software_deadtime_keeps_afterpulsing_below_one_percent():
    spec = PulsedSourceSpec(rep_rate_hz=1e5, mu=0.5, pulse_bin=100)
    hist = simulate_characterization_histogram(gated_spad(), spec, duration_s=30.0, seed=404)

    point = characterize_histogram(hist, spec, holdoffs_ps=[5_000_000]).app_curve[0]
    assert point.p_ap < 0.01


def test_post_processed_holdoff_matches_a_physical_one():
    spec = PulsedSourceSpec(rep_rate_hz=1e5, mu=0.5, pulse_bin=100)
    holdoffs = [100_000, 1_000_000, 5_000_000]
    seeds = range(20)

    post = {t: [] for t in holdoffs}
    physical = {t: [] for t in holdoffs}
    for seed in seeds:
        hist = simulate_characterization_histogram(gated_spad(), spec, duration_s=0.5, seed=seed)
        for point in characterize_histogram(hist, spec, holdoffs_ps=holdoffs).app_curve:
            post[point.holdoff_ps].append(point.p_ap)
        for t in holdoffs:
            held = simulate_characterization_histogram(gated_spad(holdoff_time_ps=t), spec, duration_s=0.5, seed=1_000 + seed)
            physical[t].append(characterize_histogram(held, spec, holdoffs_ps=[t]).app_curve[0].p_ap)

    for t in holdoffs:
        a, b = np.asarray(post[t]), np.asarray(physical[t])
        sigma = math.hypot(a.std(ddof=1), b.std(ddof=1)) / math.sqrt(len(seeds))
        assert a.mean() == pytest.approx(b.mean(), abs=3 * sigma + 1e-4)
