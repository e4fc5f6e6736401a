from .characterization import (
    AfterpulsePoint,
    CharacterizationResult,
    DarkCountEstimate,
    app_postprocess,
    apply_software_deadtime,
    characterize_histogram,
    characterize_operating_points,
    estimate_dcr,
    holdoff_sweep,
    mu_corrected,
    pde_direct,
    pde_poissonian,
    simulate_characterization_histogram,
)
from .correlation import (
    CorrelationHistogram,
    coincidence_rate,
    cross_correlation,
    cross_correlation_files,
    g2_normalize,
    g2_zero_delay,
    heralded_g2,
    heralded_g2_files,
    heralded_rate,
    heralding_efficiency,
    singles_rate,
)
from .fitting import CoherenceFit, fit_g2_peak
from .histogram import Histogram, build_period_histogram, load_histogram, save_histogram
from .metrics import AnalysisSettings, HspsMetrics, SweepRow, compute_hsps_metrics
from .utils import Estimate
