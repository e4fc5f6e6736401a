from .channel import ArrivalMerger, apply_channel, route_arrivals
from .pair_source import (
    PairSource,
    SourceParams,
    coherence_time_from_bandwidth,
    generate_pair_stream,
    pgr_at_pump_power,
)
from .pulsed_laser import PulsedSourceSpec, generate_pulse_stream, generate_pulse_train

__all__ = [
    "ArrivalMerger",
    "apply_channel",
    "route_arrivals",
    "PairSource",
    "SourceParams",
    "coherence_time_from_bandwidth",
    "generate_pair_stream",
    "pgr_at_pump_power",
    "PulsedSourceSpec",
    "generate_pulse_stream",
    "generate_pulse_train",
]
