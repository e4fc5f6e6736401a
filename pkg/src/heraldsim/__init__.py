"""heraldsim: heralded single-photon source simulation and timetag analysis."""

__version__ = "0.1.0"
