from .gating import GateClock, gate_of
from .snspd import SnspdDetector, SnspdParams, detect_snspd
from .spad import SpadDetector, SpadOperatingPoint, SpadParams, TrapParams, detect_spad

__all__ = [
    "GateClock",
    "gate_of",
    "SnspdDetector",
    "SnspdParams",
    "detect_snspd",
    "SpadDetector",
    "SpadOperatingPoint",
    "SpadParams",
    "TrapParams",
    "detect_spad",
]
