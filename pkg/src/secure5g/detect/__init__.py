from ..netsim.sensors import SensorWindow
from .alerts import DETECTORS, Alert, AlertSink, channel_label
from .anomaly import (
    BaselineModel,
    Detector,
    DetectorConfig,
    score_process,
    score_sequence,
    score_timing,
    score_trace,
    score_wireless,
    train,
)
from .jamming import InsufficientSensorsError, JammerEstimate, detect_jamming, localize_jammer, scan_jamming
from .trace import Normalizer, TraceEvent, load_trace, normalize_events, read_ipal, write_ipal

__all__ = [
    "DETECTORS",
    "Alert",
    "AlertSink",
    "BaselineModel",
    "Detector",
    "DetectorConfig",
    "InsufficientSensorsError",
    "JammerEstimate",
    "Normalizer",
    "SensorWindow",
    "TraceEvent",
    "channel_label",
    "detect_jamming",
    "load_trace",
    "localize_jammer",
    "normalize_events",
    "read_ipal",
    "scan_jamming",
    "score_process",
    "score_sequence",
    "score_timing",
    "score_trace",
    "score_wireless",
    "train",
    "write_ipal",
]
