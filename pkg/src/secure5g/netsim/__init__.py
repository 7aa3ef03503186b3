from .attacks import Flood, Impersonation, Jam, Replay, Tamper, inject_attack
from .channel import ChannelModel, dbm_sum, delivery_outcome, delivery_probability, path_loss, sinr_db
from .core import CoreNetwork, SubscriberRecord, SubscriberState, UnknownSubscriberError
from .eventlog import EventLogError, SimEvent, read_events, write_events
from .sensors import SensorArray, SensorWindow
from .sim import Node, Packet, SimulationComplete, Simulator, UnknownNodeError, ms_to_us

__all__ = [
    "ChannelModel",
    "CoreNetwork",
    "EventLogError",
    "Flood",
    "Impersonation",
    "Jam",
    "Node",
    "Packet",
    "Replay",
    "SensorArray",
    "SensorWindow",
    "SimEvent",
    "SimulationComplete",
    "Simulator",
    "SubscriberRecord",
    "SubscriberState",
    "Tamper",
    "UnknownNodeError",
    "UnknownSubscriberError",
    "dbm_sum",
    "delivery_outcome",
    "delivery_probability",
    "inject_attack",
    "ms_to_us",
    "path_loss",
    "read_events",
    "sinr_db",
    "write_events",
]
