from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Optional

DETECTORS = ("timing", "sequence", "wireless", "process", "jamming", "auth")


@dataclass(frozen=True)
class Alert:
    """Detector output. ``channel`` is ``src>dst/msg_type``, a device id, or a region label."""

    t: float
    detector: str
    channel: str
    score: float
    threshold: float
    evidence: str
    alert_id: int = 0

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Alert":
        return cls(**json.loads(line))

    @property
    def source_node(self) -> Optional[str]:
        """Sender node of a channel alert, or the device id of an auth alert."""
        if self.detector == "jamming":
            return None
        return self.channel.split(">", 1)[0] if ">" in self.channel else self.channel


AlertSink = Callable[[Alert], None]


def channel_label(src: str, dst: str, msg_type: str | None = None) -> str:
    return f"{src}>{dst}/{msg_type}" if msg_type else f"{src}>{dst}"
