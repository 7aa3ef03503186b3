"""Scenario configuration: an INI-like file with line-numbered errors.

Sections are ``[scenario]``, ``[channel]`` (plus ``[channel A]`` /
``[channel B]`` overrides for the two redundant pipelines), ``[node ID]``,
``[traffic NAME]``, ``[sensors]``, ``[detector]``, ``[attack NAME]`` and
``[policy]``. Keys may repeat only inside ``[policy]`` (``rule = ...``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .detect.anomaly import DetectorConfig
from .netsim.attacks import AttackSpec, AttackSpecError, Flood, Impersonation, Jam, Replay, Tamper
from .netsim.channel import ChannelModel
from .netsim.sim import ROLES
from .respond.policy import PolicyError, ResponsePolicy, parse_policy, parse_policy_lines

PIPELINES = ("A", "B")
SCENARIO_DIR = Path(__file__).with_name("scenarios")


class ConfigError(ValueError):
    def __init__(self, line_no: int, message: str, path: Optional[str] = None):
        self.line_no = line_no
        self.path = path
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"{where}: {message}")


@dataclass
class NodeSpec:
    node_id: str
    role: str
    position: tuple[float, float]
    tx_power_dbm: float = 10.0
    supi: Optional[str] = None


@dataclass
class TrafficSpec:
    """Periodic messages from ``src`` to ``dst``; ``msg_types`` are cycled in order.

    ``process`` maps a variable name to its normal operating range (low, high);
    each message carries one uniform sample per variable.
    """

    name: str
    src: str
    dst: str
    msg_types: tuple[str, ...]
    period_ms: float
    jitter_ms: float = 0.0
    size: int = 0
    start_ms: float = 100.0
    redundant: bool = True
    process: dict[str, tuple[float, float]] = field(default_factory=dict)


@dataclass
class SensorSpec:
    nodes: tuple[str, ...]
    window_ms: int = 1000
    beacon: Optional[str] = None
    beacon_period_ms: int = 100
    measurement_sigma_db: float = 0.0


@dataclass
class AttackEntry:
    name: str
    spec: AttackSpec
    line_no: int


@dataclass
class Scenario:
    name: str
    seed: int
    duration_ms: int
    train_ms: int
    auth_interval_ms: int
    channel: ChannelModel
    pipelines: dict[str, ChannelModel]
    nodes: list[NodeSpec]
    traffic: list[TrafficSpec]
    sensors: Optional[SensorSpec]
    detector: DetectorConfig
    attacks: list[AttackEntry]
    policy: ResponsePolicy
    policy_ref: Optional[str] = None
    service_node: str = "bs"
    encrypt: bool = True

    def node(self, node_id: str) -> NodeSpec:
        return next(n for n in self.nodes if n.node_id == node_id)

    @property
    def devices(self) -> list[NodeSpec]:
        return [n for n in self.nodes if n.role == "device"]


# --- low-level parsing ------------------------------------------------------


@dataclass
class _Section:
    kind: str
    name: Optional[str]
    line_no: int
    items: list[tuple[int, str, str]] = field(default_factory=list)

    def values(self, path: Optional[str]) -> dict[str, tuple[int, str]]:
        out: dict[str, tuple[int, str]] = {}
        for n, k, v in self.items:
            if k in out:
                raise ConfigError(n, f"duplicate key {k!r} in [{self.title}]", path)
            out[k] = (n, v)
        return out

    @property
    def title(self) -> str:
        return f"{self.kind} {self.name}" if self.name else self.kind


def _split_sections(text: str, path: Optional[str]) -> list[_Section]:
    sections: list[_Section] = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(n, f"unterminated section header {raw.strip()!r}", path)
            parts = line[1:-1].split()
            if not parts or len(parts) > 2:
                raise ConfigError(n, f"bad section header {raw.strip()!r}", path)
            sections.append(_Section(parts[0].lower(), parts[1] if len(parts) == 2 else None, n))
            continue
        if "=" not in line:
            raise ConfigError(n, f"expected 'key = value', got {raw.strip()!r}", path)
        if not sections:
            raise ConfigError(n, "key outside of any section", path)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(n, "empty key", path)
        sections[-1].items.append((n, key, value))
    return sections


class _Reader:
    """Typed access to one section's keys, tracking which were consumed."""

    def __init__(self, section: _Section, path: Optional[str]):
        self.section = section
        self.path = path
        self.values = section.values(path)
        self.used: set[str] = set()

    def error(self, key: Optional[str], message: str) -> ConfigError:
        line = self.values[key][0] if key in self.values else self.section.line_no
        return ConfigError(line, message, self.path)

    def line(self, key: str) -> int:
        return self.values[key][0] if key in self.values else self.section.line_no

    def has(self, key: str) -> bool:
        return key in self.values

    def raw(self, key: str, default: Any = ..., required: bool = False) -> Any:
        self.used.add(key)
        if key not in self.values:
            if default is ... or required:
                raise self.error(None, f"[{self.section.title}] is missing required key {key!r}")
            return default
        return self.values[key][1]

    def _convert(self, key: str, default: Any, conv, what: str) -> Any:
        value = self.raw(key, default)
        if key not in self.values:
            return value
        try:
            return conv(value)
        except (TypeError, ValueError):
            raise self.error(key, f"{key} must be {what}, got {value!r}") from None

    def int(self, key: str, default: Any = ...) -> int:
        return self._convert(key, default, int, "an integer")

    def float(self, key: str, default: Any = ...) -> float:
        return self._convert(key, default, float, "a number")

    def bool(self, key: str, default: Any = ...) -> bool:
        def conv(v: str) -> bool:
            low = v.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(v)

        return self._convert(key, default, conv, "true or false")

    def position(self, key: str, default: Any = ...) -> tuple[float, float]:
        def conv(v: str) -> tuple[float, float]:
            parts = [p.strip() for p in v.split(",")]
            if len(parts) != 2:
                raise ValueError(v)
            return (float(parts[0]), float(parts[1]))

        return self._convert(key, default, conv, "'x, y'")

    def names(self, key: str, default: Any = ...) -> tuple[str, ...]:
        value = self.raw(key, default)
        if isinstance(value, tuple):
            return value
        items = tuple(p.strip() for p in value.split(",") if p.strip())
        if not items:
            raise self.error(key, f"{key} needs at least one entry")
        return items

    def finish(self) -> None:
        extra = [k for k in self.values if k not in self.used]
        if extra:
            raise self.error(extra[0], f"unknown key {extra[0]!r} in [{self.section.title}]")


# --- section builders -----------------------------------------------------

_CHANNEL_FIELDS = {f.name: f.type for f in dataclasses.fields(ChannelModel)}


def _channel(r: _Reader, base: ChannelModel) -> ChannelModel:
    kwargs = {}
    for key in list(r.values):
        if key not in _CHANNEL_FIELDS:
            continue
        kwargs[key] = r.int(key) if key == "retransmission_limit" else r.float(key)
    r.finish()
    try:
        return dataclasses.replace(base, **kwargs)
    except ValueError as exc:
        raise r.error(None, f"invalid channel: {exc}") from None


def _process(r: _Reader) -> dict[str, tuple[float, float]]:
    if not r.has("process"):
        return {}
    out = {}
    for item in r.names("process"):
        try:
            name, rest = item.split("=", 1)
            low, high = (float(x) for x in rest.split(":", 1))
        except ValueError:
            raise r.error("process", f"process entries look like 'name=low:high', got {item!r}") from None
        if not low < high:
            raise r.error("process", f"empty range for {name.strip()!r}")
        out[name.strip()] = (low, high)
    return out


def _attack(r: _Reader, name: str) -> AttackSpec:
    kind = r.raw("type", required=True).lower()
    if kind == "jam":
        spec: AttackSpec = Jam(r.position("position"), r.float("power_dbm"), r.int("start_ms"), r.int("duration_ms"), name)
    elif kind == "flood":
        spec = Flood(
            r.raw("source"), r.raw("dst"), r.float("rate_per_s"), r.int("start_ms"), r.int("duration_ms"),
            r.raw("msg_type", "telemetry@A"), r.int("size", 64), r.raw("channel", "A"), name,
        )
    elif kind == "impersonation":
        spec = Impersonation(r.raw("target"), r.int("start_ms"), name=name)
    elif kind == "tamper":
        duration = r.int("duration_ms", None)
        spec = Tamper(r.float("bit_flip_rate"), r.int("start_ms", 0), duration, r.raw("msg_prefix", ""), name)
        if not 0.0 <= spec.bit_flip_rate <= 1.0:
            raise r.error("bit_flip_rate", "bit_flip_rate must lie in [0, 1]")
    elif kind == "replay":
        spec = Replay(
            r.int("capture_start_ms"), r.int("capture_end_ms"), r.int("replay_at_ms"),
            r.raw("prefix", "auth_"), name, r.position("position", (0.0, 0.0)),
        )
    else:
        raise r.error("type", f"unknown attack type {kind!r}")
    r.finish()
    return spec


def _attack_refs(spec: AttackSpec) -> list[tuple[str, str]]:
    if isinstance(spec, Flood):
        return [("source", spec.source), ("dst", spec.dst)]
    if isinstance(spec, Impersonation):
        return [("target", spec.target)]
    return []


def _validate_attack(spec: AttackSpec, r: _Reader) -> None:
    if isinstance(spec, Jam) and spec.duration_ms <= 0:
        raise r.error("duration_ms", "jam duration must be positive")
    if isinstance(spec, Flood) and (spec.rate_per_s <= 0 or spec.duration_ms <= 0):
        raise r.error("rate_per_s", "flood needs a positive rate and duration")
    if isinstance(spec, Replay) and not spec.capture_start_ms <= spec.capture_end_ms <= spec.replay_at_ms:
        raise r.error("replay_at_ms", "replay needs capture_start_ms <= capture_end_ms <= replay_at_ms")


# --- entry points -----------------------------------------------------------


def parse_scenario(text: str, path: Optional[str] = None, base_dir: Optional[Path] = None) -> Scenario:
    sections = _split_sections(text, path)
    by_kind: dict[str, list[_Section]] = {}
    for s in sections:
        by_kind.setdefault(s.kind, []).append(s)
    known = {"scenario", "channel", "node", "traffic", "sensors", "detector", "attack", "policy"}
    for s in sections:
        if s.kind not in known:
            raise ConfigError(s.line_no, f"unknown section [{s.title}]", path)
    for kind in ("scenario", "sensors", "detector", "policy"):
        if len(by_kind.get(kind, [])) > 1:
            raise ConfigError(by_kind[kind][1].line_no, f"section [{kind}] appears twice", path)
    if "scenario" not in by_kind:
        raise ConfigError(1, "missing [scenario] section", path)

    head = _Reader(by_kind["scenario"][0], path)
    name = head.raw("name")
    seed = head.int("seed")
    duration_ms = head.int("duration_ms")
    train_ms = head.int("train_ms")
    auth_interval = head.int("auth_interval_ms", 30_000)
    service_node = head.raw("service_node", "bs")
    encrypt = head.bool("encrypt", True)
    policy_ref = head.raw("policy", None)
    policy_line = head.line("policy")
    if duration_ms <= 0:
        raise head.error("duration_ms", "duration_ms must be positive")
    if not 0 < train_ms < duration_ms:
        raise head.error("train_ms", "train_ms must lie strictly between 0 and duration_ms")
    if auth_interval <= 0:
        raise head.error("auth_interval_ms", "auth_interval_ms must be positive")
    head.finish()

    channel = ChannelModel()
    pipelines: dict[str, ChannelModel] = {}
    overrides = []
    for s in by_kind.get("channel", []):
        if s.name is None:
            channel = _channel(_Reader(s, path), channel)
        elif s.name in PIPELINES:
            overrides.append(s)
        else:
            raise ConfigError(s.line_no, f"channel overrides exist only for pipelines {', '.join(PIPELINES)}", path)
    for p in PIPELINES:
        pipelines[p] = channel
    for s in overrides:
        pipelines[s.name] = _channel(_Reader(s, path), channel)

    nodes: list[NodeSpec] = []
    node_lines: dict[str, int] = {}
    for s in by_kind.get("node", []):
        if s.name is None:
            raise ConfigError(s.line_no, "[node] needs an id, e.g. [node robot-01]", path)
        if s.name in node_lines:
            raise ConfigError(s.line_no, f"node {s.name!r} defined twice (first at line {node_lines[s.name]})", path)
        r = _Reader(s, path)
        role = r.raw("role", "device")
        if role not in ROLES:
            raise r.error("role", f"unknown role {role!r}")
        default_power = 23.0 if role == "base_station" else 10.0
        spec = NodeSpec(s.name, role, r.position("position"), r.float("tx_power_dbm", default_power), r.raw("supi", None))
        if role == "device" and not spec.supi:
            raise r.error(None, f"device {s.name} needs a supi")
        r.finish()
        node_lines[s.name] = s.line_no
        nodes.append(spec)
    supis = [n.supi for n in nodes if n.supi]
    if len(set(supis)) != len(supis):
        dup = next(s for s in supis if supis.count(s) > 1)
        second = [n.node_id for n in nodes if n.supi == dup][1]
        raise ConfigError(node_lines[second], f"SUPI {dup} is already bound to another node", path)
    if service_node not in node_lines:
        raise head.error("service_node" if head.has("service_node") else None, f"service node {service_node!r} is not defined")

    def need_node(r: _Reader, key: str, node_id: str) -> None:
        if node_id not in node_lines:
            raise r.error(key, f"undefined node {node_id!r}")

    traffic: list[TrafficSpec] = []
    for s in by_kind.get("traffic", []):
        if s.name is None:
            raise ConfigError(s.line_no, "[traffic] needs a name", path)
        r = _Reader(s, path)
        src, dst = r.raw("src"), r.raw("dst")
        need_node(r, "src", src)
        need_node(r, "dst", dst)
        if r.has("msg_types"):
            types = r.names("msg_types")
        else:
            types = (r.raw("msg_type"),)
        if any("@" in t for t in types):
            raise r.error("msg_types" if r.has("msg_types") else "msg_type", "message types may not contain '@'")
        period = r.float("period_ms")
        if period <= 0:
            raise r.error("period_ms", "period_ms must be positive")
        spec = TrafficSpec(
            s.name, src, dst, types, period,
            r.float("jitter_ms", 0.0), r.int("size", 0), r.float("start_ms", 100.0),
            r.bool("redundant", True), _process(r),
        )
        if spec.jitter_ms < 0 or spec.jitter_ms * 4 >= period:
            raise r.error("jitter_ms", "jitter_ms must be non-negative and well below the period")
        devices = {n.node_id for n in nodes if n.role == "device"}
        if service_node not in (src, dst) or not ({src, dst} - {service_node}) <= devices or src == dst:
            raise r.error("src", f"traffic runs between a device and the service node {service_node!r}")
        r.finish()
        traffic.append(spec)

    sensors = None
    if "sensors" in by_kind:
        r = _Reader(by_kind["sensors"][0], path)
        ids = r.names("nodes")
        for sid in ids:
            need_node(r, "nodes", sid)
        beacon = r.raw("beacon", None)
        if beacon is not None:
            need_node(r, "beacon", beacon)
        sensors = SensorSpec(ids, r.int("window_ms", 1000), beacon, r.int("beacon_period_ms", 100), r.float("measurement_sigma_db", 0.0))
        r.finish()

    detector = DetectorConfig()
    if "detector" in by_kind:
        r = _Reader(by_kind["detector"][0], path)
        for key, (line_no, value) in r.values.items():
            r.used.add(key)
            try:
                DetectorConfig.from_dict({key: value})
            except (TypeError, ValueError) as exc:
                raise ConfigError(line_no, f"invalid [detector] {key}: {exc}", path) from None
        try:
            detector = DetectorConfig.from_dict({k: v for k, (_, v) in r.values.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(r.section.line_no, f"invalid [detector]: {exc}", path) from None

    attacks: list[AttackEntry] = []
    for s in by_kind.get("attack", []):
        if s.name is None:
            raise ConfigError(s.line_no, "[attack] needs a name", path)
        if s.name in node_lines:
            raise ConfigError(s.line_no, f"attack name {s.name!r} clashes with a node id", path)
        r = _Reader(s, path)
        try:
            spec = _attack(r, s.name)
        except AttackSpecError as exc:
            raise r.error(None, str(exc)) from None
        for key, ref in _attack_refs(spec):
            need_node(r, key, ref)
        _validate_attack(spec, r)
        attacks.append(AttackEntry(s.name, spec, s.line_no))

    policy = ResponsePolicy()
    try:
        if "policy" in by_kind:
            if policy_ref is not None:
                raise ConfigError(policy_line, "give either a [policy] section or a policy file, not both", path)
            policy = parse_policy_lines(by_kind["policy"][0].items)
        elif policy_ref is not None:
            ref = Path(policy_ref)
            if not ref.is_absolute():
                ref = (base_dir or Path.cwd()) / ref
            if not ref.is_file():
                raise ConfigError(policy_line, f"policy file {policy_ref!r} not found", path)
            policy = parse_policy(ref.read_text())
    except PolicyError as exc:
        raise ConfigError(exc.line_no, f"policy: {exc}", path if "policy" in by_kind else str(policy_ref)) from None

    return Scenario(
        name, seed, duration_ms, train_ms, auth_interval, channel, pipelines, nodes, traffic,
        sensors, detector, attacks, policy, policy_ref, service_node, encrypt,
    )


def shipped_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.conf"))


def resolve_config(ref: str) -> Path:
    """A path, or the name of a shipped scenario."""
    p = Path(ref)
    if p.is_file():
        return p
    shipped = SCENARIO_DIR / f"{ref}.conf"
    if shipped.is_file():
        return shipped
    raise FileNotFoundError(ref)


def load_scenario(ref: str | Path, seed: Optional[int] = None) -> Scenario:
    path = resolve_config(str(ref))
    scenario = parse_scenario(path.read_text(), str(path), path.parent)
    if seed is not None:
        scenario.seed = int(seed)
    return scenario
