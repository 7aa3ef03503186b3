"""End-to-end scenario execution: network, authentication, protected traffic, IDS and response."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .detect.alerts import Alert
from .detect.anomaly import BaselineModel, Detector, train
from .detect.jamming import InsufficientSensorsError, detect_jamming, group_windows, localize_jammer
from .detect.trace import Normalizer, TraceEvent, write_ipal
from .evaluate import alert_counts, exclusion_latency, jamming_summary, score_alerts
from .ida import AuthSession, DeviceAgent, PeriodicAuthenticator, TokenStore, derive_psk, provision_device, provision_service
from .linksec import SEQ, FrameRejected, ReceptionStatus, StreamReceiver, StreamSender, install_association, unprotect_frame
from .netsim.attacks import Impersonation, describe, inject_attack
from .netsim.eventlog import format_meta, write_events
from .netsim.sensors import SensorArray, SensorWindow
from .netsim.sim import Simulator
from .pki import CertificateAuthority, StatusResponder
from .respond.actions import ResponseAction, Responder
from .respond.audit import AuditLog
from .respond.policy import Identity
from .scenario import PIPELINES, Scenario, TrafficSpec

SERVICE_ID = "ida-service"
PSK_LABEL = "linksec"
ARTIFACTS = ("events", "alerts.jsonl", "actions.jsonl", "audit.jsonl", "metrics.json")


# retransmissions finish well within this after the last scheduled send
DRAIN_MS = 100.0


def is_control(te: TraceEvent) -> bool:
    """Authentication-plane messages; the IDA service reports their failures itself."""
    return te.msg_type.startswith("auth_")


def events_name(fmt: str) -> str:
    return f"events.{'tsv' if fmt == 'tsv' else 'jsonl'}"


@dataclass
class Flow:
    """One redundant protected stream between a device and the service node."""

    spec: TrafficSpec
    index: int
    sender: Optional[StreamSender] = None
    receiver: Optional[StreamReceiver] = None
    monitor: dict[str, object] = field(default_factory=dict)  # pipeline -> rx association held by the IDS
    offered: int = 0
    sent: int = 0
    delivered: int = 0
    duplicates: int = 0
    rejected: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    pipeline_rx: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    counter: int = 0

    @property
    def label(self) -> str:
        return f"{self.spec.src}>{self.spec.dst}"

    @property
    def pipelines(self) -> tuple[str, ...]:
        return PIPELINES if self.spec.redundant else PIPELINES[:1]

    def channel_id(self, pipeline: str) -> int:
        return 1 + 2 * self.index + PIPELINES.index(pipeline)


class ScenarioRun:
    def __init__(self, scenario: Scenario):
        sc = self.scenario = scenario
        self.sim = Simulator(sc.seed, sc.channel, channels=dict(sc.pipelines))
        for n in sc.nodes:
            self.sim.add_node(n.node_id, n.position, n.role, n.tx_power_dbm, n.supi)

        self.audit = AuditLog()
        self.ca = CertificateAuthority(random_bytes=self.sim.random_bytes("pki"))
        self.status = StatusResponder(self.ca)
        self.service = provision_service(
            self.ca, SERVICE_ID, self.status, self.sim.random_bytes("ida"), interval=sc.auth_interval_ms
        )
        self.audit.append("ca", f"issue serial={self.service.cert.serial} subject={SERVICE_ID} kind=service", 0)
        self.agents: dict[str, DeviceAgent] = {}
        for n in sc.devices:
            agent = provision_device(self.ca, self.service, n.node_id, n.supi, self.sim.random_bytes(f"ida:{n.node_id}"))
            self.agents[n.node_id] = agent
            self.audit.append("ca", f"issue serial={agent.cert.serial} subject={n.node_id} kind=device supi={n.supi}", 0)
        self.identities = {
            d: Identity(d, ident.supi, ident.cert_serial) for d, ident in sorted(self.service.registry.items())
        }
        self.responder = Responder(sc.policy, self.ca, self.sim, self.identities, self.audit)
        self.auth = PeriodicAuthenticator(
            self.sim, self.service, sc.service_node,
            {d: (d, a) for d, a in self.agents.items()},
            interval=sc.auth_interval_ms,
            alert_sink=self.raise_alert,
            on_established=self._on_established,
        )

        self.flows = [Flow(spec, i) for i, spec in enumerate(sc.traffic)]
        self._route: dict[tuple[str, str, str], tuple[Flow, str]] = {}
        for flow in self.flows:
            for p in flow.pipelines:
                for t in flow.spec.msg_types:
                    self._route[(flow.spec.src, flow.spec.dst, f"{t}@{p}")] = (flow, p)
                    self.sim.on_receive(flow.spec.dst, f"{t}@{p}", self._frame_rx)

        self.sensors: Optional[SensorArray] = None
        if sc.sensors is not None:
            s = sc.sensors
            self.sensors = SensorArray(
                self.sim, list(s.nodes), s.window_ms, s.beacon, s.beacon_period_ms, s.measurement_sigma_db
            )

        self.handles = []
        for entry in sc.attacks:
            behavior = None
            if isinstance(entry.spec, Impersonation):
                behavior = lambda sim, spec=entry.spec: self._impersonate(sim, spec)
            self.handles.append(inject_attack(self.sim, entry.spec, behavior))

        # IDS state
        self.alerts: list[Alert] = []
        self.normalizer = Normalizer(self._decode)
        self.trace: list[TraceEvent] = []
        self.model: Optional[BaselineModel] = None
        self.detector: Optional[Detector] = None
        self._training: list[TraceEvent] = []
        self._pending: list[TraceEvent] = []
        self._log_pos = 0
        self._sensor_pos = 0
        self._noise_train: dict[str, list[float]] = defaultdict(list)
        self.noise_baseline: dict[str, float] = {}
        self.estimates: list[dict] = []
        self.excluded: dict[str, int] = {}  # node -> block time (us); its traffic leaves the IDS scope

    # --- authentication and keys ----------------------------------------

    def _on_established(self, device_id: str, service_session: AuthSession, device_session: AuthSession) -> None:
        """Install link keys once per flow, from the first session of its device."""
        node = self.scenario.service_node
        for flow in self.flows:
            if flow.sender is not None or device_id not in (flow.spec.src, flow.spec.dst):
                continue
            side = {node: derive_psk(service_session, PSK_LABEL), device_id: derive_psk(device_session, PSK_LABEL)}
            now = self.sim.now_ms

            def assoc(direction: str, holder: str, p: str):
                return install_association(flow.channel_id(p), direction, side[holder], flow.label, now)

            tx = tuple(assoc("tx", flow.spec.src, p) for p in PIPELINES)
            rx = tuple(assoc("rx", flow.spec.dst, p) for p in PIPELINES)
            flow.sender = StreamSender(flow.spec.name, tx, encrypt=self.scenario.encrypt)
            flow.receiver = StreamReceiver(flow.spec.name, rx)
            # the monitor is provisioned by the service side of the session
            flow.monitor = {p: assoc("rx", node, p) for p in PIPELINES}

    def _impersonate(self, sim: Simulator, spec: Impersonation) -> None:
        """The attacker holds the target's SIM and certificate but not its token."""
        real = self.agents[spec.target]
        fake = DeviceAgent(
            TokenStore(spec.target, sim.random_bytes(f"attack:{spec.name}")),
            real.cert, real.trust_anchor, sim.random_bytes(f"attack:{spec.name}:session"), real.session_lifetime,
        )
        self.auth.agents[spec.target] = (self.auth.agents[spec.target][0], fake)

    # --- traffic ------------------------------------------------------------

    def _start_flow(self, flow: Flow) -> None:
        rng = self.sim.rng(f"traffic:{flow.spec.name}")
        spec = flow.spec
        bound = min(4 * spec.jitter_ms, 0.45 * spec.period_ms)
        n = int((self.scenario.duration_ms - spec.start_ms) // spec.period_ms) + 1
        for k in range(n):
            jitter = float(np.clip(rng.normal(0.0, spec.jitter_ms), -bound, bound)) if spec.jitter_ms > 0 else 0.0
            t = spec.start_ms + k * spec.period_ms + jitter
            if 0 <= t < self.scenario.duration_ms:
                self.sim.schedule_timer_ms(t, lambda sim, f=flow, g=rng: self._emit(f, g))

    def _emit(self, flow: Flow, rng: np.random.Generator) -> None:
        spec = flow.spec
        msg_type = spec.msg_types[flow.counter % len(spec.msg_types)]
        flow.counter += 1
        flow.offered += 1
        if flow.sender is None:
            return
        values = {name: round(float(rng.uniform(lo, hi)), 4) for name, (lo, hi) in sorted(spec.process.items())}
        payload = json.dumps({"type": msg_type, "values": values}, sort_keys=True).encode()
        payload = payload.ljust(spec.size, b" ")
        frames = flow.sender.replicate_send(payload)
        flow.sent += 1
        for p, frame in zip(PIPELINES, frames):
            if p in flow.pipelines:
                self.sim.send(spec.src, spec.dst, f"{msg_type}@{p}", frame.to_bytes(), channel=p, log_payload=True)

    def _frame_rx(self, sim: Simulator, packet) -> None:
        route = self._route.get((packet.src, packet.dst, packet.msg_type))
        if route is None:
            return
        flow, p = route
        flow.pipeline_rx[p] += 1
        if flow.receiver is None:
            flow.rejected["no-association"] += 1
            return
        try:
            rec = flow.receiver.eliminate_duplicates(PIPELINES.index(p), packet.payload)
        except FrameRejected as exc:
            flow.rejected[exc.reason.value] += 1
            return
        if rec.status is ReceptionStatus.DELIVERED:
            flow.delivered += 1
        elif rec.status is ReceptionStatus.DUPLICATE:
            flow.duplicates += 1
        else:
            flow.rejected["stale"] += 1

    def _decode(self, te: TraceEvent, payload: bytes) -> Optional[dict]:
        """IDS view of a protected frame: verify and decrypt with the monitor's copy of the keys."""
        base, _, p = te.msg_type.partition("@")
        route = self._route.get((te.src, te.dst, te.msg_type))
        if route is None or not route[0].monitor:
            return None
        body = unprotect_frame(route[0].monitor[p], payload)
        doc = json.loads(body[SEQ.size :])
        if doc.get("type") != base:
            raise ValueError(f"frame type {doc.get('type')!r} does not match header {base!r}")
        return {k: float(v) for k, v in doc["values"].items()}

    # --- alerts and response -----------------------------------------------

    def raise_alert(self, alert: Alert) -> list[ResponseAction]:
        alert = replace(alert, alert_id=len(self.alerts) + 1)
        self.alerts.append(alert)
        self.sim.log_alert(
            alert.detector, alert.channel,
            format_meta(id=alert.alert_id, score=f"{alert.score:.4f}", threshold=f"{alert.threshold:.4f}"),
        )
        acts = self.responder.handle(alert, float(self.sim.now_ms))
        for act in acts:
            self.sim.log_action(
                "responder", act.target_device_id or "-", act.action,
                format_meta(alert=act.alert_id, supi=act.target_supi, outcome=act.outcome),
            )
            if act.applied and act.action == "block_sim":
                self.excluded.setdefault(act.target_device_id, self.sim.now)
        return acts

    # --- IDS ticks -----------------------------------------------------------

    def _tick(self, sim: Simulator) -> None:
        self._process(final=False)
        nxt = sim.now_ms + self.scenario.detector.window_ms
        if nxt <= self.scenario.duration_ms:
            sim.schedule_timer_ms(nxt, self._tick)

    def _process(self, final: bool) -> None:
        now = self.sim.now_ms
        train_ms = self.scenario.train_ms
        if self.sensors is not None:
            fresh = self.sensors.windows[self._sensor_pos :]
            self._sensor_pos = len(self.sensors.windows)
            for group in group_windows(fresh):
                self._sensor_group(group)

        end = len(self.sim.log)
        released: list[TraceEvent] = []
        for ev in self.sim.log[self._log_pos : end]:
            released.extend(self.normalizer.feed(ev))
        self._log_pos = end
        if final:
            released.extend(self.normalizer.flush())
        self.trace.extend(released)
        for te in released:
            if is_control(te) or te.t_us >= self.scenario.duration_ms * 1000:
                continue
            if te.t_us < train_ms * 1000:
                if self.model is None:
                    self._training.append(te)
            else:
                self._pending.append(te)

        if self.model is None and (now >= train_ms + self.scenario.detector.window_ms or final):
            self.model = train(self._training, self.scenario.detector)
            self.detector = Detector(self.model)
            for sid, values in sorted(self._noise_train.items()):
                self.noise_baseline[sid] = float(np.mean(values))
        if self.detector is None:
            return
        pending, self._pending = self._pending, []
        for te in pending:
            blocked_at = self.excluded.get(te.src)
            if blocked_at is not None and te.t_us >= blocked_at:
                continue
            for alert in self.detector.feed(te):
                self.raise_alert(alert)
        if final:
            for alert in self.detector.flush():
                self.raise_alert(alert)

    def _sensor_group(self, group: list[SensorWindow]) -> None:
        end = group[0].window_start + group[0].window_len
        if end <= self.scenario.train_ms:
            for w in group:
                self._noise_train[w.sensor_id].append(w.noise_floor_dbm)
            return
        if not self.noise_baseline:
            return
        alert = detect_jamming(self.noise_baseline, group, self.scenario.detector)
        if alert is None:
            return
        note = ""
        try:
            est = localize_jammer(group, self.noise_baseline, self.sim.channels["default"])
            self.estimates.append(
                {"t": end, "position": list(est.position), "power_dbm": round(est.power_dbm, 3), "sensors": list(est.sensors)}
            )
            note = f"; estimate ({est.position[0]:.1f}, {est.position[1]:.1f}) power {est.power_dbm:.1f} dBm"
        except InsufficientSensorsError as exc:
            note = f"; not localized: {exc}"
        self.raise_alert(replace(alert, evidence=alert.evidence + note))

    # --- driver ------------------------------------------------------------

    def run(self) -> "RunResult":
        sc = self.scenario
        self.auth.start(0)
        for flow in self.flows:
            self._start_flow(flow)
        if self.sensors is not None:
            self.sensors.start(0)
        self.sim.schedule_timer_ms(sc.detector.window_ms, self._tick)
        self.sim.run(until_ms=sc.duration_ms)
        # let frames still in flight at the end settle before the last window is scored
        self.sim.run(until_ms=sc.duration_ms + DRAIN_MS)
        self._process(final=True)
        return RunResult(self)


class RunResult:
    def __init__(self, run: ScenarioRun):
        self.run = run
        self.scenario = run.scenario
        self.events = run.sim.log
        self.alerts = run.alerts
        self.actions = run.responder.actions
        self.notices = run.responder.notices
        self.audit = run.audit
        self.ground_truth = run.sim.ground_truth
        self.metrics = self._metrics()

    def _metrics(self) -> dict:
        run, sc = self.run, self.scenario
        truth = [_truth_record(t) for t in self.ground_truth]
        supi_of = {i.device_id: i.supi for i in run.identities.values()}
        flows = {}
        for f in run.flows:
            flows[f.spec.name] = {
                "link": f.label,
                "offered": f.offered,
                "sent": f.sent,
                "delivered": f.delivered,
                "delivery_ratio": (f.delivered / f.sent) if f.sent else None,
                "duplicates_eliminated": f.duplicates,
                "pipeline_rx": dict(sorted(f.pipeline_rx.items())),
                "rejected": dict(sorted(f.rejected.items())),
            }
        sent = sum(f.sent for f in run.flows)
        delivered = sum(f.delivered for f in run.flows)
        per_pipeline = {
            p: (sum(f.pipeline_rx.get(p, 0) for f in run.flows) / sent if sent else None) for p in PIPELINES
        }
        return {
            "scenario": sc.name,
            "seed": sc.seed,
            "duration_ms": sc.duration_ms,
            "train_ms": sc.train_ms,
            "alert_counts": alert_counts(self.alerts),
            "detection": score_alerts(self.alerts, truth, sc.train_ms, sc.duration_ms, sc.detector.window_ms),
            "exclusions": exclusion_latency(self.actions, self.alerts, self.events, supi_of),
            "actions": {"total": len(self.actions), "applied": sum(a.applied for a in self.actions), "notices": len(self.notices)},
            "redundancy": {
                "sent": sent,
                "delivered": delivered,
                "delivery_ratio": (delivered / sent) if sent else None,
                "pipeline_delivery_ratio": per_pipeline,
                "flows": flows,
            },
            "jamming": jamming_summary(self.alerts, truth, run.estimates, sc.detector.window_ms),
            "localization_estimates": run.estimates,
            "untrained_channels": run.model.untrained if run.model else [],
            "audit": {
                "entries": len(self.audit),
                "head": self.audit.head.hex(),
                "first_broken_index": self.audit.verify(),
            },
            "attacks": [describe(h.spec) for h in run.handles],
        }

    def write(self, out_dir: str | Path, fmt: str = "tsv") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            events_name(fmt): write_events(self.events, fmt),
            "alerts.jsonl": "".join(a.to_json() + "\n" for a in self.alerts),
            "actions.jsonl": "".join(a.to_json() + "\n" for a in self.actions),
            "audit.jsonl": self.audit.to_jsonl(),
            "metrics.json": json.dumps(self.metrics, indent=2, sort_keys=True) + "\n",
            "ground_truth.jsonl": "".join(json.dumps(_truth_record(t), sort_keys=True) + "\n" for t in self.ground_truth),
            "sensors.jsonl": "".join(w.to_json() + "\n" for w in (self.run.sensors.windows if self.run.sensors else [])),
            "trace.ipal.jsonl": write_ipal(self.run.trace),
        }
        if self.run.model is not None:
            files["model.json"] = self.run.model.to_json() + "\n"
        written = []
        for name, text in files.items():
            path = out / name
            path.write_text(text)
            written.append(path)
        return written


def _truth_record(t: dict) -> dict:
    rec = {k: v for k, v in t.items() if k != "modified"}
    if "modified" in t:
        rec["modified_frames"] = len(t["modified"])
    return rec


def run_scenario(scenario: Scenario, out_dir: Optional[str | Path] = None, fmt: str = "tsv") -> RunResult:
    result = ScenarioRun(scenario).run()
    if out_dir is not None:
        result.write(out_dir, fmt)
    return result
