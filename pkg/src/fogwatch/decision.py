"""Fog-side contextualization, suspicion scoring, and alert dispatch.

Features are contextualized by time of day, camera location sensitivity, and
building security level; the resulting weight joins speed, direction-change
rate, and dwell as inputs to the fuzzy rulebase. Scores above the
administrator threshold raise an alert to the designated receiver, with a
per-object cooldown and a retry queue so sink failures never drop an alert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .clocks import Clock, SystemClock
from .fuzzy import RuleBase, defuzzify_centroid, parse_rulebase
from .tracking import FeatureRecord

TIME_FACTORS = {"day": 1.0, "evening": 1.2, "night": 1.5}
LOCATION_FACTORS = {"public": 1.0, "restricted": 1.3}
SECURITY_FACTORS = {"low": 1.0, "medium": 1.25, "high": 1.5}


@dataclass(frozen=True)
class Context:
    time_class: str = "day"
    location_sensitivity: str = "public"
    building_security: str = "low"
    camera_id: str = ""

    def __post_init__(self):
        if self.time_class not in TIME_FACTORS:
            raise ValueError(f"unknown time class {self.time_class!r}")
        if self.location_sensitivity not in LOCATION_FACTORS:
            raise ValueError(f"unknown location sensitivity {self.location_sensitivity!r}")
        if self.building_security not in SECURITY_FACTORS:
            raise ValueError(f"unknown building security {self.building_security!r}")


@dataclass(frozen=True)
class FactorTable:
    time: dict[str, float] = field(default_factory=lambda: dict(TIME_FACTORS))
    location: dict[str, float] = field(default_factory=lambda: dict(LOCATION_FACTORS))
    security: dict[str, float] = field(default_factory=lambda: dict(SECURITY_FACTORS))


def context_weight(ctx: Context, factors: FactorTable | None = None) -> float:
    f = factors or FactorTable()
    w = (f.time[ctx.time_class]
         * f.location[ctx.location_sensitivity]
         * f.security[ctx.building_security])
    return min(2.0, max(1.0, w))


def contextualize(rec: FeatureRecord, ctx: Context,
                  frame_period: float = 0.2,
                  factors: FactorTable | None = None) -> dict[str, float]:
    """Crisp fuzzy-system inputs for one feature record in its context."""
    rate = rec.direction_changes / max(rec.dwell, frame_period)
    return {
        "speed": rec.speed,
        "dir_change_rate": rate,
        "dwell": rec.dwell,
        "context_weight": context_weight(ctx, factors),
    }


# Default rulebase, in the same text form used for operator overrides.
#
# The dwell ladder (rules 1-3) carries the base score; heightened context
# adds mass one level up at the brief and prolonged ends (rules 4-5); erratic
# heading flags wanderers one level up (rules 6-8); a fast straight passer-by
# in its first moments is damped (rule 9). Additions only ever materialize
# above the local centroid, which keeps the defuzzified score non-decreasing
# in dwell and in context weight across the whole input domain.
DEFAULT_RULEBASE = """
[variable speed]
domain = 0 20
labels = slow:0 moderate:5 fast:20

[variable dir_change_rate]
domain = 0 1.5
labels = steady:0 turning:0.5 erratic:1.5

[variable dwell]
domain = 0 120
labels = brief:0 lingering:40 prolonged:120

[variable context_weight]
domain = 1 2
labels = routine:1 heightened:2

[output suspicion]
domain = 0 1
labels = negligible:0 low:0.25 moderate:0.5 high:0.75 critical:1

[rules]
rule = dwell is brief => negligible
rule = dwell is lingering => low
rule = dwell is prolonged => high
rule = dwell is brief and context_weight is heightened and dir_change_rate is steady => low
rule = dwell is prolonged and context_weight is heightened => critical
rule = dir_change_rate is erratic and dwell is brief => low
rule = dir_change_rate is erratic and dwell is lingering => moderate
rule = dir_change_rate is erratic and dwell is prolonged => high
rule = speed is fast and dwell is brief and dir_change_rate is steady => negligible
"""


def default_rulebase() -> RuleBase:
    return parse_rulebase(DEFAULT_RULEBASE)


@dataclass(frozen=True)
class SuspicionScore:
    object_id: float
    camera_id: str
    frame_index: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0 or not math.isfinite(self.score):
            raise ValueError(f"score out of [0,1]: {self.score}")


class SuspicionScorer:
    """contextualize -> fuzzify -> infer -> defuzzify, deterministically."""

    def __init__(self, rulebase: RuleBase | None = None,
                 factors: FactorTable | None = None,
                 frame_period: float = 0.2):
        self.rulebase = rulebase or default_rulebase()
        self.factors = factors or FactorTable()
        self.frame_period = frame_period

    def assess(self, rec: FeatureRecord, ctx: Context,
               frame_index: int = 0) -> SuspicionScore:
        inputs = contextualize(rec, ctx, self.frame_period, self.factors)
        agg = self.rulebase.infer(inputs)
        return SuspicionScore(
            object_id=rec.object_id,
            camera_id=ctx.camera_id,
            frame_index=frame_index,
            score=defuzzify_centroid(agg),
        )


@dataclass(frozen=True)
class Alert:
    camera_id: str
    object_id: float
    frame_index: int
    score: float
    record: FeatureRecord
    event_time: float
    receiver: str


def iso8601(t: float) -> str:
    dt = datetime.fromtimestamp(t, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{int(round(dt.microsecond / 1000)):03d}Z"


def format_alert_line(a: Alert) -> str:
    return (f"ALERT {iso8601(a.event_time)} cam={a.camera_id} obj={a.object_id:.3f} "
            f"frame={a.frame_index} score={a.score:.3f} speed={a.record.speed:.3f} "
            f"dirch={a.record.direction_changes} dwell={a.record.dwell:.3f}")


class AlertSink:
    def deliver(self, line: str) -> None:
        raise NotImplementedError


class FileAlertSink(AlertSink):
    """Canonical sink: one LF-terminated line appended per alert."""

    def __init__(self, path):
        self.path = path

    def deliver(self, line: str) -> None:
        with open(self.path, "a") as fh:
            fh.write(line + "\n")
            fh.flush()


class WebhookAlertSink(AlertSink):
    """POSTs the alert line as the request body."""

    def __init__(self, host: str, port: int, path: str = "/alert", timeout: float = 5.0):
        self.host, self.port, self.path, self.timeout = host, port, path, timeout

    def deliver(self, line: str) -> None:
        import http.client

        conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
        try:
            conn.request("POST", self.path, body=line.encode(),
                         headers={"Content-Type": "text/plain"})
            resp = conn.getresponse()
            resp.read()
            if resp.status >= 400:
                raise IOError(f"webhook returned {resp.status}")
        finally:
            conn.close()


class AlertDispatcher:
    """Thresholds scores, applies the per-object cooldown, delivers alerts.

    An alert is raised iff score > threshold, strictly. Failed deliveries are
    queued and retried on the next dispatch (and on flush), in order.
    """

    def __init__(self, sink: AlertSink, threshold: float = 0.6,
                 cooldown_s: float = 30.0, receiver: str = "receiver-1",
                 clock: Clock | None = None):
        if not 0.0 < threshold < 1.0:
            raise ValueError(f"threshold must be in (0,1): {threshold}")
        self.sink = sink
        self.threshold = threshold
        self.cooldown_s = cooldown_s
        self.receiver = receiver
        self.clock = clock or SystemClock()
        self._last_alert: dict[tuple[str, float], float] = {}
        self._pending: list[Alert] = []
        self.delivered = 0

    def dispatch(self, score: SuspicionScore, rec: FeatureRecord,
                 event_time: float | None = None) -> Alert | None:
        self.flush_pending()
        if score.score <= self.threshold:
            return None
        t = self.clock.now() if event_time is None else event_time
        key = (score.camera_id, score.object_id)
        last = self._last_alert.get(key)
        if last is not None and t - last < self.cooldown_s:
            return None
        alert = Alert(
            camera_id=score.camera_id,
            object_id=score.object_id,
            frame_index=score.frame_index,
            score=score.score,
            record=rec,
            event_time=t,
            receiver=self.receiver,
        )
        self._last_alert[key] = t
        self._deliver(alert)
        return alert

    def _deliver(self, alert: Alert) -> None:
        try:
            self.sink.deliver(format_alert_line(alert))
            self.delivered += 1
        except Exception:
            self._pending.append(alert)

    def flush_pending(self) -> int:
        """Retry queued alerts in order; stop at the first failure."""
        while self._pending:
            alert = self._pending[0]
            try:
                self.sink.deliver(format_alert_line(alert))
                self.delivered += 1
                self._pending.pop(0)
            except Exception:
                break
        return len(self._pending)

    @property
    def pending(self) -> int:
        return len(self._pending)
