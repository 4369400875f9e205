"""Fog-side storage: daily raw feature logs and the reference record store.

The raw byte stream from each edge is appended to ``features-YYYYMMDD.log``;
bytes are written through in 10-byte quanta (the flush cadence), the file
rotates at local midnight, and the remainder is flushed on rotation and on
close so no byte is lost or duplicated across files.

Decoded feature records go to an append-only per-camera log that reloads on
restart; it is the local database used later for pattern analysis.
"""

from __future__ import annotations

import logging
from datetime import datetime, timezone
from pathlib import Path

from .clocks import Clock, SystemClock
from .tracking import BoundingBox, FeatureRecord

log = logging.getLogger(__name__)

FLUSH_QUANTUM = 10


def _day_stamp(t: float) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y%m%d")


class DailyLogWriter:
    """Raw stream sink with a fixed flush quantum and midnight rotation.

    Storage errors degrade persistence (with a warning) instead of raising,
    so the decision path is never blocked by a full disk.
    """

    def __init__(self, root: str | Path, camera_id: str,
                 clock: Clock | None = None, prefix: str = "features"):
        self.root = Path(root)
        self.camera_id = camera_id
        self.clock = clock or SystemClock()
        self.prefix = prefix
        self._fh = None
        self._day: str | None = None
        self._buf = bytearray()
        self.flush_count = 0
        self.bytes_written = 0
        self.degraded = False

    def current_path(self) -> Path:
        day = self._day or _day_stamp(self.clock.now())
        return self.root / self.camera_id / f"{self.prefix}-{day}.log"

    def _open_for(self, day: str) -> None:
        path = self.root / self.camera_id / f"{self.prefix}-{day}.log"
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "ab")
        self._day = day

    def _drain(self, everything: bool = False) -> None:
        while len(self._buf) >= FLUSH_QUANTUM:
            self._write_out(bytes(self._buf[:FLUSH_QUANTUM]))
            del self._buf[:FLUSH_QUANTUM]
        if everything and self._buf:
            self._write_out(bytes(self._buf))
            self._buf.clear()

    def _write_out(self, chunk: bytes) -> None:
        try:
            self._fh.write(chunk)
            self._fh.flush()
            self.flush_count += 1
            self.bytes_written += len(chunk)
            self.degraded = False
        except OSError as exc:
            if not self.degraded:
                log.warning("feature log degraded (%s); decisions continue", exc)
            self.degraded = True

    def write(self, data: bytes) -> None:
        day = _day_stamp(self.clock.now())
        if self._fh is None:
            self._open_for(day)
        elif day != self._day:
            # bytes received before the boundary belong to the old file
            self._drain(everything=True)
            self._fh.close()
            self._open_for(day)
        self._buf.extend(data)
        self._drain()

    def close(self) -> None:
        if self._fh is not None:
            self._drain(everything=True)
            self._fh.close()
            self._fh = None


class ReferenceStore:
    """Append-only per-camera record log keyed by object id.

    One LF line per observation; reload on restart resumes appending.
    """

    def __init__(self, root: str | Path, camera_id: str):
        self.path = Path(root) / camera_id / "reference.records"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a")
        self.appended = 0

    def append(self, frame_index: int, rec: FeatureRecord) -> None:
        b = rec.bbox
        line = (f"{rec.object_id:.3f} {frame_index} {rec.speed:.3f} "
                f"{rec.direction_changes} {rec.dwell:.3f} "
                f"{b.x_min:.3f} {b.y_min:.3f} {b.x_max:.3f} {b.y_max:.3f}\n")
        try:
            self._fh.write(line)
            self._fh.flush()
            self.appended += 1
        except OSError as exc:
            log.warning("reference store degraded: %s", exc)

    def load(self) -> dict[float, list[tuple[int, FeatureRecord]]]:
        """All records on disk, grouped by object id in append order."""
        out: dict[float, list[tuple[int, FeatureRecord]]] = {}
        if not self.path.exists():
            return out
        for line in self.path.read_text().splitlines():
            oid, frame, speed, dirch, dwell, x0, y0, x1, y1 = line.split()
            rec = FeatureRecord(
                object_id=float(oid), speed=float(speed),
                direction_changes=int(dirch), dwell=float(dwell),
                bbox=BoundingBox(float(x0), float(y0), float(x1), float(y1)),
            )
            out.setdefault(rec.object_id, []).append((int(frame), rec))
        return out

    def close(self) -> None:
        self._fh.close()
