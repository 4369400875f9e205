"""Edge-side object tracking and movement-feature extraction.

Detections come from a pluggable detector backend. Tracks are matched to
detections greedily by descending IoU; a track that finds no detection above
the threshold is lost and leaves the queue. Each processed frame yields one
:class:`FrameFeatureSet` keyed by the objects' first-detection timestamps.

All timestamps and derived features are quantized to 3 decimal places so the
wire encoding round-trips bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def q3(x: float) -> float:
    """Quantize to the millisecond / 3-decimal wire grid."""
    return round(float(x), 3)


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"bounding box not finite: {vals}")
        if min(vals) < 0:
            raise ValueError(f"bounding box has negative coordinate: {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate bounding box: {vals}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def centroid(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def quantized(self) -> "BoundingBox":
        return BoundingBox(q3(self.x_min), q3(self.y_min), q3(self.x_max), q3(self.y_max))


@dataclass(frozen=True)
class Detection:
    bbox: BoundingBox
    confidence: float = 1.0
    frame_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


@dataclass
class Track:
    """One tracked object. ``id`` is its first-detection timestamp (seconds)."""

    id: float
    bbox_history: list[tuple[int, BoundingBox]] = field(default_factory=list)
    state: str = "active"  # active -> lost, never back

    @property
    def bbox(self) -> BoundingBox:
        return self.bbox_history[-1][1]

    @property
    def last_frame(self) -> int:
        return self.bbox_history[-1][0]

    def centroid_history(self) -> list[tuple[float, float]]:
        return [b.centroid for _, b in self.bbox_history]

    def append(self, frame_index: int, bbox: BoundingBox) -> None:
        if self.bbox_history and frame_index <= self.bbox_history[-1][0]:
            raise ValueError("frame_index must be strictly increasing within a track")
        self.bbox_history.append((frame_index, bbox))

    def mark_lost(self) -> None:
        self.state = "lost"


@dataclass(frozen=True)
class FeatureRecord:
    object_id: float
    speed: float
    direction_changes: int
    dwell: float
    bbox: BoundingBox

    def __post_init__(self):
        if self.speed < 0 or self.dwell < 0 or self.direction_changes < 0:
            raise ValueError("feature values must be non-negative")


@dataclass(frozen=True)
class FrameFeatureSet:
    frame_index: int
    camera_id: str
    timestamp: float
    objects: dict[float, FeatureRecord] = field(default_factory=dict)

    def __post_init__(self):
        for oid, rec in self.objects.items():
            if oid != rec.object_id:
                raise ValueError(f"object map key {oid} != record id {rec.object_id}")


@dataclass(frozen=True)
class Assignment:
    matched: list[tuple[Track, int]]        # (track, detection index)
    unmatched_detections: list[int]         # detection indices -> new tracks
    lost_tracks: list[Track]


def associate(tracks: list[Track], detections: list[Detection],
              iou_threshold: float) -> Assignment:
    """Greedy matching in descending IoU order.

    Each track and detection is used at most once; pairs below the threshold
    never match. Ties break toward the lower track id, then the lower
    detection index, so the result is deterministic.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0,1): {iou_threshold}")
    pairs = []
    for ti, trk in enumerate(tracks):
        for di, det in enumerate(detections):
            score = iou(trk.bbox, det.bbox)
            if score >= iou_threshold:
                pairs.append((score, trk.id, di, ti))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))

    used_tracks: set[int] = set()
    used_dets: set[int] = set()
    matched: list[tuple[Track, int]] = []
    for score, _tid, di, ti in pairs:
        if ti in used_tracks or di in used_dets:
            continue
        used_tracks.add(ti)
        used_dets.add(di)
        matched.append((tracks[ti], di))

    unmatched = [di for di in range(len(detections)) if di not in used_dets]
    lost = [trk for ti, trk in enumerate(tracks) if ti not in used_tracks]
    return Assignment(matched=matched, unmatched_detections=unmatched, lost_tracks=lost)


def _headings(track: Track, motion_epsilon: float) -> list[float]:
    """Headings (radians) of history steps whose length exceeds motion_epsilon."""
    cents = track.centroid_history()
    out = []
    for (x0, y0), (x1, y1) in zip(cents, cents[1:]):
        dx, dy = x1 - x0, y1 - y0
        if math.hypot(dx, dy) > motion_epsilon:
            out.append(math.atan2(dy, dx))
    return out


def _heading_delta_deg(h0: float, h1: float) -> float:
    d = abs(math.degrees(h1 - h0)) % 360.0
    return min(d, 360.0 - d)


def extract_features(track: Track, frame_timestamp: float,
                     heading_threshold_deg: float = 45.0,
                     motion_epsilon: float = 0.5,
                     speed_window: int = 1) -> FeatureRecord:
    """Movement features for one active track at the given frame time.

    Speed is the centroid displacement of the last step (or the mean over the
    last ``speed_window`` steps). Direction changes count consecutive heading
    deltas above the threshold, ignoring steps shorter than motion_epsilon.
    """
    if track.state != "active" or not track.bbox_history:
        raise ValueError("features require an active track with history")
    cents = track.centroid_history()
    steps = [math.hypot(x1 - x0, y1 - y0)
             for (x0, y0), (x1, y1) in zip(cents, cents[1:])]
    if not steps:
        speed = 0.0
    else:
        window = steps[-max(1, speed_window):]
        speed = sum(window) / len(window)

    headings = _headings(track, motion_epsilon)
    changes = sum(
        1 for h0, h1 in zip(headings, headings[1:])
        if _heading_delta_deg(h0, h1) > heading_threshold_deg
    )

    dwell = q3(frame_timestamp) - track.id
    if dwell < 0:
        raise ValueError(f"frame_timestamp {frame_timestamp} precedes track id {track.id}")
    return FeatureRecord(
        object_id=track.id,
        speed=q3(speed),
        direction_changes=changes,
        dwell=q3(dwell),
        bbox=track.bbox.quantized(),
    )


class FrameOrderError(ValueError):
    pass


@dataclass
class TrackerConfig:
    iou_threshold: float = 0.3
    heading_threshold_deg: float = 45.0
    motion_epsilon: float = 0.5
    speed_window: int = 1


class Tracker:
    """Sequential per-camera tracker: one writer owns the state.

    ``process_frame`` is deterministic in (state, detections, meta); after each
    frame it publishes an immutable FrameFeatureSet snapshot.
    """

    def __init__(self, camera_id: str, config: TrackerConfig | None = None):
        self.camera_id = camera_id
        self.config = config or TrackerConfig()
        self.active: list[Track] = []
        self.lost: list[Track] = []
        self._seen_ids: set[float] = set()
        self._last_frame_index: int | None = None

    def _new_track_id(self, frame_timestamp: float, offset: int) -> float:
        # Several objects can first appear in the same frame; stagger their
        # first-detection timestamps on the 3dp grid so ids stay unique.
        tid = q3(frame_timestamp + 0.001 * offset)
        while tid in self._seen_ids:
            tid = q3(tid + 0.001)
        return tid

    def process_frame(self, detections: list[Detection], frame_index: int,
                      frame_timestamp: float) -> FrameFeatureSet:
        if self._last_frame_index is not None and frame_index <= self._last_frame_index:
            raise FrameOrderError(
                f"frame {frame_index} not after {self._last_frame_index}")
        self._last_frame_index = frame_index
        frame_timestamp = q3(frame_timestamp)

        assignment = associate(self.active, detections, self.config.iou_threshold)

        for trk, di in assignment.matched:
            trk.append(frame_index, detections[di].bbox)

        for trk in assignment.lost_tracks:
            trk.mark_lost()
            self.active.remove(trk)
            self.lost.append(trk)

        for offset, di in enumerate(assignment.unmatched_detections):
            tid = self._new_track_id(frame_timestamp, offset)
            trk = Track(id=tid)
            trk.append(frame_index, detections[di].bbox)
            self._seen_ids.add(tid)
            self.active.append(trk)

        objects = {}
        for trk in self.active:
            rec = extract_features(
                trk, frame_timestamp,
                heading_threshold_deg=self.config.heading_threshold_deg,
                motion_epsilon=self.config.motion_epsilon,
                speed_window=self.config.speed_window,
            )
            objects[rec.object_id] = rec
        return FrameFeatureSet(
            frame_index=frame_index,
            camera_id=self.camera_id,
            timestamp=frame_timestamp,
            objects=objects,
        )
