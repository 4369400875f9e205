"""Bit-exact text encoding of frame feature sets.

One frame is a block of LF-terminated lines::

    FRAME <idx>
    CAM <camera id>
    TS <seconds, 3dp>
    OBJ <id, 3dp> SPEED=<3dp> DIRCH=<int> DWELL=<3dp> BBOX=<x0>,<y0>,<x1>,<y1>
    END <idx>

Objects are emitted in ascending id order and every real is rendered with
exactly three decimals, so the encoding is canonical: encode(decode(encode(f)))
equals encode(f) byte for byte. The decoder never yields a partial frame; it
reports Incomplete until a full FRAME..END block with matching indices has
arrived.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .tracking import BoundingBox, FeatureRecord, FrameFeatureSet

_CAM_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class WireError(ValueError):
    """Malformed line inside a frame block."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class FramingError(WireError):
    """FRAME/END indices disagree or the block structure is broken."""


def _r(v: float) -> str:
    return f"{v:.3f}"


def encode_frame(f: FrameFeatureSet) -> bytes:
    """Canonical byte encoding of one frame."""
    if not _CAM_RE.match(f.camera_id):
        raise ValueError(f"camera id not encodable: {f.camera_id!r}")
    lines = [f"FRAME {f.frame_index}", f"CAM {f.camera_id}", f"TS {_r(f.timestamp)}"]
    for oid in sorted(f.objects):
        rec = f.objects[oid]
        b = rec.bbox
        lines.append(
            f"OBJ {_r(oid)} SPEED={_r(rec.speed)} DIRCH={rec.direction_changes} "
            f"DWELL={_r(rec.dwell)} "
            f"BBOX={_r(b.x_min)},{_r(b.y_min)},{_r(b.x_max)},{_r(b.y_max)}"
        )
    lines.append(f"END {f.frame_index}")
    return ("\n".join(lines) + "\n").encode("ascii")


@dataclass(frozen=True)
class Complete:
    frame: FrameFeatureSet
    consumed: int


class Incomplete:
    """No full frame block in the buffer yet."""


INCOMPLETE = Incomplete()

_OBJ_RE = re.compile(
    r"^OBJ (?P<id>\d+\.\d+) SPEED=(?P<speed>\d+\.\d+) DIRCH=(?P<dirch>\d+) "
    r"DWELL=(?P<dwell>\d+\.\d+) "
    r"BBOX=(?P<x0>\d+\.\d+),(?P<y0>\d+\.\d+),(?P<x1>\d+\.\d+),(?P<y1>\d+\.\d+)$"
)


def decode_frame(buffer: bytes) -> Complete | Incomplete:
    """Decode the first full frame block from the buffer.

    Returns Incomplete while the buffer holds only a prefix of a block. A
    malformed complete line raises WireError naming its line number (1-based
    from the FRAME line); FRAME/END index mismatch raises FramingError.
    """
    pos = 0
    lineno = 0
    frame_index = None
    camera_id = None
    timestamp = None
    objects: dict[float, FeatureRecord] = {}
    stage = "FRAME"

    while True:
        nl = buffer.find(b"\n", pos)
        if nl < 0:
            return INCOMPLETE
        raw = buffer[pos:nl]
        pos = nl + 1
        lineno += 1
        try:
            line = raw.decode("ascii")
        except UnicodeDecodeError:
            raise WireError("not ascii text", lineno)

        if stage == "FRAME":
            if not line.startswith("FRAME ") or not line[6:].isdigit():
                raise WireError(f"expected 'FRAME <idx>', got {line!r}", lineno)
            frame_index = int(line[6:])
            stage = "CAM"
        elif stage == "CAM":
            if not line.startswith("CAM ") or not _CAM_RE.match(line[4:]):
                raise WireError(f"expected 'CAM <id>', got {line!r}", lineno)
            camera_id = line[4:]
            stage = "TS"
        elif stage == "TS":
            if not re.match(r"^TS \d+\.\d+$", line):
                raise WireError(f"expected 'TS <seconds>', got {line!r}", lineno)
            timestamp = float(line[3:])
            stage = "BODY"
        else:  # BODY: zero or more OBJ lines then END
            if line.startswith("END"):
                m = re.match(r"^END (\d+)$", line)
                if not m:
                    raise WireError(f"malformed END line: {line!r}", lineno)
                end_index = int(m.group(1))
                if end_index != frame_index:
                    raise FramingError(
                        f"END index {end_index} != FRAME index {frame_index}", lineno)
                frame = FrameFeatureSet(
                    frame_index=frame_index,
                    camera_id=camera_id,
                    timestamp=timestamp,
                    objects=objects,
                )
                return Complete(frame=frame, consumed=pos)
            m = _OBJ_RE.match(line)
            if not m:
                raise WireError(f"malformed OBJ line: {line!r}", lineno)
            oid = float(m.group("id"))
            if oid in objects:
                raise WireError(f"duplicate object id {m.group('id')}", lineno)
            rec = FeatureRecord(
                object_id=oid,
                speed=float(m.group("speed")),
                direction_changes=int(m.group("dirch")),
                dwell=float(m.group("dwell")),
                bbox=BoundingBox(
                    float(m.group("x0")), float(m.group("y0")),
                    float(m.group("x1")), float(m.group("y1")),
                ),
            )
            objects[oid] = rec


class StreamDecoder:
    """Incremental decoder over an arbitrarily chunked byte stream.

    Frame boundaries never depend on chunk boundaries: any partition of the
    same bytes yields the same frame sequence.
    """

    def __init__(self):
        self._buf = bytearray()
        self.frames_decoded = 0

    def feed(self, chunk: bytes) -> list[FrameFeatureSet]:
        self._buf.extend(chunk)
        out = []
        while True:
            res = decode_frame(bytes(self._buf))
            if isinstance(res, Incomplete):
                return out
            del self._buf[:res.consumed]
            self.frames_decoded += 1
            out.append(res.frame)

    @property
    def residue(self) -> bytes:
        return bytes(self._buf)
