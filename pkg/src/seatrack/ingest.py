"""Detection and GPS file ingestion, detector-space geometry, label export.

Detector space is the frame scaled down by ``detector_scale`` and cropped to
the top-left ``crop`` pixels; the detector also carries a fixed systematic
offset that is corrected before scaling back up to calibration (screen)
space.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

from .camera import BBoxSizeModel, CameraModel, bbox_from_distance, projected_to_screen
from .exceptions import AtInfinity, NoConvergence, OutOfRange, ParseError
from .geodesy import GeoPoint, gps_to_local

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    """One detector output box (center/size in pixels of its source space)."""

    frame_index: int
    timestamp: float
    confidence: float
    center: tuple[float, float]
    size: tuple[float, float]


@dataclass(frozen=True)
class GpsSample:
    timestamp: float
    point: GeoPoint


@dataclass(frozen=True)
class FrameGeometry:
    """Relation between detector space and full-resolution screen space."""

    full_size: tuple[int, int] = (1280, 720)
    detector_scale: float = 2.0
    crop: tuple[int, int] = (640, 192)
    detector_offset: tuple[float, float] = (0.0, -2.0)

    def __post_init__(self):
        if self.detector_scale < 1:
            raise ValueError("detector_scale must be >= 1")
        if (
            self.crop[0] > self.full_size[0] / self.detector_scale
            or self.crop[1] > self.full_size[1] / self.detector_scale
        ):
            raise ValueError("crop exceeds the scaled frame")


DETECTION_HEADER = ["frame", "timestamp_s", "confidence", "cx", "cy", "sx", "sy"]
GPS_TRACK_HEADER = ["timestamp_s", "lat_deg", "lon_deg"]


def parse_detections(path) -> list[Detection]:
    """Read the `frame,timestamp_s,confidence,cx,cy,sx,sy` CSV.

    Returns detections sorted by (frame index, descending confidence).

    Raises:
        ParseError: malformed row, with its line number.
    """
    out: list[Detection] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DETECTION_HEADER:
            raise ParseError(1, f"expected header {','.join(DETECTION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise ParseError(lineno, f"expected 7 fields, got {len(row)}")
            try:
                frame = int(row[0])
                ts, conf, cx, cy, sx, sy = (float(v) for v in row[1:])
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in (ts, conf, cx, cy, sx, sy)):
                raise ParseError(lineno, "non-finite value")
            if not 0.0 <= conf <= 1.0:
                raise ParseError(lineno, f"confidence {conf} outside [0, 1]")
            if sx <= 0 or sy <= 0:
                raise ParseError(lineno, f"non-positive box size ({sx}, {sy})")
            out.append(Detection(frame, ts, conf, (cx, cy), (sx, sy)))
    out.sort(key=lambda d: (d.frame_index, -d.confidence))
    return out


def write_detections(detections: list[Detection], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DETECTION_HEADER)
        for d in detections:
            writer.writerow(
                [d.frame_index, repr(d.timestamp), repr(d.confidence),
                 repr(d.center[0]), repr(d.center[1]),
                 repr(d.size[0]), repr(d.size[1])]
            )


def read_gps_track(path) -> list[GpsSample]:
    """Read the `timestamp_s,lat_deg,lon_deg` CSV; timestamps must increase."""
    out: list[GpsSample] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != GPS_TRACK_HEADER:
            raise ParseError(1, f"expected header {','.join(GPS_TRACK_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(lineno, f"expected 3 fields, got {len(row)}")
            try:
                ts, lat, lon = (float(v) for v in row)
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            if out and ts <= out[-1].timestamp:
                raise ParseError(lineno, "timestamps must be strictly increasing")
            out.append(GpsSample(ts, GeoPoint.from_degrees(lat, lon)))
    return out


def write_gps_track(samples: list[GpsSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(GPS_TRACK_HEADER)
        for s in samples:
            writer.writerow([repr(s.timestamp), repr(s.point.lat_deg), repr(s.point.lon_deg)])


def interpolate_gps(track: list[GpsSample], t: float) -> GeoPoint:
    """Componentwise linear interpolation of a GPS track at time ``t``.

    Raises:
        OutOfRange: ``t`` outside the track's time span (no extrapolation).
    """
    if len(track) < 2:
        raise OutOfRange("track needs at least 2 samples")
    if t < track[0].timestamp or t > track[-1].timestamp:
        raise OutOfRange(
            f"t={t} outside track span [{track[0].timestamp}, {track[-1].timestamp}]"
        )
    # binary search for the bracketing segment
    lo, hi = 0, len(track) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if track[mid].timestamp <= t:
            lo = mid
        else:
            hi = mid
    a, b = track[lo], track[hi]
    if t == a.timestamp:
        return a.point
    frac = (t - a.timestamp) / (b.timestamp - a.timestamp)
    return GeoPoint(
        a.point.lat + frac * (b.point.lat - a.point.lat),
        a.point.lon + frac * (b.point.lon - a.point.lon),
    )


def detector_to_calibration_space(d: Detection, g: FrameGeometry) -> Detection:
    """Correct the detector's fixed offset, then scale up to screen pixels."""
    cx = (d.center[0] + g.detector_offset[0]) * g.detector_scale
    cy = (d.center[1] + g.detector_offset[1]) * g.detector_scale
    return replace(
        d,
        center=(cx, cy),
        size=(d.size[0] * g.detector_scale, d.size[1] * g.detector_scale),
    )


def calibration_to_detector_space(d: Detection, g: FrameGeometry) -> Detection:
    """Exact inverse of :func:`detector_to_calibration_space`."""
    cx = d.center[0] / g.detector_scale - g.detector_offset[0]
    cy = d.center[1] / g.detector_scale - g.detector_offset[1]
    return replace(
        d,
        center=(cx, cy),
        size=(d.size[0] / g.detector_scale, d.size[1] / g.detector_scale),
    )


@dataclass(frozen=True)
class LabeledBox:
    """One training label: normalized center/size relative to the crop."""

    frame_index: int
    class_id: int
    cx: float
    cy: float
    w: float
    h: float


def export_labels(
    track: list[GpsSample],
    cam: CameraModel,
    frames: list[tuple[int, float]],
    m: BBoxSizeModel = BBoxSizeModel(),
    g: FrameGeometry = FrameGeometry(),
) -> list[LabeledBox]:
    """Predict one detector-space training box per frame from a GPS track.

    Per frame: GPS -> world -> projected -> screen -> detector space; the
    box size comes from the distance/size model (detector space). Frames
    whose timestamp is outside the track, behind the camera, on the horizon,
    or whose box lies fully outside the crop are skipped.
    """
    out: list[LabeledBox] = []
    for frame_index, ts in frames:
        try:
            geo = interpolate_gps(track, ts)
        except OutOfRange:
            continue
        w = gps_to_local(geo, cam.origin)
        try:
            p = cam.world_to_projected(w)
        except AtInfinity:
            logger.warning("frame %d: point at infinity, skipped", frame_index)
            continue
        if math.copysign(1.0, p.z) != cam.front_sign:
            continue  # behind the camera / above the horizon
        try:
            s = projected_to_screen(p.x, p.y, cam.distortion)
        except NoConvergence:
            logger.warning("frame %d: undistortion did not converge, skipped", frame_index)
            continue
        cx = s.x / g.detector_scale - g.detector_offset[0]
        cy = s.y / g.detector_scale - g.detector_offset[1]
        sx, sy = bbox_from_distance(abs(p.z), m)
        # drop boxes with no overlap with the crop
        if cx + sx / 2 < 0 or cx - sx / 2 > g.crop[0] or cy + sy / 2 < 0 or cy - sy / 2 > g.crop[1]:
            continue
        out.append(
            LabeledBox(
                frame_index=frame_index,
                class_id=0,
                cx=cx / g.crop[0],
                cy=cy / g.crop[1],
                w=sx / g.crop[0],
                h=sy / g.crop[1],
            )
        )
    return out


def write_labels(boxes: list[LabeledBox], out_dir) -> list[str]:
    """One text file per frame, one `class cx cy w h` record per box."""
    from pathlib import Path

    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    by_frame: dict[int, list[LabeledBox]] = {}
    for b in boxes:
        by_frame.setdefault(b.frame_index, []).append(b)
    written = []
    for frame_index in sorted(by_frame):
        path = directory / f"frame_{frame_index:06d}.txt"
        with open(path, "w", encoding="utf-8") as fh:
            for b in by_frame[frame_index]:
                fh.write(f"{b.class_id} {b.cx!r} {b.cy!r} {b.w!r} {b.h!r}\n")
        written.append(str(path))
    return written
