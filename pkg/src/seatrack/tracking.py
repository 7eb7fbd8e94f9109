"""Multi-object tracking of detections with constant-velocity Kalman filters.

Association is greedy nearest-neighbor: every detection in a frame is
accounted to the closest predicted trajectory within the gate radius, each
trajectory updates with the closest detection accounted to it, leftover
detections spawn new trajectories, and trajectories starve out after a fixed
number of unobserved frames. Ties break by trajectory id, then detection
index, so identical inputs always produce identical output.

Pixel coordinates here are projected (distortion-corrected) space.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraModel
from .exceptions import NoTrajectories, OnHorizon, SingularInnovation
from .ingest import Detection

_INIT_VELOCITY_STD = 100.0


@dataclass(frozen=True)
class KalmanConfig:
    """Constant-velocity filter matrices over state (x, vx, y, vy).

    Velocity is per frame step (unit coupling in the transition); the
    process noise scales with the configured frame interval ``dt`` seconds.
    """

    dt: float = 1.0
    f: np.ndarray = None
    h_obs: np.ndarray = None
    q: np.ndarray = None
    r: np.ndarray = None

    def __post_init__(self):
        if self.f is None:
            object.__setattr__(
                self,
                "f",
                np.array(
                    [[1.0, 1.0, 0.0, 0.0],
                     [0.0, 1.0, 0.0, 0.0],
                     [0.0, 0.0, 1.0, 1.0],
                     [0.0, 0.0, 0.0, 1.0]]
                ),
            )
        if self.h_obs is None:
            object.__setattr__(
                self,
                "h_obs",
                np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]),
            )
        if self.q is None:
            d2 = self.dt * self.dt
            object.__setattr__(self, "q", np.diag([0.0, d2, 0.0, d2]))
        if self.r is None:
            object.__setattr__(self, "r", np.diag([100.0, 100.0]))


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray  # (x, vx, y, vy)
    cov: np.ndarray  # 4x4 symmetric PSD

    @property
    def position(self) -> tuple[float, float]:
        return float(self.mean[0]), float(self.mean[2])


def initial_state(x: float, y: float, c: KalmanConfig) -> KalmanState:
    """State for a fresh trajectory: observed position, uninformative velocity."""
    mean = np.array([x, 0.0, y, 0.0])
    cov = np.diag([c.r[0, 0], _INIT_VELOCITY_STD**2, c.r[1, 1], _INIT_VELOCITY_STD**2])
    return KalmanState(mean, cov)


def kalman_predict(s: KalmanState, c: KalmanConfig) -> KalmanState:
    mean = c.f @ s.mean
    cov = c.f @ s.cov @ c.f.T + c.q
    return KalmanState(mean, 0.5 * (cov + cov.T))


def kalman_update(s: KalmanState, z: tuple[float, float], c: KalmanConfig) -> KalmanState:
    """Standard Kalman correction with measurement ``z`` = (x, y).

    Raises:
        SingularInnovation: innovation covariance is not invertible.
    """
    innovation = np.asarray(z, dtype=float) - c.h_obs @ s.mean
    s_cov = c.h_obs @ s.cov @ c.h_obs.T + c.r
    try:
        gain = np.linalg.solve(s_cov.T, (s.cov @ c.h_obs.T).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from None
    mean = s.mean + gain @ innovation
    cov = (np.eye(4) - gain @ c.h_obs) @ s.cov
    return KalmanState(mean, 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class TrackPoint:
    """One trajectory entry; coasted (unobserved) entries carry the prediction."""

    frame_index: int
    timestamp: float
    center: tuple[float, float]
    confidence: float
    observed: bool
    detection: Detection | None = None


@dataclass
class Trajectory:
    id: int
    points: list[TrackPoint] = field(default_factory=list)
    kalman: KalmanState | None = None
    frames_since_update: int = 0

    @property
    def observed_points(self) -> list[TrackPoint]:
        return [p for p in self.points if p.observed]

    @property
    def start_frame(self) -> int:
        return self.points[0].frame_index

    @property
    def end_frame(self) -> int:
        return self.points[-1].frame_index

    def trim_trailing_coasted(self) -> None:
        while self.points and not self.points[-1].observed:
            self.points.pop()


@dataclass(frozen=True)
class TrackerConfig:
    gate_radius: float = 80.0
    finish_after: int = 10
    percentile: float = 0.8


class Tracker:
    """Stateful per-stream tracker; feed frames in increasing order."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig(), kc: KalmanConfig = KalmanConfig()):
        self.cfg = cfg
        self.kc = kc
        self.live: list[Trajectory] = []
        self.finished: list[Trajectory] = []
        self._next_id = 0

    def step(self, frame_index: int, timestamp: float, detections: list[Detection]) -> None:
        """Advance one frame: predict, associate, update, spawn, retire."""
        predicted: dict[int, KalmanState] = {}
        for traj in self.live:
            predicted[traj.id] = kalman_predict(traj.kalman, self.kc)

        # each detection goes to the nearest predicted trajectory inside the gate
        assigned: dict[int, list[int]] = {traj.id: [] for traj in self.live}
        unassigned: list[int] = []
        for det_idx, det in enumerate(detections):
            best_id, best_dist = None, self.cfg.gate_radius
            for traj in self.live:
                px, py = predicted[traj.id].position
                dist = math.hypot(det.center[0] - px, det.center[1] - py)
                if dist < best_dist or (dist == best_dist and best_id is not None and traj.id < best_id):
                    best_id, best_dist = traj.id, dist
            if best_id is None:
                unassigned.append(det_idx)
            else:
                assigned[best_id].append(det_idx)

        # each trajectory updates with the closest detection accounted to it
        still_live: list[Trajectory] = []
        for traj in self.live:
            state = predicted[traj.id]
            candidates = assigned[traj.id]
            if candidates:
                px, py = state.position
                best_idx = min(
                    candidates,
                    key=lambda i: (
                        math.hypot(detections[i].center[0] - px, detections[i].center[1] - py),
                        i,
                    ),
                )
                det = detections[best_idx]
                state = kalman_update(state, det.center, self.kc)
                traj.kalman = state
                traj.frames_since_update = 0
                traj.points.append(
                    TrackPoint(frame_index, det.timestamp, det.center, det.confidence, True, det)
                )
            else:
                traj.kalman = state
                traj.frames_since_update += 1
                traj.points.append(
                    TrackPoint(frame_index, timestamp, state.position, 0.0, False, None)
                )
            if traj.frames_since_update > self.cfg.finish_after:
                traj.trim_trailing_coasted()
                self.finished.append(traj)
            else:
                still_live.append(traj)
        self.live = still_live

        # unaccounted detections are new ships
        for det_idx in unassigned:
            det = detections[det_idx]
            traj = Trajectory(id=self._next_id)
            self._next_id += 1
            traj.kalman = initial_state(det.center[0], det.center[1], self.kc)
            traj.points.append(
                TrackPoint(frame_index, det.timestamp, det.center, det.confidence, True, det)
            )
            self.live.append(traj)

    def finish_all(self) -> list[Trajectory]:
        """Retire everything still live and return all finished trajectories."""
        for traj in self.live:
            traj.trim_trailing_coasted()
            if traj.points:
                self.finished.append(traj)
        self.live = []
        self.finished.sort(key=lambda t: t.id)
        return self.finished


def run_tracker(
    detections: list[Detection],
    cfg: TrackerConfig = TrackerConfig(),
    kc: KalmanConfig = KalmanConfig(),
) -> list[Trajectory]:
    """Track a whole detection list (one stream) and return finished trajectories."""
    if not detections:
        return []
    by_frame: dict[int, list[Detection]] = {}
    for d in detections:
        by_frame.setdefault(d.frame_index, []).append(d)
    frames = sorted(by_frame)
    clock = FrameClock(detections)
    tracker = Tracker(cfg, kc)
    for frame_index in range(frames[0], frames[-1] + 1):
        tracker.step(frame_index, clock.timestamp(frame_index), by_frame.get(frame_index, []))
    return tracker.finish_all()


class FrameClock:
    """Timestamps for frames with no detections, interpolated from those with."""

    def __init__(self, detections: list[Detection]):
        seen: dict[int, float] = {}
        for d in detections:
            seen.setdefault(d.frame_index, d.timestamp)
        self._frames = np.array(sorted(seen))
        self._times = np.array([seen[f] for f in self._frames])

    def timestamp(self, frame_index: int) -> float:
        if len(self._frames) == 1:
            return float(self._times[0])
        return float(np.interp(frame_index, self._frames, self._times))


def arc_length(traj: Trajectory, cam: CameraModel) -> float:
    """Total world path length of a trajectory's accepted detections, meters.

    Points on the horizon are skipped.
    """
    world = []
    for p in traj.observed_points:
        try:
            w, _ = cam.projected_to_world(p.center[0], p.center[1])
        except OnHorizon:
            continue
        world.append(w)
    total = 0.0
    for a, b in zip(world, world[1:]):
        total += math.hypot(b.x - a.x, b.y - a.y)
    return total


def score(traj: Trajectory, cam: CameraModel, cfg: TrackerConfig = TrackerConfig()) -> float:
    """Detection-confidence percentile times log world path length.

    Nearest-rank percentile over the accepted detections' confidences;
    trajectories shorter than 1 m score -inf so they are never selected.
    """
    observed = traj.observed_points
    if not observed:
        return -math.inf
    length = arc_length(traj, cam)
    if length <= 1.0:
        return -math.inf
    confidences = sorted(p.confidence for p in observed)
    rank = max(1, math.ceil(cfg.percentile * len(confidences)))
    return confidences[rank - 1] * math.log(length)


def select_and_stitch(
    finished: list[Trajectory],
    cfg: TrackerConfig,
    cam: CameraModel,
) -> Trajectory:
    """Pick the best-scoring trajectory and splice compatible fragments onto it.

    A fragment qualifies when its frame span does not overlap the current
    result, the gap is at most ``finish_after`` frames, and the boundary
    positions are within twice the gate radius. Fragments attach greedily,
    smallest gap first (ties: higher score, then lower id).

    Raises:
        NoTrajectories: nothing to select from.
    """
    if not finished:
        raise NoTrajectories("no finished trajectories")
    scores = {t.id: score(t, cam, cfg) for t in finished}
    chosen = max(finished, key=lambda t: (scores[t.id], -t.id))
    merged = Trajectory(id=chosen.id, points=list(chosen.points),
                        kalman=chosen.kalman, frames_since_update=0)
    pool = [t for t in finished if t.id != chosen.id and t.points]

    while True:
        candidates = []
        for t in pool:
            if t.end_frame < merged.start_frame:
                gap = merged.start_frame - t.end_frame
                a, b = t.points[-1].center, merged.points[0].center
            elif t.start_frame > merged.end_frame:
                gap = t.start_frame - merged.end_frame
                a, b = merged.points[-1].center, t.points[0].center
            else:
                continue  # overlapping span: a competing ship, not a fragment
            if gap > cfg.finish_after:
                continue
            if math.hypot(a[0] - b[0], a[1] - b[1]) > 2.0 * cfg.gate_radius:
                continue
            candidates.append((gap, -scores[t.id], t.id, t))
        if not candidates:
            break
        candidates.sort(key=lambda c: c[:3])
        _, _, _, best = candidates[0]
        merged.points = sorted(merged.points + best.points, key=lambda p: p.frame_index)
        pool = [t for t in pool if t.id != best.id]

    frames = [p.frame_index for p in merged.points]
    assert all(a < b for a, b in zip(frames, frames[1:])), "stitched frames must increase"
    return merged


TRAJECTORY_HEADER = ["traj_id", "frame", "timestamp_s", "cx", "cy", "confidence", "observed"]


def write_trajectories(trajectories: list[Trajectory], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for traj in trajectories:
            for p in traj.points:
                writer.writerow(
                    [traj.id, p.frame_index, repr(p.timestamp),
                     repr(p.center[0]), repr(p.center[1]),
                     repr(p.confidence), int(p.observed)]
                )
