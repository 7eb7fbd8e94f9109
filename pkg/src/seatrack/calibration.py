"""Camera calibration from GPS <-> pixel correspondences alone.

The homography is a conditioned direct linear transform (least squares via
SVD); the distortion coefficient introduces a non-linearity and is found by
brute-force grid search: for each candidate k1, lift the hand-labeled screen
points to projected space, solve for H, and score the reprojection error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .camera import (
    CameraModel,
    DistortionModel,
    Homography,
    ScreenPoint,
    project,
    screen_to_projected,
)
from .exceptions import DegenerateConfiguration, ParseError
from .geodesy import EarthModel, GeoPoint, WorldPoint, gps_to_local

_GAP_EPS = 1e-9


@dataclass(frozen=True)
class Correspondence:
    """One hand-labeled pair: raw screen position and GPS fix at a timestamp."""

    screen: ScreenPoint
    geo: GeoPoint
    timestamp: float


@dataclass(frozen=True)
class K1Grid:
    """Search grid for the distortion coefficient."""

    k1_min: float = -1e-6
    k1_max: float = 0.0
    steps: int = 1000

    def values(self) -> np.ndarray:
        if self.steps < 2:
            raise ValueError("grid needs at least 2 steps")
        return np.linspace(self.k1_min, self.k1_max, self.steps)


@dataclass(frozen=True)
class CalibrationResult:
    camera: CameraModel
    loss: float
    loss_curve: list[tuple[float, float]]


def _conditioning_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin and mean radius to sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    scale = np.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def solve_homography(
    pairs: list[tuple[tuple[float, float], WorldPoint]],
) -> Homography:
    """Least-squares homography from (projected pixel, world point) pairs.

    Builds the 2Nx9 DLT design matrix on Hartley-conditioned coordinates,
    takes the right singular vector of least singular value, undoes the
    conditioning and normalizes h33 = 1.

    Raises:
        DegenerateConfiguration: fewer than 4 pairs, or the least singular
            value is not isolated (e.g. too many collinear world points).
    """
    if len(pairs) < 4:
        raise DegenerateConfiguration(f"need >= 4 pairs, got {len(pairs)}")
    proj = np.array([[p[0], p[1]] for p, _ in pairs], dtype=float)
    world = np.array([[w.x, w.y] for _, w in pairs], dtype=float)

    t_proj = _conditioning_transform(proj)
    t_world = _conditioning_transform(world)
    pn = (t_proj @ np.column_stack([proj, np.ones(len(proj))]).T).T
    wn = (t_world @ np.column_stack([world, np.ones(len(world))]).T).T

    rows = []
    for (x, y, _), (xw, yw, _) in zip(pn, wn):
        rows.append([xw, yw, 1.0, 0.0, 0.0, 0.0, -x * xw, -x * yw, -x])
        rows.append([0.0, 0.0, 0.0, xw, yw, 1.0, -y * xw, -y * yw, -y])
    a = np.asarray(rows)

    _, s, vt = np.linalg.svd(a)
    # the nullspace must be one-dimensional for a unique solution
    if len(s) >= 9 and (s[-2] - s[-1]) <= _GAP_EPS * max(s[0], 1.0):
        raise DegenerateConfiguration(
            f"ambiguous solution: smallest singular values {s[-2]:.3e}, {s[-1]:.3e}"
        )
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_proj) @ hn @ t_world
    if abs(h[2, 2]) < 1e-15:
        raise DegenerateConfiguration("recovered homography has h33 = 0")
    return Homography(h / h[2, 2])


def reprojection_loss(
    h: Homography,
    distortion: DistortionModel,
    pairs: list[tuple[ScreenPoint, WorldPoint]],
) -> float:
    """Sum of squared projected-space residuals over all labeled pairs.

    Labels are lifted screen -> projected with the given distortion;
    predictions come from the homography.
    """
    total = 0.0
    for screen, world in pairs:
        xl, yl = screen_to_projected(screen, distortion)
        p = project(world, h)
        total += (p.x - xl) ** 2 + (p.y - yl) ** 2
    return total


def calibrate(
    pairs: list[Correspondence],
    origin: GeoPoint,
    image_size: tuple[int, int] = (1280, 720),
    grid: K1Grid = K1Grid(),
    earth: EarthModel = EarthModel(),
) -> CalibrationResult:
    """Brute-force k1 against DLT-solved homographies; keep the arg-min.

    For every grid k1 the labels are undistorted with that k1, a homography
    is solved, and the reprojection loss recorded. Ties break toward the
    smaller |k1|. The distortion center is the image center.
    """
    center = (image_size[0] / 2.0, image_size[1] / 2.0)
    world = [gps_to_local(c.geo, origin, earth) for c in pairs]
    labeled = [(c.screen, w) for c, w in zip(pairs, world)]

    best: tuple[float, float, Homography] | None = None
    curve: list[tuple[float, float]] = []
    for k1 in grid.values():
        d = DistortionModel(k1=float(k1), center=center)
        lifted = [(screen_to_projected(c.screen, d), w) for c, w in zip(pairs, world)]
        h = solve_homography(lifted)
        loss = reprojection_loss(h, d, labeled)
        curve.append((float(k1), loss))
        if best is None or (loss, abs(k1)) < (best[0], abs(best[1])):
            best = (loss, float(k1), h)

    assert best is not None
    loss, k1, h = best
    cam = CameraModel(
        homography=h,
        distortion=DistortionModel(k1=k1, center=center),
        origin=origin,
        image_size=image_size,
    )
    return CalibrationResult(camera=cam, loss=loss, loss_curve=curve)


# -- file interfaces -----------------------------------------------------

CORRESPONDENCE_HEADER = ["timestamp_s", "x_s", "y_s", "lat_deg", "lon_deg"]
LOSS_CURVE_HEADER = ["k1", "loss"]


def read_correspondences(path) -> list[Correspondence]:
    """Read the `timestamp_s,x_s,y_s,lat_deg,lon_deg` CSV."""
    out: list[Correspondence] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CORRESPONDENCE_HEADER:
            raise ParseError(1, f"expected header {','.join(CORRESPONDENCE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(lineno, f"expected 5 fields, got {len(row)}")
            try:
                ts, xs, ys, lat, lon = (float(v) for v in row)
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            out.append(
                Correspondence(
                    screen=ScreenPoint(xs, ys),
                    geo=GeoPoint.from_degrees(lat, lon),
                    timestamp=ts,
                )
            )
    return out


def write_correspondences(pairs: list[Correspondence], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CORRESPONDENCE_HEADER)
        for c in pairs:
            writer.writerow(
                [repr(c.timestamp), repr(c.screen.x), repr(c.screen.y),
                 repr(c.geo.lat_deg), repr(c.geo.lon_deg)]
            )


def write_loss_curve(curve: list[tuple[float, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_CURVE_HEADER)
        for k1, loss in curve:
            writer.writerow([repr(k1), repr(loss)])
