"""Learned camera geometry: plane homography, radial lens distortion, and the
quantities derived from them (horizon, heading, bounding-box size model).

Three pixel spaces appear in the pipeline:

* detector space -- what the detector sees: the frame scaled down and cropped
  (see :mod:`seatrack.ingest`);
* screen space -- raw full-resolution pixels, where hand labels live and the
  lens distortion is observed;
* projected space -- distortion-corrected pixels, where the homography of the
  sea plane is exact.

The homography maps world meters to projected pixels homogeneously:
``z_p * (x_p, y_p, 1)^T = H (x_w, y_w, 1)^T``. ``z_p`` scales with the
distance from the camera; its sign for in-front points is a fixed property of
H (``CameraModel.front_sign``), and distances are ``abs(z_p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import (
    AtInfinity,
    DegenerateRow,
    NoConvergence,
    NoHorizonIntersection,
    NonPositiveDistance,
    OnHorizon,
    SizeBelowMinimum,
)
from .geodesy import GeoPoint, WorldPoint

_SCALE_EPS = 1e-12

UNDISTORT_TOL_PX = 1e-6
UNDISTORT_MAX_ITER = 50


@dataclass(frozen=True)
class Homography:
    """Invertible 3x3 map from world plane coordinates to projected pixels."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography contains non-finite entries")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @cached_property
    def inv(self) -> np.ndarray:
        try:
            inv = np.linalg.inv(self.m)
        except np.linalg.LinAlgError as exc:
            raise ValueError("homography is singular") from exc
        inv.flags.writeable = False
        return inv


@dataclass(frozen=True)
class ProjectedPoint:
    """Distortion-corrected pixel position plus the homogeneous scale z_p."""

    x: float
    y: float
    z: float


@dataclass(frozen=True)
class ScreenPoint:
    """Raw pixel position at the calibration (full) resolution."""

    x: float
    y: float


@dataclass(frozen=True)
class DistortionModel:
    """Single-coefficient radial distortion about the image center.

    Maps screen to projected pixels by
    ``x_p = x_s + (x_s - x_c) * (1 + k1 * r^2)`` (likewise y) with
    ``r^2 = (x_s - x_c)^2 + (y_s - y_c)^2``. Note the leading ``x_s`` term:
    the map is roughly a doubling about the center, with the linear factor
    absorbed by the homography during calibration.
    """

    k1: float
    center: tuple[float, float]


@dataclass(frozen=True)
class BBoxSizeModel:
    """Apparent bounding-box size as a function of distance.

    ``s = a / z + min_size`` per axis, in the pixel space the model was tuned
    for (defaults: detector space, i.e. half resolution).
    """

    a_x: float = 1500.0
    a_y: float = 850.0
    min_size: float = 25.0

    def scaled(self, factor: float) -> BBoxSizeModel:
        """Same model expressed in a pixel space scaled by ``factor``."""
        return BBoxSizeModel(self.a_x * factor, self.a_y * factor, self.min_size * factor)


@dataclass(frozen=True)
class HorizonLine:
    """Pixel-space line a*x + b*y + c = 0 where deprojection diverges.

    ``degenerate`` is set when a and b both vanish (fronto-parallel plane,
    e.g. the identity homography): no finite pixel satisfies the line.
    """

    a: float
    b: float
    c: float
    degenerate: bool

    def y_at(self, x: float) -> float:
        if abs(self.b) < _SCALE_EPS:
            raise NoHorizonIntersection(f"horizon does not cross vertical x={x}")
        return -(self.c + self.a * x) / self.b


def project(w: WorldPoint, h: Homography) -> ProjectedPoint:
    """Map a world point through the homography.

    Raises:
        AtInfinity: the homogeneous scale vanishes (point maps to the
            image's line at infinity).
    """
    q = h.m @ np.array([w.x, w.y, 1.0])
    if abs(q[2]) < _SCALE_EPS:
        raise AtInfinity(f"world point ({w.x}, {w.y}) projects to infinity")
    return ProjectedPoint(q[0] / q[2], q[1] / q[2], q[2])


def deproject(x_p: float, y_p: float, h: Homography) -> tuple[WorldPoint, float]:
    """Map a projected pixel back to the plane; returns (world point, z_p).

    Raises:
        OnHorizon: the pixel sits on the plane's vanishing line, where
            1/z_p crosses zero.
    """
    u = h.inv @ np.array([x_p, y_p, 1.0])
    if abs(u[2]) < _SCALE_EPS:
        raise OnHorizon(f"pixel ({x_p}, {y_p}) lies on the horizon")
    z = 1.0 / u[2]
    return WorldPoint(u[0] / u[2], u[1] / u[2]), z


def screen_to_projected(s: ScreenPoint, d: DistortionModel) -> tuple[float, float]:
    """Apply lens distortion correction (screen -> projected pixels)."""
    xc, yc = d.center
    dx, dy = s.x - xc, s.y - yc
    r2 = dx * dx + dy * dy
    f = 1.0 + d.k1 * r2
    return s.x + dx * f, s.y + dy * f


def projected_to_screen(
    x_p: float,
    y_p: float,
    d: DistortionModel,
    tol: float = UNDISTORT_TOL_PX,
    max_iter: int = UNDISTORT_MAX_ITER,
    damping: float = 1.0,
) -> ScreenPoint:
    """Invert :func:`screen_to_projected` by damped fixed-point iteration.

    The distortion preserves the direction from the center, so the fixed
    point ``(dx, dy) <- (p - c) / (2 + k1 * r^2)`` contracts on the monotone
    branch (guaranteed in-frame for |k1| <= 1e-6). The iterate starts at
    ``(p - c) / 2`` (the exact inverse for k1 = 0) and is checked against the
    forward map.

    Raises:
        NoConvergence: residual above ``tol`` pixels after ``max_iter``
            iterations (point outside the invertible region).
    """
    xc, yc = d.center
    px, py = x_p - xc, y_p - yc
    dx, dy = px / 2.0, py / 2.0
    residual = math.inf
    for _ in range(max_iter):
        r2 = dx * dx + dy * dy
        denom = 2.0 + d.k1 * r2
        if abs(denom) < _SCALE_EPS:
            break
        nx, ny = px / denom, py / denom
        dx += damping * (nx - dx)
        dy += damping * (ny - dy)
        back = screen_to_projected(ScreenPoint(xc + dx, yc + dy), d)
        residual = math.hypot(back[0] - x_p, back[1] - y_p)
        if residual <= tol:
            return ScreenPoint(xc + dx, yc + dy)
    raise NoConvergence(
        f"undistortion of ({x_p}, {y_p}) stalled at residual {residual:.3g} px"
    )


def horizon_line(h: Homography) -> HorizonLine:
    """Vanishing line of the plane in projected pixel coordinates.

    Coefficients are the third row of H^-1: pixels with
    ``a*x + b*y + c = 0`` have 1/z_p = 0. Homogeneous in H (invariant under
    positive scaling).
    """
    a, b, c = (float(v) for v in h.inv[2])
    degenerate = abs(a) < _SCALE_EPS and abs(b) < _SCALE_EPS
    return HorizonLine(a, b, c, degenerate)


def bbox_from_distance(z_p: float, m: BBoxSizeModel = BBoxSizeModel()) -> tuple[float, float]:
    """Expected bounding-box size (s_x, s_y) at distance ``z_p``.

    Raises:
        NonPositiveDistance: ``z_p`` must be a positive distance magnitude.
    """
    if z_p <= 0:
        raise NonPositiveDistance(f"distance must be positive, got {z_p}")
    return m.a_x / z_p + m.min_size, m.a_y / z_p + m.min_size


def distance_from_bbox(
    s_x: float, s_y: float, m: BBoxSizeModel = BBoxSizeModel()
) -> tuple[float, float]:
    """Distances implied by each bounding-box axis: (a_x/(s_x-b), a_y/(s_y-b)).

    Raises:
        SizeBelowMinimum: a size at or below the model minimum corresponds
            to no finite distance.
    """
    if s_x <= m.min_size or s_y <= m.min_size:
        raise SizeBelowMinimum(
            f"box size ({s_x}, {s_y}) not above model minimum {m.min_size}"
        )
    return m.a_x / (s_x - m.min_size), m.a_y / (s_y - m.min_size)


def y_p_from_distance(z_p: float, x_p: float, h: Homography) -> float:
    """Projected y at which a pixel column x_p meets the plane at scale z_p.

    Solves the third homogeneous row of the deprojection,
    ``1/z_p = g31*x_p + g32*y_p + g33`` with g = H^-1, for y_p. ``z_p`` is
    signed; pass ``front_sign * distance`` for a physical distance.

    Raises:
        DegenerateRow: the y coefficient of the row vanishes.
    """
    g = h.inv[2]
    if abs(g[1]) < _SCALE_EPS:
        raise DegenerateRow("inverse homography has no y dependence in its third row")
    if z_p == 0:
        raise AtInfinity("z_p must be nonzero")
    return (1.0 / z_p - g[0] * x_p - g[2]) / g[1]


@dataclass(frozen=True)
class CameraModel:
    """Complete learned camera: homography, distortion, geographic origin.

    Immutable after construction; derived quantities (horizon, heading,
    front sign) are cached.
    """

    homography: Homography
    distortion: DistortionModel
    origin: GeoPoint
    image_size: tuple[int, int] = (1280, 720)

    @cached_property
    def horizon(self) -> HorizonLine:
        return horizon_line(self.homography)

    @cached_property
    def front_sign(self) -> float:
        """Sign of z_p for on-plane points in front of the camera.

        The visible plane lies below the horizon in image coordinates
        (y grows downward), so the sign is probed there. For a degenerate
        horizon every pixel shares one sign.
        """
        hor = self.horizon
        if hor.degenerate:
            return math.copysign(1.0, hor.c)
        xc = self.distortion.center[0]
        if abs(hor.b) < _SCALE_EPS:
            # vertical horizon; probe to the right of it
            x_hor = -hor.c / hor.a
            val = hor.a * (x_hor + self.image_size[0]) + hor.b * 0.0 + hor.c
            return math.copysign(1.0, val)
        y_hor = hor.y_at(xc)
        val = hor.a * xc + hor.b * (y_hor + self.image_size[1]) + hor.c
        return math.copysign(1.0, val)

    @cached_property
    def heading(self) -> float:
        """Compass bearing of the viewing direction, radians in (-pi, pi].

        Deprojects the horizon point above the image center; that ray is the
        plane direction seen at infinity. Its sign is fixed by comparing with
        a far in-front point just below the horizon.
        """
        hor = self.horizon
        xc = self.distortion.center[0]
        if hor.degenerate:
            raise NoHorizonIntersection("fronto-parallel camera has no horizon")
        y_hor = hor.y_at(xc)  # NoHorizonIntersection if vertical horizon
        v = self.homography.inv @ np.array([xc, y_hor, 1.0])
        # far point on the in-front (sea) side, a fraction of the image below
        probe_y = y_hor + 0.02 * self.image_size[1]
        w_far, _ = deproject(xc, probe_y, self.homography)
        if v[0] * w_far.x + v[1] * w_far.y < 0:
            v = -v
        return math.atan2(v[0], v[1])

    # -- composed coordinate chains -------------------------------------

    def world_to_projected(self, w: WorldPoint) -> ProjectedPoint:
        return project(w, self.homography)

    def projected_to_world(self, x_p: float, y_p: float) -> tuple[WorldPoint, float]:
        return deproject(x_p, y_p, self.homography)

    def world_to_screen(self, w: WorldPoint) -> ScreenPoint:
        p = project(w, self.homography)
        return projected_to_screen(p.x, p.y, self.distortion)

    def screen_to_world(self, s: ScreenPoint) -> tuple[WorldPoint, float]:
        x_p, y_p = screen_to_projected(s, self.distortion)
        return deproject(x_p, y_p, self.homography)


def camera_heading(cam: CameraModel) -> float:
    """Compass bearing of the camera viewing direction, radians."""
    return cam.heading


# -- serialization -------------------------------------------------------
#
# Human-readable key/value document. Floats are written with repr(), which
# emits the shortest decimal string (<= 17 significant digits) that parses
# back to the identical IEEE double, so serialize -> parse -> serialize is
# byte-identical.

_CAMERA_FIELDS = (
    "homography",
    "k1",
    "center_x",
    "center_y",
    "origin_lat_deg",
    "origin_lon_deg",
    "image_width",
    "image_height",
)


def camera_to_text(cam: CameraModel) -> str:
    rows = " ".join(repr(float(v)) for v in cam.homography.m.ravel())
    lines = [
        f"homography = {rows}",
        f"k1 = {cam.distortion.k1!r}",
        f"center_x = {cam.distortion.center[0]!r}",
        f"center_y = {cam.distortion.center[1]!r}",
        f"origin_lat_deg = {cam.origin.lat_deg!r}",
        f"origin_lon_deg = {cam.origin.lon_deg!r}",
        f"image_width = {cam.image_size[0]}",
        f"image_height = {cam.image_size[1]}",
    ]
    return "\n".join(lines) + "\n"


def camera_from_text(text: str) -> CameraModel:
    values: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed camera file line: {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = val
    missing = [k for k in _CAMERA_FIELDS if k not in values]
    if missing:
        raise ValueError(f"camera file missing fields: {', '.join(missing)}")
    h = np.array([float(v) for v in values["homography"].split()], dtype=float)
    if h.size != 9:
        raise ValueError(f"homography needs 9 entries, got {h.size}")
    return CameraModel(
        homography=Homography(h.reshape(3, 3)),
        distortion=DistortionModel(
            k1=float(values["k1"]),
            center=(float(values["center_x"]), float(values["center_y"])),
        ),
        origin=GeoPoint.from_degrees(
            float(values["origin_lat_deg"]), float(values["origin_lon_deg"])
        ),
        image_size=(int(values["image_width"]), int(values["image_height"])),
    )


def save_camera(cam: CameraModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(camera_to_text(cam))


def load_camera(path) -> CameraModel:
    with open(path, encoding="utf-8") as fh:
        return camera_from_text(fh.read())
