"""Oriented grasp rectangles, the Jaccard overlap metric, and camera transforms.

Angles live on the half-open interval [0, pi): a parallel-plate grasp is
unchanged by a half turn, so every angle is folded modulo pi at construction
time and all angle comparisons use that symmetry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_LN2 = 2.0 * math.log(2.0)


class DegenerateRectangleError(ValueError):
    """A rectangle with non-positive area was passed where overlap is needed."""


def fold_angle(theta: float) -> float:
    """Fold an angle into [0, pi) under the half-turn grasp symmetry."""
    a = math.fmod(theta, math.pi)
    if a < 0.0:
        a += math.pi
    if a >= math.pi:  # fmod can land exactly on pi through rounding
        a -= math.pi
    return a


def angle_difference(a: float, b: float) -> float:
    """Minimal difference between two grasp angles, in [0, pi/2].

    Grasps are pi-periodic, so the distance is computed modulo pi and then
    folded onto [0, pi/2].
    """
    d = math.fmod(abs(a - b), math.pi)
    return min(d, math.pi - d)


@dataclass(frozen=True)
class GraspRectangle:
    """An oriented rectangle in image pixels.

    center: (x, y) continuous pixel coordinates.
    angle:  direction of the gripper opening, radians, folded into [0, pi).
    width:  extent along the opening direction (how far the jaws spread).
    height: extent perpendicular to it (the jaw plates).
    """

    center: tuple[float, float]
    angle: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0.0 and self.height > 0.0):
            raise DegenerateRectangleError(
                f"degenerate rectangle: width={self.width}, height={self.height}"
            )
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "angle", fold_angle(float(self.angle)))
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "height", float(self.height))

    @property
    def axis(self) -> np.ndarray:
        """Unit vector along the gripper opening."""
        return np.array([math.cos(self.angle), math.sin(self.angle)])

    @property
    def normal(self) -> np.ndarray:
        """Unit vector along the jaw plates (perpendicular to the opening)."""
        return np.array([-math.sin(self.angle), math.cos(self.angle)])

    @property
    def area(self) -> float:
        return self.width * self.height

    def scaled(self, factor: float) -> "GraspRectangle":
        """Rectangle with center and extents multiplied by `factor`."""
        cx, cy = self.center
        return GraspRectangle(
            (cx * factor, cy * factor), self.angle, self.width * factor, self.height * factor
        )

    def translated(self, dx: float, dy: float) -> "GraspRectangle":
        cx, cy = self.center
        return GraspRectangle((cx + dx, cy + dy), self.angle, self.width, self.height)


@dataclass(frozen=True)
class GraspPose:
    """A decoded pixel-space grasp: where, at what angle, how wide, how good."""

    center: tuple[float, float]
    angle: float
    width: float
    quality: float

    def __post_init__(self):
        if not (0.0 <= self.quality <= 1.0):
            raise ValueError(f"quality must be in [0, 1], got {self.quality}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "angle", fold_angle(float(self.angle)))


@dataclass(frozen=True)
class MetricConfig:
    """One strictness level of the rectangle metric."""

    jaccard_threshold: float = 0.25
    angle_threshold: float = math.pi / 6

    def __post_init__(self):
        if not (0.0 < self.jaccard_threshold < 1.0):
            raise ValueError("jaccard_threshold must be in (0, 1)")
        if not (0.0 < self.angle_threshold <= math.pi / 2):
            raise ValueError("angle_threshold must be in (0, pi/2]")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a rigid camera-to-world transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def project(self, world_point: np.ndarray) -> tuple[float, float]:
        """Forward pinhole projection of a world point to pixel coordinates."""
        pc = self.rotation.T @ (np.asarray(world_point, dtype=float) - self.translation)
        if pc[2] <= 0.0:
            raise ValueError("point is behind the camera")
        return (self.fx * pc[0] / pc[2] + self.cx, self.fy * pc[1] / pc[2] + self.cy)


@dataclass(frozen=True)
class WorldGrasp:
    """A grasp lifted off the image plane: metric position, yaw, jaw opening."""

    position: tuple[float, float, float]
    yaw: float
    width: float


def rect_corners(rect: GraspRectangle) -> np.ndarray:
    """Four corners of the rectangle, counter-clockwise, as a (4, 2) array.

    Starts from the corner opposite the opening direction (center - half the
    opening - half a jaw plate); the order is part of the on-disk contract for
    annotation round-trips.
    """
    c = np.array(rect.center)
    u = rect.axis * (rect.width / 2.0)
    v = rect.normal * (rect.height / 2.0)
    return np.stack([c - u - v, c + u - v, c + u + v, c - u + v])


def _polygon_area(points: np.ndarray) -> float:
    """Shoelace area of a simple polygon (absolute value)."""
    if len(points) < 3:
        return 0.0
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of `subject` against convex `clipper`."""
    # Half-plane orientation depends on the clipper's winding.
    cx = clipper[:, 0]
    cy = clipper[:, 1]
    signed = 0.5 * (float(np.dot(cx, np.roll(cy, -1)) - np.dot(cy, np.roll(cx, -1))))
    sign = 1.0 if signed >= 0.0 else -1.0

    output = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        points = output
        output = []
        m = len(points)
        if m == 0:
            break
        for j in range(m):
            px, py = points[j]
            qx, qy = points[(j + 1) % m]
            p_in = sign * (ex * (py - ay) - ey * (px - ax)) >= 0.0
            q_in = sign * (ex * (qy - ay) - ey * (qx - ax)) >= 0.0
            if p_in:
                output.append((px, py))
            if p_in != q_in:
                # Intersection of segment pq with the clip line through a, b.
                denom = ex * (py - qy) - ey * (px - qx)
                if denom != 0.0:
                    s = (ex * (py - ay) - ey * (px - ax)) / denom
                    output.append((px + s * (qx - px), py + s * (qy - py)))
    return np.array(output) if output else np.empty((0, 2))


def jaccard(a: GraspRectangle, b: GraspRectangle) -> float:
    """Intersection over union of two oriented rectangles, by polygon clipping."""
    area_a = a.area
    area_b = b.area
    if area_a <= 0.0 or area_b <= 0.0:
        raise DegenerateRectangleError("degenerate rectangle")
    inter_poly = _clip_polygon(rect_corners(a), rect_corners(b))
    inter = _polygon_area(inter_poly)
    inter = min(inter, area_a, area_b)  # clamp clipping round-off
    union = area_a + area_b - inter
    return inter / union


def rectangle_metric(
    pred: GraspRectangle, truths: list[GraspRectangle], cfg: MetricConfig = MetricConfig()
) -> bool:
    """True iff `pred` overlaps some ground truth strictly above the Jaccard
    threshold with angle difference strictly below the angle threshold."""
    if not truths:
        raise ValueError("no ground truth")
    for t in truths:
        if (
            jaccard(pred, t) > cfg.jaccard_threshold
            and angle_difference(pred.angle, t.angle) < cfg.angle_threshold
        ):
            return True
    return False


def image_to_world(pose: GraspPose, depth_at_center: float, cam: CameraModel) -> WorldGrasp:
    """Back-project a pixel grasp through the pinhole model and the rigid
    camera-to-world transform.

    The jaw opening is converted with the similar-triangles rule width_px *
    depth / fx; the yaw is the world-frame heading of the opening direction.
    """
    if depth_at_center <= 0.0:
        raise ValueError("invalid depth")
    x, y = pose.center
    z = float(depth_at_center)
    cam_point = np.array([(x - cam.cx) / cam.fx * z, (y - cam.cy) / cam.fy * z, z])
    world_point = cam.rotation @ cam_point + cam.translation

    # Direction of a small pixel step along the grasp axis, lifted to 3D.
    d_cam = np.array(
        [math.cos(pose.angle) / cam.fx, math.sin(pose.angle) / cam.fy, 0.0]
    )
    d_world = cam.rotation @ d_cam
    yaw = fold_angle(math.atan2(d_world[1], d_world[0]))

    width_m = pose.width * z / cam.fx
    return WorldGrasp(position=tuple(float(v) for v in world_point), yaw=yaw, width=width_m)
