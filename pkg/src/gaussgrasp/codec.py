"""Gaussian soft-label encoding of grasp rectangles into per-pixel maps,
and decoding of predicted maps back into grasp poses.

The encoder marks the central strip of each rectangle (the middle
`center_fraction` of the opening extent, spanning the full jaw extent).
Inside the strip the quality is a Gaussian of the distance to the
rectangle's central axis, scaled per rectangle so the strip boundary sits
exactly at `min_quality`; on the axis itself it is exactly 1.  The grasp
angle is discretized into `num_angle_bins` classes and spread over
neighbouring bins with a second Gaussian, clipped to zero beyond
`angle_window` bins.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

from .geometry import GraspPose, GraspRectangle, TWO_LN2

PYRAMID_SCALES = (0.25, 0.5, 1.0)

_MAPS_MAGIC = b"GGMP"
_MAPS_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    """Knobs of the label codec.

    encoding="uniform" reproduces the flat baseline labelling (quality 1 on
    the whole strip, one-hot angle) used for the encoding ablation.
    """

    num_angle_bins: int = 18
    angle_window: int = 3
    angle_sigma: float = 1.5
    min_quality: float = 0.5
    center_fraction: float = 1.0 / 3.0
    encoding: str = "gaussian"
    width_scale: float = 150.0
    smooth_sigma: float = 2.0
    smooth_window: int = 11

    def __post_init__(self):
        if self.num_angle_bins < 2:
            raise ValueError("num_angle_bins must be >= 2")
        if not (1 <= self.angle_window < self.num_angle_bins):
            raise ValueError("angle_window must be in [1, num_angle_bins)")
        if not (0.0 < self.center_fraction <= 1.0):
            raise ValueError("center_fraction must be in (0, 1]")
        if self.angle_sigma <= 0.0:
            raise ValueError("angle_sigma must be positive")
        if self.encoding not in ("gaussian", "uniform"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.width_scale <= 0.0:
            raise ValueError("width_scale must be positive")

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class AngleQualityVector:
    """Soft angle-class labels for one grasp angle: 1 at the labelled bin,
    Gaussian falloff over its neighbours, zero outside the window."""

    values: np.ndarray
    peak_bin: int


@dataclass(frozen=True)
class GraspMaps:
    """Per-pixel grasp planes at one scale: quality (H, W), angle classes
    (K, H, W), normalized width (H, W)."""

    quality: np.ndarray
    angle: np.ndarray
    width: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        if self.quality.ndim != 2 or self.width.shape != self.quality.shape:
            raise ValueError("quality and width must be matching (H, W) planes")
        if self.angle.ndim != 3 or self.angle.shape[1:] != self.quality.shape:
            raise ValueError("angle must be (K, H, W) matching quality")

    @property
    def shape(self) -> tuple[int, int]:
        return self.quality.shape

    @property
    def num_angle_bins(self) -> int:
        return self.angle.shape[0]

    def assert_valid_label(self):
        """Check the invariants encoded labels must satisfy (not network output)."""
        for name, plane in (("quality", self.quality), ("angle", self.angle), ("width", self.width)):
            if plane.min() < 0.0 or plane.max() > 1.0:
                raise AssertionError(f"{name} plane leaves [0, 1]")
        active = self.quality > 0.0
        if active.any():
            cols = self.angle[:, active]
            peaks = cols.max(axis=0)
            if not np.allclose(peaks, 1.0):
                raise AssertionError("active pixels must carry a unit-peak angle vector")
            if (np.isclose(cols, 1.0).sum(axis=0) != 1).any():
                raise AssertionError("angle peak must be unique per pixel")


def angle_to_bin(theta: float, cfg: EncoderConfig = EncoderConfig()) -> int:
    """Class index of a grasp angle: floor(theta / pi * K), clamped at K - 1
    so theta = pi shares the last bin."""
    if not (0.0 <= theta <= math.pi):
        raise ValueError(f"angle {theta} outside [0, pi]")
    k = int(math.floor(theta / math.pi * cfg.num_angle_bins))
    return min(k, cfg.num_angle_bins - 1)


def bin_to_angle(k: int, cfg: EncoderConfig = EncoderConfig()) -> float:
    """Representative angle of a class: the bin center (k + 0.5) * pi / K."""
    return (k + 0.5) * math.pi / cfg.num_angle_bins


def angle_quality_vector(theta: float, cfg: EncoderConfig = EncoderConfig()) -> AngleQualityVector:
    k = angle_to_bin(theta, cfg)
    values = np.zeros(cfg.num_angle_bins)
    if cfg.encoding == "uniform":
        values[k] = 1.0
    else:
        lo = max(0, k - cfg.angle_window)
        hi = min(cfg.num_angle_bins - 1, k + cfg.angle_window)
        idx = np.arange(lo, hi + 1)
        values[idx] = np.exp(-((idx - k) ** 2) / (2.0 * cfg.angle_sigma**2))
    return AngleQualityVector(values=values, peak_bin=k)


def point_quality(
    point: tuple[float, float], rect: GraspRectangle, cfg: EncoderConfig = EncoderConfig()
) -> float:
    """Grasp quality of one pixel under one rectangle.

    Zero outside the central strip; inside it, exp(-d^2 / (2 sigma_q^2))
    where d is the distance to the rectangle's central axis and sigma_q is
    fixed by quality(min strip boundary) = min_quality.
    """
    dx = point[0] - rect.center[0]
    dy = point[1] - rect.center[1]
    u = rect.axis
    v = rect.normal
    along = dx * u[0] + dy * u[1]  # distance to the central axis
    across = dx * v[0] + dy * v[1]

    d_max = 0.5 * cfg.center_fraction * rect.width
    if abs(along) > d_max or abs(across) > 0.5 * rect.height:
        return 0.0
    if cfg.encoding == "uniform":
        return 1.0
    # sigma_q = d_max / sqrt(2 ln 2)  =>  q(d_max) = min_quality = 0.5
    return math.exp(-(along * along) * TWO_LN2 / (2.0 * d_max * d_max))


def _strip_bbox(rect: GraspRectangle, h: int, w: int, cfg: EncoderConfig):
    """Integer pixel bounding box of the rectangle's central strip, clipped
    to the image; None when it falls fully outside."""
    c = np.array(rect.center)
    u = rect.axis * (0.5 * cfg.center_fraction * rect.width)
    v = rect.normal * (0.5 * rect.height)
    corners = np.stack([c - u - v, c + u - v, c + u + v, c - u + v])
    x0 = max(0, int(math.floor(corners[:, 0].min())))
    x1 = min(w - 1, int(math.ceil(corners[:, 0].max())))
    y0 = max(0, int(math.floor(corners[:, 1].min())))
    y1 = min(h - 1, int(math.ceil(corners[:, 1].max())))
    if x0 > x1 or y0 > y1:
        return None
    return x0, x1, y0, y1


def encode(
    rects: list[GraspRectangle], h: int, w: int, cfg: EncoderConfig = EncoderConfig()
) -> GraspMaps:
    """Rasterize rectangles into quality / angle-class / width planes.

    Overlaps resolve per pixel to the rectangle with the higher point
    quality, so each pixel's angle and width stay consistent with a single
    physical grasp.
    """
    if h <= 0 or w <= 0:
        raise ValueError("map shape must be positive")
    quality = np.zeros((h, w))
    angle = np.zeros((cfg.num_angle_bins, h, w))
    width = np.zeros((h, w))

    for rect in rects:
        box = _strip_bbox(rect, h, w, cfg)
        if box is None:
            continue
        x0, x1, y0, y1 = box
        xs = np.arange(x0, x1 + 1)
        ys = np.arange(y0, y1 + 1)
        gx, gy = np.meshgrid(xs, ys)
        dx = gx - rect.center[0]
        dy = gy - rect.center[1]
        u = rect.axis
        v = rect.normal
        along = dx * u[0] + dy * u[1]
        across = dx * v[0] + dy * v[1]

        d_max = 0.5 * cfg.center_fraction * rect.width
        inside = (np.abs(along) <= d_max) & (np.abs(across) <= 0.5 * rect.height)
        if cfg.encoding == "uniform":
            q = np.where(inside, 1.0, 0.0)
        else:
            q = np.where(inside, np.exp(-(along**2) * TWO_LN2 / (2.0 * d_max * d_max)), 0.0)

        window = quality[y0 : y1 + 1, x0 : x1 + 1]
        better = q > window
        if not better.any():
            continue
        window[better] = q[better]
        vec = angle_quality_vector(rect.angle, cfg)
        angle_window_view = angle[:, y0 : y1 + 1, x0 : x1 + 1]
        angle_window_view[:, better] = vec.values[:, None]
        norm_width = min(rect.width / cfg.width_scale, 1.0)
        width[y0 : y1 + 1, x0 : x1 + 1][better] = norm_width

    return GraspMaps(quality=quality, angle=angle, width=width, scale=1.0)


def encode_pyramid(
    rects: list[GraspRectangle], h: int, w: int, cfg: EncoderConfig = EncoderConfig()
) -> list[GraspMaps]:
    """Encode at 1/4, 1/2 and full resolution, each directly from
    geometrically scaled rectangles rather than by resampling maps."""
    if h % 4 != 0 or w % 4 != 0:
        raise ValueError("height and width must be divisible by 4")
    pyramid = []
    for s in PYRAMID_SCALES:
        scaled = [r.scaled(s) for r in rects]
        maps = encode(scaled, int(h * s), int(w * s), cfg)
        pyramid.append(GraspMaps(maps.quality, maps.angle, maps.width, scale=s))
    return pyramid


def smooth_quality(quality: np.ndarray, cfg: EncoderConfig = EncoderConfig()) -> np.ndarray:
    """Gaussian blur used before peak picking; window 11 px at sigma 2."""
    truncate = (cfg.smooth_window - 1) / 2.0 / cfg.smooth_sigma
    return ndimage.gaussian_filter(quality, sigma=cfg.smooth_sigma, truncate=truncate, mode="nearest")


def decode(maps: GraspMaps, n: int = 1, cfg: EncoderConfig = EncoderConfig()) -> list[GraspPose]:
    """Top-n grasp poses from prediction maps.

    Quality is smoothed, local maxima are ranked by value, and each peak is
    read out as (center, bin-center angle, rescaled width, smoothed quality).
    Peaks inside the half-window border band are ignored: the blur is
    truncated there and padded convolutions make that band unreliable.
    Centers and widths are reported at full scale regardless of maps.scale.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    smoothed = smooth_quality(maps.quality, cfg)
    if not (smoothed > 0.0).any():
        return []
    footprint = np.ones((cfg.smooth_window, cfg.smooth_window))
    local_max = (smoothed == ndimage.maximum_filter(smoothed, footprint=footprint, mode="nearest"))
    local_max &= smoothed > 0.0
    margin = cfg.smooth_window // 2
    if maps.quality.shape[0] > 2 * margin and maps.quality.shape[1] > 2 * margin:
        border = np.zeros_like(local_max)
        border[margin:-margin, margin:-margin] = True
        local_max &= border
    ys, xs = np.nonzero(local_max)
    if len(ys) == 0:
        return []
    order = np.lexsort((xs, ys, -smoothed[ys, xs]))

    # greedy suppression: plateau ties and satellites of an accepted peak
    # (within the smoothing window) are not separate grasps
    k_bins = maps.num_angle_bins
    inv_scale = 1.0 / maps.scale
    poses = []
    accepted: list[tuple[int, int]] = []
    for i in order:
        y, x = int(ys[i]), int(xs[i])
        if any(max(abs(y - ay), abs(x - ax)) < cfg.smooth_window for ay, ax in accepted):
            continue
        accepted.append((y, x))
        k = int(np.argmax(maps.angle[:, y, x]))
        poses.append(
            GraspPose(
                center=(x * inv_scale, y * inv_scale),
                angle=(k + 0.5) * math.pi / k_bins,
                width=float(maps.width[y, x]) * cfg.width_scale * inv_scale,
                quality=float(np.clip(smoothed[y, x], 0.0, 1.0)),
            )
        )
        if len(poses) == n:
            break
    return poses


def pose_to_rectangle(pose: GraspPose) -> GraspRectangle:
    """Rectangle for metric evaluation: jaw extent fixed at half the opening."""
    if pose.width <= 0.0:
        raise ValueError("pose width must be positive")
    return GraspRectangle(
        center=pose.center, angle=pose.angle, width=pose.width, height=pose.width / 2.0
    )


def save_maps(path, pyramid: list[GraspMaps], cfg: EncoderConfig):
    """Write a map pyramid to the binary cache container.

    Layout (little-endian): magic "GGMP", u32 version, u32 H, u32 W, u32 K,
    u32 number of scales, u32 config-hash length, the hash (ascii hex); then
    per scale a f64 scale factor followed by the quality (H'W'), angle
    (K*H'*W') and width (H'W') planes as row-major float32.
    """
    full = max(pyramid, key=lambda m: m.scale)
    h, w = full.shape
    cfg_hash = cfg.hash().encode("ascii")
    with open(path, "wb") as f:
        f.write(_MAPS_MAGIC)
        f.write(
            struct.pack(
                "<6I", _MAPS_VERSION, h, w, full.num_angle_bins, len(pyramid), len(cfg_hash)
            )
        )
        f.write(cfg_hash)
        for maps in sorted(pyramid, key=lambda m: m.scale):
            f.write(struct.pack("<d", maps.scale))
            for plane in (maps.quality, maps.angle, maps.width):
                f.write(np.ascontiguousarray(plane, dtype="<f4").tobytes())


def load_maps(path) -> tuple[list[GraspMaps], str]:
    """Read a map pyramid cache; returns (pyramid, config hash)."""
    with open(path, "rb") as f:
        if f.read(4) != _MAPS_MAGIC:
            raise ValueError(f"{path}: not a grasp-map cache file")
        version, h, w, k, n_scales, hash_len = struct.unpack("<6I", f.read(24))
        if version != _MAPS_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        cfg_hash = f.read(hash_len).decode("ascii")
        pyramid = []
        for _ in range(n_scales):
            (scale,) = struct.unpack("<d", f.read(8))
            hs, ws = int(round(h * scale)), int(round(w * scale))

            def read_plane(shape):
                count = int(np.prod(shape))
                return np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape).astype(float)

            quality = read_plane((hs, ws))
            angle = read_plane((k, hs, ws))
            width = read_plane((hs, ws))
            pyramid.append(GraspMaps(quality, angle, width, scale=scale))
    return pyramid, cfg_hash
