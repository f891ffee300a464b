"""Cornell / Jacquard parsing, split construction, and label-consistent
augmentation.

Cornell layout (possibly nested in subdirectories):
    pcdNNNNr.png       RGB image
    pcdNNNN.txt        ASCII point cloud; depth is re-projected onto the
                       image grid through each point's row-major index
    pcdNNNNcpos.txt    positive rectangles, 4 corner lines "x y" per grasp
    pcdNNNNcneg.txt    negative rectangles (parsed, kept separate, unused)
    object_labels.txt  optional "sample_id<TAB>object_id" mapping at the root

Jacquard layout (flat or nested):
    <stem>_grasps.txt         lines "x;y;theta_deg;opening;jaw"
    <stem>_RGB.png
    <stem>_perfect_depth.tiff (or _stereo_depth.tiff)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import GraspRectangle, fold_angle

log = logging.getLogger(__name__)

CORNELL_COLS = 640


@dataclass
class GraspSample:
    """One annotated scene: RGB, metric depth (NaN where invalid), and the
    positive ground-truth rectangles."""

    rgb: np.ndarray
    depth: np.ndarray
    rects: list[GraspRectangle]
    object_id: str
    source_id: str
    negatives: list[GraspRectangle] | None = None

    def __post_init__(self):
        if not self.rects:
            raise ValueError(f"sample {self.source_id}: no usable grasp rectangles")


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "image_wise"
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("image_wise", "object_wise"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must be in (0, 1)")


def rects_from_corners(corner_sets: np.ndarray) -> list[GraspRectangle]:
    """Rebuild rectangles from (N, 4, 2) corner arrays in file order: the
    first edge runs along the gripper opening, the second along a jaw."""
    rects = []
    for quad in corner_sets:
        center = quad.mean(axis=0)
        e_open = quad[1] - quad[0]
        e_jaw = quad[2] - quad[1]
        width = float(np.hypot(*e_open))
        height = float(np.hypot(*e_jaw))
        angle = fold_angle(math.atan2(e_open[1], e_open[0]))
        rects.append(GraspRectangle((float(center[0]), float(center[1])), angle, width, height))
    return rects


def _read_corner_file(path: Path) -> tuple[list[GraspRectangle], int]:
    """Read a Cornell rectangle file; returns (rects, number skipped as corrupt)."""
    values = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            x, y = line.split()[:2]
            values.append((float(x), float(y)))
    quads = np.array(values, dtype=float).reshape(-1, 4, 2) if values else np.empty((0, 4, 2))
    rects = []
    skipped = 0
    for quad in quads:
        if not np.isfinite(quad).all():
            skipped += 1
            continue
        try:
            rects.extend(rects_from_corners(quad[None]))
        except ValueError:
            skipped += 1
    return rects, skipped


def _read_cornell_depth(path: Path, shape: tuple[int, int]) -> np.ndarray:
    """Re-project an ASCII point-cloud file onto the image grid.

    Each data line carries x y z ... index, index = row * 640 + col. Pixels
    with no point stay NaN.
    """
    depth = np.full(shape, np.nan)
    with open(path) as f:
        for line in f:
            if line.startswith("DATA"):
                break
        data = np.loadtxt(f, ndmin=2)
    if data.size == 0:
        return depth
    z = data[:, 2]
    index = data[:, 4].astype(int)
    rows, cols = np.divmod(index, CORNELL_COLS)
    keep = (rows >= 0) & (rows < shape[0]) & (cols >= 0) & (cols < shape[1])
    depth[rows[keep], cols[keep]] = z[keep]
    return depth


def _load_object_labels(root: Path) -> dict[str, str]:
    mapping = {}
    label_file = root / "object_labels.txt"
    if label_file.exists():
        with open(label_file) as f:
            for line in f:
                line = line.strip()
                if line:
                    sample_id, object_id = line.split("\t")
                    mapping[sample_id] = object_id
    return mapping


def parse_cornell(root_path) -> list[GraspSample]:
    """Load every Cornell sample under `root_path`.

    Corrupt annotations (non-finite corners) are skipped with a logged count.
    Without an object_labels.txt mapping, object ids fall back to the first
    three digits of the image number (consecutive shots of one object).
    """
    root = Path(root_path)
    pos_files = sorted(root.rglob("pcd*cpos.txt"))
    if not pos_files:
        raise FileNotFoundError(f"no Cornell annotation files under {root}")
    labels = _load_object_labels(root)

    samples = []
    total_skipped = 0
    for pos_file in pos_files:
        stem = pos_file.name[: -len("cpos.txt")]  # pcdNNNN
        rgb_file = pos_file.with_name(stem + "r.png")
        cloud_file = pos_file.with_name(stem + ".txt")
        for required in (rgb_file, cloud_file):
            if not required.exists():
                raise FileNotFoundError(f"sample {stem}: missing {required.name}")
        rgb = np.asarray(Image.open(rgb_file).convert("RGB"))
        depth = _read_cornell_depth(cloud_file, rgb.shape[:2])
        rects, skipped = _read_corner_file(pos_file)
        total_skipped += skipped
        neg_file = pos_file.with_name(stem + "cneg.txt")
        negatives, _ = _read_corner_file(neg_file) if neg_file.exists() else ([], 0)
        if not rects:
            log.warning("sample %s: all annotations corrupt, dropping", stem)
            continue
        number = stem[len("pcd"):]
        object_id = labels.get(stem, number[:3])
        samples.append(
            GraspSample(
                rgb=rgb, depth=depth, rects=rects, object_id=object_id, source_id=stem,
                negatives=negatives,
            )
        )
    if total_skipped:
        log.warning("skipped %d corrupt rectangle annotations", total_skipped)
    if not samples:
        raise FileNotFoundError(f"no usable Cornell samples under {root}")
    return samples


def parse_jacquard(root_path) -> list[GraspSample]:
    """Load every Jacquard scene under `root_path`."""
    root = Path(root_path)
    grasp_files = sorted(root.rglob("*_grasps.txt"))
    if not grasp_files:
        raise FileNotFoundError(f"no Jacquard grasp files under {root}")

    samples = []
    for grasp_file in grasp_files:
        stem = grasp_file.name[: -len("_grasps.txt")]
        rgb_file = grasp_file.with_name(stem + "_RGB.png")
        depth_file = grasp_file.with_name(stem + "_perfect_depth.tiff")
        if not depth_file.exists():
            depth_file = grasp_file.with_name(stem + "_stereo_depth.tiff")
        for required in (rgb_file, depth_file):
            if not required.exists():
                raise FileNotFoundError(f"sample {stem}: missing {required.name}")
        rgb = np.asarray(Image.open(rgb_file).convert("RGB"))
        depth = np.asarray(Image.open(depth_file), dtype=float)
        depth = np.where(depth <= 0.0, np.nan, depth)  # Jacquard marks invalid as <= 0

        rects = []
        with open(grasp_file) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                x, y, theta_deg, opening, jaw = (float(v) for v in line.split(";")[:5])
                rects.append(
                    GraspRectangle((x, y), fold_angle(math.radians(theta_deg)), opening, jaw)
                )
        if not rects:
            log.warning("sample %s: empty grasp list, dropping", stem)
            continue
        # <sceneid>_<objectid>; the object id is everything after the first _
        object_id = stem.split("_", 1)[1] if "_" in stem else stem
        samples.append(
            GraspSample(rgb=rgb, depth=depth, rects=rects, object_id=object_id, source_id=stem)
        )
    if not samples:
        raise FileNotFoundError(f"no usable Jacquard samples under {root}")
    return samples


def make_split(samples: list[GraspSample], spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Partition sample ids into (train, test), deterministically per seed.

    object_wise keeps every object entirely on one side.
    """
    rng = np.random.default_rng(spec.seed)
    n_train = int(round(spec.train_fraction * len(samples)))
    if spec.mode == "image_wise":
        ids = [s.source_id for s in samples]
        order = rng.permutation(len(ids))
        train = [ids[i] for i in order[:n_train]]
        test = [ids[i] for i in order[n_train:]]
    else:
        by_object: dict[str, list[str]] = {}
        for s in samples:
            by_object.setdefault(s.object_id, []).append(s.source_id)
        objects = sorted(by_object)
        order = rng.permutation(len(objects))
        train, test = [], []
        for i in order:
            bucket = train if len(train) < n_train else test
            bucket.extend(by_object[objects[i]])
    return sorted(train), sorted(test)


def save_manifest(path, samples: list[GraspSample]):
    """One `sample_id<TAB>object_id` line per sample."""
    with open(path, "w") as f:
        for s in samples:
            f.write(f"{s.source_id}\t{s.object_id}\n")


def load_manifest(path) -> list[tuple[str, str]]:
    entries = []
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if line:
                sample_id, object_id = line.split("\t")
                entries.append((sample_id, object_id))
    return entries


def _shift_image(img: np.ndarray, dx: int, dy: int, fill) -> np.ndarray:
    out = np.full_like(img, fill)
    h, w = img.shape[:2]
    src_x0, src_x1 = max(0, -dx), min(w, w - dx)
    src_y0, src_y1 = max(0, -dy), min(h, h - dy)
    if src_x0 < src_x1 and src_y0 < src_y1:
        out[src_y0 + dy : src_y1 + dy, src_x0 + dx : src_x1 + dx] = img[
            src_y0:src_y1, src_x0:src_x1
        ]
    return out


def augment(
    sample: GraspSample,
    op: str,
    params=None,
    rng: np.random.Generator | None = None,
) -> GraspSample:
    """Apply one label-consistent augmentation.

    op="crop":      params = (x0, y0, out_w, out_h)
    op="flip_h":    no params; x -> W-1-x, angle -> pi - angle
    op="translate": params = (dx, dy) integer pixels

    Rectangles whose centers leave the frame are dropped; at least one must
    survive. When params is None they are drawn from `rng` so that all
    current centers stay in frame.
    """
    h, w = sample.rgb.shape[:2]
    centers = np.array([r.center for r in sample.rects])

    if op == "flip_h":
        rgb = sample.rgb[:, ::-1].copy()
        depth = sample.depth[:, ::-1].copy()
        rects = [
            GraspRectangle((w - 1 - r.center[0], r.center[1]), math.pi - r.angle, r.width, r.height)
            for r in sample.rects
        ]
        return replace(sample, rgb=rgb, depth=depth, rects=rects)

    if op == "translate":
        if params is None:
            if rng is None:
                raise ValueError("translate needs params or rng")
            lo_dx = -int(centers[:, 0].min())
            hi_dx = int(w - 1 - centers[:, 0].max())
            lo_dy = -int(centers[:, 1].min())
            hi_dy = int(h - 1 - centers[:, 1].max())
            span = min(w, h) // 8
            dx = int(rng.integers(max(lo_dx, -span), min(hi_dx, span) + 1))
            dy = int(rng.integers(max(lo_dy, -span), min(hi_dy, span) + 1))
        else:
            dx, dy = (int(v) for v in params)
        rgb = _shift_image(sample.rgb, dx, dy, 0)
        depth = _shift_image(sample.depth, dx, dy, np.nan)
        rects = [
            r.translated(dx, dy)
            for r in sample.rects
            if 0 <= r.center[0] + dx < w and 0 <= r.center[1] + dy < h
        ]
        if not rects:
            raise ValueError("augmentation emptied labels")
        return replace(sample, rgb=rgb, depth=depth, rects=rects)

    if op == "crop":
        if params is None:
            if rng is None:
                raise ValueError("crop needs params or rng")
            side = int(min(w, h) * (0.75 + 0.25 * rng.random()))
            x_lo = max(0, int(centers[:, 0].max()) - side + 1)
            x_hi = min(w - side, int(centers[:, 0].min()))
            y_lo = max(0, int(centers[:, 1].max()) - side + 1)
            y_hi = min(h - side, int(centers[:, 1].min()))
            if x_hi < x_lo or y_hi < y_lo:  # centers spread wider than the crop
                x0, y0, out_w, out_h = 0, 0, w, h
            else:
                x0 = int(rng.integers(x_lo, x_hi + 1))
                y0 = int(rng.integers(y_lo, y_hi + 1))
                out_w = out_h = side
        else:
            x0, y0, out_w, out_h = (int(v) for v in params)
        if x0 < 0 or y0 < 0 or x0 + out_w > w or y0 + out_h > h:
            raise ValueError("crop window outside image")
        rgb = sample.rgb[y0 : y0 + out_h, x0 : x0 + out_w].copy()
        depth = sample.depth[y0 : y0 + out_h, x0 : x0 + out_w].copy()
        rects = [
            r.translated(-x0, -y0)
            for r in sample.rects
            if 0 <= r.center[0] - x0 < out_w and 0 <= r.center[1] - y0 < out_h
        ]
        if not rects:
            raise ValueError("augmentation emptied labels")
        return replace(sample, rgb=rgb, depth=depth, rects=rects)

    raise ValueError(f"unknown augmentation {op!r}")


def random_augment(sample: GraspSample, rng: np.random.Generator) -> GraspSample:
    """One randomly drawn crop / flip / translate, retried if labels empty."""
    for _ in range(10):
        op = ("crop", "flip_h", "translate")[int(rng.integers(3))]
        try:
            return augment(sample, op, rng=rng)
        except ValueError:
            continue
    return sample


def inpaint_depth(depth: np.ndarray) -> np.ndarray:
    """Fill NaN pixels with the nearest valid depth value."""
    invalid = ~np.isfinite(depth)
    if not invalid.any():
        return depth
    if invalid.all():
        raise ValueError("depth entirely invalid")
    _, (iy, ix) = ndimage.distance_transform_edt(invalid, return_indices=True)
    return depth[iy, ix]


def input_window(shape: tuple[int, int], out_size: int) -> tuple[int, int, float]:
    """Center square crop + resize mapping image -> network frame; returns
    (x0, y0, scale) with  net = (img - (x0, y0)) * scale."""
    h, w = shape
    side = min(h, w)
    x0 = (w - side) // 2
    y0 = (h - side) // 2
    return x0, y0, out_size / side


def project_rects(sample: GraspSample, out_size: int) -> list[GraspRectangle]:
    """Ground-truth rectangles mapped into the network input frame; drops
    rectangles whose centers leave the crop."""
    x0, y0, scale = input_window(sample.rgb.shape[:2], out_size)
    side = min(sample.rgb.shape[:2])
    rects = []
    for r in sample.rects:
        cx, cy = r.center[0] - x0, r.center[1] - y0
        if 0 <= cx < side and 0 <= cy < side:
            rects.append(GraspRectangle((cx, cy), r.angle, r.width, r.height).scaled(scale))
    return rects


def to_network_input(sample: GraspSample, out_size: int = 320) -> np.ndarray:
    """Network tensor: 4 x S x S float32 with channels R, G, B, depth.

    RGB is scaled to [0, 1]; depth is inpainted, standardized to zero mean
    and clipped to [-1, 1].
    """
    if out_size % 16 != 0:
        raise ValueError("out_size must be divisible by 16")
    x0, y0, _ = input_window(sample.rgb.shape[:2], out_size)
    side = min(sample.rgb.shape[:2])
    rgb = sample.rgb[y0 : y0 + side, x0 : x0 + side]
    depth = inpaint_depth(sample.depth[y0 : y0 + side, x0 : x0 + side])

    rgb_img = Image.fromarray(rgb).resize((out_size, out_size), Image.BILINEAR)
    rgb_out = np.asarray(rgb_img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    zoom = out_size / side
    depth_out = ndimage.zoom(depth, zoom, order=1, mode="nearest", grid_mode=True)
    depth_out = np.clip(depth_out - depth_out.mean(), -1.0, 1.0)

    return np.concatenate([rgb_out, depth_out[None].astype(np.float32)], axis=0)
