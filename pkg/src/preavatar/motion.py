"""Keypoint-driven image animation (first-order local affine motion).

Coordinates are normalized: the image spans [-1, 1]^2 with (-1, -1) at the
top-left pixel centre and (1, 1) at the bottom-right one, x horizontal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

# coordinates this close to an integer pixel index are treated as exact
_SNAP = 1e-9


class SingularJacobianError(ValueError):
    pass


@dataclass(frozen=True)
class Keypoint:
    position: np.ndarray  # (2,) as (x, y)
    jacobian: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(2)
        j = np.asarray(self.jacobian, dtype=np.float64).reshape(2, 2)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(j))):
            raise ValueError("keypoint position and jacobian must be finite")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "jacobian", j)

    def to_dict(self) -> dict:
        return {"p": self.position.tolist(), "j": self.jacobian.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Keypoint":
        return cls(np.asarray(d["p"]), np.asarray(d.get("j", np.eye(2).tolist())))


KeypointSet = Sequence[Keypoint]


@dataclass(frozen=True)
class MotionField:
    flow: np.ndarray  # (H, W, 2) source coordinates, (x, y)
    occlusion: np.ndarray  # (H, W) in [0, 1]

    def __post_init__(self):
        flow = np.asarray(self.flow, dtype=np.float64)
        occ = np.asarray(self.occlusion, dtype=np.float64)
        if flow.ndim != 3 or flow.shape[2] != 2 or occ.shape != flow.shape[:2]:
            raise ValueError(f"flow {flow.shape} and occlusion {occ.shape} shapes disagree")
        if not np.all(np.isfinite(flow)):
            raise ValueError("flow must be finite")
        if occ.size and (occ.min() < 0.0 or occ.max() > 1.0):
            raise ValueError("occlusion must lie in [0, 1]")
        object.__setattr__(self, "flow", flow)
        object.__setattr__(self, "occlusion", occ)

    @property
    def shape(self) -> tuple[int, int]:
        return self.flow.shape[:2]


def normalized_grid(h: int, w: int) -> np.ndarray:
    """(H, W, 2) identity field of pixel-centre coordinates."""
    if h < 1 or w < 1:
        raise ValueError("grid must be at least 1x1")
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def pixel_to_normalized(offset_px: float, size: int) -> float:
    return 2.0 * offset_px / (size - 1) if size > 1 else 0.0


def keypoint_transform(kp_src: Keypoint, kp_drv: Keypoint, z, index: int | None = None) -> np.ndarray:
    """Map driving-frame point(s) ``z`` to source-frame coordinates.

    ``p_src + J_src J_drv^-1 (z - p_drv)``; ``z`` may be (2,) or (..., 2).
    """
    det = np.linalg.det(kp_drv.jacobian)
    if abs(det) <= 1e-8:
        where = f" {index}" if index is not None else ""
        raise SingularJacobianError(f"driving keypoint{where} has a singular jacobian (det={det:.3g})")
    z = np.asarray(z, dtype=np.float64)
    a = kp_src.jacobian @ np.linalg.inv(kp_drv.jacobian)
    return kp_src.position + (z - kp_drv.position) @ a.T


def motion_weights(
    points: np.ndarray,
    drv_kps: KeypointSet,
    sigma: float = 0.1,
    background_logit: float = 0.0,
) -> np.ndarray:
    """Softmax weights (..., K+1) over background + keypoints at ``points``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    points = np.asarray(points, dtype=np.float64)
    centres = np.array([kp.position for kp in drv_kps]).reshape(-1, 2)
    d2 = ((points[..., None, :] - centres) ** 2).sum(axis=-1)
    bg = np.full(points.shape[:-1] + (1,), float(background_logit))
    logits = np.concatenate([bg, -d2 / (2.0 * sigma ** 2)], axis=-1)
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def flow_at(
    points: np.ndarray,
    src_kps: KeypointSet,
    drv_kps: KeypointSet,
    sigma: float = 0.1,
    background_logit: float = 0.0,
) -> np.ndarray:
    """Backward flow evaluated at arbitrary driving-frame points (..., 2)."""
    if len(src_kps) != len(drv_kps):
        raise ValueError(f"keypoint count mismatch: {len(src_kps)} source vs {len(drv_kps)} driving")
    points = np.asarray(points, dtype=np.float64)
    w = motion_weights(points, drv_kps, sigma, background_logit)
    # accumulate displacements T_k(z) - z so that identity keypoints give z exactly
    shift = np.zeros_like(points)
    for k, (ks, kd) in enumerate(zip(src_kps, drv_kps)):
        shift = shift + w[..., k + 1 : k + 2] * _displacement(ks, kd, points, k)
    return points + shift


def _displacement(kp_src: Keypoint, kp_drv: Keypoint, z: np.ndarray, index: int) -> np.ndarray:
    """T_k(z) - z, written as (p_src - p_drv) + (A - I)(z - p_drv)."""
    if abs(np.linalg.det(kp_drv.jacobian)) <= 1e-8:
        raise SingularJacobianError(f"driving keypoint {index} has a singular jacobian")
    if np.array_equal(kp_src.jacobian, kp_drv.jacobian):
        a = np.zeros((2, 2))
    else:
        a = kp_src.jacobian @ np.linalg.inv(kp_drv.jacobian) - np.eye(2)
    return (kp_src.position - kp_drv.position) + (z - kp_drv.position) @ a.T


def dense_motion(
    src_kps: KeypointSet,
    drv_kps: KeypointSet,
    grid: tuple[int, int],
    sigma: float = 0.1,
    background_logit: float = 0.0,
    occlusion: np.ndarray | None = None,
) -> MotionField:
    h, w = grid
    flow = flow_at(normalized_grid(h, w), src_kps, drv_kps, sigma, background_logit)
    occ = np.ones((h, w)) if occlusion is None else np.asarray(occlusion, dtype=np.float64)
    return MotionField(flow, occ)


def _snap(u: np.ndarray) -> np.ndarray:
    r = np.round(u)
    return np.where(np.abs(u - r) < _SNAP, r, u)


def bilinear_sample(image: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Sample ``image`` (H, W, C) at normalized ``coords`` (..., 2), border-clamped."""
    h, w = image.shape[:2]
    u = _snap(np.clip((coords[..., 0] + 1.0) * 0.5 * (w - 1), 0.0, w - 1))
    v = _snap(np.clip((coords[..., 1] + 1.0) * 0.5 * (h - 1), 0.0, h - 1))
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]
    top = image[v0, u0] * (1.0 - fu) + image[v0, u1] * fu
    bottom = image[v1, u0] * (1.0 - fu) + image[v1, u1] * fu
    return top * (1.0 - fv) + bottom * fv


def check_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an H x W x 3 image, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image pixels must lie in [0, 1]")
    return img


def warp(image: np.ndarray, field: MotionField) -> np.ndarray:
    """Backward warp: out(z) = occlusion(z) * image(flow(z))."""
    img = check_image(image)
    out = bilinear_sample(img, field.flow) * field.occlusion[..., None]
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class AnimateParams:
    sigma: float = 0.1
    background_logit: float = 0.0
    relative: bool = True


def relative_keypoints(
    src_kps: KeypointSet, drv_kps: KeypointSet, drv_initial: KeypointSet
) -> list[Keypoint]:
    """Driving motion re-expressed relative to the first driving frame.

    Displacement ``p_t - p_0`` is added to the source position and the
    source jacobian is premultiplied by ``J_t J_0^-1``.
    """
    out = []
    for k, (s, d, d0) in enumerate(zip(src_kps, drv_kps, drv_initial)):
        if abs(np.linalg.det(d0.jacobian)) <= 1e-8:
            raise SingularJacobianError(f"initial driving keypoint {k} has a singular jacobian")
        jac = d.jacobian @ np.linalg.inv(d0.jacobian) @ s.jacobian
        out.append(Keypoint(s.position + (d.position - d0.position), jac))
    return out


def animate(
    source: np.ndarray,
    src_kps: KeypointSet,
    drv_track: Sequence[KeypointSet],
    params: AnimateParams = AnimateParams(),
    occlusions: Sequence[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """Warp ``source`` once per driving frame; output order follows the track."""
    img = check_image(source)
    if not drv_track:
        return []
    k = len(src_kps)
    for t, kps in enumerate(drv_track):
        if len(kps) != k:
            raise ValueError(f"driving frame {t} has {len(kps)} keypoints, expected {k}")
    h, w = img.shape[:2]
    frames = []
    for t, kps in enumerate(drv_track):
        drv = relative_keypoints(src_kps, kps, drv_track[0]) if params.relative else kps
        occ = None if occlusions is None else occlusions[t]
        field = dense_motion(src_kps, drv, (h, w), params.sigma, params.background_logit, occ)
        frames.append(warp(img, field))
    return frames


# -- crop planning for face-video preprocessing --


@dataclass(frozen=True)
class CropPlan:
    box: tuple[int, int, int, int]  # x0, y0, x1, y1 in pixels, exclusive max
    keep: bool
    target_resolution: int = 256
    frames_used: int = 1

    @property
    def width(self) -> int:
        return self.box[2] - self.box[0]

    @property
    def height(self) -> int:
        return self.box[3] - self.box[1]

    def to_dict(self) -> dict:
        return {
            "box": list(self.box),
            "keep": self.keep,
            "target_resolution": self.target_resolution,
            "frames_used": self.frames_used,
        }


def plan_crop(
    boxes: Sequence[Sequence[float]],
    min_resolution: int = 256,
    drift_limit: float | None = None,
    target_resolution: int = 256,
) -> CropPlan:
    """Union crop of a face track, truncated once the face drifts too far.

    ``drift_limit`` defaults to half the first box's diagonal; tracking stops
    at the first box whose centre is farther than that from the first centre.
    """
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if arr.shape[0] == 0:
        raise ValueError("plan_crop needs at least one bounding box")
    if np.any(arr[:, 2] < arr[:, 0]) or np.any(arr[:, 3] < arr[:, 1]):
        raise ValueError("boxes must be (x0, y0, x1, y1) with x1 >= x0 and y1 >= y0")
    first = arr[0]
    if drift_limit is None:
        drift_limit = 0.5 * math.hypot(first[2] - first[0], first[3] - first[1])
    centres = np.stack([(arr[:, 0] + arr[:, 2]) / 2, (arr[:, 1] + arr[:, 3]) / 2], axis=1)
    drift = np.hypot(*(centres - centres[0]).T)
    beyond = np.flatnonzero(drift > drift_limit)
    used = arr[: beyond[0]] if beyond.size else arr
    x0, y0 = np.floor(used[:, :2].min(axis=0))
    x1, y1 = np.ceil(used[:, 2:].max(axis=0))
    box = (int(x0), int(y0), int(x1), int(y1))
    keep = (box[2] - box[0]) >= min_resolution and (box[3] - box[1]) >= min_resolution
    return CropPlan(box, bool(keep), target_resolution, int(used.shape[0]))


def resize_bilinear(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    return bilinear_sample(np.asarray(image, dtype=np.float64), normalized_grid(h, w))


def apply_crop(frame: np.ndarray, plan: CropPlan) -> np.ndarray:
    """Cut the planned box out of ``frame`` (clipped to the frame) and resize it."""
    x0, y0, x1, y1 = plan.box
    H, W = frame.shape[:2]
    patch = frame[max(0, y0) : min(H, y1), max(0, x0) : min(W, x1)]
    if patch.size == 0:
        raise ValueError(f"crop box {plan.box} lies outside a {W}x{H} frame")
    r = plan.target_resolution
    return resize_bilinear(patch, (r, r))


# -- file formats --


def load_track(path: str | Path) -> list[list[Keypoint]]:
    """JSON: list of frames, each a list of ``{"p": [x, y], "j": [[a, b], [c, d]]}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data["frames"]
    track = [[Keypoint.from_dict(kp) for kp in frame] for frame in data]
    if track and len({len(f) for f in track}) != 1:
        raise ValueError(f"{path}: keypoint count varies across frames")
    return track


def save_track(path: str | Path, track: Sequence[KeypointSet]) -> Path:
    path = Path(path)
    path.write_text(json.dumps([[kp.to_dict() for kp in f] for f in track]), encoding="utf-8")
    return path


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_image(path: str | Path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, "RGB").save(path)
    return path


def write_frames(directory: str | Path, frames: Sequence[np.ndarray], start: int = 0) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [write_image(directory / f"{i:06d}.png", f) for i, f in enumerate(frames, start)]


def read_frames(directory: str | Path) -> list[np.ndarray]:
    return [read_image(p) for p in sorted(Path(directory).glob("*.png"))]
