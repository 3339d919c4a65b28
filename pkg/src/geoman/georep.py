"""Depth representations (metric, root-relative, affine-invariant), codec encodings and point lifting."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateError, RangeError, ValidationError
from .scenegen.camera import CameraModel

DEFAULT_MAX_HEIGHT = 2.0


@dataclass
class MetricDepthMap:
    values: np.ndarray
    mask: np.ndarray


@dataclass
class RootRelativeDepthMap:
    values: np.ndarray
    mask: np.ndarray
    d_root: float | None = None
    h: float = DEFAULT_MAX_HEIGHT


@dataclass
class AffineInvariantDepthMap:
    values: np.ndarray
    mask: np.ndarray
    dmin: float
    dmax: float


@dataclass
class RootPose:
    P_w: np.ndarray
    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        self.P_w = np.asarray(self.P_w, dtype=np.float64).reshape(3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(self.R) - 1.0) > 1e-6:
            raise ValidationError("root pose rotation must be orthonormal with det +1")


@dataclass
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None


def root_depth(pose: RootPose) -> float:
    """Camera-space z of the root joint."""
    return float((pose.R @ pose.P_w + pose.T)[2])


def _first_bad(bad: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(bad)[0])


def to_root_relative(d: MetricDepthMap, d_root: float, h: float = DEFAULT_MAX_HEIGHT) -> RootRelativeDepthMap:
    if not d_root > 0:
        raise ValidationError(f"root depth must be positive, got {d_root}")
    mask = np.asarray(d.mask, dtype=bool)
    values = np.where(mask, np.asarray(d.values, dtype=np.float64) - d_root, 0.0)
    bad = mask & (np.abs(values) > h / 2)
    if bad.any():
        px = _first_bad(bad)
        raise RangeError(f"root-relative depth {values[px]:.4f} m at pixel {px} outside [-{h / 2}, {h / 2}]")
    return RootRelativeDepthMap(values, mask, float(d_root), h)


def to_metric(d: RootRelativeDepthMap, d_root: float | None = None) -> MetricDepthMap:
    d_root = d.d_root if d_root is None else d_root
    if d_root is None or not d_root > 0:
        raise ValidationError(f"root depth must be positive, got {d_root}")
    mask = np.asarray(d.mask, dtype=bool)
    values = np.where(mask, np.asarray(d.values, dtype=np.float64) + d_root, 0.0)
    bad = mask & ~(values > 0)
    if bad.any():
        px = _first_bad(bad)
        raise RangeError(f"non-positive metric depth {values[px]:.4f} m at pixel {px}")
    return MetricDepthMap(values, mask)


def affine_normalize(d: MetricDepthMap) -> AffineInvariantDepthMap:
    mask = np.asarray(d.mask, dtype=bool)
    v = np.asarray(d.values, dtype=np.float64)
    if not mask.any():
        raise DegenerateError("affine normalization needs a non-empty mask")
    lo, hi = float(v[mask].min()), float(v[mask].max())
    if not hi > lo:
        raise DegenerateError(f"degenerate depth range: all masked values equal {lo}")
    return AffineInvariantDepthMap(np.where(mask, (v - lo) / (hi - lo), 0.0), mask, lo, hi)


def encode_for_diffusion(d: RootRelativeDepthMap) -> np.ndarray:
    """(H, W) root-relative depth -> (H, W, 3) in [-1, 1]; background is -1."""
    mask = np.asarray(d.mask, dtype=bool)
    enc = np.where(mask, 2.0 * np.asarray(d.values, dtype=np.float64) / d.h, -1.0)
    if (np.abs(enc[mask]) > 1.0).any():
        raise RangeError(f"root-relative depth exceeds +-h/2 = {d.h / 2}")
    return np.repeat(enc[..., None], 3, axis=-1)


def decode_from_diffusion(enc: np.ndarray, mask: np.ndarray, h: float = DEFAULT_MAX_HEIGHT, d_root: float | None = None) -> RootRelativeDepthMap:
    mask = np.asarray(mask, dtype=bool)
    enc = np.asarray(enc, dtype=np.float64)
    if (np.abs(enc[mask]) > 1.0 + 1e-12).any():
        raise RangeError("encoded depth outside [-1, 1]")
    values = np.where(mask, enc.mean(axis=-1) * (h / 2.0), 0.0)
    return RootRelativeDepthMap(values, mask, d_root, h)


def encode_normal(normal: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Unit normals map to themselves; background channels are 0."""
    mask = np.asarray(mask, dtype=bool)
    return np.where(mask[..., None], np.asarray(normal, dtype=np.float64), 0.0)


def decode_normal(enc: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    enc = np.asarray(enc, dtype=np.float64)
    mask = np.ones(enc.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    norm = np.linalg.norm(enc, axis=-1)
    bad = mask & (norm == 0)
    if bad.any():
        raise DegenerateError(f"zero normal vector at pixel {_first_bad(bad)}")
    out = np.zeros_like(enc)
    out[mask] = enc[mask] / norm[mask][:, None]
    return out


def backproject(d: MetricDepthMap, cam: CameraModel, colors: np.ndarray | None = None) -> PointCloud:
    mask = np.asarray(d.mask, dtype=bool)
    v, u = np.nonzero(mask)
    z = np.asarray(d.values, dtype=np.float64)[mask]
    pts = np.stack([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z], axis=-1)
    return PointCloud(pts, None if colors is None else np.asarray(colors)[mask])


def reproject(pc: PointCloud, cam: CameraModel) -> np.ndarray:
    """Camera-space points back to (u, v) pixel coordinates."""
    return cam.project(pc.points)


def write_ply(pc: PointCloud, path) -> None:
    pts = np.asarray(pc.points, dtype=np.float64)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z"]
    if pc.colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    if pc.colors is None:
        rows = [f"{x:.7g} {y:.7g} {z:.7g}" for x, y, z in pts]
    else:
        rgb = np.clip(np.round(np.asarray(pc.colors, dtype=np.float64) * 255.0), 0, 255).astype(int)
        rows = [f"{x:.7g} {y:.7g} {z:.7g} {r} {g} {b}" for (x, y, z), (r, g, b) in zip(pts, rgb)]
    Path(path).write_text("\n".join(lines + rows) + "\n", encoding="ascii")


def read_ply(path) -> PointCloud:
    text = Path(path).read_text(encoding="ascii").splitlines()
    end = text.index("end_header")
    n = next(int(line.split()[-1]) for line in text[:end] if line.startswith("element vertex"))
    data = np.array([[float(x) for x in line.split()] for line in text[end + 1 : end + 1 + n]]).reshape(n, -1)
    return PointCloud(data[:, :3], data[:, 3:6] / 255.0 if data.shape[1] >= 6 else None)
