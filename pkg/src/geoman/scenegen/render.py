from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels
from .camera import CameraModel
from .scene import Scene

AMBIENT = 0.35
VIS_REL_TOL = 0.01


@dataclass
class FrameSample:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32 camera z in meters, 0 on background
    normal: np.ndarray  # (H, W, 3) float32 camera-space unit normals, 0 on background
    mask: np.ndarray  # (H, W) bool
    flow: np.ndarray  # (H, W, 2) float32 (du, dv) to the next frame
    vis: np.ndarray  # (H, W) bool
    root_cam: np.ndarray  # (3,) float64


@dataclass
class _Hits:
    depth: np.ndarray  # float64 (H, W), inf on miss
    part: np.ndarray  # int64 (H, W), -1 on miss
    normal_world: np.ndarray
    points_world: np.ndarray


def _cast(scene: Scene, camera: CameraModel, time: float) -> _Hits:
    H, W = camera.height, camera.width
    dirs = (camera.pixel_rays() @ camera.R).reshape(-1, 3)
    kinds, params = scene.primitives(time)
    depth, part, normal = _kernels.raycast(camera.center, dirs, kinds, params)
    pts = camera.center + np.where(np.isfinite(depth), depth, 0.0)[:, None] * dirs
    return _Hits(depth.reshape(H, W), part.reshape(H, W), normal.reshape(H, W, 3), pts.reshape(H, W, 3))


def _frame_from_hits(scene: Scene, camera: CameraModel, time: float, hits: _Hits) -> FrameSample:
    H, W = camera.height, camera.width
    mask = hits.part >= 0
    depth = np.where(mask, hits.depth, 0.0)
    normal_cam = hits.normal_world @ camera.R.T
    normal_cam[~mask] = 0.0
    shade = AMBIENT + (1.0 - AMBIENT) * np.clip(-(hits.normal_world @ scene.light_dir), 0.0, 1.0)
    rgb = scene.colors[np.where(mask, hits.part, 0)] * shade[..., None]
    rgb[~mask] = 0.0
    root_cam = camera.R @ scene.root_world(time) + camera.T
    return FrameSample(
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        depth=depth.astype(np.float32),
        normal=normal_cam.astype(np.float32),
        mask=mask,
        flow=np.zeros((H, W, 2), dtype=np.float32),
        vis=np.zeros((H, W), dtype=bool),
        root_cam=root_cam,
    )


def render_frame(scene: Scene, camera: CameraModel, time: float) -> FrameSample:
    """Render one frame. Flow/visibility are left empty; sequences fill them in."""
    return _frame_from_hits(scene, camera, time, _cast(scene, camera, time))


def correspondence_flow(
    scene: Scene,
    hits: _Hits,
    cam_a: CameraModel,
    time_a: float,
    cam_b: CameraModel,
    time_b: float,
    next_frame: FrameSample,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward flow a -> b from the known rigid motion of each part, plus visibility.

    A pixel is visible when its moved surface point lands inside frame b on the
    subject, the depth rendered there matches the point's own depth (not
    occluded), and that depth also matches frame a's depth at the pixel. Both
    checks use a 1% relative tolerance.
    """
    H, W = cam_a.height, cam_a.width
    mask = hits.part >= 0
    k = hits.part[mask]
    local = scene.to_part_local(k, hits.points_world[mask], time_a)
    moved_cam = cam_b.world_to_camera(scene.from_part_local(k, local, time_b))
    uv_b = cam_b.project(moved_cam)
    v, u = np.nonzero(mask)
    flow = np.zeros((H, W, 2))
    flow[mask, 0] = uv_b[:, 0] - u
    flow[mask, 1] = uv_b[:, 1] - v

    sampled, ok = _kernels.bilinear_sample(
        next_frame.depth.astype(np.float64), uv_b[None, :, 0], uv_b[None, :, 1], next_frame.mask
    )
    z_b = moved_cam[:, 2]
    z_a = hits.depth[mask]
    consistent = (
        ok[0]
        & (z_b > 0)
        & (np.abs(sampled[0] - z_b) <= VIS_REL_TOL * z_b)
        & (np.abs(sampled[0] - z_a) <= VIS_REL_TOL * z_a)
    )
    vis = np.zeros((H, W), dtype=bool)
    vis[mask] = consistent
    return flow.astype(np.float32), vis
