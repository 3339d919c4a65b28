from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .camera import CameraModel
from .render import _cast, _frame_from_hits, correspondence_flow, FrameSample
from .scene import Scene, SceneSpec, build_scene

MODES = ("moving-subject", "moving-camera")


@dataclass(frozen=True)
class CameraPath:
    """Camera on a circle around ``target``; azimuth 0 sits on the -z side looking toward +z."""

    target: tuple = (0.0, 0.9, 0.0)
    distance: float = 3.5
    elevation_deg: float = 5.0
    start_deg: float = 0.0
    arc_deg: float = 0.0
    focal: float = 76.8
    width: int = 64
    height: int = 64

    def azimuth(self, i: int, F: int) -> float:
        # wrapped in degrees so a full turn lands exactly on the start pose
        return (self.start_deg + self.arc_deg * i / max(F - 1, 1)) % 360.0

    def camera(self, i: int, F: int) -> CameraModel:
        az = np.deg2rad(self.azimuth(i, F))
        el = np.deg2rad(self.elevation_deg)
        target = np.asarray(self.target, dtype=np.float64)
        eye = target + self.distance * np.array([np.sin(az) * np.cos(el), np.sin(el), -np.cos(az) * np.cos(el)])
        return CameraModel.look_at(eye, target, self.width, self.height, self.focal)


@dataclass
class SequenceSample:
    frames: list[FrameSample]
    cameras: list[CameraModel]
    mode: str
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def F(self) -> int:
        return len(self.frames)

    @property
    def H(self) -> int:
        return self.frames[0].depth.shape[0]

    @property
    def W(self) -> int:
        return self.frames[0].depth.shape[1]

    def stack(self, name: str) -> np.ndarray:
        return np.stack([getattr(f, name) for f in self.frames])

    @property
    def rgb(self):
        return self.stack("rgb")

    @property
    def depth(self):
        return self.stack("depth")

    @property
    def normal(self):
        return self.stack("normal")

    @property
    def mask(self):
        return self.stack("mask")

    @property
    def flow(self):
        return self.stack("flow")

    @property
    def vis(self):
        return self.stack("vis")

    @property
    def root_cam(self):
        return self.stack("root_cam")

    @property
    def root_depth(self) -> np.ndarray:
        return self.root_cam[:, 2]


def generate_sequence(spec: SceneSpec, mode: str, F: int, camera_path: CameraPath) -> SequenceSample:
    """Render ``F`` frames plus analytic forward flow and visibility.

    moving-subject: fixed camera (pose 0 of the path), animation sampled at t = i/(F-1).
    moving-camera: animation frozen at t = 0, camera follows the path.
    """
    if F < 2:
        raise ValidationError(f"a sequence needs F >= 2 frames, got {F}")
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    scene: Scene = build_scene(spec)
    if mode == "moving-subject":
        cam0 = camera_path.camera(0, F)
        cameras = [cam0] * F
        times = [i / (F - 1) for i in range(F)]
    else:
        cameras = [camera_path.camera(i, F) for i in range(F)]
        times = [0.0] * F

    hits = [_cast(scene, cam, t) for cam, t in zip(cameras, times)]
    frames = [_frame_from_hits(scene, cam, t, h) for cam, t, h in zip(cameras, times, hits)]
    for i in range(F - 1):
        frames[i].flow, frames[i].vis = correspondence_flow(
            scene, hits[i], cameras[i], times[i], cameras[i + 1], times[i + 1], frames[i + 1]
        )
    return SequenceSample(frames=frames, cameras=cameras, mode=mode, seed=spec.seed)


def composite_sequences(seqs: list[SequenceSample]) -> tuple[SequenceSample, np.ndarray]:
    """Z-buffer several single-subject renders that share one camera path into a single video.

    Returns the composite and (S, F, H, W) ownership masks: each foreground pixel belongs to
    the nearest subject. Flow comes from the owner; visibility additionally requires the
    target pixel in the next frame to have the same owner.
    """
    if not seqs:
        raise ValidationError("nothing to composite")
    F = seqs[0].F
    if any(s.F != F or s.cameras != seqs[0].cameras for s in seqs):
        raise ValidationError("composited sequences must share frame count and cameras")
    depth = np.stack([np.where(s.mask, s.depth, np.inf) for s in seqs])  # (S, F, H, W)
    owner = np.where(np.isfinite(depth).any(0), depth.argmin(0), -1)
    owners = np.stack([owner == k for k in range(len(seqs))])
    frames = []
    H, W = owner.shape[1:]
    v, u = np.mgrid[0:H, 0:W]
    for i in range(F):
        pick = [s.frames[i] for s in seqs]
        own = owner[i]

        def gather(name, pick=pick, own=own):
            arrs = np.stack([getattr(f, name) for f in pick])
            return np.take_along_axis(arrs, np.maximum(own, 0)[None, ..., None] if arrs.ndim == 4 else np.maximum(own, 0)[None], 0)[0]

        fg = own >= 0
        rgb = np.where(fg[..., None], gather("rgb"), 0.0).astype(np.float32)
        normal = np.where(fg[..., None], gather("normal"), 0.0).astype(np.float32)
        flow = np.where(fg[..., None], gather("flow"), 0.0).astype(np.float32)
        vis = fg & gather("vis")
        if i + 1 < F:
            tu = np.clip(np.rint(u + flow[..., 0]), 0, W - 1).astype(int)
            tv = np.clip(np.rint(v + flow[..., 1]), 0, H - 1).astype(int)
            vis &= owner[i + 1][tv, tu] == own
        frames.append(FrameSample(rgb=rgb, depth=np.where(fg, gather("depth"), 0.0).astype(np.float32), normal=normal,
                                  mask=fg, flow=flow, vis=vis, root_cam=pick[0].root_cam))
    meta = {"subjects": len(seqs), "roots": [s.root_cam.tolist() for s in seqs]}
    return SequenceSample(frames, list(seqs[0].cameras), seqs[0].mode, seqs[0].seed, meta), owners
