"""Articulated capsule/ellipsoid figures standing in for human scans."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._kernels import CAPSULE, ELLIPSOID
from ..errors import ValidationError

SHAPES = ("sphere", "ellipsoid", "capsule")


@dataclass(frozen=True)
class AnimationCurve:
    """Joint angle over normalized time: ``bias + amp * sin(2*pi*(freq*t + phase))``."""

    amp: float = 0.0
    freq: float = 1.0
    phase: float = 0.0
    bias: float = 0.0

    def __call__(self, t: float) -> float:
        return self.bias + self.amp * np.sin(2.0 * np.pi * (self.freq * t + self.phase))


@dataclass(frozen=True)
class PartSpec:
    name: str
    shape: str
    # sphere: (r,); ellipsoid: (rx, ry, rz); capsule: (length, r)
    size: tuple
    parent: int | None = None
    joint: tuple = (0.0, 0.0, 0.0)
    offset: tuple = (0.0, 0.0, 0.0)
    direction: tuple = (0.0, -1.0, 0.0)
    axis: tuple = (1.0, 0.0, 0.0)
    curve: AnimationCurve = field(default_factory=AnimationCurve)
    color: tuple = (0.7, 0.6, 0.5)


@dataclass(frozen=True)
class SceneSpec:
    parts: tuple
    # root (pelvis) world position keyframes, linearly interpolated over t in [0, 1]
    root_keys: np.ndarray
    yaw_keys: np.ndarray = field(default_factory=lambda: np.zeros(1))
    scale: float = 1.0
    light_dir: tuple = (0.3, -0.5, 0.8)
    seed: int = 0
    max_height: float = 2.0


def _rot_axis(axis, angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def _interp_keys(keys: np.ndarray, t: float) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.float64)
    if len(keys) == 1:
        return keys[0].copy()
    s = np.clip(t, 0.0, 1.0) * (len(keys) - 1)
    i = min(int(np.floor(s)), len(keys) - 2)
    w = s - i
    return (1.0 - w) * keys[i] + w * keys[i + 1]


class Scene:
    """A posable figure. All geometry queries take normalized time ``t`` in [0, 1]."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.parts = list(spec.parts)
        self.colors = np.array([p.color for p in self.parts], dtype=np.float64)
        light = np.asarray(spec.light_dir, dtype=np.float64)
        self.light_dir = light / np.linalg.norm(light)

    def root_world(self, t: float) -> np.ndarray:
        return _interp_keys(self.spec.root_keys, t)

    def root_rotation(self, t: float) -> np.ndarray:
        return _rot_axis((0.0, 1.0, 0.0), float(_interp_keys(np.asarray(self.spec.yaw_keys).reshape(-1, 1), t)[0]))

    def part_transforms(self, t: float) -> list[tuple[np.ndarray, np.ndarray]]:
        """World-from-part (rotation, translation) for every part."""
        s = self.spec.scale
        root = (self.root_rotation(t), self.root_world(t))
        out: list[tuple[np.ndarray, np.ndarray]] = []
        for part in self.parts:
            pr, pt = root if part.parent is None else out[part.parent]
            local = _rot_axis(part.axis, part.curve(t))
            out.append((pr @ local, pr @ (s * np.asarray(part.joint, dtype=np.float64)) + pt))
        return out

    def primitives(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Kernel primitive table at time ``t``: kinds (P,) and params (P, 15)."""
        s = self.spec.scale
        kinds = np.empty(len(self.parts), dtype=np.int64)
        params = np.zeros((len(self.parts), 15))
        for k, (part, (R, T)) in enumerate(zip(self.parts, self.part_transforms(t))):
            off = R @ (s * np.asarray(part.offset, dtype=np.float64)) + T
            if part.shape == "capsule":
                length, r = part.size
                d = np.asarray(part.direction, dtype=np.float64)
                d = d / np.linalg.norm(d)
                kinds[k] = CAPSULE
                params[k, 0:3] = off
                params[k, 3:6] = off + R @ (s * length * d)
                params[k, 6] = s * r
            else:
                radii = (part.size[0],) * 3 if part.shape == "sphere" else part.size
                kinds[k] = ELLIPSOID
                params[k, 0:3] = off
                params[k, 3:12] = R.reshape(-1)
                params[k, 12:15] = s * np.asarray(radii, dtype=np.float64)
        return kinds, params

    def height(self, t: float = 0.0) -> float:
        """Vertical extent of the figure in the root frame (yaw-free)."""
        kinds, params = self.primitives(t)
        lo, hi = np.inf, -np.inf
        for kind, p in zip(kinds, params):
            if kind == CAPSULE:
                ys = (p[1], p[4])
                lo, hi = min(lo, min(ys) - p[6]), max(hi, max(ys) + p[6])
            else:
                r = p[12:15].max()
                lo, hi = min(lo, p[1] - r), max(hi, p[1] + r)
        return float(hi - lo)

    def to_part_local(self, k: np.ndarray, pts: np.ndarray, t: float) -> np.ndarray:
        """World points (N, 3) on parts ``k`` (N,) at time t, expressed in each part's frame."""
        out = np.empty_like(pts)
        for j, (R, T) in enumerate(self.part_transforms(t)):
            sel = k == j
            out[sel] = (pts[sel] - T) @ R
        return out

    def from_part_local(self, k: np.ndarray, pts: np.ndarray, t: float) -> np.ndarray:
        out = np.empty_like(pts)
        for j, (R, T) in enumerate(self.part_transforms(t)):
            sel = k == j
            out[sel] = pts[sel] @ R.T + T
        return out


def validate_spec(spec: SceneSpec) -> None:
    if not spec.parts:
        raise ValidationError("scene needs at least one part")
    if not spec.scale > 0:
        raise ValidationError(f"subject scale must be positive, got {spec.scale}")
    if not spec.max_height > 0:
        raise ValidationError("max_height must be positive")
    keys = np.asarray(spec.root_keys, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[1] != 3 or len(keys) == 0:
        raise ValidationError("root_keys must have shape (K, 3) with K >= 1")
    if not np.isfinite(keys).all():
        raise ValidationError("root_keys must be finite")
    light = np.asarray(spec.light_dir, dtype=np.float64)
    if light.shape != (3,) or not np.linalg.norm(light) > 0:
        raise ValidationError("light_dir must be a non-zero 3-vector")
    for i, part in enumerate(spec.parts):
        if part.shape not in SHAPES:
            raise ValidationError(f"part {part.name!r}: unknown shape {part.shape!r}")
        expected = {"sphere": 1, "ellipsoid": 3, "capsule": 2}[part.shape]
        if len(part.size) != expected:
            raise ValidationError(f"part {part.name!r}: {part.shape} needs {expected} size values")
        if not all(float(x) > 0 for x in part.size):
            raise ValidationError(f"part {part.name!r}: sizes must be positive, got {tuple(part.size)}")
        if part.parent is not None and not 0 <= part.parent < i:
            raise ValidationError(f"part {part.name!r}: parent must reference an earlier part")


def build_scene(spec: SceneSpec) -> Scene:
    validate_spec(spec)
    scene = Scene(spec)
    h = scene.height(0.0)
    if h > spec.max_height + 1e-12:
        raise ValidationError(f"subject height {h:.3f} m exceeds max_height {spec.max_height} m")
    return scene


def single_sphere_spec(center=(0.0, 0.0, 3.0), radius: float = 0.5, end=None, seed: int = 0) -> SceneSpec:
    """One static (or linearly translating) sphere; handy for analytic checks."""
    keys = np.array([center] if end is None else [center, end], dtype=np.float64)
    part = PartSpec("ball", "sphere", (radius,), color=(0.8, 0.8, 0.8))
    return SceneSpec(parts=(part,), root_keys=keys, seed=seed)


def human_proxy_spec(
    seed: int,
    scale: float | None = None,
    root_start=None,
    root_end=None,
    yaw: tuple[float, float] | None = None,
    animate: bool = True,
    max_height: float = 2.0,
) -> SceneSpec:
    """Random articulated human proxy; root at the pelvis, feet on the y=0 plane at rest."""
    rng = np.random.default_rng(seed)
    s = float(rng.uniform(0.75, 1.1)) if scale is None else float(scale)
    skin = rng.uniform(0.45, 0.9, size=3)
    top = rng.uniform(0.1, 0.9, size=3)
    pants = rng.uniform(0.1, 0.7, size=3)
    freq = float(rng.uniform(0.5, 1.5))
    ph = float(rng.uniform(0.0, 1.0))
    a = 1.0 if animate else 0.0

    def swing(amp, phase, bias=0.0):
        return AnimationCurve(amp=a * amp, freq=freq, phase=ph + phase, bias=bias)

    arm_amp = float(rng.uniform(0.2, 0.7))
    leg_amp = float(rng.uniform(0.15, 0.5))
    parts = (
        PartSpec("pelvis", "ellipsoid", (0.2, 0.13, 0.15), color=tuple(pants)),
        PartSpec("torso", "capsule", (0.35, 0.19), parent=0, joint=(0.0, 0.08, 0.0),
                 direction=(0.0, 1.0, 0.0), axis=(1.0, 0.0, 0.0), curve=swing(0.08, 0.25), color=tuple(top)),
        PartSpec("head", "sphere", (0.14,), parent=1, joint=(0.0, 0.45, 0.0), offset=(0.0, 0.13, 0.02),
                 axis=(0.0, 1.0, 0.0), curve=swing(0.3, 0.1), color=tuple(skin)),
        PartSpec("l_upper_arm", "capsule", (0.26, 0.075), parent=1, joint=(0.27, 0.4, 0.0),
                 axis=(1.0, 0.0, 0.0), curve=swing(arm_amp, 0.0), color=tuple(top)),
        PartSpec("l_forearm", "capsule", (0.24, 0.065), parent=3, joint=(0.0, -0.26, 0.0),
                 axis=(1.0, 0.0, 0.0), curve=swing(0.3, 0.1, bias=-0.35), color=tuple(skin)),
        PartSpec("r_upper_arm", "capsule", (0.26, 0.075), parent=1, joint=(-0.27, 0.4, 0.0),
                 axis=(1.0, 0.0, 0.0), curve=swing(arm_amp, 0.5), color=tuple(top)),
        PartSpec("r_forearm", "capsule", (0.24, 0.065), parent=5, joint=(0.0, -0.26, 0.0),
                 axis=(1.0, 0.0, 0.0), curve=swing(0.3, 0.6, bias=-0.35), color=tuple(skin)),
        PartSpec("l_thigh", "capsule", (0.4, 0.1), parent=0, joint=(0.1, -0.05, 0.0),
                 axis=(1.0, 0.0, 0.0), curve=swing(leg_amp, 0.5), color=tuple(pants)),
        PartSpec("l_shin", "capsule", (0.38, 0.085), parent=7, joint=(0.0, -0.4, 0.0),
                 axis=(1.0, 0.0, 0.0), curve=swing(0.25, 0.75, bias=0.25), color=tuple(pants)),
        PartSpec("r_thigh", "capsule", (0.4, 0.1), parent=0, joint=(-0.1, -0.05, 0.0),
                 axis=(1.0, 0.0, 0.0), curve=swing(leg_amp, 0.0), color=tuple(pants)),
        PartSpec("r_shin", "capsule", (0.38, 0.085), parent=9, joint=(0.0, -0.4, 0.0),
                 axis=(1.0, 0.0, 0.0), curve=swing(0.25, 0.25, bias=0.25), color=tuple(pants)),
    )
    ground = 0.915 * s
    start = np.array([0.0, ground, 0.0]) if root_start is None else np.asarray(root_start, dtype=np.float64)
    keys = np.stack([start, start if root_end is None else np.asarray(root_end, dtype=np.float64)])
    y0, y1 = (0.0, 0.0) if yaw is None else yaw
    light = rng.normal(size=3)
    light[2] = abs(light[2]) + 1.0
    light[1] = -abs(light[1])
    return SceneSpec(parts=parts, root_keys=keys, yaw_keys=np.array([y0, y1]), scale=s,
                     light_dir=tuple(light / np.linalg.norm(light)), seed=seed, max_height=max_height)
