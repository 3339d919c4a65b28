from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; ``R``/``T`` map world points into camera space (x right, y down, z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    T: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        T = np.asarray(self.T, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValidationError("camera rotation must be orthonormal with det +1")

    @classmethod
    def identity(cls, width: int = 64, height: int = 64, focal: float | None = None) -> "CameraModel":
        f = focal if focal is not None else 1.2 * width
        return cls(f, f, width / 2.0, height / 2.0, np.eye(3), np.zeros(3), width, height)

    @classmethod
    def look_at(cls, eye, target, width: int, height: int, focal: float, up=(0.0, 1.0, 0.0)) -> "CameraModel":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(focal, focal, width / 2.0, height / 2.0, R, -R @ eye, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.T

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.R.T + self.T

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """Camera-space points (..., 3) to pixel coordinates (..., 2)."""
        z = pts_cam[..., 2]
        return np.stack([self.fx * pts_cam[..., 0] / z + self.cx, self.fy * pts_cam[..., 1] / z + self.cy], axis=-1)

    def pixel_rays(self) -> np.ndarray:
        """Camera-space ray per pixel with unit z, shape (H, W, 3); row index is v, column u."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "R": [float(x) for x in self.R.reshape(-1)],
            "T": [float(x) for x in self.T],
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], np.array(d["R"]).reshape(3, 3), np.array(d["T"]), d["width"], d["height"])

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None  # type: ignore[assignment]
