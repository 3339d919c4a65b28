"""Glue between geometry maps, the codec, and the diffusion schedule config."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import georep
from .codec import LatentCodec, maps_to_tensor, tensor_to_maps
from .diffusion import NoiseSchedule, make_schedule
from .errors import ModalityError

MODALITIES = ("depth", "normal")


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 8.5e-4
    beta_end: float = 1.2e-2
    kind: str = "scaled-linear"

    def build(self) -> NoiseSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end, self.kind)


def check_modality(modality: str) -> str:
    if modality not in MODALITIES:
        raise ModalityError(f"modality must be one of {MODALITIES}, got {modality!r}")
    return modality


@torch.no_grad()
def encode_maps(codec: LatentCodec, maps: np.ndarray, batch: int = 128) -> torch.Tensor:
    """(N, H, W, 3) maps in [-1, 1] -> (N, C, h, w) latents."""
    x = maps_to_tensor(maps)
    return torch.cat([codec.encode(x[i : i + batch]) for i in range(0, len(x), batch)])


@torch.no_grad()
def decode_latents(codec: LatentCodec, z: torch.Tensor, batch: int = 128) -> np.ndarray:
    return tensor_to_maps(torch.cat([codec.decode(z[i : i + batch]) for i in range(0, len(z), batch)]))


def maps_to_geometry(maps: np.ndarray, masks: np.ndarray, modality: str, h: float) -> np.ndarray:
    """Decoded 3-channel maps (N, H, W, 3) -> root-relative depth (N, H, W) or unit normals (N, H, W, 3)."""
    if check_modality(modality) == "depth":
        return np.stack([georep.decode_from_diffusion(m, k, h).values for m, k in zip(maps, masks)])
    return np.stack([_safe_normals(m, k) for m, k in zip(maps, masks)])


def _safe_normals(enc: np.ndarray, mask: np.ndarray) -> np.ndarray:
    enc = enc.copy()
    zero = mask & (np.linalg.norm(enc, axis=-1) == 0)
    # a decoded exact-zero vector has no direction; point it at the camera
    enc[zero] = (0.0, 0.0, -1.0)
    return georep.decode_normal(enc, mask)


def geometry_to_maps(values: np.ndarray, masks: np.ndarray, modality: str, h: float) -> np.ndarray:
    if check_modality(modality) == "depth":
        return np.stack([georep.encode_for_diffusion(georep.RootRelativeDepthMap(v, k, None, h)) for v, k in zip(values, masks)])
    return np.stack([georep.encode_normal(v, k) for v, k in zip(values, masks)])


def rgb_to_maps(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) * 2.0 - 1.0
