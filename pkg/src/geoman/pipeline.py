"""Video inference: first-frame I2G reference, V2G over the clip, long-video stitching, metric recovery."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import georep
from .errors import ModalityError, SequenceIOError, ValidationError
from .i2g import I2GModel, aggregate_members, infer_i2g
from .latents import check_modality, decode_latents, encode_maps, geometry_to_maps, maps_to_geometry, rgb_to_maps
from .scenegen.io import read_arrays, write_arrays
from .v2g import sample_clip

log = logging.getLogger(__name__)

ROOT_SOURCES = ("ground-truth", "constant")
PREDICTION_FORMAT = "geoman-prediction"


@dataclass
class PipelineConfig:
    segment: int = 12
    overlap: int = 4
    ensemble: int = 8
    sampler_steps: int = 100
    modality: str = "depth"
    root_source: str = "ground-truth"
    constant_root: float = 4.0
    sampler: str = "ddim"
    seed: int = 0

    def __post_init__(self):
        check_modality(self.modality)
        if not 0 <= self.overlap < self.segment:
            raise ValidationError(f"need 0 <= overlap < segment length, got O={self.overlap}, F={self.segment}")
        if self.ensemble < 1:
            raise ValidationError(f"ensemble size must be >= 1, got {self.ensemble}")
        if self.sampler_steps < 1:
            raise ValidationError("sampler steps must be >= 1")
        if self.root_source not in ROOT_SOURCES:
            raise ValidationError(f"root source must be one of {ROOT_SOURCES}")


@dataclass
class GeometryVideo:
    values: np.ndarray  # (N, H, W) root-relative depth or (N, H, W, 3) unit normals
    mask: np.ndarray  # (N, H, W) bool
    modality: str
    h: float
    seed: int = 0
    reference: str = "i2g"
    segments: list = field(default_factory=list)  # [start, stop) per segment
    stitch: list | None = None  # per frame: [[segment, weight], ...]

    @property
    def N(self) -> int:
        return len(self.values)


def segment_starts(N: int, F: int, O: int) -> list[int]:
    """Segment starts advance by F - O; the last one is pulled back so it ends exactly at N."""
    if not 0 <= O < F:
        raise ValidationError(f"need 0 <= overlap < segment length, got O={O}, F={F}")
    if N <= F:
        return [0]
    starts = list(range(0, N - F, F - O))
    starts.append(N - F)
    return starts


def stitch_weights(n_overlap: int) -> np.ndarray:
    """(n, 2) weights for the earlier and later contributor on each overlap frame."""
    k = np.arange(n_overlap, dtype=np.float64)
    w = 1.0 - (k + 1.0) / (n_overlap + 1.0)
    return np.stack([w, 1.0 - w], axis=1)


def stitch_segments(segments: list, starts: list[int], N: int):
    """Blend overlapping segment latents frame by frame.

    On each overlap the running result takes weight w_k, the new segment 1 - w_k. Blending
    as ``new + w * (old - new)`` keeps identical overlaps bit-exact.
    Returns (stitched, per-frame provenance).
    """
    if len(segments) != len(starts):
        raise ValidationError("one start per segment required")
    first = segments[0]
    out = [first[j] for j in range(len(first))]
    prov = [[[0, 1.0]] for _ in range(len(first))]
    for s, (seg, start) in enumerate(zip(segments[1:], starts[1:]), start=1):
        n = len(out) - start
        if n < 0 or n >= len(seg):
            raise ValidationError(f"segment {s} does not continue the previous one")
        for k, (w, wn) in enumerate(stitch_weights(n)):
            i = start + k
            out[i] = seg[k] + w * (out[i] - seg[k])
            prov[i] = [[a, b * w] for a, b in prov[i]] + [[s, wn]]
        out.extend(seg[j] for j in range(n, len(seg)))
        prov.extend([[s, 1.0]] for _ in range(n, len(seg)))
    if len(out) != N:
        raise ValidationError(f"stitched {len(out)} frames, expected {N}")
    stack = torch.stack if isinstance(first, torch.Tensor) else np.stack
    return stack(out), prov


def segment_seed(seed: int, k: int, member: int = 0) -> int:
    return int(seed) * 1000 + 500 + k + 1_000_003 * int(member)


def _video_arrays(video):
    rgb = getattr(video, "rgb", None)
    mask = getattr(video, "mask", None)
    if rgb is None or mask is None:
        raise ValidationError("video needs rgb frames and a foreground mask channel")
    rgb = np.asarray(rgb, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if rgb.ndim != 4 or mask.shape != rgb.shape[:3]:
        raise ValidationError(f"rgb {rgb.shape} and mask {mask.shape} do not describe the same video")
    return rgb * mask[..., None], mask


def reference_latent(model, i2g: I2GModel | None, rgb0, mask0, cfg: PipelineConfig, reference=None):
    """Latent of the first-frame geometry: from ``reference`` if given, else from the I2G ensemble."""
    if reference is None:
        if i2g is None:
            raise ValidationError("an I2G model or an explicit reference is required")
        res = infer_i2g(i2g, rgb0, mask0, cfg.ensemble, cfg.sampler_steps, cfg.seed, cfg.modality, cfg.sampler)
        reference = res.values
    maps = geometry_to_maps(np.asarray(reference)[None], mask0[None], cfg.modality, model.cfg.max_height)
    return encode_maps(model.codec, maps)[0]


@torch.no_grad()
def estimate_video(i2g: I2GModel | None, v2g, video, cfg: PipelineConfig, reference=None) -> GeometryVideo:
    """Geometry for every frame; frame 1 also comes from V2G, the I2G estimate is only its reference.

    Clips longer than ``cfg.segment`` are split and stitched in latent space. ``reference``
    (first-frame geometry) bypasses I2G. Models without a reference input skip I2G.
    ``cfg.ensemble`` whole-video samples are decoded and merged by per-pixel median.
    """
    rgb, mask = _video_arrays(video)
    modality = check_modality(cfg.modality)
    if getattr(v2g, "modality", modality) != modality:
        raise ModalityError(f"video model predicts {v2g.modality!r}, requested {modality!r}")
    if i2g is not None and v2g.uses_reference and reference is None and i2g.modality != modality:
        raise ModalityError(f"I2G model predicts {i2g.modality!r}, requested {modality!r}")
    N = len(rgb)
    ref = reference_latent(v2g, i2g, rgb[0], mask[0], cfg, reference) if v2g.uses_reference else None
    rgb_lat = encode_maps(v2g.codec, rgb_to_maps(rgb))
    starts = segment_starts(N, cfg.segment, cfg.overlap)
    F = min(N, cfg.segment)
    members = []
    for j in range(cfg.ensemble):
        segs = [sample_clip(v2g, rgb_lat[s : s + F], ref, segment_seed(cfg.seed, k, j), cfg.sampler_steps, cfg.sampler)
                for k, s in enumerate(starts)]
        z, prov = stitch_segments(segs, starts, N)
        members.append(maps_to_geometry(decode_latents(v2g.codec, z), mask, modality, v2g.cfg.max_height))
    values = members[0] if len(members) == 1 else aggregate_members(np.stack(members), mask, modality).values
    src = "i2g" if reference is None else "given"
    return GeometryVideo(values, mask, modality, v2g.cfg.max_height, cfg.seed, src if v2g.uses_reference else "none",
                         [[s, s + F] for s in starts], prov if len(starts) > 1 else None)


def stitch_long_video(v2g, video, F: int, O: int, reference, i2g: I2GModel | None = None,
                      cfg: PipelineConfig | None = None) -> GeometryVideo:
    cfg = PipelineConfig() if cfg is None else cfg
    cfg = PipelineConfig(**dict(asdict(cfg), segment=F, overlap=O))
    if len(np.asarray(getattr(video, "rgb"))) <= F:
        raise ValidationError(f"long-video mode needs more than F={F} frames")
    return estimate_video(i2g, v2g, video, cfg, reference)


def recover_metric_video(gv: GeometryVideo, root_depths) -> np.ndarray:
    """Root-relative depth video plus one root depth per frame -> (N, H, W) metric depth, 0 on background."""
    if gv.modality != "depth":
        raise ModalityError(f"metric recovery needs depth, got {gv.modality!r}")
    roots = np.broadcast_to(np.asarray(root_depths, dtype=np.float64), (gv.N,))
    return np.stack([georep.to_metric(georep.RootRelativeDepthMap(v, m, None, gv.h), float(r)).values
                     for v, m, r in zip(gv.values, gv.mask, roots)])


class _MaskedVideo:
    def __init__(self, rgb, mask):
        self.rgb = rgb
        self.mask = mask


def multi_person_estimate(i2g, v2g, video, subject_masks, roots, cfg: PipelineConfig):
    """Per-subject inference on individually masked videos, composited into one metric depth video.

    subject_masks: (S, N, H, W) bool, pairwise disjoint; roots: (S, N) root depths.
    Returns (depth (N, H, W), per-subject GeometryVideo or None for empty subjects).
    """
    if cfg.modality != "depth":
        raise ModalityError("multi-person aggregation composites metric depth")
    rgb = np.asarray(video.rgb, dtype=np.float64)
    masks = np.asarray(subject_masks, dtype=bool)
    if masks.ndim != 4 or masks.shape[1:] != rgb.shape[:3]:
        raise ValidationError(f"subject masks {masks.shape} do not match video {rgb.shape[:3]}")
    if (masks.sum(0) > 1).any():
        raise ValidationError("subject masks overlap")
    roots = np.asarray(roots, dtype=np.float64).reshape(len(masks), -1)
    out = np.zeros(rgb.shape[:3])
    per_subject = []
    for k, m in enumerate(masks):
        if not m.any():
            per_subject.append(None)
            continue
        gv = estimate_video(i2g, v2g, _MaskedVideo(rgb, m), cfg)
        out = np.where(m, recover_metric_video(gv, roots[k]), out)
        per_subject.append(gv)
    return out, per_subject


@torch.no_grad()
def per_frame_i2g(i2g: I2GModel, video, cfg: PipelineConfig) -> GeometryVideo:
    """Independent I2G estimate for every frame (the temporal-consistency baseline)."""
    rgb, mask = _video_arrays(video)
    vals = [infer_i2g(i2g, rgb[i], mask[i], cfg.ensemble, cfg.sampler_steps, cfg.seed, cfg.modality, cfg.sampler).values
            for i in range(len(rgb))]
    return GeometryVideo(np.stack(vals), mask, cfg.modality, i2g.cfg.max_height, cfg.seed, "i2g-per-frame",
                         [[i, i + 1] for i in range(len(rgb))], None)


def write_prediction(gv: GeometryVideo, directory, config: dict | None = None) -> None:
    directory = Path(directory)
    N, H, W = gv.mask.shape
    write_arrays(directory, {"F": N, "H": H, "W": W}, {gv.modality: gv.values.astype(np.float32), "mask": gv.mask})
    side = {"format": PREDICTION_FORMAT, "modality": gv.modality, "seed": gv.seed, "h": gv.h,
            "reference": gv.reference, "segments": gv.segments, "config": config or {}}
    if gv.stitch is not None:
        side["stitch"] = gv.stitch
    with open(directory / "prediction.json", "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_prediction(directory) -> tuple[GeometryVideo, dict]:
    directory = Path(directory)
    try:
        side = json.loads((directory / "prediction.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SequenceIOError(f"{directory}: missing prediction.json") from None
    except json.JSONDecodeError as e:
        raise SequenceIOError(f"{directory}/prediction.json: malformed ({e})") from None
    if side.get("format") != PREDICTION_FORMAT:
        raise SequenceIOError(f"{directory}: not a prediction container")
    _, arrays = read_arrays(directory)
    modality = side["modality"]
    if modality not in arrays:
        raise SequenceIOError(f"{directory}: prediction.json says {modality!r} but that channel is missing")
    gv = GeometryVideo(arrays[modality].astype(np.float64), arrays["mask"].astype(bool), modality, side["h"],
                       side["seed"], side["reference"], side["segments"], side.get("stitch"))
    return gv, side
