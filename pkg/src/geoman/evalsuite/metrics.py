"""Depth, normal and flow-based temporal-consistency metrics on masked frames."""
from __future__ import annotations

import logging

import numpy as np

from .. import _kernels
from ..errors import DegenerateError, ValidationError

log = logging.getLogger(__name__)

# floor applied to predictions inside log / ratio metrics
DEPTH_EPS = 1e-6
NORMAL_THRESHOLDS = (11.25, 30.0)
TC_NORMAL_THRESHOLD = 11.25
DELTA1 = 1.25
DELTA_105 = 1.05

DEPTH_KEYS = ("abs_rel", "sq_rel", "rmse_lin", "rmse_log", "delta_105", "delta1", "si_log10")
NORMAL_KEYS = ("mean_deg", "median_deg", "pct_11_25", "pct_30")


def _masked(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or mask.shape != gt.shape[: mask.ndim]:
        raise ValidationError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    if not mask.any():
        raise DegenerateError("empty evaluation mask")
    return pred[mask], gt[mask]


def depth_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> dict[str, float]:
    """Single-frame depth errors over ``mask`` (gt must be positive there)."""
    p, g = _masked(pred, gt, mask)
    if (g <= 0).any():
        raise ValidationError("ground-truth depth must be positive on the mask")
    pc = np.maximum(p, DEPTH_EPS)
    diff = p - g
    ratio = np.maximum(pc / g, g / pc)
    return {
        "abs_rel": float(np.mean(np.abs(diff) / g)),
        "sq_rel": float(np.mean(diff**2 / g)),
        "rmse_lin": float(np.sqrt(np.mean(diff**2))),
        "rmse_log": float(np.sqrt(np.mean((np.log(pc) - np.log(g)) ** 2))),
        "delta_105": float(np.mean(ratio < DELTA_105)),
        "delta1": float(np.mean(ratio < DELTA1)),
        "si_log10": float(np.sqrt(np.mean((np.log10(pc) - np.log10(g)) ** 2))),
    }


def angular_error_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle between vectors along the last axis, in degrees; cosine clamped to [-1, 1]."""
    dot = (a * b).sum(-1)
    cos = dot / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def normal_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> dict[str, float]:
    p, g = _masked(pred, gt, mask)
    for name, v in (("prediction", p), ("ground truth", g)):
        n = np.linalg.norm(v, axis=-1)
        if (n == 0).any():
            raise DegenerateError(f"zero-length {name} normal on the mask")
        if np.abs(n - 1.0).max() > 1e-3:
            log.warning("%s normals are not unit length; renormalizing", name)
    ang = angular_error_deg(p, g)
    return {
        "mean_deg": float(ang.mean()),
        "median_deg": float(np.median(ang)),
        "pct_11_25": float(100.0 * np.mean(ang < NORMAL_THRESHOLDS[0])),
        "pct_30": float(100.0 * np.mean(ang < NORMAL_THRESHOLDS[1])),
    }


def warp(frame_next: np.ndarray, flow: np.ndarray, vis: np.ndarray, mask_next: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pull ``frame_next`` back onto frame t's grid by bilinear sampling at p + flow(p).

    Returns (warped, valid); samples outside the image, touching a pixel outside
    ``mask_next``, or where ``vis`` is false are invalid.
    """
    flow = np.asarray(flow, dtype=np.float64)
    H, W = flow.shape[:2]
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    out, ok = _kernels.bilinear_sample(frame_next, u + flow[..., 0], v + flow[..., 1], mask_next)
    valid = ok & np.asarray(vis, dtype=bool) & np.isfinite(flow).all(-1)
    return np.where(valid if out.ndim == 2 else valid[..., None], out, 0.0), valid


def _pairs(seq, flows, vis, masks=None):
    seq = np.asarray(seq, dtype=np.float64)
    if len(seq) < 2:
        raise ValidationError("temporal metrics need at least 2 frames")
    if len(flows) < len(seq) - 1 or len(vis) < len(seq) - 1:
        raise ValidationError("need a flow field and visibility mask for every consecutive pair")
    found = False
    for t in range(len(seq) - 1):
        warped, valid = warp(seq[t + 1], flows[t], vis[t], None if masks is None else masks[t + 1])
        if not valid.any():
            continue
        found = True
        yield warped[valid], seq[t][valid]
    if not found:
        raise DegenerateError("no visible pixels in any frame pair")


def opw(seq: np.ndarray, flows: np.ndarray, vis: np.ndarray, masks: np.ndarray | None = None) -> float:
    """Mean L1 distance between frame t and frame t+1 warped onto t, over visible pixels, averaged over pairs."""
    per_pair = []
    for w, ref in _pairs(seq, flows, vis, masks):
        d = np.abs(w - ref)
        per_pair.append(float((d.sum(-1) if d.ndim == 2 else d).mean()))
    return float(np.mean(per_pair))


def tc_depth(seq: np.ndarray, flows: np.ndarray, vis: np.ndarray, masks: np.ndarray | None = None) -> tuple[float, float]:
    """(TC-RMSE, TC-delta1) between consecutive depth frames."""
    mse, d1 = [], []
    for w, ref in _pairs(seq, flows, vis, masks):
        mse.append(float(np.mean((w - ref) ** 2)))
        wc, rc = np.maximum(w, DEPTH_EPS), np.maximum(ref, DEPTH_EPS)
        d1.append(float(np.mean(np.maximum(wc / rc, rc / wc) < DELTA1)))
    return float(np.sqrt(np.mean(mse))), float(np.mean(d1))


def tc_normal(seq: np.ndarray, flows: np.ndarray, vis: np.ndarray, masks: np.ndarray | None = None) -> tuple[float, float]:
    """(TC-Mean in degrees, TC-11.25 in percent) between consecutive normal frames."""
    means, pct = [], []
    for w, ref in _pairs(seq, flows, vis, masks):
        ang = angular_error_deg(w, ref)
        means.append(float(ang.mean()))
        pct.append(float(100.0 * np.mean(ang < TC_NORMAL_THRESHOLD)))
    return float(np.mean(means)), float(np.mean(pct))
