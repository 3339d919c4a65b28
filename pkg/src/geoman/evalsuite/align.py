"""Per-frame shift and per-sequence scale alignment of depth predictions to ground truth."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateError, ValidationError

log = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8


@dataclass
class AlignmentResult:
    mode: str  # "shift" or "scale+shift"
    shifts: np.ndarray  # (F,)
    scale: float
    aligned: np.ndarray
    iterations: int = 0


def _as_seq(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    single = pred.ndim == 2
    if single:
        pred, gt, mask = pred[None], gt[None], mask[None]
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    empty = np.flatnonzero(~mask.reshape(len(mask), -1).any(1))
    if len(empty):
        raise DegenerateError(f"empty mask on frame {int(empty[0])}")
    return pred, gt, mask, single


def _masked_mean(x, mask):
    return np.array([x[i][mask[i]].mean() for i in range(len(x))])


def _finish(mode, shifts, scale, pred, single, iterations=0):
    aligned = scale * pred + shifts[:, None, None]
    if single:
        aligned = aligned[0]
    return AlignmentResult(mode, shifts, float(scale), aligned, iterations)


def align_shift(pred, gt, mask) -> AlignmentResult:
    """Least-squares per-frame shift: the masked mean of gt - pred."""
    pred, gt, mask, single = _as_seq(pred, gt, mask)
    shifts = _masked_mean(gt - pred, mask)
    return _finish("shift", shifts, 1.0, pred, single)


def align_scale_shift(pred, gt, mask, tol: float = 1e-9, max_iter: int = 100) -> AlignmentResult:
    """One scale for the whole sequence, one shift per frame.

    Alternates the two closed-form updates. The prediction is centred per frame first
    (shift absorbs the centre), which decouples the two blocks so the alternation
    converges in one or two sweeps instead of crawling along a ridge.
    """
    pred, gt, mask, single = _as_seq(pred, gt, mask)
    pmean = _masked_mean(pred, mask)
    pc = pred - pmean[:, None, None]
    sxx = sum(float((pc[i][mask[i]] ** 2).sum()) for i in range(len(pred)))
    if sxx <= 1e-12 * max(1.0, float(np.abs(pred[mask]).max()) ** 2):
        raise DegenerateError("prediction is constant on the mask; scale is not identifiable")
    s, c = 1.0, _masked_mean(gt, mask)  # c: per-frame shift in centred coordinates
    it = 0
    for it in range(1, max_iter + 1):
        r = gt - c[:, None, None]
        s_new = sum(float((pc[i][mask[i]] * r[i][mask[i]]).sum()) for i in range(len(pred))) / sxx
        c = _masked_mean(gt - s_new * pc, mask)
        done = abs(s_new - s) < tol
        s = s_new
        if done:
            break
    if s <= 0:
        log.warning("least-squares scale %.3g is not positive; clamping to %g", s, SCALE_FLOOR)
        s = SCALE_FLOOR
        c = _masked_mean(gt - s * pc, mask)
    shifts = c - s * pmean
    return _finish("scale+shift", shifts, s, pred, single, it)
