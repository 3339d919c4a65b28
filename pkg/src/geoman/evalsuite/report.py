"""Sequence evaluation over the absolute / shift / scale+shift arms, plus report emission."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..errors import ModalityError, ValidationError
from .align import align_scale_shift, align_shift
from .metrics import DEPTH_KEYS, NORMAL_KEYS, depth_metrics, normal_metrics, opw, tc_depth, tc_normal

ARMS = ("absolute", "shift", "scale_shift")


@dataclass
class EvalProtocol:
    arms: tuple = ARMS
    # absent GT roots: silently drop the absolute arm (False) or fail (True)
    require_roots: bool = False

    def __post_init__(self):
        self.arms = tuple(self.arms)
        bad = [a for a in self.arms if a not in ARMS]
        if bad:
            raise ValidationError(f"unknown evaluation arm(s) {bad}; choose from {ARMS}")


@dataclass
class DepthEvalReport:
    abs_rel: float
    sq_rel: float
    rmse_lin: float
    rmse_log: float
    delta_105: float
    delta1: float
    si_log10: float
    opw: float
    tc_rmse: float
    tc_delta1: float
    per_frame: dict = field(default_factory=dict)


@dataclass
class NormalEvalReport:
    mean_deg: float
    median_deg: float
    pct_11_25: float
    pct_30: float
    opw: float
    tc_mean: float
    tc_11_25: float
    per_frame: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    name: str
    modality: str
    depth: dict = field(default_factory=dict)  # arm -> DepthEvalReport
    normal: NormalEvalReport | None = None
    alignment: dict = field(default_factory=dict)  # arm -> {"scale": s, "shifts": [...]}

    def to_dict(self) -> dict:
        d = {"name": self.name, "modality": self.modality, "alignment": self.alignment}
        d["depth"] = {arm: asdict(r) for arm, r in self.depth.items()}
        d["normal"] = None if self.normal is None else asdict(self.normal)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["name"], d["modality"], {a: DepthEvalReport(**r) for a, r in d["depth"].items()},
                   None if d["normal"] is None else NormalEvalReport(**d["normal"]), d["alignment"])


def _per_frame(fn, pred, gt, mask, keys):
    rows = [fn(p, g, m) for p, g, m in zip(pred, gt, mask)]
    return {k: [r[k] for r in rows] for k in keys}


def _depth_report(pred, gt, mask, flows, vis) -> DepthEvalReport:
    pf = _per_frame(depth_metrics, pred, gt, mask, DEPTH_KEYS)
    rmse, d1 = tc_depth(pred, flows, vis, mask)
    return DepthEvalReport(**{k: float(np.mean(v)) for k, v in pf.items()}, opw=opw(pred, flows, vis, mask),
                           tc_rmse=rmse, tc_delta1=d1, per_frame=pf)


def evaluate_sequence(pred, gt, protocol: EvalProtocol | None = None, name: str = "sequence") -> EvalReport:
    """Score a GeometryVideo against a ground-truth SequenceSample.

    Depth: absolute (ground-truth roots, no alignment), shift-only and scale+shift arms.
    Normals: a single unaligned arm. Temporal metrics use ground-truth flow and visibility.
    """
    from ..pipeline import recover_metric_video

    protocol = EvalProtocol() if protocol is None else protocol
    if pred.N != gt.F or pred.mask.shape != (gt.F, gt.H, gt.W):
        raise ValidationError(f"length/shape mismatch: prediction {pred.mask.shape}, ground truth {(gt.F, gt.H, gt.W)}")
    mask = gt.mask & pred.mask
    flows, vis = gt.flow[:-1], gt.vis[:-1]
    report = EvalReport(name, pred.modality)
    if pred.modality == "normal":
        pf = _per_frame(normal_metrics, pred.values, gt.normal, mask, NORMAL_KEYS)
        m, p = tc_normal(pred.values, flows, vis, mask)
        report.normal = NormalEvalReport(**{k: float(np.mean(v)) for k, v in pf.items()},
                                         opw=opw(pred.values, flows, vis, mask), tc_mean=m, tc_11_25=p, per_frame=pf)
        return report
    if pred.modality != "depth":
        raise ModalityError(f"cannot evaluate modality {pred.modality!r}")
    gt_depth = gt.depth.astype(np.float64)
    for arm in protocol.arms:
        if arm == "absolute":
            roots = gt.root_depth
            if not np.isfinite(roots).all():
                if protocol.require_roots:
                    raise ValidationError("ground-truth roots missing: cannot score the absolute arm")
                continue
            aligned = recover_metric_video(pred, roots)
        else:
            res = (align_shift if arm == "shift" else align_scale_shift)(pred.values, gt_depth, mask)
            aligned = res.aligned
            report.alignment[arm] = {"scale": res.scale, "shifts": [float(s) for s in res.shifts]}
        report.depth[arm] = _depth_report(aligned, gt_depth, mask, flows, vis)
    return report


def aggregate(reports: list[EvalReport], name: str = "aggregate") -> EvalReport:
    """Mean of every scalar over sequences (per-frame breakdowns are not pooled)."""
    if not reports:
        raise ValidationError("nothing to aggregate")
    modality = reports[0].modality
    if any(r.modality != modality for r in reports):
        raise ModalityError("cannot aggregate reports of different modalities")

    def mean_of(items, cls):
        keys = [f.name for f in fields(cls) if f.name != "per_frame"]
        return cls(**{k: float(np.mean([getattr(i, k) for i in items])) for k in keys})

    out = EvalReport(name, modality)
    if modality == "normal":
        out.normal = mean_of([r.normal for r in reports], NormalEvalReport)
    else:
        arms = [a for a in ARMS if all(a in r.depth for r in reports)]
        out.depth = {a: mean_of([r.depth[a] for r in reports], DepthEvalReport) for a in arms}
    return out


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = "%.17g" % x
    return s if any(c in s for c in ".en") else s + ".0"


def dumps17(obj, indent: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad, inner = " " * indent, " " * (indent + 1)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps17(v, indent + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(dumps17(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dumps17(v, indent + 1) for v in seq) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


DEPTH_COLUMNS = [("abs_rel", "AbsRel"), ("sq_rel", "SqRel"), ("rmse_lin", "RMSE"), ("rmse_log", "RMSE log"),
                 ("delta_105", "δ<1.05"), ("delta1", "δ<1.25"), ("si_log10", "SI log10"), ("opw", "OPW"),
                 ("tc_rmse", "TC-RMSE"), ("tc_delta1", "TC-δ1")]
NORMAL_COLUMNS = [("mean_deg", "Mean°"), ("median_deg", "Median°"), ("pct_11_25", "11.25°"), ("pct_30", "30°"),
                  ("opw", "OPW"), ("tc_mean", "TC-Mean°"), ("tc_11_25", "TC-11.25°")]
ARM_TITLES = {"absolute": "Absolute", "shift": "Shift-aligned", "scale_shift": "Scale+shift-aligned"}


def summary_markdown(reports: list[EvalReport], agg: EvalReport | None = None) -> str:
    rows = list(reports) + ([agg] if agg is not None else [])
    lines = []
    if rows[0].modality == "normal":
        lines += ["## Normal", "", "| sequence | " + " | ".join(t for _, t in NORMAL_COLUMNS) + " |",
                  "|---" * (len(NORMAL_COLUMNS) + 1) + "|"]
        lines += ["| " + r.name + " | " + " | ".join(f"{getattr(r.normal, k):.4f}" for k, _ in NORMAL_COLUMNS) + " |"
                  for r in rows]
        return "\n".join(lines) + "\n"
    for arm in ARMS:
        have = [r for r in rows if arm in r.depth]
        if not have:
            continue
        lines += [f"## Depth, {ARM_TITLES[arm]}", "", "| sequence | " + " | ".join(t for _, t in DEPTH_COLUMNS) + " |",
                  "|---" * (len(DEPTH_COLUMNS) + 1) + "|"]
        lines += ["| " + r.name + " | " + " | ".join(f"{getattr(r.depth[arm], k):.4f}" for k, _ in DEPTH_COLUMNS) + " |"
                  for r in have]
        lines.append("")
    return "\n".join(lines)


def _plots(reports: list[EvalReport], out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    keys = NORMAL_KEYS if reports[0].modality == "normal" else DEPTH_KEYS
    for key in keys:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for r in reports:
            series = [("", r.normal)] if r.normal is not None else list(r.depth.items())
            for arm, rep in series:
                ax.plot(rep.per_frame[key], marker=".", label=f"{r.name} {arm}".strip())
        ax.set_xlabel("frame")
        ax.set_ylabel(key)
        ax.legend(fontsize=6)
        fig.tight_layout()
        path = out_dir / f"plot_{key}.png"
        fig.savefig(path, dpi=80, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written


def emit_report(reports: list[EvalReport], out_dir, plots: bool = True) -> dict:
    """Write report.json, summary.md and per-metric PNG plots; returns the JSON payload."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = aggregate(reports)
    payload = {"sequences": [r.to_dict() for r in reports], "aggregate": agg.to_dict()}
    (out_dir / "report.json").write_text(dumps17(payload) + "\n", encoding="utf-8")
    (out_dir / "summary.md").write_text(summary_markdown(reports, agg), encoding="utf-8")
    if plots:
        _plots(reports, out_dir)
    return payload


def read_report(path) -> tuple[list[EvalReport], EvalReport]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return [EvalReport.from_dict(r) for r in d["sequences"]], EvalReport.from_dict(d["aggregate"])
