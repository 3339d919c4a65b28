"""Command-line entry point: data generation, training, inference, evaluation and the full reference run."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import georep
from .checkpoint import file_sha256, load_checkpoint
from .codec import load_codec, psnr, reconstruct, save_codec, train_codec
from .config import RunConfig, dump_config, load_config
from .data import codec_training_maps, generate_dataset, geometry_maps, load_index, load_split, rgb_maps
from .errors import GeomanError, ModalityError, SequenceIOError, ValidationError
from .evalsuite import EvalProtocol, align_shift, depth_metrics, emit_report, evaluate_sequence
from .i2g import I2GModel, infer_i2g, load_i2g, save_i2g, train_i2g
from .latents import MODALITIES
from .pipeline import (
    GeometryVideo,
    PipelineConfig,
    estimate_video,
    multi_person_estimate,
    per_frame_i2g,
    read_prediction,
    recover_metric_video,
    write_prediction,
)
from .scenegen import read_sequence
from .v2g import load_v2g, prepare_clips, save_v2g, train_naive_baseline, train_v2g

log = logging.getLogger("geoman")

CODEC_FILE = "codec.safetensors"
I2G_FILE = "i2g.safetensors"
V2G_FILE = "v2g.safetensors"
NAIVE_FILE = "naive.safetensors"


class UsageError(GeomanError):
    code = "USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def _prepare_out(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        if not force:
            raise ValidationError(f"output {path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path) if path.is_dir() else path.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _codec_ref(codec_path: Path, ckpt_dir: Path) -> tuple[str, str]:
    """Codec path stored relative to the checkpoint directory, so run trees can be moved or compared."""
    return os.path.relpath(codec_path.resolve(), ckpt_dir.resolve()), file_sha256(codec_path)


def _load_codec_checked(path) -> tuple:
    path = Path(path)
    if not path.is_file():
        raise SequenceIOError(f"missing codec checkpoint: {path}")
    codec, header = load_codec(path)
    return codec, header


def _codec_for(ckpt: Path, header: dict, override=None):
    """Locate and verify the codec a diffusion checkpoint was trained against."""
    path = Path(override) if override else (ckpt.parent / header["codec_path"])
    codec, _ = _load_codec_checked(path)
    if file_sha256(path) != header["codec_hash"]:
        raise SequenceIOError(f"codec {path} does not match the one {ckpt} was trained with (hash mismatch)")
    return codec


def load_i2g_ckpt(path, codec_override=None) -> I2GModel:
    path = Path(path)
    _, header = load_checkpoint(path, "i2g")
    model, _ = load_i2g(path, _codec_for(path, header, codec_override))
    return model


def load_video_ckpt(path, codec_override=None):
    path = Path(path)
    _, header = load_checkpoint(path)
    if header.get("kind") not in ("v2g", "naive"):
        raise ModalityError(f"{path} is a {header.get('kind')!r} checkpoint, not a video model")
    model, _ = load_v2g(path, _codec_for(path, header, codec_override))
    return model


def _train_setup(args):
    cfg = load_config(args.config)
    out = _prepare_out(args.out, args.force)
    dump_config(cfg, out / "config.json")
    return cfg, out


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    out = _prepare_out(args.out, args.force)
    index = generate_dataset(cfg.data, out, jobs=args.jobs)
    dump_config(cfg, out / "config.json")
    print(f"wrote {len(index['train'])} train + {len(index['eval'])} eval sequences to {out}")
    return 0


def cmd_train_codec(args) -> int:
    cfg, out = _train_setup(args)
    train = load_split(args.data, "train")
    h = cfg.data.max_height
    codec, hist = train_codec(codec_training_maps(train, h), cfg.codec)
    sha = save_codec(codec, out / CODEC_FILE)
    _write_csv(out / "loss.csv", hist)
    metrics = {"sha256": sha, "final_recon": hist[-1]["recon"]}
    ev = load_split(args.data, "eval") if load_index(args.data)["eval"] else []
    if ev:
        hold = codec_training_maps(ev, h)
        metrics["holdout_psnr"] = psnr(reconstruct(codec, hold), hold)
    _write_json(out / "metrics.json", metrics)
    print(f"codec checkpoint {out / CODEC_FILE} ({sha[:12]})")
    return 0


def _diffusion_setup(args):
    cfg, out = _train_setup(args)
    codec_path = Path(args.codec)
    codec, _ = _load_codec_checked(codec_path)
    return cfg, out, codec, codec_path


def cmd_train_i2g(args) -> int:
    cfg, out, codec, codec_path = _diffusion_setup(args)
    icfg = cfg.i2g_for(args.modality)
    train = load_split(args.data, "train")
    h = cfg.data.max_height
    R = np.concatenate([rgb_maps(s) for s in train])
    G = np.concatenate([geometry_maps(s, args.modality, h) for s in train])
    model, hist = train_i2g(R, G, codec, icfg)
    sha = save_i2g(model, out / I2G_FILE, *_codec_ref(codec_path, out))
    _write_csv(out / "loss.csv", hist)
    _write_json(out / "metrics.json", {"sha256": sha, "final_loss": hist[-1]["loss"]})
    print(f"i2g ({args.modality}) checkpoint {out / I2G_FILE} ({sha[:12]})")
    return 0


def _clips(cfg: RunConfig, data_dir, codec, modalities):
    train = load_split(data_dir, "train")
    h = cfg.data.max_height
    return prepare_clips(codec, [rgb_maps(s) for s in train],
                         {m: [geometry_maps(s, m, h) for s in train] for m in modalities})


def cmd_train_v2g(args) -> int:
    cfg, out, codec, codec_path = _diffusion_setup(args)
    model, hist = train_v2g(_clips(cfg, args.data, codec, MODALITIES), codec, cfg.v2g)
    sha = save_v2g(model, out / V2G_FILE, *_codec_ref(codec_path, out))
    _write_csv(out / "loss.csv", hist)
    _write_json(out / "metrics.json", {"sha256": sha, "final_loss": hist[-1]["loss"]})
    print(f"v2g checkpoint {out / V2G_FILE} ({sha[:12]})")
    return 0


def cmd_train_naive(args) -> int:
    cfg, out, codec, codec_path = _diffusion_setup(args)
    model, hist = train_naive_baseline(_clips(cfg, args.data, codec, (args.modality,)), codec, cfg.v2g, args.modality)
    sha = save_v2g(model, out / NAIVE_FILE, *_codec_ref(codec_path, out))
    _write_csv(out / "loss.csv", hist)
    _write_json(out / "metrics.json", {"sha256": sha, "final_loss": hist[-1]["loss"]})
    print(f"naive ({args.modality}) checkpoint {out / NAIVE_FILE} ({sha[:12]})")
    return 0


def _pipeline_cfg(cfg: RunConfig, modality: str, overlap: int | None = None) -> PipelineConfig:
    d = dict(cfg.pipeline.__dict__, modality=modality)
    if overlap is not None:
        d["overlap"] = overlap
    return PipelineConfig(**d)


def cmd_infer(args) -> int:
    cfg = load_config(args.config)
    pcfg = _pipeline_cfg(cfg, args.modality, args.overlap)
    video_model = load_video_ckpt(args.v2g, args.codec)
    i2g = load_i2g_ckpt(args.i2g, args.codec) if args.i2g else None
    if video_model.uses_reference and i2g is None:
        raise ValidationError("--i2g is required with a reference-guided video model")
    if i2g is not None and i2g.modality != args.modality:
        raise ModalityError(f"I2G checkpoint predicts {i2g.modality!r}, requested {args.modality!r}")
    video = read_sequence(args.video)
    if video.F > pcfg.segment and not args.long:
        raise ValidationError(f"video has {video.F} frames > segment length {pcfg.segment}; pass --long")
    out = _prepare_out(args.out, args.force)
    if args.multi_person:
        if args.modality != "depth":
            raise ModalityError("--multi-person composites metric depth; use --modality depth")
        try:
            with np.load(args.multi_person) as z:
                masks, roots = z["masks"], z["roots"]
        except (OSError, KeyError, ValueError) as e:
            raise SequenceIOError(f"{args.multi_person}: expected an .npz with 'masks' and 'roots' ({e})") from None
        depth, subjects = multi_person_estimate(i2g, video_model, video, masks, roots, pcfg)
        mask = np.asarray(masks, dtype=bool).any(0)
        gv = GeometryVideo(depth, mask, "depth", video_model.cfg.max_height, pcfg.seed, "i2g",
                           [], None)
        write_prediction(gv, out, {"pipeline": pcfg.__dict__, "subjects": len(masks), "metric": True})
    else:
        gv = estimate_video(i2g, video_model, video, pcfg)
        write_prediction(gv, out, {"pipeline": pcfg.__dict__, "model": video_model.kind})
    dump_config(cfg, out / "config.json")
    print(f"wrote {gv.N}-frame {args.modality} prediction to {out}")
    return 0


def _pred_to_eval(pred_dir: Path, gt_dir: Path, protocol: EvalProtocol, name: str):
    gv, side = read_prediction(pred_dir)
    gt = read_sequence(gt_dir)
    if gv.N != gt.F:
        raise ValidationError(f"length mismatch: prediction has {gv.N} frames, ground truth {gt.F}")
    if side.get("config", {}).get("metric"):
        roots = gt.root_depth
        if not np.isfinite(roots).all():
            raise ValidationError("ground-truth roots missing: cannot score a metric prediction")
        gv.values = np.where(gv.mask, gv.values - roots[:, None, None], 0.0)
    return evaluate_sequence(gv, gt, protocol, name)


def _eval_pairs(pred: Path, gt: Path) -> list[tuple[Path, Path, str]]:
    if (pred / "prediction.json").is_file():
        return [(pred, gt, pred.name)]
    subs = sorted(p for p in pred.iterdir() if (p / "prediction.json").is_file()) if pred.is_dir() else []
    if not subs:
        raise SequenceIOError(f"{pred}: no predictions found")
    return [(p, gt / p.name, p.name) for p in subs]


def run_eval(pred, gt, out, cfg: RunConfig, jobs: int = 1):
    protocol = cfg.eval.protocol()
    pairs = _eval_pairs(Path(pred), Path(gt))
    if jobs > 1 and len(pairs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(min(jobs, len(pairs))) as pool:
            reports = list(pool.map(_pred_to_eval, *zip(*[(p, g, protocol, n) for p, g, n in pairs])))
    else:
        reports = [_pred_to_eval(p, g, protocol, n) for p, g, n in pairs]
    return emit_report(reports, out, plots=cfg.eval.plots)


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    out = _prepare_out(args.out, args.force)
    payload = run_eval(args.pred, args.gt, out, cfg, args.jobs)
    dump_config(cfg, out / "config.json")
    print(f"evaluated {len(payload['sequences'])} sequence(s); report in {out}")
    return 0


def cmd_pcd_export(args) -> int:
    gv, side = read_prediction(args.pred)
    if gv.modality != "depth":
        raise ModalityError("point clouds need a depth prediction")
    gt = read_sequence(args.camera_from)
    if gt.F != gv.N:
        raise ValidationError(f"length mismatch: prediction has {gv.N} frames, camera source {gt.F}")
    if side.get("config", {}).get("metric"):
        metric = gv.values
    else:
        roots = gt.root_depth
        if not np.isfinite(roots).all():
            raise ValidationError("camera source has no root depths to recover metric depth")
        metric = recover_metric_video(gv, roots)
    out = Path(args.out)
    frames = range(gv.N) if args.frame is None else [args.frame]
    rgb = gt.rgb
    written = []
    for i in frames:
        if not 0 <= i < gv.N:
            raise ValidationError(f"frame {i} out of range [0, {gv.N})")
        pc = georep.backproject(georep.MetricDepthMap(metric[i], gv.mask[i]), gt.cameras[i], rgb[i])
        path = out if args.frame is not None else out.with_name(f"{out.stem}_{i:04d}{out.suffix or '.ply'}")
        georep.write_ply(pc, path)
        written.append(path)
    print(f"wrote {len(written)} PLY file(s)")
    return 0


# ---------------------------------------------------------------- run-all


def _i2g_first_frame_absrel(model: I2GModel, seqs, pcfg: PipelineConfig, stride: int) -> float:
    vals = []
    for s in seqs:
        for i in range(0, s.F, stride):
            res = infer_i2g(model, s.rgb[i], s.mask[i], pcfg.ensemble, pcfg.sampler_steps, pcfg.seed, "depth",
                            pcfg.sampler)
            a = align_shift(res.values, s.depth[i], s.mask[i]).aligned
            vals.append(depth_metrics(a, s.depth[i], s.mask[i])["abs_rel"])
    return float(np.mean(vals))


def _infer_split(method: str, out: Path, seqs, names, i2g, video_model, pcfg: PipelineConfig):
    for seq, name in zip(seqs, names):
        if method == "i2g":
            gv = per_frame_i2g(i2g, seq, pcfg)
        else:
            gv = estimate_video(i2g, video_model, seq, pcfg)
        write_prediction(gv, out / name, {"pipeline": pcfg.__dict__, "method": method})


def cmd_run_all(args) -> int:
    cfg = load_config(args.config)
    root = _prepare_out(args.out, args.force)
    dump_config(cfg, root / "config.json")
    cfg_path = root / "config.json"
    timings = {}

    def step(name, fn):
        t0 = time.perf_counter()
        print(f"[run-all] {name}", flush=True)
        fn()
        timings[name] = time.perf_counter() - t0

    def sub(argv):
        rc = main(argv + ["--config", str(cfg_path)])
        if rc != 0:
            raise GeomanError(f"run-all step {argv[0]} failed")

    data, codec_dir = root / "data", root / "codec"
    step("gen-data", lambda: sub(["gen-data", "--out", str(data), "--jobs", str(args.jobs)]))
    step("train-codec", lambda: sub(["train-codec", "--data", str(data), "--out", str(codec_dir)]))
    codec = str(codec_dir / CODEC_FILE)
    for m in MODALITIES:
        step(f"train-i2g-{m}", lambda m=m: sub(["train-i2g", "--data", str(data), "--out", str(root / f"i2g_{m}"),
                                                 "--codec", codec, "--modality", m]))
    step("train-v2g", lambda: sub(["train-v2g", "--data", str(data), "--out", str(root / "v2g"), "--codec", codec]))
    if cfg.eval.baselines:
        step("train-naive", lambda: sub(["train-naive", "--data", str(data), "--out", str(root / "naive"),
                                         "--codec", codec, "--modality", "depth"]))

    names = [Path(r).name for r in load_index(data)["eval"]]
    seqs = load_split(data, "eval")
    v2g = load_video_ckpt(root / "v2g" / V2G_FILE)
    i2gs = {m: load_i2g_ckpt(root / f"i2g_{m}" / I2G_FILE) for m in MODALITIES}
    methods = [("geoman", m) for m in MODALITIES]
    if cfg.eval.baselines:
        methods += [("naive", "depth"), ("i2g", "depth")]
    for method, m in methods:
        pcfg = _pipeline_cfg(cfg, m)
        model = load_video_ckpt(root / "naive" / NAIVE_FILE) if method == "naive" else v2g
        step(f"infer-{method}-{m}", lambda: _infer_split(method, root / "pred" / f"{method}_{m}", seqs, names,
                                                          i2gs[m], model, pcfg))
        step(f"eval-{method}-{m}", lambda: run_eval(root / "pred" / f"{method}_{m}", data / "eval",
                                                     root / "eval" / f"{method}_{m}", cfg, args.jobs))

    summary = _acceptance_summary(root, cfg, seqs, i2gs["depth"])
    _write_json(root / "acceptance.json", summary)
    (root / "acceptance.md").write_text(_acceptance_markdown(summary), encoding="utf-8")
    _write_json(root / "timings.json", {k: round(v, 3) for k, v in timings.items()})
    print((root / "acceptance.md").read_text(encoding="utf-8"))
    return 0


def _agg(root: Path, name: str, arm: str, key: str) -> float:
    d = json.loads((root / "eval" / name / "report.json").read_text(encoding="utf-8"))["aggregate"]
    return float(d["depth"][arm][key]) if d["depth"] else float(d["normal"][key])


def _window_means(path: Path, window: int) -> list[float]:
    """Mean logged loss over consecutive ``window``-step blocks (a trailing partial block is dropped)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(int(r["step"]), float(r["loss"])) for r in csv.DictReader(fh)]
    n = (rows[-1][0] + 1) // window if rows else 0
    return [float(np.mean([v for k, v in rows if k // window == i])) for i in range(n)]


def _acceptance_summary(root: Path, cfg: RunConfig, seqs, i2g_depth: I2GModel) -> dict:
    """Run-level quantities behind the toy end-to-end learning checks."""
    codec_metrics = json.loads((root / "codec" / "metrics.json").read_text(encoding="utf-8"))
    out = {"codec_holdout_psnr": codec_metrics.get("holdout_psnr"),
           "geoman_depth_abs_rel": _agg(root, "geoman_depth", "absolute", "abs_rel"),
           "geoman_depth_delta1": _agg(root, "geoman_depth", "absolute", "delta1"),
           "geoman_depth_opw": _agg(root, "geoman_depth", "absolute", "opw"),
           "geoman_normal_mean_deg": _agg(root, "geoman_normal", "", "mean_deg"),
           "geoman_normal_opw": _agg(root, "geoman_normal", "", "opw"),
           "v2g_loss_500": _window_means(root / "v2g" / "loss.csv", 500)}
    w = out["v2g_loss_500"]
    out["v2g_loss_monotone"] = all(b < a for a, b in zip(w, w[1:]))
    checks = {}
    if cfg.eval.baselines:
        pcfg = _pipeline_cfg(cfg, "depth")
        stride = 4
        rand = I2GModel(i2g_depth.cfg, i2g_depth.codec)
        out["i2g_abs_rel_shift"] = _i2g_first_frame_absrel(i2g_depth, seqs, pcfg, stride)
        out["i2g_random_abs_rel_shift"] = _i2g_first_frame_absrel(rand, seqs, pcfg, stride)
        out["naive_depth_abs_rel"] = _agg(root, "naive_depth", "absolute", "abs_rel")
        out["i2g_per_frame_depth_opw"] = _agg(root, "i2g_depth", "absolute", "opw")
        checks["7a"] = out["i2g_abs_rel_shift"] <= 0.5 * out["i2g_random_abs_rel_shift"]
        checks["7b"] = out["geoman_depth_abs_rel"] <= out["naive_depth_abs_rel"]
        checks["7c"] = out["geoman_depth_opw"] <= out["i2g_per_frame_depth_opw"]
    out["checks"] = checks
    return out


def _acceptance_markdown(s: dict) -> str:
    c = s["checks"]
    rows = [
        ("7a", "I2G shift-aligned AbsRel <= 0.5 x random init",
         f"{s.get('i2g_abs_rel_shift', float('nan')):.4f} vs {s.get('i2g_random_abs_rel_shift', float('nan')):.4f}"),
        ("7b", "pipeline absolute AbsRel <= naive extension",
         f"{s['geoman_depth_abs_rel']:.4f} vs {s.get('naive_depth_abs_rel', float('nan')):.4f}"),
        ("7c", "pipeline absolute OPW <= per-frame I2G",
         f"{s['geoman_depth_opw']:.4f} vs {s.get('i2g_per_frame_depth_opw', float('nan')):.4f}"),
    ]
    lines = ["# Reference run checks", "", "| check | statement | values | result |", "|---|---|---|---|"]
    for key, text, vals in rows:
        res = "PASS" if c.get(key) else ("FAIL" if key in c else "skipped")
        lines.append(f"| {key} | {text} | {vals} | {res} |")
    lines += ["", f"codec held-out PSNR: {s['codec_holdout_psnr']}",
              f"pipeline depth delta1 (absolute): {s['geoman_depth_delta1']:.4f}",
              f"pipeline normal mean angular error: {s['geoman_normal_mean_deg']:.3f} deg",
              "V2G loss, 500-step means: " + ", ".join(f"{v:.4f}" for v in s["v2g_loss_500"])
              + (" (decreasing)" if s["v2g_loss_monotone"] else " (not monotone)"), ""]
    return "\n".join(lines)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geoman", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sp = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(q, out=True):
        q.add_argument("--config", help="run config JSON (defaults when omitted)")
        if out:
            q.add_argument("--out", required=True)
        q.add_argument("--force", action="store_true", help="overwrite a non-empty output")
        q.add_argument("--jobs", type=int, default=1, help="cap on worker processes")

    q = sp.add_parser("gen-data", help="render the synthetic train/eval sequences")
    common(q)
    q.set_defaults(fn=cmd_gen_data)

    q = sp.add_parser("train-codec")
    common(q)
    q.add_argument("--data", required=True)
    q.set_defaults(fn=cmd_train_codec)

    for name, fn in (("train-i2g", cmd_train_i2g), ("train-v2g", cmd_train_v2g), ("train-naive", cmd_train_naive)):
        q = sp.add_parser(name)
        common(q)
        q.add_argument("--data", required=True)
        q.add_argument("--codec", required=True, help="codec checkpoint")
        if name == "train-i2g":
            q.add_argument("--modality", required=True, choices=MODALITIES)
        elif name == "train-naive":
            q.add_argument("--modality", default="depth", choices=MODALITIES)
        q.set_defaults(fn=fn)

    q = sp.add_parser("infer")
    common(q)
    q.add_argument("--i2g")
    q.add_argument("--v2g", required=True, help="V2G (or naive) checkpoint")
    q.add_argument("--video", required=True)
    q.add_argument("--modality", required=True, choices=MODALITIES)
    q.add_argument("--codec", help="override the codec recorded in the checkpoints")
    q.add_argument("--long", action="store_true", help="allow stitched inference on clips longer than a segment")
    q.add_argument("--overlap", type=int)
    q.add_argument("--multi-person", metavar="MASKS", help=".npz with masks (S, F, H, W) and roots (S, F)")
    q.set_defaults(fn=cmd_infer)

    q = sp.add_parser("eval")
    common(q)
    q.add_argument("--pred", required=True)
    q.add_argument("--gt", required=True)
    q.set_defaults(fn=cmd_eval)

    q = sp.add_parser("pcd-export")
    q.add_argument("--pred", required=True)
    q.add_argument("--camera-from", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--frame", type=int)
    q.set_defaults(fn=cmd_pcd_export, config=None)

    q = sp.add_parser("run-all", help="full reference run: data, training, inference, evaluation")
    common(q)
    q.set_defaults(fn=cmd_run_all)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        return args.fn(args)
    except GeomanError as e:
        msg = " ".join(str(e).split())
        print(f"error[{e.code}]: {msg}", file=sys.stderr)
        return 2 if isinstance(e, UsageError) else 1
    except KeyboardInterrupt:
        print("error[INTERRUPTED]: interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
