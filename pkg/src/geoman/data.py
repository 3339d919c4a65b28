"""Dataset synthesis and conversion of sequences into codec-ready 3-channel maps."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import georep
from .errors import SequenceIOError
from .scenegen import CameraPath, SequenceSample, generate_sequence, human_proxy_spec, read_sequence, write_sequence


@dataclass
class DataConfig:
    n_train: int = 64
    n_eval: int = 4
    frames_train: int = 12
    frames_eval_subject: int = 32
    frames_eval_camera: int = 16
    height: int = 64
    width: int = 64
    max_height: float = 2.0
    seed: int = 0


def sequence_seed(base: int, split: str, index: int) -> int:
    return int(base) * 1_000_003 + (0 if split == "train" else 500_000) + int(index)


def make_sequence(cfg: DataConfig, split: str, index: int) -> SequenceSample:
    """Random human-proxy clip. Even indices are moving-subject clips, odd ones moving-camera."""
    seed = sequence_seed(cfg.seed, split, index)
    rng = np.random.default_rng(seed)
    mode = "moving-subject" if index % 2 == 0 else "moving-camera"
    if split == "train":
        F = cfg.frames_train
    else:
        F = cfg.frames_eval_subject if mode == "moving-subject" else cfg.frames_eval_camera
    scale = float(rng.uniform(0.75, 1.1))
    ground = 0.915 * scale
    start = np.array([rng.uniform(-0.2, 0.2), ground, rng.uniform(-0.2, 0.2)])
    yaw0 = float(rng.uniform(-0.6, 0.6))
    if mode == "moving-subject":
        end = start + np.array([rng.uniform(-0.4, 0.4), 0.0, rng.uniform(-0.4, 0.4)])
        yaw = (yaw0, yaw0 + float(rng.uniform(-0.5, 0.5)))
    else:
        end = start
        yaw = (yaw0, yaw0)
    spec = human_proxy_spec(seed, scale=scale, root_start=start, root_end=end, yaw=yaw, max_height=cfg.max_height)
    arc = float(rng.uniform(30.0, 90.0)) * float(rng.choice([-1.0, 1.0])) if mode == "moving-camera" else 0.0
    path = CameraPath(
        target=tuple(0.5 * (start + end)),
        distance=float(rng.uniform(3.4, 4.2)),
        elevation_deg=float(rng.uniform(-5.0, 20.0)),
        start_deg=float(rng.uniform(-30.0, 30.0)),
        arc_deg=arc,
        focal=100.0 * cfg.width / 64.0,
        width=cfg.width,
        height=cfg.height,
    )
    seq = generate_sequence(spec, mode, F, path)
    seq.meta = {"split": split, "index": index, "scale": scale}
    return seq


def _write_one(cfg: DataConfig, out_dir: Path, split: str, i: int) -> str:
    rel = f"{split}/seq_{i:04d}"
    write_sequence(make_sequence(cfg, split, i), out_dir / rel)
    return rel


def generate_dataset(cfg: DataConfig, out_dir, jobs: int = 1) -> dict:
    """Each sequence depends only on (seed, split, index), so workers cannot change the output."""
    out_dir = Path(out_dir)
    work = [(split, i) for split, count in (("train", cfg.n_train), ("eval", cfg.n_eval)) for i in range(count)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            rels = list(pool.map(_write_one, *zip(*[(cfg, out_dir, s, i) for s, i in work])))
    else:
        rels = [_write_one(cfg, out_dir, s, i) for s, i in work]
    index = {"train": [r for r in rels if r.startswith("train/")], "eval": [r for r in rels if r.startswith("eval/")]}
    with open(out_dir / "index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return index


def load_index(data_dir) -> dict:
    path = Path(data_dir) / "index.json"
    if not path.is_file():
        raise SequenceIOError(f"missing dataset index: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_split(data_dir, split: str) -> list[SequenceSample]:
    return [read_sequence(Path(data_dir) / rel) for rel in load_index(data_dir)[split]]


def rgb_maps(seq: SequenceSample) -> np.ndarray:
    """(F, H, W, 3) RGB in [-1, 1]; background stays -1."""
    return seq.rgb.astype(np.float64) * 2.0 - 1.0


def depth_maps(seq: SequenceSample, h: float) -> np.ndarray:
    out = []
    for f in seq.frames:
        rr = georep.to_root_relative(georep.MetricDepthMap(f.depth, f.mask), float(f.root_cam[2]), h)
        out.append(georep.encode_for_diffusion(rr))
    return np.stack(out)


def normal_maps(seq: SequenceSample) -> np.ndarray:
    return np.stack([georep.encode_normal(f.normal, f.mask) for f in seq.frames])


def geometry_maps(seq: SequenceSample, modality: str, h: float) -> np.ndarray:
    return depth_maps(seq, h) if modality == "depth" else normal_maps(seq)


def codec_training_maps(seqs: list[SequenceSample], h: float) -> np.ndarray:
    return np.concatenate([np.concatenate([rgb_maps(s), depth_maps(s, h), normal_maps(s)]) for s in seqs])
