"""Sequence container: ``manifest.json`` plus raw little-endian per-frame arrays."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import SequenceIOError
from .camera import CameraModel
from .render import FrameSample
from .sequence import SequenceSample

FORMAT = "geoman-sequence"
VERSION = 1

# name -> (file suffix, dtype, trailing channel count or None)
CHANNELS = {
    "rgb": ("f32", "<f4", 3),
    "depth": ("f32", "<f4", None),
    "normal": ("f32", "<f4", 3),
    "mask": ("u8", "u1", None),
    "flow": ("f32", "<f4", 2),
    "vis": ("u8", "u1", None),
}
SEQUENCE_CHANNELS = tuple(CHANNELS)


def frame_path(directory: Path, name: str, i: int) -> Path:
    return Path(directory) / f"{name}_{i:04d}.{CHANNELS[name][0]}"


def write_arrays(directory, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    F, H, W = manifest["F"], manifest["H"], manifest["W"]
    manifest = dict(manifest, format=FORMAT, version=VERSION, channels=list(arrays))
    for name, arr in arrays.items():
        _, dtype, ch = CHANNELS[name]
        expected = (F, H, W) if ch is None else (F, H, W, ch)
        if arr.shape != expected:
            raise SequenceIOError(f"{name}: array shape {arr.shape} != {expected}")
        for i in range(F):
            np.ascontiguousarray(arr[i], dtype=dtype).tofile(frame_path(directory, name, i))
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise SequenceIOError(f"missing manifest: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SequenceIOError(f"malformed manifest {path}: {exc}") from exc
    for key in ("F", "H", "W", "channels"):
        if key not in manifest:
            raise SequenceIOError(f"malformed manifest {path}: missing key {key!r}")
    if manifest.get("format", FORMAT) != FORMAT:
        raise SequenceIOError(f"malformed manifest {path}: unknown format {manifest.get('format')!r}")
    unknown = set(manifest["channels"]) - set(CHANNELS)
    if unknown:
        raise SequenceIOError(f"malformed manifest {path}: unknown channels {sorted(unknown)}")
    return manifest


def read_arrays(directory) -> tuple[dict, dict[str, np.ndarray]]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    F, H, W = manifest["F"], manifest["H"], manifest["W"]
    out = {}
    for name in manifest["channels"]:
        _, dtype, ch = CHANNELS[name]
        shape = (H, W) if ch is None else (H, W, ch)
        count = int(np.prod(shape))
        frames = []
        for i in range(F):
            path = frame_path(directory, name, i)
            if not path.is_file():
                raise SequenceIOError(f"shape mismatch: manifest declares F={F} but {path} is missing")
            data = np.fromfile(path, dtype=dtype)
            if data.size != count:
                raise SequenceIOError(f"shape mismatch: {path} holds {data.size} values, expected {count}")
            frames.append(data.reshape(shape))
        arr = np.stack(frames)
        out[name] = arr.astype(bool) if dtype == "u1" else arr.astype(np.float32)
    return manifest, out


def write_sequence(seq: SequenceSample, directory) -> None:
    manifest = {
        "F": seq.F,
        "H": seq.H,
        "W": seq.W,
        "mode": seq.mode,
        "seed": int(seq.seed),
        "cameras": [c.to_dict() for c in seq.cameras],
        "root_cam": [[float(x) for x in f.root_cam] for f in seq.frames],
        "meta": seq.meta,
    }
    write_arrays(directory, manifest, {name: seq.stack(name) for name in SEQUENCE_CHANNELS})


def read_sequence(directory) -> SequenceSample:
    manifest, arrays = read_arrays(directory)
    missing = [c for c in SEQUENCE_CHANNELS if c not in arrays]
    if missing:
        raise SequenceIOError(f"{Path(directory) / 'manifest.json'}: not a full sequence, missing channels {missing}")
    F = manifest["F"]
    try:
        cameras = [CameraModel.from_dict(c) for c in manifest["cameras"]]
        roots = manifest.get("root_cam")
        roots = np.full((F, 3), np.nan) if roots is None else np.asarray(roots, dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise SequenceIOError(f"malformed manifest {Path(directory) / 'manifest.json'}: {exc}") from exc
    if len(cameras) != F or roots.shape != (F, 3):
        raise SequenceIOError(f"shape mismatch in {Path(directory) / 'manifest.json'}: camera/root lists must have F={F} entries")
    frames = [
        FrameSample(
            rgb=arrays["rgb"][i],
            depth=arrays["depth"][i],
            normal=arrays["normal"][i],
            mask=arrays["mask"][i],
            flow=arrays["flow"][i],
            vis=arrays["vis"][i],
            root_cam=roots[i],
        )
        for i in range(F)
    ]
    return SequenceSample(frames=frames, cameras=cameras, mode=manifest.get("mode", "moving-subject"),
                          seed=manifest.get("seed", 0), meta=manifest.get("meta", {}))
