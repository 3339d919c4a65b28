"""Single-file checkpoints: safetensors payload with a JSON header in the metadata block."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch
from safetensors import safe_open
from safetensors.torch import save_file

from .errors import SequenceIOError

FORMAT_VERSION = 1
_HEADER_KEY = "geoman"


def save_checkpoint(path, kind: str, state: dict[str, torch.Tensor], header: dict) -> str:
    """Write tensors + header; returns the file's sha256."""
    header = dict(header, kind=kind, format_version=FORMAT_VERSION)
    tensors = {k: v.detach().contiguous().clone() for k, v in state.items()}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_file(tensors, str(path), metadata={_HEADER_KEY: json.dumps(header, sort_keys=True)})
    return file_sha256(path)


def load_checkpoint(path, kind: str | None = None) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    if not path.is_file():
        raise SequenceIOError(f"missing checkpoint: {path}")
    try:
        with safe_open(str(path), framework="pt") as fh:
            meta = fh.metadata() or {}
            tensors = {k: fh.get_tensor(k) for k in fh.keys()}
    except Exception as exc:  # safetensors raises its own error types
        raise SequenceIOError(f"unreadable checkpoint {path}: {exc}") from exc
    if _HEADER_KEY not in meta:
        raise SequenceIOError(f"checkpoint {path} has no header")
    header = json.loads(meta[_HEADER_KEY])
    if header.get("format_version") != FORMAT_VERSION:
        raise SequenceIOError(f"checkpoint {path}: unsupported format version {header.get('format_version')}")
    if kind is not None and header.get("kind") != kind:
        raise SequenceIOError(f"checkpoint {path} is a {header.get('kind')!r} checkpoint, expected {kind!r}")
    return tensors, header


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
