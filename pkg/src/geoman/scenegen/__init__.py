"""Procedural 4D human-proxy scenes with exact depth, normals, flow and root trajectories."""
from .camera import CameraModel
from .io import read_sequence, write_sequence
from .render import FrameSample, render_frame
from .scene import AnimationCurve, PartSpec, Scene, SceneSpec, build_scene, human_proxy_spec, single_sphere_spec
from .sequence import CameraPath, SequenceSample, composite_sequences, generate_sequence

__all__ = [
    "AnimationCurve",
    "CameraModel",
    "CameraPath",
    "FrameSample",
    "PartSpec",
    "Scene",
    "SceneSpec",
    "SequenceSample",
    "build_scene",
    "composite_sequences",
    "generate_sequence",
    "human_proxy_spec",
    "read_sequence",
    "render_frame",
    "single_sphere_spec",
    "write_sequence",
]
