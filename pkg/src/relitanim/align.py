"""Driving-sequence alignment producing per-frame (shape, pose, expression).

Two modes:

* relative: the reference pose is the base and each frame adds the driving
  pose offset from the first driving frame, componentwise on axis-angle and
  translation. For large rotations this is an approximation of composing
  rotations.
* scale-consistent: driving poses are used verbatim (exact spatial
  alignment with the driving video), only the shape is swapped.

Expressions are passed through untouched in both modes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .face import PoseParams
from .sh import SHCoefficients


@dataclass(frozen=True)
class DrivingSequence:
    poses: tuple[PoseParams, ...]
    expressions: tuple[np.ndarray, ...]

    def __post_init__(self):
        poses = tuple(self.poses)
        exprs = tuple(np.array(e, dtype=np.float64) for e in self.expressions)
        if len(poses) < 1:
            raise ValueError("driving sequence must have at least one frame")
        if len(poses) != len(exprs):
            raise ValueError("poses and expressions differ in length")
        dims = {e.shape for e in exprs}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValueError("expressions must be equal-length vectors")
        for e in exprs:
            if not np.all(np.isfinite(e)):
                raise ValueError("expressions must be finite")
            e.setflags(write=False)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "expressions", exprs)

    def __len__(self) -> int:
        return len(self.poses)

    @classmethod
    def from_frames(cls, frames: list[dict]) -> DrivingSequence:
        poses, exprs = [], []
        for i, fr in enumerate(frames):
            unknown = set(fr) - {"rotation", "translation", "expression"}
            if unknown:
                raise ValueError(f"frame {i}: unknown keys {sorted(unknown)}")
            poses.append(PoseParams(fr["rotation"], fr["translation"]))
            exprs.append(fr["expression"])
        return cls(tuple(poses), tuple(exprs))

    def to_frames(self) -> list[dict]:
        return [
            {"rotation": p.rotation.tolist(), "translation": p.translation.tolist(), "expression": e.tolist()}
            for p, e in zip(self.poses, self.expressions)
        ]


@dataclass(frozen=True)
class AlignedSequence:
    poses: tuple[PoseParams, ...]
    expressions: tuple[np.ndarray, ...]
    shape: np.ndarray
    lighting: SHCoefficients

    def __len__(self) -> int:
        return len(self.poses)

    def to_dict(self) -> dict:
        frames = DrivingSequence(self.poses, self.expressions).to_frames()
        return {"frames": frames, "shape": self.shape.tolist(), "lighting": self.lighting.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> AlignedSequence:
        drv = DrivingSequence.from_frames(data["frames"])
        return cls(drv.poses, drv.expressions, np.asarray(data["shape"], float), SHCoefficients.from_dict(data["lighting"]))


def load_driving(path) -> DrivingSequence:
    """Driving JSON: a list of frames, or ``{"frames": [...]}``."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["frames"]
    return DrivingSequence.from_frames(data)


def _shape_vector(ref_shape) -> np.ndarray:
    s = np.array(ref_shape, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError("reference shape must be a vector")
    s.setflags(write=False)
    return s


def align_relative(
    driving: DrivingSequence, ref_pose: PoseParams, ref_shape, target_light: SHCoefficients
) -> AlignedSequence:
    """P_align_i = p_ref + (p_i - p_1); first aligned pose is ``ref_pose`` itself."""
    first = driving.poses[0]
    poses = [ref_pose]
    for p in driving.poses[1:]:
        poses.append(ref_pose + (p - first))
    return AlignedSequence(tuple(poses), driving.expressions, _shape_vector(ref_shape), target_light)


def align_scale_consistent(driving: DrivingSequence, ref_shape, target_light: SHCoefficients) -> AlignedSequence:
    return AlignedSequence(driving.poses, driving.expressions, _shape_vector(ref_shape), target_light)
