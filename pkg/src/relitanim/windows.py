"""Long-sequence generation by overlapping fixed-length windows.

Windows advance by ``window_len - overlap``. The final window is
right-aligned to the last frame, so its overlap with its predecessor is at
least ``overlap`` (never less). Overlapping frames are blended with a linear
ramp in frame space.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_WINDOW = 16
DEFAULT_OVERLAP = 6


@dataclass(frozen=True)
class WindowPlan:
    windows: tuple[tuple[int, int], ...]
    window_len: int
    overlap: int
    total: int

    def to_json(self) -> str:
        return json.dumps(
            {"total": self.total, "window_len": self.window_len, "overlap": self.overlap,
             "windows": [list(w) for w in self.windows]}
        )


def plan_windows(total_frames: int, window_len: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP) -> WindowPlan:
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1")
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    if not (0 <= overlap < window_len):
        raise ValueError(f"overlap must satisfy 0 <= overlap < window_len ({overlap} vs {window_len})")
    if total_frames <= window_len:
        return WindowPlan(((0, total_frames),), window_len, overlap, total_frames)
    stride = window_len - overlap
    windows = []
    start = 0
    while start + window_len < total_frames:
        windows.append((start, start + window_len))
        start += stride
    windows.append((total_frames - window_len, total_frames))
    return WindowPlan(tuple(windows), window_len, overlap, total_frames)


def blend_weights(k: int) -> np.ndarray:
    """Weight of the *next* window for each of ``k`` overlapping frames."""
    return np.arange(1, k + 1, dtype=np.float64) / (k + 1)


def blend_overlap(prev_frames: np.ndarray, next_frames: np.ndarray) -> np.ndarray:
    prev_frames = np.asarray(prev_frames, dtype=np.float64)
    next_frames = np.asarray(next_frames, dtype=np.float64)
    if prev_frames.shape != next_frames.shape:
        raise ValueError(f"overlap shapes differ: {prev_frames.shape} vs {next_frames.shape}")
    w = blend_weights(prev_frames.shape[0]).reshape((-1,) + (1,) * (prev_frames.ndim - 1))
    out = (1.0 - w) * prev_frames + w * next_frames
    # a convex combination of equal values must return that value
    agree = prev_frames == next_frames
    out[agree] = prev_frames[agree]
    return out


def assemble(plan: WindowPlan, outputs: list[np.ndarray]) -> np.ndarray:
    """Sequentially merge per-window frame stacks into one sequence."""
    if len(outputs) != len(plan.windows):
        raise ValueError("one output per window required")
    first = np.asarray(outputs[0], dtype=np.float64)
    result = np.zeros((plan.total,) + first.shape[1:])
    filled = 0
    for (start, end), frames in zip(plan.windows, outputs):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.shape[0] != end - start:
            raise ValueError(f"window ({start}, {end}) produced {frames.shape[0]} frames")
        k = max(filled - start, 0)
        if k:
            result[start:filled] = blend_overlap(result[start:filled], frames[:k])
        result[start + k : end] = frames[k:]
        filled = end
    return result


def sample_windows(
    plan: WindowPlan,
    sample_fn: Callable[[int, int, int], np.ndarray],
    master_seed: int = 0,
    max_workers: int = 1,
) -> tuple[np.ndarray, list[int]]:
    """Run ``sample_fn(start, end, seed)`` per window and blend the results.

    Window ``i`` uses seed ``master_seed + i``; results do not depend on
    ``max_workers``.
    """
    seeds = [master_seed + i for i in range(len(plan.windows))]
    jobs = [(s, e, seed) for (s, e), seed in zip(plan.windows, seeds)]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            outputs = list(pool.map(lambda j: sample_fn(*j), jobs))
    else:
        outputs = [sample_fn(*j) for j in jobs]
    return assemble(plan, outputs), seeds
