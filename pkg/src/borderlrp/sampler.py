"""Snippet extraction and frame preprocessing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Optional

import numpy as np

from .tensor import as_tensor

SNIPPET_LENGTH = 16


@dataclass(eq=False)
class Video:
    frames: np.ndarray  # (C, N, H, W)
    pixel_range: tuple[float, float] = (0.0, 1.0)
    id: Hashable = None
    true_class: Optional[int] = None

    def __post_init__(self):
        self.frames = as_tensor(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[1] < 1:
            raise ValueError(f"frames must be (C, N>=1, H, W), got {self.frames.shape}")
        lo, hi = self.pixel_range
        if self.frames.min() < lo or self.frames.max() > hi:
            raise ValueError("pixels outside pixel_range")

    @property
    def length(self) -> int:
        return self.frames.shape[1]


def parse_step(text) -> Fraction:
    """Exact rational step from ``"p/q"`` or an integer; floats are rejected."""
    if isinstance(text, Fraction):
        step = text
    elif isinstance(text, int):
        step = Fraction(text)
    elif isinstance(text, str):
        s = text.strip()
        num, _, den = s.partition("/")
        if not num.strip().isdigit() or (den and not den.strip().isdigit()):
            raise ValueError(f"step must be an integer or p/q, got {text!r}")
        step = Fraction(int(num), int(den) if den else 1)
    else:
        raise ValueError(f"step must be an integer or p/q, got {text!r}")
    if step <= 0:
        raise ValueError("step must be positive")
    return step


def format_step(step: Fraction) -> str:
    step = Fraction(step)
    return str(step.numerator) if step.denominator == 1 else f"{step.numerator}/{step.denominator}"


@dataclass(frozen=True)
class SnippetSpec:
    offset: int = 0
    step: Fraction = field(default=Fraction(1))
    length: int = SNIPPET_LENGTH

    def __post_init__(self):
        object.__setattr__(self, "step", parse_step(self.step))
        if self.offset < 0:
            raise ValueError("offset must be non-negative")
        if self.length < 1:
            raise ValueError("length must be positive")

    def indices(self, n_frames: int) -> list[int]:
        if self.offset >= n_frames:
            raise ValueError(f"offset {self.offset} beyond video of {n_frames} frames")
        # Fraction floor is exact, so step 1/16 repeats each frame exactly 16 times
        return [min(self.offset + math.floor(k * self.step), n_frames - 1) for k in range(self.length)]


def extract_snippet(video: Video, spec: SnippetSpec) -> np.ndarray:
    frames = video.frames if isinstance(video, Video) else as_tensor(video)
    idx = spec.indices(frames.shape[1])
    return np.ascontiguousarray(frames[:, idx])


def step_schedule() -> list[Fraction]:
    return [Fraction(1, 16) * 2**i for i in range(10)]


def offset_schedule() -> list[int]:
    return list(range(0, 257, 8))


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, clamped at the edges
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(frames, size: tuple[int, int]) -> np.ndarray:
    """Resize the last two axes of ``frames`` to ``size``."""
    arr = as_tensor(frames)
    h, w = size
    lo, hi, fy = _bilinear_axis(arr.shape[-2], h)
    rows = arr[..., lo, :] * (1 - fy)[:, None] + arr[..., hi, :] * fy[:, None]
    lo, hi, fx = _bilinear_axis(arr.shape[-1], w)
    return rows[..., lo] * (1 - fx) + rows[..., hi] * fx


def center_crop(frames, size: tuple[int, int]) -> np.ndarray:
    arr = as_tensor(frames, copy=False)
    h, w = size
    top = (arr.shape[-2] - h) // 2
    left = (arr.shape[-1] - w) // 2
    return np.ascontiguousarray(arr[..., top : top + h, left : left + w])


def preprocess(frames, resize_to=(128, 171), crop_to=(121, 121)) -> np.ndarray:
    if crop_to[0] > resize_to[0] or crop_to[1] > resize_to[1]:
        raise ValueError(f"crop {crop_to} larger than resize target {resize_to}")
    return center_crop(resize_bilinear(frames, resize_to), crop_to)
