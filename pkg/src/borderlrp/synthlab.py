"""Seeded toy video tasks and a plain SGD trainer for the mini network.

Videos show a bar of constant intensity sweeping across the frame with
wrap-around. In the default task, orientation, direction and speed of the bar
encode the class. With ``cue_frames`` set, the bar becomes a class-independent
distractor and the label is carried only by a small patch that appears in the
cue frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import network as nw
from .network import NetworkSpec, Params
from .rng import STREAM_SHUFFLE, STREAM_VIDEO_BASE, box_muller, philox
from .sampler import SnippetSpec, Video, extract_snippet, parse_step
from .tensor import DTYPE

log = logging.getLogger(__name__)



class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    class_count: int = 8
    frames: int = 64
    height: int = 24
    width: int = 24
    channels: int = 1
    speeds: tuple = (1, 2)  # px/frame; each appears with both signs and both orientations
    bar_width: int = 3
    bar_level: float = 1.0  # bar intensity as a fraction of the pixel range
    cue_frames: Optional[tuple] = None
    cue_size: int = 6
    noise_std: float = 0.0
    pixel_range: tuple = (0.0, 1.0)
    opening_frames: int = 0  # leading blank frames carrying no class information
    seed: int = 0

    def __post_init__(self):
        if self.cue_frames is not None:
            cues = tuple(sorted(int(c) for c in self.cue_frames))
            object.__setattr__(self, "cue_frames", cues)
            if any(not 0 <= c < self.frames for c in cues):
                raise ValueError("cue frames must lie inside the video")
        object.__setattr__(self, "speeds", tuple(int(s) for s in self.speeds))
        if self.bar_width < 1 or self.bar_width > min(self.height, self.width):
            raise ValueError("bar does not fit inside the frame")
        if self.class_count < 1 or self.frames < 1:
            raise ValueError("need at least one class and one frame")
        if self.class_count > len(self.motions):
            if self.cue_frames is None:
                raise ValueError(f"only {len(self.motions)} motion classes available")
            if self.class_count > len(cue_positions(self.height, self.width, self.cue_size)):
                raise ValueError("frame too small for that many cue positions")
        if not 0 <= self.opening_frames <= self.frames:
            raise ValueError("opening_frames out of range")

    @property
    def motions(self) -> list[tuple[int, int]]:
        """(orientation, signed speed) pairs; class c uses motions[c]."""
        signed = [v for s in self.speeds for v in (s, -s)]
        return [(o, v) for o in (0, 1) for v in signed]


def cue_positions(height: int, width: int, size: int) -> list[tuple[int, int]]:
    """Top-left corners of the class cue patches on a 3x3 grid, row-major."""
    if size + 2 > min(height, width):
        return []
    rows = [1 + k * ((height - size - 2) // 2) for k in range(3)]
    cols = [1 + k * ((width - size - 2) // 2) for k in range(3)]
    return list(dict.fromkeys((r, c) for r in rows for c in cols))


def render_video(config: SynthConfig, index: int, label: int, noise: bool = True) -> np.ndarray:
    """Frames ``(C, N, H, W)`` of video ``index`` with class ``label``."""
    gen = philox(config.seed, STREAM_VIDEO_BASE + index)
    lo, hi = config.pixel_range
    c, n, h, w = config.channels, config.frames, config.height, config.width
    motions = config.motions
    if config.cue_frames is None:
        orientation, speed = motions[label]
    else:
        orientation, speed = motions[int(gen.integers(len(motions)))]
    extent = w if orientation == 0 else h
    start = int(gen.integers(extent))

    frames = np.full((c, n, h, w), lo, dtype=DTYPE)
    bar = lo + config.bar_level * (hi - lo)
    t = np.arange(n)
    pos = (start + speed * t[:, None] + np.arange(config.bar_width)) % extent
    for k in range(n):
        if orientation == 0:
            frames[:, k, :, pos[k]] = bar
        else:
            frames[:, k, pos[k], :] = bar

    if config.opening_frames:
        frames[:, : config.opening_frames] = lo  # blank lead-in screen

    if config.cue_frames is not None:
        r0, c0 = cue_positions(h, w, config.cue_size)[label]
        size = config.cue_size
        for k in config.cue_frames:
            frames[:, k, r0 : r0 + size, c0 : c0 + size] = hi

    if noise and config.noise_std > 0:
        frames += config.noise_std * (hi - lo) * box_muller(gen, frames.shape)
        np.clip(frames, lo, hi, out=frames)
    return frames


def generate_dataset(config: SynthConfig, count: int) -> list[Video]:
    if count < config.class_count:
        raise ValueError("need at least one video per class")
    videos = []
    for i in range(count):
        label = i % config.class_count
        frames = render_video(config, i, label)
        videos.append(Video(frames, tuple(config.pixel_range), f"v{i:05d}", label))
    return videos


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0
    weight_init: float = nw.DEFAULT_INIT_SCALE  # multiplies the He-uniform bound
    step: Fraction = field(default=Fraction(1))
    offsets: tuple = (0,)

    def __post_init__(self):
        object.__setattr__(self, "step", parse_step(self.step))
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


def untrained(net: NetworkSpec, seed: int, scale: float = nw.DEFAULT_INIT_SCALE) -> NetworkSpec:
    return net.with_params(nw.initialize(net.layers, seed, scale))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def snippet_batch(dataset: Sequence[Video], spec: SnippetSpec) -> np.ndarray:
    return np.stack([extract_snippet(v, spec) for v in dataset])


def train(net: NetworkSpec, dataset: Sequence[Video], config: TrainConfig) -> NetworkSpec:
    """Minibatch SGD on softmax cross-entropy, starting from ``net``'s parameters."""
    xs, ys = [], []
    for off in config.offsets:
        spec = SnippetSpec(off, config.step, net.input_shape[1])
        xs.append(snippet_batch(dataset, spec))
        ys.extend(v.true_class for v in dataset)
    x = np.concatenate(xs)
    y = np.asarray(ys, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= net.class_count):
        raise ValueError("labels must be in [0, class_count)")

    weights = [None if p is None else p.weight.copy() for p in net.params]
    biases = [None if p is None or p.bias is None else p.bias.copy() for p in net.params]
    current = net
    gen = philox(config.seed, STREAM_SHUFFLE)
    lr = config.learning_rate
    # overflow surfaces as a DivergenceError below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            order = gen.permutation(len(y))
            total = 0.0
            for start in range(0, len(y), config.batch_size):
                idx = order[start : start + config.batch_size]
                acts, caches = nw.forward_batch(current, x[idx])
                loss, g = softmax_cross_entropy(acts[-1], y[idx])
                if not np.isfinite(loss):
                    raise DivergenceError(f"loss became non-finite in epoch {epoch}")
                total += loss * len(idx)
                _, grads = nw.backward_batch(current, acts, caches, g, param_grads=True)
                for i, gr in enumerate(grads):
                    if gr is None:
                        continue
                    weights[i] -= lr * gr[0]
                    if biases[i] is not None:
                        biases[i] -= lr * gr[1]
                current = net.with_params(
                    None if w is None else Params(w, b) for w, b in zip(weights, biases)
                )
            log.info("epoch %d loss %.6f", epoch, total / len(y))
    return current
