"""Temporal relevance profiles, border/lookahead fits and sweep tables."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from . import network as nw
from .relevance import AttributionMap, RelevanceConfig, dtd_explain, sensitivity_explain
from .sampler import SnippetSpec, Video, extract_snippet, offset_schedule, step_schedule
from .tensor import DTYPE, as_tensor, reduce_over_axes, top_k_indices


class DegenerateProfileError(ValueError):
    """Total relevance is not positive, so relevance shares are undefined."""


class SingularFitError(ArithmeticError):
    pass


@dataclass
class TemporalProfile:
    r: np.ndarray  # relevance per frame
    p: np.ndarray  # share per frame, sums to one


@dataclass(frozen=True)
class QuadraticFit:
    B: float
    C: float
    D: float

    def __call__(self, t):
        t = np.asarray(t, dtype=DTYPE)
        return self.B * t * t + self.C * t + self.D


@dataclass(frozen=True)
class LinearFit:
    L: float
    A: float

    def __call__(self, t):
        return self.L * np.asarray(t, dtype=DTYPE) + self.A


def frame_axis(t: int) -> np.ndarray:
    """Frame coordinates used by the fits: 1, 2, ..., T."""
    return np.arange(1, t + 1, dtype=DTYPE)


def temporal_profile(amap) -> TemporalProfile:
    scores = amap.scores if isinstance(amap, AttributionMap) else as_tensor(amap)
    if scores.ndim < 2:
        raise ValueError("attribution map has no time axis")
    r = reduce_over_axes(scores, 1)
    total = r.sum()
    if not total > 0:
        raise DegenerateProfileError(f"total relevance {total!r} is not positive")
    return TemporalProfile(r, r / total)


def _pairwise_sum(rows: Sequence[np.ndarray]) -> np.ndarray:
    if len(rows) == 1:
        return np.array(rows[0], dtype=DTYPE)
    mid = len(rows) // 2
    return _pairwise_sum(rows[:mid]) + _pairwise_sum(rows[mid:])


def mean_profile(profiles: Sequence) -> np.ndarray:
    """Average share vector; the summation tree depends only on list order."""
    if not profiles:
        raise ValueError("need at least one profile")
    rows = [np.asarray(p.p if isinstance(p, TemporalProfile) else p, dtype=DTYPE) for p in profiles]
    if len({r.shape for r in rows}) != 1:
        raise ValueError("profiles differ in length")
    return _pairwise_sum(rows) / len(rows)


def _least_squares_exact(y: np.ndarray, degree: int) -> list[float]:
    """Polynomial least squares over t = 1..T, highest power first.

    Floats are exact rationals, so the normal equations are assembled and
    solved (pivoted elimination) without rounding; only the final
    coefficients are rounded to float.
    """
    t_len = len(y)
    ys = [Fraction(float(v)) for v in y]
    n = degree + 1
    powers = [[Fraction(t) ** (degree - k) for k in range(n)] for t in range(1, t_len + 1)]
    m = [[sum(row[i] * row[j] for row in powers) for j in range(n)] for i in range(n)]
    rhs = [sum(row[i] * v for row, v in zip(powers, ys)) for i in range(n)]
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(m[r][col]))
        if m[pivot][col] == 0:
            raise SingularFitError("normal matrix is singular")
        m[col], m[pivot] = m[pivot], m[col]
        rhs[col], rhs[pivot] = rhs[pivot], rhs[col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            if f:
                m[r] = [a - f * b for a, b in zip(m[r], m[col])]
                rhs[r] -= f * rhs[col]
    coef = [Fraction(0)] * n
    for r in range(n - 1, -1, -1):
        acc = rhs[r] - sum(m[r][c] * coef[c] for c in range(r + 1, n))
        coef[r] = acc / m[r][r]
    return [float(c) for c in coef]


def _check_vector(mean_p, minimum: int) -> np.ndarray:
    y = np.asarray(mean_p, dtype=DTYPE).ravel()
    if y.size < minimum:
        raise ValueError(f"need at least {minimum} frames, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("profile contains non-finite values")
    return y


def fit_quadratic(mean_p) -> QuadraticFit:
    """Least-squares B t^2 + C t + D; B measures the border effect."""
    b, c, d = _least_squares_exact(_check_vector(mean_p, 3), 2)
    return QuadraticFit(b, c, d)


def fit_linear(mean_p) -> LinearFit:
    """Least-squares L t + A; L measures the lookahead effect."""
    slope, intercept = _least_squares_exact(_check_vector(mean_p, 2), 1)
    return LinearFit(slope, intercept)


def top_k_hit(logits, true_class: int, k: int = 5) -> bool:
    v = np.asarray(logits)
    if not 0 <= true_class < v.size:
        raise ValueError(f"class {true_class} out of range for {v.size} logits")
    return true_class in top_k_indices(v, min(k, v.size))


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class Explainer:
    """Explains the predicted class of a snippet with DTD or sensitivity analysis."""

    method: str = "dtd"
    epsilon: float = 1e-9

    def __call__(self, net, snippet, pixel_range) -> tuple[np.ndarray, AttributionMap]:
        lo, hi = pixel_range
        config = RelevanceConfig(self.epsilon, lo, hi)
        trace = nw.forward(net, snippet)
        if self.method == "dtd":
            return trace.logits, dtd_explain(net, trace, config)
        if self.method == "sensitivity":
            cls = top_k_indices(trace.logits, 1)[0]
            return trace.logits, sensitivity_explain(net, snippet, cls)
        raise ValueError(f"unknown method {self.method!r}")


@dataclass
class VideoResult:
    hit: Optional[bool]
    profile: Optional[TemporalProfile]
    error: Optional[str] = None


def explain_video(net, video: Video, spec: SnippetSpec, explainer, topk: int) -> VideoResult:
    snippet = extract_snippet(video, spec)
    logits, amap = explainer(net, snippet, video.pixel_range)
    hit = None if video.true_class is None else top_k_hit(logits, video.true_class, topk)
    if amap.warning:
        return VideoResult(hit, None, amap.warning)
    try:
        return VideoResult(hit, temporal_profile(amap))
    except DegenerateProfileError as exc:
        return VideoResult(hit, None, str(exc))


def _map_videos(fn: Callable, videos: Sequence, jobs: int) -> list:
    if jobs <= 1:
        return [fn(v) for v in videos]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, videos))


@dataclass(frozen=True)
class Summary:
    quadratic: QuadraticFit
    linear: LinearFit
    mean_p: Optional[np.ndarray]
    accuracy: float
    excluded: int


_NAN_Q = QuadraticFit(math.nan, math.nan, math.nan)
_NAN_L = LinearFit(math.nan, math.nan)


def summarize(results: Sequence[VideoResult]) -> Summary:
    """Reduce per-video results in dataset order."""
    profiles = [r.profile for r in results if r.profile is not None]
    hits = [r.hit for r in results if r.hit is not None]
    acc = float(sum(hits)) / len(hits) if hits else math.nan
    excluded = len(results) - len(profiles)
    if not profiles:
        return Summary(_NAN_Q, _NAN_L, None, acc, excluded)
    mean_p = mean_profile(profiles)
    return Summary(fit_quadratic(mean_p), fit_linear(mean_p), mean_p, acc, excluded)


def analyze_dataset(
    net, dataset: Sequence[Video], spec: SnippetSpec, explainer=None, topk: int = 5, jobs: int = 1
) -> Summary:
    explainer = explainer or Explainer()
    results = _map_videos(lambda v: explain_video(net, v, spec, explainer, topk), dataset, jobs)
    return summarize(results)


@dataclass(frozen=True)
class StepRow:
    step: Fraction
    B: float
    C: float
    D: float
    L: float
    A: float
    topk_acc: float
    excluded: int


@dataclass(frozen=True)
class OffsetRow:
    offset: int
    L: float
    A: float
    B: float
    C: float
    D: float
    excluded: int


def sweep_step(
    net, dataset, explainer=None, schedule=None, offset: int = 0, topk: int = 5, jobs: int = 1
) -> list[StepRow]:
    if not dataset:
        raise ValueError("dataset is empty")
    rows = []
    for step in schedule if schedule is not None else step_schedule():
        s = analyze_dataset(net, dataset, SnippetSpec(offset, step), explainer, topk, jobs)
        q, l = s.quadratic, s.linear
        rows.append(StepRow(Fraction(step), q.B, q.C, q.D, l.L, l.A, s.accuracy, s.excluded))
    return rows


def sweep_offset(
    net, dataset, explainer=None, offsets=None, step=1, topk: int = 5, jobs: int = 1
) -> list[OffsetRow]:
    if not dataset:
        raise ValueError("dataset is empty")
    offsets = list(offsets) if offsets is not None else offset_schedule()
    shortest = min(v.length for v in dataset)
    if offsets and max(offsets) >= shortest:
        raise ValueError(f"offset {max(offsets)} needs videos longer than {shortest} frames")
    rows = []
    for off in offsets:
        s = analyze_dataset(net, dataset, SnippetSpec(off, step), explainer, topk, jobs)
        q, l = s.quadratic, s.linear
        rows.append(OffsetRow(int(off), l.L, l.A, q.B, q.C, q.D, s.excluded))
    return rows


def accuracy(net, dataset, spec: SnippetSpec = SnippetSpec(), topk: int = 5, jobs: int = 1) -> float:
    """Top-k accuracy of ``net`` on one snippet per video."""
    def hit(v):
        logits = nw.forward(net, extract_snippet(v, spec)).logits
        return top_k_hit(logits, v.true_class, topk)

    hits = _map_videos(hit, dataset, jobs)
    return sum(hits) / len(hits)
