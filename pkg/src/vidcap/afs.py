"""Adaptive frame selection.

Consecutive-frame dissimilarities are normalized into a piecewise-linear
CDF over the frame axis, and frames are picked by inverting that CDF at
evenly spaced quantiles.  Regions of the timeline where more changes
happen receive proportionally more of the selected frames; a flat profile
degrades to uniform sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .video import VideoClip

DISSIMILARITY_METRICS = ("mad", "patch")


def frame_dissimilarity(clip: VideoClip, metric: str = "mad") -> np.ndarray:
    """Per-segment dissimilarity d[t] between frames t and t+1.

    'mad' is the mean absolute pixel difference.  'patch' compares frames
    through per-channel mean descriptors of non-overlapping 4x4 patches
    (partial patches at the edges are averaged over the pixels they have)
    and takes the L2 distance between consecutive descriptors.
    """
    frames = clip.data
    if frames.shape[0] < 1:
        raise ValueError("empty video")
    if metric == "mad":
        diffs = np.abs(np.diff(frames, axis=0))
        return diffs.mean(axis=(1, 2, 3))
    if metric == "patch":
        desc = np.stack([_patch_descriptor(f) for f in frames])
        return np.sqrt(((np.diff(desc, axis=0)) ** 2).sum(axis=1))
    raise ValueError(f"unknown dissimilarity metric {metric!r}")


def _patch_descriptor(frame: np.ndarray, patch: int = 4) -> np.ndarray:
    h, w, c = frame.shape
    rows = range(0, h, patch)
    cols = range(0, w, patch)
    out = np.empty((len(rows), len(cols), c))
    for i, r in enumerate(rows):
        for j, col in enumerate(cols):
            out[i, j] = frame[r : r + patch, col : col + patch].mean(axis=(0, 1))
    return out.ravel()


@dataclass
class FrameCdf:
    """Piecewise-linear CDF with breakpoints at integer frame positions.

    breakpoints[t] is F(t); pdf[t] is the mass of segment [t, t+1].  For a
    single-frame video both arrays degenerate ([0.0] and empty) and every
    quantile maps to frame 0.  mass keeps the unnormalized segment weights;
    inversion runs on those so that integer-valued profiles invert without
    the rounding noise a cumsum-then-divide would add (pdf is used when a
    caller builds the dataclass by hand, which only costs that exactness).
    """

    breakpoints: np.ndarray
    pdf: np.ndarray
    mass: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.breakpoints)

    def _segments(self) -> tuple[np.ndarray, np.ndarray, float, bool]:
        """(mass, cumulative mass, total, is-uniform) for inversion."""
        mass = self.pdf if self.mass is None else self.mass
        cum = np.concatenate([[0.0], np.cumsum(mass)])
        total = float(cum[-1])
        uniform = (
            self.m == 1
            or total == 0.0
            or float(mass.max()) == float(mass.min())
        )
        return mass, cum, total, uniform


def build_cdf(d: np.ndarray, m: int) -> FrameCdf:
    """Normalize segment dissimilarities into a CDF over [0, m-1].

    Zero total mass (or a single frame) falls back to the uniform CDF
    F(x) = x/(m-1), i.e. equal mass per segment.
    """
    d = np.asarray(d, dtype=np.float64)
    if m < 1:
        raise ValueError("empty video")
    if d.shape != (max(m - 1, 0),):
        raise ValueError(f"need {m - 1} segment values for {m} frames, got {d.shape}")
    if d.size and d.min() < 0:
        raise ValueError("negative dissimilarity")
    if m == 1:
        return FrameCdf(breakpoints=np.zeros(1), pdf=np.zeros(0), mass=np.zeros(0))
    total = float(d.sum())
    if total == 0.0:
        pdf = np.full(m - 1, 1.0 / (m - 1))
        breakpoints = np.arange(m, dtype=np.float64) / (m - 1)
        mass = pdf.copy()
    else:
        pdf = d / total
        breakpoints = np.concatenate([[0.0], np.cumsum(d) / total])
        mass = d.copy()
    breakpoints[-1] = 1.0
    return FrameCdf(breakpoints=breakpoints, pdf=pdf, mass=mass)


def _invert_mass(u: float, cum: np.ndarray, mass: np.ndarray) -> float:
    # min{x : C(x) >= u} on the unnormalized cumulative; side="left" lands
    # plateau hits on their left edge
    t = int(np.searchsorted(cum, u, side="left"))
    if t == 0:
        return 0.0
    return float((t - 1) + (u - cum[t - 1]) / mass[t - 1])


def inverse_cdf(cdf: FrameCdf, q: float) -> float:
    """Generalized inverse min{x : F(x) >= q}; plateaus map to their left edge."""
    if not (0.0 <= q <= 1.0):
        raise ValueError("quantile outside [0, 1]")
    if cdf.m == 1:
        return 0.0
    mass, cum, total, uniform = cdf._segments()
    if uniform:
        return float(q * (cdf.m - 1))
    return _invert_mass(q * total, cum, mass)


def raw_positions(cdf: FrameCdf, n: int) -> np.ndarray:
    """Pre-rounding positions: the inverse CDF at quantiles k/n, k=0..n-1.

    The quantile family is evaluated as k*total/n (one correctly rounded
    division) rather than (k/n)*total, so positions whose exact value is a
    half-integer, which integer-valued profiles produce routinely, hit the
    rounding boundary dead on instead of a few ulp under it.
    """
    if n < 1:
        raise ValueError("need at least one frame")
    if cdf.m == 1:
        return np.zeros(n)
    mass, cum, total, uniform = cdf._segments()
    if uniform:
        return np.array([k * (cdf.m - 1) / n for k in range(n)])
    return np.array([_invert_mass(k * total / n, cum, mass) for k in range(n)])


def _round_half_away(x: float) -> int:
    # positions are always >= 0, so half away from zero is floor(x + 0.5)
    return int(np.floor(x + 0.5))


@dataclass
class Selection:
    """indices: n frame indices in [0, m-1], non-decreasing."""

    indices: list[int]


def select_frames(cdf: FrameCdf, n: int, dedupe: bool = False) -> Selection:
    """Pick n frame indices by rounding the inverse CDF at quantiles k/n.

    In dedupe mode duplicate picks are replaced by the unselected frames
    carrying the greatest adjacent segment mass (ties to the lowest index)
    until n distinct frames are chosen or the video runs out of frames, in
    which case the remaining slots repeat the last index.
    """
    positions = raw_positions(cdf, n)
    indices = [min(_round_half_away(x), cdf.m - 1) for x in positions]
    if not dedupe:
        return Selection(indices=indices)

    chosen = sorted(set(indices))
    if len(chosen) < n:
        mass = np.zeros(cdf.m)
        if cdf.pdf.size:
            mass[:-1] += cdf.pdf
            mass[1:] += cdf.pdf
        pool = [i for i in range(cdf.m) if i not in set(chosen)]
        pool.sort(key=lambda i: (-mass[i], i))
        for idx in pool:
            if len(chosen) >= n:
                break
            chosen.append(idx)
        chosen.sort()
        while len(chosen) < n:
            chosen.append(chosen[-1])
    return Selection(indices=chosen)


def apply_selection(clip: VideoClip, selection: Selection) -> VideoClip:
    """Gather the selected frames into a new clip, pixel data copied verbatim."""
    bad = [i for i in selection.indices if not 0 <= i < clip.frames]
    if bad:
        raise ValueError(f"selection indices {bad} outside [0, {clip.frames - 1}]")
    return VideoClip(clip.data[np.asarray(selection.indices, dtype=np.intp)].copy())


def select_from_clip(clip: VideoClip, n: int, metric: str = "mad", dedupe: bool = False) -> Selection:
    """Convenience path: dissimilarity -> CDF -> selection in one call."""
    d = frame_dissimilarity(clip, metric=metric)
    cdf = build_cdf(d, clip.frames)
    return select_frames(cdf, n, dedupe=dedupe)
