"""Temporal windowing of frame sequences into fixed-length clips."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Label taxonomy (code = list position); 0 is always Stillness.
TAXONOMY: dict[str, tuple[str, ...]] = {
    "drowsy": ("Stillness", "Drowsy"),
    "eye": ("Stillness", "Sleepy-eyes"),
    "mouth": ("Stillness", "Yawning", "Talking&Laughing"),
    "head": ("Stillness", "Nodding", "Looking aside"),
}
FEATURES = ("eye", "mouth", "head")


@dataclass(frozen=True)
class ClipSpec:
    stride: int = 10
    count: int = 10
    fps: int = 30

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("clip stride must be >= 1")
        if self.count < 2:
            raise ValueError("clip count must be >= 2")

    @property
    def span(self) -> int:
        """Frames covered from first to last sampled index, inclusive."""
        return self.stride * (self.count - 1) + 1

    @property
    def seconds(self) -> float:
        return self.span / self.fps


SCHEMES = {"10x10": ClipSpec(stride=10, count=10), "3x30": ClipSpec(stride=3, count=30)}


def sample_indices(start: int, spec: ClipSpec, total_frames: int) -> list[int]:
    last = start + spec.stride * (spec.count - 1)
    if start < 0 or last >= total_frames:
        raise IndexError(f"window [{start}, {last}] exceeds {total_frames} frames")
    return list(range(start, last + 1, spec.stride))


def windows(total_frames: int, spec: ClipSpec, hop: int | None = None) -> list[int]:
    """Window starts; the default hop is the window span (no overlap, partial tail dropped)."""
    hop = spec.span if hop is None else hop
    if hop < 1:
        raise ValueError("hop must be >= 1")
    return list(range(0, total_frames - spec.span + 1, hop))


def clip_label(frame_labels, feature: str = "drowsy") -> int:
    """Majority label over the sampled frames.

    Ties go to the non-Stillness class with the lowest code (for drowsiness:
    ties -> Drowsy).
    """
    counts = Counter(int(v) for v in frame_labels)
    if not counts:
        raise ValueError("no frame labels")
    best = max(counts.values())
    tied = sorted(k for k, c in counts.items() if c == best)
    non_still = [k for k in tied if k != 0]
    return non_still[0] if non_still else tied[0]


LABEL_FIELDS = ("frame_index", "drowsy", "eye", "mouth", "head")


def write_labels(path, labels: dict[str, np.ndarray]) -> None:
    n = len(labels["drowsy"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LABEL_FIELDS)
        for i in range(n):
            w.writerow([i] + [int(labels[k][i]) for k in LABEL_FIELDS[1:]])


def read_labels(path) -> dict[str, np.ndarray]:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    if not rows or set(LABEL_FIELDS) - set(rows[0]):
        raise ValueError(f"{path}: label file needs columns {','.join(LABEL_FIELDS)}")
    rows.sort(key=lambda r: int(r["frame_index"]))
    out = {k: np.array([int(r[k]) for r in rows], dtype=np.int64) for k in LABEL_FIELDS}
    for k, names in TAXONOMY.items():
        if np.any((out[k] < 0) | (out[k] >= len(names))):
            raise ValueError(f"{path}: {k} codes outside 0..{len(names) - 1}")
    return out
