"""Box arithmetic, greedy NMS, and landmark-driven patch boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol

import numpy as np


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 1.0

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {self}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"box score {self.score} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)


@dataclass(frozen=True)
class Landmarks:
    left_eye: tuple[float, float]
    right_eye: tuple[float, float]
    nose: tuple[float, float]
    mouth_left: tuple[float, float]
    mouth_right: tuple[float, float]

    def __post_init__(self):
        if not all(math.isfinite(c) for p in self.points() for c in p):
            raise ValueError("landmarks must be finite")
        if self.left_eye == self.right_eye:
            raise ValueError("eye landmarks coincide")

    def points(self):
        return (self.left_eye, self.right_eye, self.nose, self.mouth_left, self.mouth_right)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def nms(boxes: list[BBox], threshold: float) -> list[BBox]:
    """Greedy suppression: the best remaining box zeroes every box overlapping it by IoU >= threshold.

    Ties in score go to the lower input index.  Survivors come back in selection order.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("NMS threshold must lie in (0, 1)")
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    alive = [True] * len(boxes)
    kept: list[BBox] = []
    for pos, i in enumerate(order):
        if not alive[i]:
            continue
        kept.append(boxes[i])
        for j in order[pos + 1:]:
            if alive[j] and iou(boxes[i], boxes[j]) >= threshold:
                alive[j] = False
    return kept


@dataclass(frozen=True)
class PatchMargins:
    eye_width: float = 2.0    # x interocular distance
    eye_height: float = 0.8
    mouth_width: float = 1.6  # x mouth-corner distance
    mouth_height: float = 1.2


def clamp_box(box: BBox, width: int, height: int) -> BBox:
    x1 = min(max(box.x1, 0.0), width - 1.0)
    y1 = min(max(box.y1, 0.0), height - 1.0)
    x2 = max(min(box.x2, float(width)), x1 + 1.0)
    y2 = max(min(box.y2, float(height)), y1 + 1.0)
    return replace(box, x1=x1, y1=y1, x2=x2, y2=y2)


def _centered(cx: float, cy: float, w: float, h: float) -> BBox:
    return BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def patch_boxes(lm: Landmarks, face: BBox, image_size: tuple[int, int] | None = None,
                margins: PatchMargins = PatchMargins()) -> dict[str, BBox]:
    """Eye, mouth and head boxes; clamped to ``image_size=(width, height)`` when given."""
    (lx, ly), (rx, ry) = lm.left_eye, lm.right_eye
    d = math.hypot(rx - lx, ry - ly)
    if d == 0:
        raise ValueError("zero interocular distance")
    (mlx, mly), (mrx, mry) = lm.mouth_left, lm.mouth_right
    mw = math.hypot(mrx - mlx, mry - mly)
    if mw == 0:
        raise ValueError("zero mouth width")
    out = {
        "eye": _centered((lx + rx) / 2, (ly + ry) / 2, margins.eye_width * d, margins.eye_height * d),
        "mouth": _centered((mlx + mrx) / 2, (mly + mry) / 2, margins.mouth_width * mw, margins.mouth_height * mw),
        "head": face,
    }
    if image_size is not None:
        w, h = image_size
        out = {k: clamp_box(b, w, h) for k, b in out.items()}
    return out


def crop(img: np.ndarray, box: BBox) -> np.ndarray:
    """Integer crop (corners rounded half-up, at least one pixel, clipped to the image)."""
    h, w = img.shape[:2]
    x1 = min(max(int(math.floor(box.x1 + 0.5)), 0), w - 1)
    y1 = min(max(int(math.floor(box.y1 + 0.5)), 0), h - 1)
    x2 = min(max(int(math.floor(box.x2 + 0.5)), x1 + 1), w)
    y2 = min(max(int(math.floor(box.y2 + 0.5)), y1 + 1), h)
    return img[y1:y2, x1:x2].copy()


# -- face providers ------------------------------------------------------------

class FaceProvider(Protocol):
    """Source of one face box plus five landmarks per frame."""

    def face(self, frame_index: int) -> tuple[BBox, Landmarks]: ...


class AnnotationError(ValueError):
    pass


def parse_annotation_line(line: str) -> tuple[int, BBox, Landmarks]:
    parts = line.split()
    if len(parts) != 15:
        raise AnnotationError(f"expected 15 fields, got {len(parts)}: {line!r}")
    idx = int(parts[0])
    v = [float(p) for p in parts[1:]]
    box = BBox(*v[0:4])
    pts = [(v[i], v[i + 1]) for i in range(4, 14, 2)]
    return idx, box, Landmarks(*pts)


def format_annotation_line(frame_index: int, box: BBox, lm: Landmarks) -> str:
    vals = [box.x1, box.y1, box.x2, box.y2] + [c for p in lm.points() for c in p]
    return f"{frame_index} " + " ".join(f"{x:.3f}" for x in vals)


class AnnotationFileProvider:
    """Reads ``frame_index x1 y1 x2 y2 lx ly rx ry nx ny mlx mly mrx mry`` lines."""

    def __init__(self, path):
        self.path = Path(path)
        self.entries: dict[int, tuple[BBox, Landmarks]] = {}
        for n, raw in enumerate(self.path.read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                idx, box, lm = parse_annotation_line(line)
            except ValueError as exc:
                raise AnnotationError(f"{self.path}:{n}: {exc}") from exc
            self.entries[idx] = (box, lm)

    def face(self, frame_index: int) -> tuple[BBox, Landmarks]:
        try:
            return self.entries[frame_index]
        except KeyError:
            raise AnnotationError(f"{self.path}: no annotation for frame {frame_index}") from None


class StaticFaceProvider:
    """Wraps in-memory ground truth (e.g. straight from the synthetic renderer)."""

    def __init__(self, faces: dict[int, tuple[BBox, Landmarks]] | list[tuple[BBox, Landmarks]]):
        self.faces = dict(enumerate(faces)) if isinstance(faces, list) else dict(faces)

    def face(self, frame_index: int) -> tuple[BBox, Landmarks]:
        try:
            return self.faces[frame_index]
        except KeyError:
            raise AnnotationError(f"no face for frame {frame_index}") from None
