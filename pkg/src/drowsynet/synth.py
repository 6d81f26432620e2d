"""Deterministic synthetic driver clips with frame-level labels and face annotations.

A scene is a textured face disc over a textured background.  Events drive the
labels:

* blink  -> eyes closed; Sleepy-eyes when the closure lasts > 15 frames
* yawn   -> mouth opens wide (Yawning);  talk -> small fast mouth flapping
* nod    -> vertical head oscillation (Nodding);  look -> horizontal (Looking aside)

Drowsy = sleepy eyes, yawning or nodding in that frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, Landmarks, format_annotation_line
from .pgm import write_pgm
from .sampling import write_labels

SLEEPY_BLINK_FRAMES = 15

Event = tuple[int, int]  # (start frame, duration)


@dataclass
class SceneSpec:
    seed: int = 0
    frames: int = 96
    fps: int = 30
    width: int = 128
    height: int = 128
    face_x: float = 64.0
    face_y: float = 62.0
    face_radius: float = 36.0
    sway: float = 0.4          # px, slow drift present in every clip
    blinks: list[Event] = field(default_factory=list)
    yawns: list[Event] = field(default_factory=list)
    talks: list[Event] = field(default_factory=list)
    nods: list[Event] = field(default_factory=list)
    looks: list[Event] = field(default_factory=list)
    nod_amplitude: float = 4.0
    nod_period: float = 40.0
    look_amplitude: float = 5.0
    look_period: float = 40.0
    gain: tuple[float, float] = (1.0, 1.0)    # start/end multiplicative lighting
    offset: tuple[float, float] = (0.0, 0.0)  # start/end additive lighting
    noise: float = 2.0

    def validate(self) -> None:
        if self.frames < 1 or self.width < 16 or self.height < 16:
            raise ValueError("scene too small")
        groups = {"eye": self.blinks, "mouth": self.yawns + self.talks, "head": self.nods + self.looks}
        for region, events in groups.items():
            for s, d in events:
                if d < 1 or s < 0 or s >= self.frames:
                    raise ValueError(f"{region} event {(s, d)} outside [0, {self.frames})")
            spans = sorted(events)
            for (s0, d0), (s1, _) in zip(spans, spans[1:]):
                if s1 < s0 + d0:
                    raise ValueError(f"overlapping {region} events at frames {s0} and {s1}")


def _active(events: list[Event], t: int) -> Event | None:
    for s, d in events:
        if s <= t < s + d:
            return (s, d)
    return None


def frame_labels(spec: SceneSpec) -> dict[str, np.ndarray]:
    n = spec.frames
    eye = np.zeros(n, np.int64)
    mouth = np.zeros(n, np.int64)
    head = np.zeros(n, np.int64)
    for t in range(n):
        b = _active(spec.blinks, t)
        if b and b[1] > SLEEPY_BLINK_FRAMES:
            eye[t] = 1
        if _active(spec.yawns, t):
            mouth[t] = 1
        elif _active(spec.talks, t):
            mouth[t] = 2
        if _active(spec.nods, t):
            head[t] = 1
        elif _active(spec.looks, t):
            head[t] = 2
    drowsy = ((eye == 1) | (mouth == 1) | (head == 1)).astype(np.int64)
    return {"drowsy": drowsy, "eye": eye, "mouth": mouth, "head": head}


class _Texture:
    """Smooth random field as a sum of sinusoids, evaluable at any coordinate."""

    def __init__(self, rng: np.random.Generator, n: int, wavelength: tuple[float, float], amp: float):
        lam = rng.uniform(*wavelength, n)
        theta = rng.uniform(0, math.pi, n)
        self.kx = 2 * math.pi * np.cos(theta) / lam
        self.ky = 2 * math.pi * np.sin(theta) / lam
        self.phase = rng.uniform(0, 2 * math.pi, n)
        self.amp = amp / math.sqrt(n)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.zeros(np.broadcast(x, y).shape)
        for kx, ky, ph in zip(self.kx, self.ky, self.phase):
            out += np.sin(kx * x + ky * y + ph)
        return self.amp * out


def _face_offset(spec: SceneSpec, t: int) -> tuple[float, float]:
    dx = spec.sway * math.sin(2 * math.pi * t / 90.0)
    dy = spec.sway * math.cos(2 * math.pi * t / 110.0)
    ev = _active(spec.nods, t)
    if ev:
        dy += spec.nod_amplitude * math.sin(2 * math.pi * (t - ev[0]) / spec.nod_period)
    ev = _active(spec.looks, t)
    if ev:
        dx += spec.look_amplitude * math.sin(2 * math.pi * (t - ev[0]) / spec.look_period)
    return dx, dy


def _mouth_open(spec: SceneSpec, t: int) -> float:
    """Mouth half-height as a fraction of the face radius."""
    base = 0.035
    ev = _active(spec.yawns, t)
    if ev:
        s, d = ev
        ramp = min(6.0, d / 3.0)
        k = min(t - s + 1, s + d - t) / ramp
        return base + 0.22 * min(1.0, k)
    ev = _active(spec.talks, t)
    if ev:
        return base + 0.05 * (0.5 - 0.5 * math.cos(2 * math.pi * (t - ev[0]) / 6.0))
    return base


def geometry_at(spec: SceneSpec, t: int) -> tuple[BBox, Landmarks]:
    dx, dy = _face_offset(spec, t)
    cx, cy, r = spec.face_x + dx, spec.face_y + dy, spec.face_radius
    box = BBox(cx - r, cy - r, cx + r, cy + r)
    lm = Landmarks(
        left_eye=(cx - 0.36 * r, cy - 0.22 * r),
        right_eye=(cx + 0.36 * r, cy - 0.22 * r),
        nose=(cx, cy + 0.12 * r),
        mouth_left=(cx - 0.26 * r, cy + 0.5 * r),
        mouth_right=(cx + 0.26 * r, cy + 0.5 * r),
    )
    return box, lm


def render_clip(spec: SceneSpec):
    """Render frames (list of uint8 arrays), per-frame labels and (box, landmarks) per frame."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    bg_tex = _Texture(rng, 12, (25.0, 70.0), 40.0)
    skin_tex = _Texture(rng, 12, (6.0, 16.0), 12.0)
    bg_level = rng.uniform(70.0, 110.0)
    skin_level = rng.uniform(150.0, 175.0)
    noise_rng = np.random.default_rng([spec.seed, 1])

    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    background = bg_level + bg_tex(xx, yy)
    frames, faces = [], []
    for t in range(spec.frames):
        box, lm = geometry_at(spec, t)
        cx, cy = box.center
        r = spec.face_radius
        u, v = xx - cx, yy - cy  # face-attached coordinates
        img = background.copy()
        face = u * u + v * v <= r * r
        img[face] = skin_level + skin_tex(u[face], v[face])
        nose = ((u / (0.08 * r)) ** 2 + ((v - 0.12 * r) / (0.12 * r)) ** 2) <= 1
        img[nose] -= 25.0

        closed = _active(spec.blinks, t) is not None
        for ex, ey in (lm.left_eye, lm.right_eye):
            eu, ev = xx - ex, yy - ey
            ell = (eu / (0.2 * r)) ** 2 + (ev / (0.1 * r)) ** 2 <= 1
            if closed:
                img[ell] = 95.0
                img[ell & (np.abs(ev) <= 0.02 * r + 0.5)] = 35.0
            else:
                img[ell] = 235.0
                img[(eu * eu + ev * ev) <= (0.075 * r) ** 2] = 35.0

        (mlx, mly), (mrx, _) = lm.mouth_left, lm.mouth_right
        mh = _mouth_open(spec, t) * r
        mu, mv = xx - (mlx + mrx) / 2, yy - mly
        mouth = (mu / ((mrx - mlx) / 2)) ** 2 + (mv / mh) ** 2 <= 1
        img[mouth] = 30.0

        a = t / max(spec.frames - 1, 1)
        g = spec.gain[0] + (spec.gain[1] - spec.gain[0]) * a
        o = spec.offset[0] + (spec.offset[1] - spec.offset[0]) * a
        img = g * img + o + noise_rng.normal(0.0, spec.noise, img.shape)
        frames.append(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8))
        faces.append((box, lm))
    return frames, frame_labels(spec), faces


def region_mask(spec: SceneSpec, t: int, region: str) -> np.ndarray:
    """Pixel mask of the open-eye ellipses ('eye') or face disc ('face') at frame t."""
    box, lm = geometry_at(spec, t)
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    r = spec.face_radius
    if region == "face":
        cx, cy = box.center
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    if region == "eye":
        m = np.zeros_like(xx, dtype=bool)
        for ex, ey in (lm.left_eye, lm.right_eye):
            m |= ((xx - ex) / (0.2 * r)) ** 2 + ((yy - ey) / (0.1 * r)) ** 2 <= 1
        return m
    raise ValueError(f"unknown region {region!r}")


# -- benchmark generation ------------------------------------------------------

DROWSY_PATTERNS = ("blink", "yawn", "nod")
ALERT_PATTERNS = ("none", "short_blinks", "talk", "look")


def _event(rng, frames: int) -> Event:
    start = int(rng.integers(0, 12))
    dur = int(rng.integers(64, 80))
    return (start, min(dur, frames - start))


def benchmark_scene(seed: int, drowsy: bool, frames: int = 96, width: int = 128, height: int = 128) -> SceneSpec:
    rng = np.random.default_rng([seed, 7])
    r = float(rng.uniform(0.26, 0.30) * min(width, height))
    spec = SceneSpec(
        seed=seed, frames=frames, width=width, height=height, face_radius=r,
        face_x=width / 2 + float(rng.uniform(-5, 5)), face_y=height / 2 + float(rng.uniform(-5, 5)),
    )
    # day/night lighting ramps; kept mild enough that < 5% of pixels saturate
    g0, g1 = rng.uniform(0.45, 1.1, 2)
    spec.gain = (float(g0), float(g1))
    spec.offset = tuple(float(v) for v in rng.uniform(-15, 20, 2))
    spec.nod_amplitude = float(rng.uniform(3.0, 5.0))
    spec.look_amplitude = float(rng.uniform(3.0, 5.0))
    spec.nod_period = spec.look_period = float(rng.uniform(30, 50))

    def short_blinks():
        out, t = [], int(rng.integers(0, 20))
        while t < frames - 10:
            d = int(rng.integers(3, 9))
            out.append((t, d))
            t += d + int(rng.integers(15, 35))
        return out

    if drowsy:
        # each sustained sign shows up with probability 1/2, at least one per drowsy scene
        kinds = [k for k in DROWSY_PATTERNS if rng.random() < 0.5]
        if not kinds:
            kinds = [DROWSY_PATTERNS[int(rng.integers(len(DROWSY_PATTERNS)))]]
        spec.blinks = [_event(rng, frames)] if "blink" in kinds else short_blinks()
        if "yawn" in kinds:
            spec.yawns = [_event(rng, frames)]
        if "nod" in kinds:
            spec.nods = [_event(rng, frames)]
    else:
        kind = ALERT_PATTERNS[int(rng.integers(len(ALERT_PATTERNS)))]
        if kind == "short_blinks":
            spec.blinks = short_blinks()
        elif kind == "talk":
            spec.talks = [_event(rng, frames)]
            spec.blinks = short_blinks()
        elif kind == "look":
            spec.looks = [_event(rng, frames)]
            spec.blinks = short_blinks()
    spec.validate()
    return spec


@dataclass
class Manifest:
    rows: list[tuple[str, str, int]]  # video_id, split, drowsy class of the scene

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["video_id", "split"])
            for vid, split, _ in self.rows:
                w.writerow([vid, split])

    @staticmethod
    def read(path) -> list[tuple[str, str]]:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return [(r["video_id"], r["split"]) for r in rows]


def split_assignment(n: int, drowsy_flags: list[bool], seed: int,
                     fractions=(0.7, 0.1, 0.2)) -> list[str]:
    """Stratified train/val/test split, disjoint by clip."""
    rng = np.random.default_rng([seed, 3])
    out = [""] * n
    for cls in (True, False):
        idx = [i for i in range(n) if drowsy_flags[i] == cls]
        idx = [idx[k] for k in rng.permutation(len(idx))]
        n_val = int(round(len(idx) * fractions[1]))
        n_test = int(round(len(idx) * fractions[2]))
        for k, i in enumerate(idx):
            out[i] = "val" if k < n_val else "test" if k < n_val + n_test else "train"
    return out


def write_video(root: Path, video_id: str, spec: SceneSpec) -> None:
    frames, labels, faces = render_clip(spec)
    vdir = root / video_id
    (vdir / "frames").mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        write_pgm(vdir / "frames" / f"{i:06d}.pgm", f)
    write_labels(vdir / "labels.csv", labels)
    lines = ["# frame_index x1 y1 x2 y2 lx ly rx ry nx ny mlx mly mrx mry"]
    lines += [format_annotation_line(i, box, lm) for i, (box, lm) in enumerate(faces)]
    (vdir / "annotations.txt").write_text("\n".join(lines) + "\n")


def make_benchmark(root, n_clips: int, balance: float = 0.5, seed: int = 0, frames: int = 96,
                   width: int = 128, height: int = 128) -> Manifest:
    """Write ``n_clips`` single-clip videos plus ``manifest.csv`` under ``root``."""
    if n_clips < 1 or not 0.0 <= balance <= 1.0:
        raise ValueError("need n_clips >= 1 and balance in [0, 1]")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n_drowsy = int(math.floor(n_clips * balance + 0.5))
    rng = np.random.default_rng([seed, 11])
    flags = [bool(v) for v in rng.permutation([True] * n_drowsy + [False] * (n_clips - n_drowsy))]
    splits = split_assignment(n_clips, flags, seed)
    rows = []
    for i in range(n_clips):
        vid = f"clip{i:04d}"
        spec = benchmark_scene(seed * 100003 + i, flags[i], frames, width, height)
        write_video(root, vid, spec)
        rows.append((vid, splits[i], int(flags[i])))
    manifest = Manifest(rows)
    manifest.write(root / "manifest.csv")
    return manifest
