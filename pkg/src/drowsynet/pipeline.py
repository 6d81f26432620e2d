"""Dataset layout, per-window preprocessing and the clip-tensor cache.

Dataset layout::

    <root>/manifest.csv                     video_id,split
    <root>/<video_id>/frames/%06d.pgm
    <root>/<video_id>/labels.csv            frame_index,drowsy,eye,mouth,head
    <root>/<video_id>/annotations.txt       frame_index x1 y1 x2 y2 + 5 landmarks

Every window is cropped with the boxes of its first sampled frame, so head
motion inside the window stays visible to both streams.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .flow import flow_to_tensor, horn_schunck
from .geometry import AnnotationFileProvider, crop, patch_boxes
from .imaging import clahe, resize_bilinear, resize_float
from .pgm import PGMError, read_pgm
from .sampling import FEATURES, clip_label, read_labels, sample_indices, windows
from .synth import Manifest
from .training import ClipSample, ClipTensor

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    pass


def frame_path(video_dir: Path, index: int) -> Path:
    return video_dir / "frames" / f"{index:06d}.pgm"


def count_frames(video_dir: Path) -> int:
    """Highest frame index + 1, so a gap in the numbering surfaces as a missing file."""
    indices = [int(p.stem) for p in (video_dir / "frames").glob("*.pgm") if p.stem.isdigit()]
    return max(indices) + 1 if indices else 0


def load_frame(video_dir: Path, index: int) -> np.ndarray:
    path = frame_path(video_dir, index)
    try:
        return read_pgm(path)
    except FileNotFoundError:
        raise DataError(f"missing frame file {path}") from None
    except PGMError as exc:
        raise DataError(f"corrupt frame file {path}: {exc}") from exc


def _to_unit(img: np.ndarray) -> np.ndarray:
    # float32 keeps a 200-clip dataset in memory; tensors widen to float64 on use
    return (img.astype(np.float64) / 127.5 - 1.0).astype(np.float32)


def patch_flow(prev: np.ndarray, nxt: np.ndarray, cfg: PipelineConfig):
    """Horn-Schunck on the patch pair downsampled to the flow working size, then
    resampled back with vectors rescaled to patch pixels."""
    size = prev.shape[0]
    work = min(cfg.flow_work_size, size)
    a = resize_float(prev, work, work)
    b = resize_float(nxt, work, work)
    f = horn_schunck(a, b, cfg.flow_alpha, cfg.flow_iterations)
    k = size / work
    f.u = resize_float(f.u, size, size) * k
    f.v = resize_float(f.v, size, size) * k
    return f


def process_window(video_dir: Path, start: int, total: int, cfg: PipelineConfig,
                   labels: dict[str, np.ndarray] | None, faces: AnnotationFileProvider) -> ClipSample:
    spec = cfg.clip_spec
    idx = sample_indices(start, spec, total)
    frames = [load_frame(video_dir, i) for i in idx]
    h, w = frames[0].shape
    face, lm = faces.face(idx[0])
    boxes = patch_boxes(lm, face, (w, h), cfg.margins)
    patches = {}
    # unlabelled videos (prediction input) carry -1 everywhere
    clip_labels = {k: clip_label(labels[k][idx], k) if labels else -1 for k in ("drowsy",) + FEATURES}
    for feature in FEATURES:
        size = cfg.subnets[feature].input_size
        raw = [resize_bilinear(crop(f, boxes[feature]), size, size) for f in frames]
        proc = [clahe(p, cfg.tile_grid) for p in raw] if cfg.clahe else raw
        flow = None
        if cfg.flow:
            src = proc if cfg.flow_source == "clahe" else raw
            flows = [patch_flow(a, b, cfg) for a, b in zip(src[:-1], src[1:])]
            flow = flow_to_tensor(flows, cfg.flow_scale).astype(np.float32)
        rgb = _to_unit(np.stack(proc))[None]
        patches[feature] = ClipTensor(rgb, flow, clip_labels[feature], video_dir.name, start, feature)
    return ClipSample(video_dir.name, start, patches, clip_labels)


def _digest_inputs(video_dir: Path, indices: list[int]) -> str:
    h = hashlib.sha256()
    for name in ("labels.csv", "annotations.txt"):
        p = video_dir / name
        if p.exists():
            h.update(p.read_bytes())
        elif name == "annotations.txt":
            raise DataError(f"missing {p}")
        else:
            h.update(b"unlabelled")
    for i in indices:
        p = frame_path(video_dir, i)
        if not p.exists():
            raise DataError(f"missing frame file {p}")
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def cache_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.work_dir) / "cache" / cfg.preprocess_hash()


def save_sample(path: Path, s: ClipSample) -> None:
    arrays = {}
    for f, p in s.patches.items():
        arrays[f"{f}_rgb"] = p.rgb
        if p.flow is not None:
            arrays[f"{f}_flow"] = p.flow
    for k, v in s.labels.items():
        arrays[f"label_{k}"] = np.array(v)
    arrays["start"] = np.array(s.start)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def load_sample(path: Path, video_id: str) -> ClipSample:
    with np.load(path) as z:
        labels = {k[6:]: int(z[k]) for k in z.files if k.startswith("label_")}
        start = int(z["start"])
        patches = {}
        for f in FEATURES:
            flow = z[f"{f}_flow"] if f"{f}_flow" in z.files else None
            patches[f] = ClipTensor(z[f"{f}_rgb"], flow, labels[f], video_id, start, f)
    return ClipSample(video_id, start, patches, labels)


@dataclass
class PreprocessStats:
    clips: int = 0
    hits: int = 0

    @property
    def hit_rate(self) -> float:
        return self.hits / self.clips if self.clips else 1.0


def _video_jobs(video_dir: Path, cfg: PipelineConfig):
    total = count_frames(video_dir)
    if total == 0:
        raise DataError(f"no frames under {video_dir / 'frames'}")
    hop = cfg.hop or None
    jobs = []
    for start in windows(total, cfg.clip_spec, hop):
        idx = sample_indices(start, cfg.clip_spec, total)
        key = _digest_inputs(video_dir, idx)
        jobs.append((start, total, cache_dir(cfg) / f"{video_dir.name}_{start:06d}_{key}.npz"))
    return jobs


def _process_video(args) -> list[tuple[int, str]]:
    video_dir, cfg, jobs = args
    label_file = video_dir / "labels.csv"
    labels = read_labels(label_file) if label_file.exists() else None
    faces = AnnotationFileProvider(video_dir / "annotations.txt")
    for start, total, path in jobs:
        save_sample(path, process_window(video_dir, start, total, cfg, labels, faces))
    return [(start, str(path)) for start, _, path in jobs]


def preprocess_videos(video_dirs: list[Path], cfg: PipelineConfig, workers: int = 1) -> tuple[dict[str, list[Path]], PreprocessStats]:
    """Build (or reuse) cached clip tensors for every window of every video."""
    cache_dir(cfg).mkdir(parents=True, exist_ok=True)
    stats = PreprocessStats()
    out: dict[str, list[Path]] = {}
    todo = []
    for vd in video_dirs:
        jobs = _video_jobs(vd, cfg)
        out[vd.name] = [p for _, _, p in jobs]
        stats.clips += len(jobs)
        missing = [j for j in jobs if not j[2].exists()]
        stats.hits += len(jobs) - len(missing)
        if missing:
            todo.append((vd, cfg, missing))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_process_video, todo))
    else:
        for job in todo:
            _process_video(job)
    return out, stats


def dataset_videos(cfg: PipelineConfig) -> list[tuple[Path, str]]:
    root = Path(cfg.dataset_root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"no manifest at {manifest}; run `generate` first")
    return [(root / vid, split) for vid, split in Manifest.read(manifest)]


def preprocess_dataset(cfg: PipelineConfig, workers: int = 1):
    videos = dataset_videos(cfg)
    paths, stats = preprocess_videos([v for v, _ in videos], cfg, workers)
    return paths, stats


def load_split(cfg: PipelineConfig, split: str, workers: int = 1) -> list[ClipSample]:
    videos = [v for v, s in dataset_videos(cfg) if s == split]
    paths, _ = preprocess_videos(videos, cfg, workers)
    return [load_sample(p, v.name) for v in videos for p in paths[v.name]]


def load_video_clips(video_dir: Path, cfg: PipelineConfig) -> list[ClipSample]:
    paths, _ = preprocess_videos([video_dir], cfg)
    return [load_sample(p, video_dir.name) for p in paths[video_dir.name]]
