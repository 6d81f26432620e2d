import shutil

import numpy as np
import pytest

from drowsynet.config import load_config
from drowsynet.geometry import AnnotationError
from drowsynet.pipeline import (DataError, dataset_videos, load_split, load_video_clips, preprocess_dataset,
                                preprocess_videos)
from drowsynet.synth import SceneSpec, make_benchmark, write_video

SMALL = {"strict_sizes": "false", "eye.input_size": "16", "mouth.input_size": "16", "head.input_size": "24",
         "flow_work_size": "12", "flow_iterations": "20"}


def small_config(tmp_path, **extra):
    settings = dict(SMALL, dataset_root=str(tmp_path / "data"), work_dir=str(tmp_path / "work"))
    settings.update({k: str(v) for k, v in extra.items()})
    return load_config(None, settings)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    make_benchmark(root / "data", 4, 0.5, seed=3, frames=96, width=64, height=64)
    return root


def test_second_run_is_all_cache_hits(dataset, tmp_path):
    shutil.copytree(dataset / "data", tmp_path / "data")
    cfg = small_config(tmp_path)
    _, first = preprocess_dataset(cfg)
    assert first.clips == 4 and first.hits == 0
    _, second = preprocess_dataset(cfg)
    assert second.hits == second.clips == 4 and second.hit_rate == 1.0


def test_cache_key_follows_clahe_toggle(dataset):
    on = small_config(dataset)
    off = small_config(dataset, clahe="false")
    assert on.preprocess_hash() != off.preprocess_hash()
    a = load_split(on, "train")
    b = load_split(off, "train")
    assert len(a) == len(b)
    assert not np.array_equal(a[0].patches["eye"].rgb, b[0].patches["eye"].rgb)


def test_cached_samples_are_stable_and_shaped(dataset):
    cfg = small_config(dataset)
    s = load_split(cfg, "train")[0]
    again = load_split(cfg, "train")[0]
    for f, size in (("eye", 16), ("mouth", 16), ("head", 24)):
        assert s.patches[f].rgb.shape == (1, 10, size, size)
        assert s.patches[f].flow.shape == (2, 9, size, size)
        assert np.array_equal(s.patches[f].rgb, again.patches[f].rgb)
        assert -1.0 <= s.patches[f].rgb.min() and s.patches[f].rgb.max() <= 1.0
    assert set(s.labels) == {"drowsy", "eye", "mouth", "head"}


def test_no_flow_config_stores_no_motion(dataset):
    s = load_split(small_config(dataset, flow="false"), "train")[0]
    assert all(p.flow is None for p in s.patches.values())


def test_ninety_frames_give_one_long_clip(tmp_path):
    spec = SceneSpec(seed=1, frames=90, width=64, height=64, face_radius=17.0, face_x=32.0, face_y=32.0)
    write_video(tmp_path, "v", spec)
    cfg = small_config(tmp_path, scheme="3x30", hop=90)
    clips = load_video_clips(tmp_path / "v", cfg)
    assert len(clips) == 1
    assert clips[0].patches["eye"].rgb.shape[1] == 30
    # non-overlapping default hop on 10x10 fits a single 91-frame span into 96 frames only
    assert len(load_video_clips(tmp_path / "v", small_config(tmp_path))) == 0


def test_missing_annotation_names_the_frame(tmp_path):
    spec = SceneSpec(seed=2, frames=91, width=64, height=64, face_radius=17.0, face_x=32.0, face_y=32.0)
    write_video(tmp_path, "v", spec)
    ann = tmp_path / "v" / "annotations.txt"
    ann.write_text("".join(l for l in ann.read_text().splitlines(True) if not l.startswith("0 ")))
    with pytest.raises(AnnotationError, match="frame 0"):
        load_video_clips(tmp_path / "v", small_config(tmp_path))


def test_corrupt_or_missing_frame_names_the_file(tmp_path):
    spec = SceneSpec(seed=2, frames=91, width=64, height=64, face_radius=17.0, face_x=32.0, face_y=32.0)
    write_video(tmp_path, "v", spec)
    bad = tmp_path / "v" / "frames" / "000020.pgm"
    bad.write_bytes(b"P5\n64 64\n255\n" + b"\0" * 10)
    with pytest.raises(DataError, match="000020.pgm"):
        load_video_clips(tmp_path / "v", small_config(tmp_path))
    bad.unlink()
    with pytest.raises(DataError, match="000020.pgm"):
        load_video_clips(tmp_path / "v", small_config(tmp_path))


def test_unlabelled_video_gets_placeholder_labels(tmp_path):
    spec = SceneSpec(seed=4, frames=91, width=64, height=64, face_radius=17.0, face_x=32.0, face_y=32.0)
    write_video(tmp_path, "v", spec)
    (tmp_path / "v" / "labels.csv").unlink()
    (clip,) = load_video_clips(tmp_path / "v", small_config(tmp_path))
    assert set(clip.labels.values()) == {-1}


def test_missing_manifest_and_empty_video(tmp_path):
    cfg = small_config(tmp_path)
    with pytest.raises(DataError, match="manifest"):
        dataset_videos(cfg)
    (tmp_path / "empty" / "frames").mkdir(parents=True)
    with pytest.raises(DataError, match="no frames"):
        preprocess_videos([tmp_path / "empty"], cfg)


def test_parallel_workers_match_serial(dataset, tmp_path):
    shutil.copytree(dataset / "data", tmp_path / "data")
    serial = load_split(small_config(tmp_path), "train")
    cfg = small_config(tmp_path, work_dir=tmp_path / "work2")
    parallel = load_split(cfg, "train", workers=2)
    for a, b in zip(serial, parallel):
        assert np.array_equal(a.patches["head"].flow, b.patches["head"].flow)
