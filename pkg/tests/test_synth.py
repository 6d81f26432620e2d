import numpy as np
import pytest

from drowsynet.flow import horn_schunck
from drowsynet.pgm import read_pgm
from drowsynet.sampling import read_labels
from drowsynet.synth import (Manifest, SceneSpec, benchmark_scene, frame_labels, make_benchmark, region_mask,
                             render_clip)


def test_no_events_is_all_stillness_and_static():
    spec = SceneSpec(seed=1, frames=12, sway=0.0, noise=0.0)
    frames, labels, faces = render_clip(spec)
    assert all(np.all(v == 0) for v in labels.values())
    for a, b in zip(frames, frames[1:]):
        f = horn_schunck(a, b, 10, 20)
        assert np.all(f.u == 0) and np.all(f.v == 0)


def test_thirty_frame_blink_counts():
    labels = frame_labels(SceneSpec(frames=96, blinks=[(20, 30)]))
    assert labels["eye"].sum() == 30 and labels["drowsy"].sum() == 30
    assert np.all(labels["eye"][20:50] == 1)


def test_short_blink_is_not_sleepy():
    labels = frame_labels(SceneSpec(frames=60, blinks=[(5, 15), (30, 16)]))
    assert labels["eye"][5:20].sum() == 0 and labels["eye"][30:46].sum() == 16


def test_event_labels():
    spec = SceneSpec(frames=100, yawns=[(0, 20)], talks=[(30, 10)], nods=[(50, 10)], looks=[(70, 10)])
    lab = frame_labels(spec)
    assert set(lab["mouth"][:20]) == {1} and set(lab["mouth"][30:40]) == {2}
    assert set(lab["head"][50:60]) == {1} and set(lab["head"][70:80]) == {2}
    assert lab["drowsy"].sum() == 30


def test_render_is_deterministic():
    spec = benchmark_scene(5, True, frames=20)
    a, b = render_clip(spec), render_clip(spec)
    assert all(np.array_equal(x, y) for x, y in zip(a[0], b[0]))
    assert a[2] == b[2]


@pytest.mark.parametrize("kw", [dict(blinks=[(0, 10), (5, 10)]), dict(yawns=[(0, 10)], talks=[(9, 4)]),
                                dict(nods=[(-1, 3)]), dict(looks=[(200, 3)]), dict(blinks=[(3, 0)])])
def test_contradictory_events_rejected(kw):
    with pytest.raises(ValueError):
        SceneSpec(frames=100, **kw).validate()


def test_blink_darkens_eye_region_by_40_levels():
    for seed in range(5):
        spec = SceneSpec(seed=seed, frames=40, blinks=[(20, 20)])
        frames, _, _ = render_clip(spec)
        base = np.mean([frames[t][region_mask(spec, t, "eye")].mean() for t in range(20)])
        shut = np.mean([frames[t][region_mask(spec, t, "eye")].mean() for t in range(20, 40)])
        assert base - shut >= 40


def test_nod_motion_is_mostly_vertical():
    for seed in range(3):
        spec = SceneSpec(seed=seed, frames=30, nods=[(0, 30)], nod_amplitude=4.0)
        frames, _, _ = render_clip(spec)
        us, vs = [], []
        for t in range(29):
            f = horn_schunck(frames[t], frames[t + 1], 10, 100)
            m = region_mask(spec, t, "face")
            us.append(np.abs(f.u[m]).mean())
            vs.append(np.abs(f.v[m]).mean())
        assert np.mean(vs) >= 2 * np.mean(us)


def test_lighting_saturation_below_five_percent():
    for seed in range(40):
        spec = benchmark_scene(seed, seed % 2 == 0, frames=96)
        frames, _, _ = render_clip(spec)
        sat = np.mean([np.mean((f == 0) | (f == 255)) for f in frames])
        worst = max(np.mean((f == 0) | (f == 255)) for f in frames)
        assert sat <= 0.05 and worst <= 0.05


def test_benchmark_scene_labels_match_class():
    for seed in range(30):
        drowsy = seed % 2 == 1
        lab = frame_labels(benchmark_scene(seed, drowsy))
        assert (lab["drowsy"].mean() > 0.5) == drowsy


def test_make_benchmark_layout(tmp_path):
    m = make_benchmark(tmp_path / "a", 10, 0.5, seed=3, frames=12, width=48, height=48)
    assert len(m.rows) == 10 and sum(r[2] for r in m.rows) == 5
    rows = Manifest.read(tmp_path / "a" / "manifest.csv")
    assert [r[0] for r in rows] == [f"clip{i:04d}" for i in range(10)]
    assert {r[1] for r in rows} <= {"train", "val", "test"}
    v = tmp_path / "a" / "clip0000"
    assert len(list((v / "frames").glob("*.pgm"))) == 12
    assert read_pgm(v / "frames" / "000000.pgm").shape == (48, 48)
    assert len(read_labels(v / "labels.csv")["drowsy"]) == 12
    make_benchmark(tmp_path / "b", 10, 0.5, seed=3, frames=12, width=48, height=48)
    assert (tmp_path / "a" / "manifest.csv").read_bytes() == (tmp_path / "b" / "manifest.csv").read_bytes()
    assert (v / "frames" / "000005.pgm").read_bytes() == (tmp_path / "b" / "clip0000" / "frames" / "000005.pgm").read_bytes()


@pytest.mark.parametrize("n,balance", [(200, 0.5), (11, 0.5), (7, 0.3)])
def test_split_balance_and_disjointness(tmp_path, n, balance):
    from drowsynet.synth import split_assignment
    flags = [i < round(n * balance) for i in range(n)]
    splits = split_assignment(n, flags, 0)
    assert len(splits) == n and set(splits) <= {"train", "val", "test"}
    for s in ("train", "val", "test"):
        d = sum(f for f, sp in zip(flags, splits) if sp == s)
        a = sum(not f for f, sp in zip(flags, splits) if sp == s)
        if n == 200:
            assert abs(d - a) <= 1
