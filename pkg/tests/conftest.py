import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from drowsynet.model import ConvSpec, SubNetConfig  # noqa: E402
from drowsynet.training import ClipSample, ClipTensor  # noqa: E402


def toy_subnets(size=8):
    return {
        "eye": SubNetConfig("eye", size, [ConvSpec(4), ConvSpec(4), ConvSpec(4, stride=(1, 2, 2))],
                            use_se=True, se_reduction=2, feature_dim=6),
        "mouth": SubNetConfig("mouth", size, [ConvSpec(4, stride=(1, 2, 2)), ConvSpec(4)], feature_dim=5),
        "head": SubNetConfig("head", size, [ConvSpec(3, stride=(1, 2, 2))], feature_dim=4),
    }


def make_sample(rng, t=4, size=8, labels=None, video_id="v", start=0, with_flow=True):
    labels = labels or {"drowsy": 0, "eye": 0, "mouth": 0, "head": 0}
    patches = {}
    for f in ("eye", "mouth", "head"):
        rgb = rng.uniform(-1, 1, (1, t, size, size))
        flow = rng.uniform(-0.5, 0.5, (2, t - 1, size, size)) if with_flow else None
        patches[f] = ClipTensor(rgb, flow, labels[f], video_id, start, f)
    return ClipSample(video_id, start, patches, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
