"""Three two-stream 3D-conv sub-networks (eye, mouth, head) and the fusion classifier.

Each sub-network runs an appearance stream (1 channel, T frames) and a motion
stream (2 flow channels, T-1 steps) through separate conv3d stacks, max-pools
both, concatenates them on the channel axis, and reduces the result with one
more conv3d and a global average pool to a feature vector.  Parameters live in
a flat ``name -> ndarray`` mapping with dotted hierarchical names.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .nn import functional as F
from .nn.tensor import DimensionError, Tensor
from .sampling import FEATURES, TAXONOMY

STANDARD_INPUT_SIZES = {"eye": 112, "mouth": 112, "head": 224}


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: tuple[int, int, int] = (3, 3, 3)
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (1, 1, 1)


@dataclass
class SubNetConfig:
    name: str
    input_size: int
    convs: list[ConvSpec]
    pool: tuple[int, int, int] = (1, 2, 2)
    use_se: bool = False
    se_reduction: int = 4
    feature_dim: int = 128
    fuse_kernel: tuple[int, int, int] = (1, 1, 1)

    @property
    def num_classes(self) -> int:
        return len(TAXONOMY[self.name])

    def validate(self, strict_sizes: bool = False) -> "SubNetConfig":
        if self.name not in FEATURES:
            raise ValueError(f"unknown sub-network {self.name!r}")
        if not self.convs:
            raise ValueError(f"{self.name}: needs at least one conv layer")
        if strict_sizes and self.input_size != STANDARD_INPUT_SIZES[self.name]:
            raise ValueError(f"{self.name}: input_size must be {STANDARD_INPUT_SIZES[self.name]}")
        if self.use_se:
            for i, c in enumerate(self.convs[:2]):
                if any(s > 1 for s in c.stride):
                    raise ValueError(
                        f"{self.name}: SE network keeps full resolution in layers 1-2 "
                        f"(layer {i + 1} has stride {c.stride})")
            for c in self.convs:
                if c.out_channels % self.se_reduction:
                    raise ValueError(f"{self.name}: se_reduction {self.se_reduction} "
                                     f"does not divide {c.out_channels} channels")
        return self


def default_subnets() -> dict[str, SubNetConfig]:
    # spatial strides are front-loaded where allowed so CPU training stays cheap;
    # the eye net keeps full resolution for two (temporally flat) layers
    eye = [ConvSpec(4, (1, 3, 3), (1, 1, 1), (0, 1, 1)), ConvSpec(4, (1, 3, 3), (1, 1, 1), (0, 1, 1)),
           ConvSpec(16, stride=(2, 4, 4)), ConvSpec(32, stride=(2, 2, 2)), ConvSpec(64, stride=(1, 2, 2))]
    mouth = [ConvSpec(8, stride=(1, 2, 2)), ConvSpec(16, stride=(1, 2, 2)),
             ConvSpec(32, stride=(2, 2, 2)), ConvSpec(64, stride=(2, 2, 2))]
    head = [ConvSpec(8, stride=(1, 4, 4)), ConvSpec(16, stride=(1, 2, 2)),
            ConvSpec(32, stride=(2, 2, 2)), ConvSpec(64, stride=(2, 2, 2))]
    return {
        "eye": SubNetConfig("eye", 112, eye, use_se=True, se_reduction=4),
        "mouth": SubNetConfig("mouth", 112, mouth),
        "head": SubNetConfig("head", 224, head),
    }


@dataclass
class ModelConfig:
    subnets: dict[str, SubNetConfig] = field(default_factory=default_subnets)
    features: tuple[str, ...] = FEATURES   # ("head",) for the face-only ablation
    fusion_hidden: int = 64
    dropout: float = 0.5

    def validate(self, strict_sizes: bool = False) -> "ModelConfig":
        if not self.features or set(self.features) - set(FEATURES):
            raise ValueError(f"features must be a subset of {FEATURES}")
        for f in self.features:
            self.subnets[f].validate(strict_sizes)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return self

    @property
    def fused_dim(self) -> int:
        return sum(self.subnets[f].feature_dim for f in self.features)


# -- parameters ------------------------------------------------------------

SE_GATE_BIAS = 3.0


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)


def init_subnet(cfg: SubNetConfig, rng: np.random.Generator, with_head: bool = True) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    last = {}
    for stream, c_in in (("rgb", 1), ("flow", 2)):
        for i, conv in enumerate(cfg.convs):
            k = conv.kernel
            fan = c_in * k[0] * k[1] * k[2]
            p[f"{cfg.name}.{stream}.conv{i}.w"] = _he(rng, (conv.out_channels, c_in, *k), fan)
            p[f"{cfg.name}.{stream}.conv{i}.b"] = np.zeros(conv.out_channels)
            if cfg.use_se:
                hidden = conv.out_channels // cfg.se_reduction
                # squeezed inputs are post-relu means (>= 0); non-negative rows keep the bottleneck alive at init
                p[f"{cfg.name}.{stream}.se{i}.w1"] = np.abs(rng.normal(0, np.sqrt(1.0 / conv.out_channels),
                                                                       (hidden, conv.out_channels)))
                p[f"{cfg.name}.{stream}.se{i}.b1"] = np.zeros(hidden)
                p[f"{cfg.name}.{stream}.se{i}.w2"] = rng.normal(0, np.sqrt(1.0 / hidden), (conv.out_channels, hidden))
                # gates open near 1 so stacked blocks do not shrink activations by 2x per layer
                p[f"{cfg.name}.{stream}.se{i}.b2"] = np.full(conv.out_channels, SE_GATE_BIAS)
            c_in = conv.out_channels
        last[stream] = c_in
    k = cfg.fuse_kernel
    c_cat = last["rgb"] + last["flow"]
    p[f"{cfg.name}.fuse.w"] = _he(rng, (cfg.feature_dim, c_cat, *k), c_cat * k[0] * k[1] * k[2])
    p[f"{cfg.name}.fuse.b"] = np.zeros(cfg.feature_dim)
    if with_head:
        p.update(init_head(cfg, rng))
    return p


def init_head(cfg: SubNetConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Temporary per-feature classification head used for pretraining."""
    return {
        f"{cfg.name}.cls.w": rng.normal(0, 0.01, (cfg.num_classes, cfg.feature_dim)),
        f"{cfg.name}.cls.b": np.zeros(cfg.num_classes),
    }


def init_fusion(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d = cfg.fused_dim
    return {
        "fusion.fc1.w": _he(rng, (cfg.fusion_hidden, d), d),
        "fusion.fc1.b": np.zeros(cfg.fusion_hidden),
        "fusion.fc2.w": rng.normal(0, 0.01, (2, cfg.fusion_hidden)),
        "fusion.fc2.b": np.zeros(2),
        # fixed per-feature standardization, filled in from training features
        "fusion.norm.shift": np.zeros(d),
        "fusion.norm.gain": np.ones(d),
    }


FROZEN_SUFFIXES = (".norm.shift", ".norm.gain")


def trainable_names(params: dict) -> list[str]:
    return sorted(k for k in params if not k.endswith(FROZEN_SUFFIXES))


def init_model(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for i, f in enumerate(cfg.features):
        params.update(init_subnet(cfg.subnets[f], np.random.default_rng([seed, i]), with_head=False))
    params.update(init_fusion(cfg, np.random.default_rng([seed, 99])))
    return params


def decayed_weights(params: dict) -> list[str]:
    """Names that receive the L2 penalty: conv and dense weights (no biases, no SE gates)."""
    return [n for n in params if n.endswith(".w")]


# -- forward -------------------------------------------------------------------

def _param(params, name) -> Tensor:
    p = params[name]
    return p if isinstance(p, Tensor) else Tensor(p)


def _stream(x: Tensor, cfg: SubNetConfig, params, stream: str, gate=None) -> Tensor:
    for i, conv in enumerate(cfg.convs):
        pre = f"{cfg.name}.{stream}.conv{i}"
        x = F.relu(F.conv3d(x, _param(params, pre + ".w"), _param(params, pre + ".b"), conv.stride, conv.padding))
        if cfg.use_se:
            se = f"{cfg.name}.{stream}.se{i}"
            x = F.se_block(x, _param(params, se + ".w1"), _param(params, se + ".w2"), gate,
                           _param(params, se + ".b1"), _param(params, se + ".b2"))
    return F.maxpool3d(x, cfg.pool)


def subnet_forward(rgb, flow, cfg: SubNetConfig, params, gate=None) -> Tensor:
    """Feature vector [F] (or [N, F] for batched input) for one facial patch.

    ``flow=None`` feeds an all-zero motion stream (the no-flow ablation).
    ``gate`` forces every SE excitation weight (identity checks).
    """
    rgb = rgb if isinstance(rgb, Tensor) else Tensor(rgb)
    batched = rgb.ndim == 5
    if rgb.ndim not in (4, 5) or rgb.shape[-4] != 1:
        raise DimensionError(f"{cfg.name}: appearance stream must be [1,T,S,S], got {rgb.shape}", axis="rgb")
    t = rgb.shape[-3]
    s = cfg.input_size
    if rgb.shape[-2:] != (s, s):
        raise DimensionError(f"{cfg.name}: appearance stream is {rgb.shape[-2:]}, config wants {s}x{s}", axis="rgb")
    want = (rgb.shape[0],) * batched + (2, t - 1, s, s)
    if flow is None:
        flow = Tensor(np.zeros(want))
    flow = flow if isinstance(flow, Tensor) else Tensor(flow)
    if flow.shape != want:
        raise DimensionError(f"{cfg.name}: motion stream is {flow.shape}, expected {want}", axis="flow")
    a = _stream(rgb, cfg, params, "rgb", gate)
    m = _stream(flow, cfg, params, "flow", gate)
    # T and T-1 inputs can pool to different temporal extents; keep the common prefix
    tax = a.ndim - 3
    common = min(a.shape[tax], m.shape[tax])
    a, m = F.narrow(a, tax, common), F.narrow(m, tax, common)
    x = F.concat([a, m], axis=a.ndim - 4)
    pad = tuple(k // 2 for k in cfg.fuse_kernel)
    x = F.relu(F.conv3d(x, _param(params, f"{cfg.name}.fuse.w"), _param(params, f"{cfg.name}.fuse.b"), 1, pad))
    return F.global_avg_pool(x)


def subnet_classify(feature, cfg: SubNetConfig, params) -> Tensor:
    """Class probabilities over the sub-network's own label set."""
    logits = F.dense(feature, _param(params, f"{cfg.name}.cls.w"), _param(params, f"{cfg.name}.cls.b"))
    return F.softmax(logits)


def fusion_forward(features: list, params, dropout: float = 0.0, seed: int = 0, training: bool = False) -> Tensor:
    """concat -> standardize -> dense -> relu -> dropout -> dense -> softmax over {Stillness, Drowsy}."""
    feats = [f if isinstance(f, Tensor) else Tensor(f) for f in features]
    x = F.concat(feats, axis=feats[0].ndim - 1) if len(feats) > 1 else feats[0]
    if "fusion.norm.shift" in params:
        x = F.mul(F.sub(x, _param(params, "fusion.norm.shift")), _param(params, "fusion.norm.gain"))
    h = F.relu(F.dense(x, _param(params, "fusion.fc1.w"), _param(params, "fusion.fc1.b")))
    h = F.dropout(h, dropout, seed, training)
    return F.softmax(F.dense(h, _param(params, "fusion.fc2.w"), _param(params, "fusion.fc2.b")))


def with_features(cfg: ModelConfig, features) -> ModelConfig:
    return replace(cfg, features=tuple(features))
