"""Flat ``key = value`` pipeline configuration.

Lines are ``key = value``; ``#`` starts a comment.  Sub-network keys are
prefixed with the feature name (``eye.use_se = true``).  Conv stacks are
written ``channels@kt x kh x kw/st x sh x sw`` entries separated by commas,
e.g. ``eye.convs = 4@3x3x3/1x1x1, 8@3x3x3/1x1x1``; padding is kernel // 2.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import PatchMargins
from .imaging import TileGrid
from .model import ConvSpec, ModelConfig, SubNetConfig, default_subnets
from .sampling import FEATURES, SCHEMES, ClipSpec
from .training import OptimConfig


CACHE_FORMAT = 2  # bump when the cached tensor layout changes


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass
class PipelineConfig:
    dataset_root: str = "data/benchmark"
    work_dir: str = "work"
    # synthetic benchmark
    n_clips: int = 200
    balance: float = 0.5
    frames_per_video: int = 96
    frame_width: int = 128
    frame_height: int = 128
    data_seed: int = 0
    # clip sampling
    scheme: str = "10x10"
    hop: int = 0                     # 0: window span (non-overlapping)
    # contrast equalization
    clahe: bool = True
    clahe_tiles_x: int = 8
    clahe_tiles_y: int = 8
    clahe_clip_limit: float = 2.0
    # optical flow
    flow: bool = True
    flow_alpha: float = 10.0
    flow_iterations: int = 100
    flow_scale: float = 8.0
    flow_source: str = "clahe"       # clahe | raw
    flow_work_size: int = 56
    # patch margins
    eye_width: float = 2.0
    eye_height: float = 0.8
    mouth_width: float = 1.6
    mouth_height: float = 1.2
    # model
    subnets: dict[str, SubNetConfig] = field(default_factory=default_subnets)
    fusion_hidden: int = 64
    dropout: float = 0.5
    face_only: bool = False
    strict_sizes: bool = True        # eye/mouth 112, head 224
    # optimisation
    lr0: float = 1e-4
    decay_power: float = 0.9
    total_steps: int = 0
    batch_size: int = 1
    l2: float = 1e-4
    pretrain: bool = True
    pretrain_epochs: int = 10
    epochs: int = 100
    freeze: bool = True
    seed: int = 0

    @property
    def clip_spec(self) -> ClipSpec:
        return SCHEMES[self.scheme]

    @property
    def tile_grid(self) -> TileGrid:
        return TileGrid(self.clahe_tiles_x, self.clahe_tiles_y, self.clahe_clip_limit)

    @property
    def margins(self) -> PatchMargins:
        return PatchMargins(self.eye_width, self.eye_height, self.mouth_width, self.mouth_height)

    @property
    def features(self) -> tuple[str, ...]:
        return ("head",) if self.face_only else FEATURES

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.subnets, self.features, self.fusion_hidden, self.dropout).validate(self.strict_sizes)

    def optim(self, epochs: int | None = None) -> OptimConfig:
        return OptimConfig(self.lr0, self.decay_power, self.total_steps, self.batch_size,
                           self.epochs if epochs is None else epochs, self.l2, self.seed)

    def preprocess_key(self) -> dict:
        """Everything that changes cached clip tensors."""
        keys = ["scheme", "hop", "clahe", "clahe_tiles_x", "clahe_tiles_y", "clahe_clip_limit", "flow",
                "flow_alpha", "flow_iterations", "flow_scale", "flow_source", "flow_work_size",
                "eye_width", "eye_height", "mouth_width", "mouth_height"]
        out = {k: getattr(self, k) for k in keys}
        out["input_sizes"] = {f: s.input_size for f, s in self.subnets.items()}
        out["format"] = CACHE_FORMAT
        return out

    def preprocess_hash(self) -> str:
        blob = json.dumps(self.preprocess_key(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def variant(self) -> str:
        parts = ["face" if self.face_only else "multi", "flow" if self.flow else "noflow",
                 "clahe" if self.clahe else "noclahe", "pre" if self.pretrain else "nopre", self.scheme]
        return "-".join(parts) + f"-s{self.seed}"

    def run_dir(self) -> Path:
        """Per-variant output directory; the suffix hashes every setting except the paths."""
        text = "\n".join(line for line in dump_config(self).splitlines()
                         if not line.startswith(("dataset_root", "work_dir")))
        return Path(self.work_dir) / "runs" / f"{self.variant()}-{hashlib.sha256(text.encode()).hexdigest()[:8]}"

    def pretrain_dir(self, feature: str) -> Path:
        """Pretraining output for one sub-network, shared by every run whose
        data, preprocessing, trunk and pretraining settings agree."""
        sub = self.subnets[feature]
        key = {
            "data": [self.n_clips, self.balance, self.frames_per_video, self.frame_width, self.frame_height,
                     self.data_seed],
            "preprocess": self.preprocess_key(),
            "subnet": [sub.input_size, format_convs(sub.convs), list(sub.pool), sub.use_se, sub.se_reduction,
                       sub.feature_dim, list(sub.fuse_kernel)],
            "optim": [self.lr0, self.decay_power, self.total_steps, self.batch_size, self.pretrain_epochs,
                      self.l2, self.seed],
        }
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:10]
        return Path(self.work_dir) / "pretrain" / f"{feature}-s{self.seed}-{digest}"

    def validate(self) -> "PipelineConfig":
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {sorted(SCHEMES)}", "scheme")
        if self.flow_source not in ("clahe", "raw"):
            raise ConfigError("flow_source must be 'clahe' or 'raw'", "flow_source")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")
        for key in ("epochs", "pretrain_epochs", "hop", "total_steps"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0", key)
        if not self.pretrain and self.freeze:
            # nothing to freeze: trunks must learn end to end
            self.freeze = False
        try:
            self.tile_grid
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


# -- parsing ------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_triple(text: str) -> tuple[int, int, int]:
    vals = tuple(int(v) for v in text.strip().lower().split("x"))
    if len(vals) != 3:
        raise ValueError(f"expected TxHxW, got {text!r}")
    return vals


def parse_convs(text: str) -> list[ConvSpec]:
    convs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        ch, _, rest = item.partition("@")
        kernel_s, _, stride_s = rest.partition("/")
        kernel = _parse_triple(kernel_s) if kernel_s else (3, 3, 3)
        stride = _parse_triple(stride_s) if stride_s else (1, 1, 1)
        convs.append(ConvSpec(int(ch), kernel, stride, tuple(k // 2 for k in kernel)))
    if not convs:
        raise ValueError("empty conv stack")
    return convs


def format_convs(convs: list[ConvSpec]) -> str:
    return ", ".join(f"{c.out_channels}@{'x'.join(map(str, c.kernel))}/{'x'.join(map(str, c.stride))}" for c in convs)


_SUBNET_PARSERS = {
    "input_size": int,
    "convs": parse_convs,
    "pool": _parse_triple,
    "use_se": _parse_bool,
    "se_reduction": int,
    "feature_dim": int,
    "fuse_kernel": _parse_triple,
}


def _coerce(value: str, default):
    if isinstance(default, bool):
        return _parse_bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value.strip()


def apply_settings(cfg: PipelineConfig, settings: dict[str, str]) -> PipelineConfig:
    scalar = {f.name for f in dataclasses.fields(cfg) if f.name != "subnets"}
    for key, value in settings.items():
        try:
            if "." in key:
                feature, _, attr = key.partition(".")
                if feature not in FEATURES or attr not in _SUBNET_PARSERS:
                    raise ConfigError(f"unknown config key: {key}", key)
                sub = cfg.subnets[feature]
                cfg.subnets[feature] = dataclasses.replace(sub, **{attr: _SUBNET_PARSERS[attr](value)})
            elif key in scalar:
                setattr(cfg, key, _coerce(value, getattr(cfg, key)))
            else:
                raise ConfigError(f"unknown config key: {key}", key)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", key) from exc
    return cfg


def read_settings(path) -> dict[str, str]:
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None,
                                       strict=True, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[pipeline]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc.message if hasattr(exc, 'message') else exc}") from exc
    return dict(parser["pipeline"])


def load_config(path=None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        apply_settings(cfg, read_settings(path))
    if overrides:
        apply_settings(cfg, overrides)
    return cfg.validate()


def dump_config(cfg: PipelineConfig) -> str:
    """Render a config as the flat key-value text that :func:`load_config` reads."""
    lines = []
    for f in dataclasses.fields(cfg):
        if f.name == "subnets":
            continue
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    for name, sub in cfg.subnets.items():
        lines.append(f"{name}.input_size = {sub.input_size}")
        lines.append(f"{name}.convs = {format_convs(sub.convs)}")
        lines.append(f"{name}.pool = {'x'.join(map(str, sub.pool))}")
        lines.append(f"{name}.use_se = {str(sub.use_se).lower()}")
        lines.append(f"{name}.se_reduction = {sub.se_reduction}")
        lines.append(f"{name}.feature_dim = {sub.feature_dim}")
        lines.append(f"{name}.fuse_kernel = {'x'.join(map(str, sub.fuse_kernel))}")
    return "\n".join(lines) + "\n"
