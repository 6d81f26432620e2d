"""Sub-network pretraining, fusion training and inference over clip samples."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import (ModelConfig, SubNetConfig, decayed_weights, fusion_forward, init_fusion, trainable_names,
                    init_subnet, subnet_classify, subnet_forward)
from .nn import functional as F
from .nn.optim import Adam, AdamState
from .nn.tensor import Tensor, gradients, no_grad


@dataclass
class ClipTensor:
    """One patch stream pair: appearance [1,T,S,S] and motion [2,T-1,S,S] (or None)."""
    rgb: np.ndarray
    flow: np.ndarray | None
    label: int
    video_id: str = ""
    start: int = 0
    feature: str = ""

    def __post_init__(self):
        t = self.rgb.shape[1]
        if self.flow is not None and self.flow.shape[1] != t - 1:
            raise ValueError(f"flow has {self.flow.shape[1]} steps for {t} frames")


@dataclass
class ClipSample:
    video_id: str
    start: int
    patches: dict[str, ClipTensor]
    labels: dict[str, int]


@dataclass
class OptimConfig:
    lr0: float = 1e-4
    decay_power: float = 0.9
    total_steps: int = 0      # 0: derived from epochs and batches
    batch_size: int = 2
    epochs: int = 4
    l2: float = 1e-4
    seed: int = 0


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    recall: tuple[float, ...]
    seconds: float = 0.0


METRIC_FIELDS = ("epoch", "split", "loss", "accuracy", "recall")


def write_metrics(path, records: Sequence[MetricsRecord]) -> None:
    """Per-epoch curves.  Wall-clock time is kept out so reruns compare byte-for-byte."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in records:
            w.writerow([r.epoch, r.split, f"{r.loss:.10f}", f"{r.accuracy:.6f}",
                        ";".join(f"{x:.6f}" for x in r.recall)])


def read_metrics(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricsRecord(int(r["epoch"]), r["split"], float(r["loss"]), float(r["accuracy"]),
                          tuple(float(x) for x in r["recall"].split(";") if x)) for r in rows]


def summarize(probs: np.ndarray, labels: np.ndarray, num_classes: int) -> tuple[float, float, tuple[float, ...]]:
    """(mean cross-entropy, accuracy, per-class recall; NaN recall for absent classes)."""
    if len(labels) == 0:
        return float("nan"), float("nan"), tuple(float("nan") for _ in range(num_classes))
    q = np.maximum(probs[np.arange(len(labels)), labels], F.PROB_FLOOR)
    pred = probs.argmax(axis=1)
    recall = tuple(float(np.mean(pred[labels == k] == k)) if np.any(labels == k) else float("nan")
                   for k in range(num_classes))
    return float(np.mean(-np.log(q))), float(np.mean(pred == labels)), recall


def confusion_matrix(pred: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, pred), 1)
    return cm


def dropout_seed(seed: int, step: int, position: int) -> int:
    return (seed * 1_000_003 + step * 1009 + position) % (1 << 63)


Forward = Callable[[object, dict, bool, int], Tensor]


def fit(examples: Sequence, labels: np.ndarray, forward: Forward, params: dict[str, np.ndarray],
        trainable: Sequence[str], num_classes: int, opt: OptimConfig,
        val: tuple[Sequence, np.ndarray] | None = None, log=None) -> list[MetricsRecord]:
    """Minimize mean cross-entropy + L2 with Adam; updates ``params`` in place.

    Batches are walked in a seeded order and gradients are accumulated sample by
    sample in that order, so a run is bit-reproducible.
    """
    n = len(examples)
    per_epoch = math.ceil(n / opt.batch_size) if n else 0
    total = opt.total_steps or per_epoch * opt.epochs
    adam = Adam(AdamState(lr0=opt.lr0, decay_power=opt.decay_power, total_steps=total))
    trainable = list(trainable)
    decay = [name for name in decayed_weights({k: None for k in trainable})]
    records: list[MetricsRecord] = []
    step = 0
    for epoch in range(opt.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([opt.seed, epoch]).permutation(n)
        probs = np.zeros((n, num_classes))
        for b0 in range(0, n, opt.batch_size):
            batch = order[b0:b0 + opt.batch_size]
            acc = {k: np.zeros_like(params[k]) for k in trainable}
            for pos, i in enumerate(batch):
                tensors = {k: Tensor(v, requires_grad=k in acc) for k, v in params.items()}
                q = forward(examples[i], tensors, True, dropout_seed(opt.seed, step, pos))
                loss = F.cross_entropy(F.one_hot(labels[i], num_classes)[0], q)
                g = gradients(loss, {k: tensors[k] for k in trainable})
                for k in trainable:
                    acc[k] += g[k]
                probs[i] = q.data
            for k in trainable:
                acc[k] /= len(batch)
            if opt.l2 and decay:
                wt = {k: Tensor(params[k], requires_grad=True) for k in decay}
                g = gradients(F.l2_penalty(list(wt.values()), opt.l2), wt)
                for k in decay:
                    acc[k] += g[k]
            adam.step(params, acc)
            step += 1
        loss, accuracy, recall = summarize(probs, labels, num_classes)
        records.append(MetricsRecord(epoch, "train", loss, accuracy, recall, time.perf_counter() - t0))
        if val is not None and len(val[0]):
            vp = predict_all(val[0], forward, params)
            vl, va, vr = summarize(vp, val[1], num_classes)
            records.append(MetricsRecord(epoch, "val", vl, va, vr, time.perf_counter() - t0))
        if log:
            log(records[-1] if val is None else records[-2], records[-1])
    return records


def predict_all(examples: Sequence, forward: Forward, params: dict[str, np.ndarray]) -> np.ndarray:
    with no_grad():
        tensors = {k: Tensor(v) for k, v in params.items()}
        return np.stack([forward(e, tensors, False, 0).data for e in examples]) if len(examples) else np.zeros((0, 2))


# -- sub-network pretraining -------------------------------------------------------

def subnet_forward_fn(cfg: SubNetConfig, use_flow: bool = True) -> Forward:
    def forward(sample: ClipSample, tensors, training, seed):
        patch = sample.patches[cfg.name]
        feat = subnet_forward(patch.rgb, patch.flow if use_flow else None, cfg, tensors)
        return subnet_classify(feat, cfg, tensors)
    return forward


def pretrain_subnet(train: Sequence[ClipSample], cfg: SubNetConfig, opt: OptimConfig,
                    val: Sequence[ClipSample] = (), use_flow: bool = True, log=None):
    """Train one trunk on its own label set with a temporary head.

    Returns ``(params, metrics)``; ``params`` includes the ``<name>.cls.*`` head,
    which callers drop before fusion.
    """
    params = init_subnet(cfg, np.random.default_rng([opt.seed, 17, len(cfg.name)]))
    labels = np.array([s.labels[cfg.name] for s in train], dtype=np.int64)
    vl = np.array([s.labels[cfg.name] for s in val], dtype=np.int64)
    metrics = fit(train, labels, subnet_forward_fn(cfg, use_flow), params, sorted(params),
                  cfg.num_classes, opt, (val, vl), log)
    return params, metrics


def trunk_only(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v for k, v in params.items() if ".cls." not in k}


# -- fusion ------------------------------------------------------------------------

def extract_features(samples: Sequence[ClipSample], cfg: ModelConfig, params, use_flow: bool = True) -> np.ndarray:
    """Concatenated trunk features, [len(samples), fused_dim]."""
    with no_grad():
        tensors = {k: Tensor(v) for k, v in params.items() if not k.startswith("fusion.")}
        rows = []
        for s in samples:
            feats = [subnet_forward(s.patches[f].rgb, s.patches[f].flow if use_flow else None,
                                    cfg.subnets[f], tensors).data for f in cfg.features]
            rows.append(np.concatenate(feats))
    return np.stack(rows) if rows else np.zeros((0, cfg.fused_dim))


def _head_forward(cfg: ModelConfig) -> Forward:
    def forward(feat: np.ndarray, tensors, training, seed):
        return fusion_forward([feat], tensors, cfg.dropout, seed, training)
    return forward


def model_forward_fn(cfg: ModelConfig, use_flow: bool = True) -> Forward:
    def forward(sample: ClipSample, tensors, training, seed):
        feats = [subnet_forward(sample.patches[f].rgb, sample.patches[f].flow if use_flow else None,
                                cfg.subnets[f], tensors) for f in cfg.features]
        return fusion_forward(feats, tensors, cfg.dropout, seed, training)
    return forward


def standardizing_gain(std: np.ndarray) -> np.ndarray:
    """1/std per feature; features constant over the training set (dead units) get gain 0."""
    live = std > 1e-6 * max(float(std.max(initial=0.0)), 1e-300)
    return np.where(live, 1.0 / np.where(live, std, 1.0), 0.0)


def train_fusion(train: Sequence[ClipSample], trunks: dict[str, np.ndarray], cfg: ModelConfig,
                 opt: OptimConfig, freeze: bool = True, val: Sequence[ClipSample] = (),
                 use_flow: bool = True, log=None):
    """Train the fusion head on drowsiness labels (optionally fine-tuning the trunks).

    With ``freeze`` the trunk parameters are left bit-identical and features are
    computed once up front.
    """
    params = {k: v.copy() for k, v in trunks.items()}
    params.update(init_fusion(cfg, np.random.default_rng([opt.seed, 23])))
    labels = np.array([s.labels["drowsy"] for s in train], dtype=np.int64)
    vl = np.array([s.labels["drowsy"] for s in val], dtype=np.int64)
    feats = extract_features(train, cfg, params, use_flow)
    if len(feats):
        # trunk features differ in scale by orders of magnitude; standardize with training statistics
        params["fusion.norm.shift"] = feats.mean(axis=0)
        params["fusion.norm.gain"] = standardizing_gain(feats.std(axis=0))
    if freeze:
        head_names = sorted(k for k in params if k.startswith("fusion."))
        vfeats = extract_features(val, cfg, params, use_flow)
        head = {k: params[k] for k in head_names}
        metrics = fit(list(feats), labels, _head_forward(cfg), head, trainable_names(head), 2, opt,
                      (list(vfeats), vl), log)
        params.update(head)
    else:
        metrics = fit(train, labels, model_forward_fn(cfg, use_flow), params, trainable_names(params), 2,
                      opt, (val, vl), log)
    return params, metrics


def predict_drowsy(samples: Sequence[ClipSample], cfg: ModelConfig, params, use_flow: bool = True) -> np.ndarray:
    """P(Drowsy) per sample."""
    if not samples:
        return np.zeros(0)
    feats = extract_features(samples, cfg, params, use_flow)
    return predict_all(list(feats), _head_forward(cfg), params)[:, 1]
