"""Dense Horn-Schunck optical flow between consecutive 8-bit frames."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate

# classic Horn-Schunck neighbourhood average (weights sum to 1)
_AVG = np.array([[1 / 12, 1 / 6, 1 / 12],
                 [1 / 6, 0.0, 1 / 6],
                 [1 / 12, 1 / 6, 1 / 12]])


@dataclass
class FlowField:
    u: np.ndarray  # horizontal displacement, pixels per frame interval
    v: np.ndarray  # vertical displacement
    residuals: list[float] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def residual(self) -> float:
        """Final total squared brightness-constancy residual."""
        return self.residuals[-1] if self.residuals else float("nan")


def _check_pair(prev, next_):
    a = np.asarray(prev, dtype=np.float64)
    b = np.asarray(next_, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"frame shapes differ or are not 2-D: {a.shape} vs {b.shape}")
    return a, b


def gradients(prev, next_):
    """Spatial derivatives averaged over both frames and the temporal difference.

    Central differences inside, one-sided at the borders.
    """
    a, b = _check_pair(prev, next_)
    ix = np.zeros_like(a)
    iy = np.zeros_like(a)
    if a.shape[1] > 1:
        ix = (np.gradient(a, axis=1) + np.gradient(b, axis=1)) / 2.0
    if a.shape[0] > 1:
        iy = (np.gradient(a, axis=0) + np.gradient(b, axis=0)) / 2.0
    return ix, iy, b - a


def _neighbour_mean(f: np.ndarray) -> np.ndarray:
    return correlate(f, _AVG, mode="nearest")


def horn_schunck(prev, next_, alpha: float = 10.0, iterations: int = 100) -> FlowField:
    """Jacobi iterations of the Horn-Schunck update, starting from zero flow.

    ``alpha`` weights the smoothness term on the 0-255 intensity scale.  The
    total squared residual ``sum (Ix u + Iy v + It)^2`` after every sweep is
    recorded in ``FlowField.residuals``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    ix, iy, it = gradients(prev, next_)
    u = np.zeros_like(ix)
    v = np.zeros_like(ix)
    denom = alpha * alpha + ix * ix + iy * iy
    history = []
    for _ in range(iterations):
        ub = _neighbour_mean(u)
        vb = _neighbour_mean(v)
        t = (ix * ub + iy * vb + it) / denom
        u = ub - ix * t
        v = vb - iy * t
        r = ix * u + iy * v + it
        history.append(float(np.sum(r * r)))
    return FlowField(u, v, history)


def flow_to_tensor(flows, scale: float = 8.0) -> np.ndarray:
    """Stack flows to [2, T-1, H, W] (u then v), divided by ``scale`` and clipped to [-1, 1]."""
    if not flows:
        raise ValueError("need at least one flow field")
    if scale <= 0:
        raise ValueError("scale must be positive")
    u = np.stack([f.u for f in flows])
    v = np.stack([f.v for f in flows])
    return np.clip(np.stack([u, v]) / scale, -1.0, 1.0)


def encode_flow(flow: FlowField) -> bytes:
    """Debug dump: width, height (u32 LE) then u and v planes as f32 LE."""
    head = struct.pack("<II", flow.width, flow.height)
    return head + flow.u.astype("<f4").tobytes() + flow.v.astype("<f4").tobytes()


def decode_flow(blob: bytes) -> FlowField:
    w, h = struct.unpack_from("<II", blob, 0)
    n = w * h
    if len(blob) != 8 + 8 * n:
        raise ValueError(f"flow record has {len(blob)} bytes, expected {8 + 8 * n}")
    u = np.frombuffer(blob, "<f4", n, 8).reshape(h, w).astype(np.float64)
    v = np.frombuffer(blob, "<f4", n, 8 + 4 * n).reshape(h, w).astype(np.float64)
    return FlowField(u, v)


def write_flow(path, flow: FlowField) -> None:
    Path(path).write_bytes(encode_flow(flow))


def read_flow(path) -> FlowField:
    return decode_flow(Path(path).read_bytes())
