"""Dense motion estimation from keypoint and heatmap differences.

Each keypoint displacement is repeated over the image as a constant coarse
flow; the source warped by every coarse flow, stacked with the heatmap
differences, is fed to a U-shaped network. Its softmax head (K keypoint
channels plus a zero-motion background channel) mixes the coarse flows into
the dense flow, and a sigmoid head gives the inpainting mask.

Flow convention: ``out(x) = source(x + flow(x))``, so the flow that moves
driving-pose coordinates into the source is ``p_S - p_D``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Array
from .layers import Conv, Hourglass, Module
from .posedet import downscale, grid_coords


@dataclass
class MotionDelta:
    dp: Array   # (N, K, 2) = p_S - p_D, full-resolution px
    dh: Array   # (N, K, h, w) = H_S - H_D at the dense-motion resolution


@dataclass
class DenseMotionOutput:
    flow: Array      # (N, 2, H, W) full resolution, px
    inpaint: Array   # (N, 1, H, W) in [0, 1]
    masks: Array     # (N, K+1, h, w) softmax over channels


def heatmap_difference(p_s: Array, cov_s: Array, p_d: Array, cov_d: Array, shape, scale: float) -> Array:
    h, w = shape
    xs, ys = grid_coords(h, w, scale)
    return dc.sub(dc.gaussian_heatmap(p_s, cov_s, h, w, xs, ys), dc.gaussian_heatmap(p_d, cov_d, h, w, xs, ys))


def coarse_flow(dp: Array, shape) -> Array:
    """Repeat each keypoint displacement over an (h, w) grid: (N, K, 2) -> (N, K, 2, h, w)."""
    if dp.ndim != 3 or dp.shape[-1] != 2:
        raise dc.ShapeError(f"coarse_flow: expected (N,K,2), got {dp.shape}")
    n, k, _ = dp.shape
    h, w = shape
    return dc.expand(dc.reshape(dp, (n, k, 2, 1, 1)), (n, k, 2, h, w))


def mix_flows(masks: Array, dp: Array) -> Array:
    """Per-pixel convex combination ``sum_k M_k dp_k``; the last mask channel carries zero flow."""
    n, k1, h, w = masks.shape
    k = k1 - 1
    if dp.shape != (n, k, 2):
        raise dc.ShapeError(f"mix_flows: masks {masks.shape} need dp of shape {(n, k, 2)}, got {dp.shape}")
    m = dc.slice_axis(masks, 1, 0, k)
    comps = []
    for axis in range(2):
        d = dc.expand(dc.reshape(dc.slice_axis(dp, 2, axis, axis + 1), (n, k, 1, 1)), (n, k, h, w))
        comps.append(dc.sum_(dc.mul(m, d), axis=1, keepdims=True))
    return dc.concat(comps, axis=1)


def upscale(x: Array, scale: float) -> Array:
    steps = int(round(np.log2(1.0 / scale)))
    for _ in range(steps):
        x = dc.up2_bilinear(x)
    return x


class DenseMotion(Module):
    def __init__(self, num_kp: int = 5, image_shape=(64, 144), base: int = 16, max_ch: int = 64,
                 depth: int = 3, scale: float = 0.5, rng=None):
        super().__init__()
        self.num_kp = num_kp
        self.image_shape = tuple(image_shape)
        self.scale = scale
        h, w = self.image_shape
        self.map_shape = (int(h * scale), int(w * scale))
        self.net = self.child("net", Hourglass(2 * num_kp, base, max_ch, depth, rng=rng))
        self.mask_head = self.child("mask_head", Conv(self.net.out_channels, num_kp + 1, rng=rng, gain=1.0))
        self.inpaint_head = self.child("inpaint_head", Conv(self.net.out_channels, 1, rng=rng, gain=1.0))

    def delta(self, p_s: Array, cov_s: Array, p_d: Array, cov_d: Array) -> MotionDelta:
        return MotionDelta(dc.sub(p_s, p_d), heatmap_difference(p_s, cov_s, p_d, cov_d, self.map_shape, self.scale))

    def __call__(self, source: Array, delta: MotionDelta) -> DenseMotionOutput:
        n = source.shape[0]
        k = self.num_kp
        h, w = self.map_shape
        if source.ndim != 4 or source.shape[1:] != (1,) + self.image_shape:
            raise dc.ShapeError(f"dense motion expects source (N,1,{self.image_shape[0]},{self.image_shape[1]}), "
                                f"got {source.shape}")
        if delta.dp.shape != (n, k, 2) or delta.dh.shape != (n, k, h, w):
            raise dc.ShapeError(f"dense motion: delta shapes {delta.dp.shape}, {delta.dh.shape} "
                                f"do not match {(n, k, 2)}, {(n, k, h, w)}")
        small = downscale(source, self.scale)
        # coarse flows in map pixels
        flows = dc.reshape(coarse_flow(dc.mul(delta.dp, self.scale), (h, w)), (n * k, 2, h, w))
        srcs = dc.reshape(dc.expand(small, (n, k, h, w)), (n * k, 1, h, w))
        warped = dc.reshape(dc.grid_sample(srcs, flows), (n, k, h, w))
        feats = self.net(dc.concat([warped, delta.dh], axis=1))
        masks = dc.softmax(self.mask_head(feats), axis=1)
        inpaint = dc.sigmoid(self.inpaint_head(feats))
        flow = mix_flows(masks, delta.dp)
        return DenseMotionOutput(upscale(flow, self.scale), upscale(inpaint, self.scale), masks)


def estimate(source, delta: MotionDelta, weights: DenseMotion) -> tuple[np.ndarray, np.ndarray]:
    """Dense flow (2, H, W) and inpainting mask (H, W) for a single (H, W) source."""
    with dc.no_grad():
        out = weights(Array(np.asarray(source, dtype=dc.DTYPE)[None, None]), delta)
    return out.flow.data[0], out.inpaint.data[0, 0]
