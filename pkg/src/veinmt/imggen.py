"""Warping-based image generator.

Encoder features at every level are warped by the dense flow (downscaled to
that level) and gated by the inpainting mask before they reach the decoder.
"""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Array
from .layers import Conv, Module


def scale_flow(flow: Array, level: int) -> Array:
    """Flow at encoder level ``level``: 2x2 average pooling per level, magnitudes divided by 2**level."""
    for _ in range(level):
        flow = dc.down2_avg(flow)
    return dc.mul(flow, 1.0 / 2 ** level) if level else flow


def scale_mask(mask: Array, level: int) -> Array:
    for _ in range(level):
        mask = dc.down2_avg(mask)
    return mask


def warp_feature(feat: Array, flow: Array, mask: Array) -> Array:
    """``mask * warp(feat, flow)`` with the mask broadcast over channels."""
    warped = dc.grid_sample(feat, flow)
    return dc.mul(warped, dc.expand(mask, warped.shape))


class Generator(Module):
    """Stem conv, three stride-2 down blocks, three conv+upsample blocks, sigmoid head.

    ``widths`` = channels of the stem and of each down block.
    """

    def __init__(self, image_shape=(64, 144), widths=(16, 32, 64, 64), rng=None):
        super().__init__()
        self.image_shape = tuple(image_shape)
        self.widths = tuple(widths)
        c0, c1, c2, c3 = self.widths
        self.stem = self.child("stem", Conv(1, c0, rng=rng))
        self.down = [
            self.child("down1", Conv(c0, c1, stride=2, rng=rng)),
            self.child("down2", Conv(c1, c2, stride=2, rng=rng)),
            self.child("down3", Conv(c2, c3, stride=2, rng=rng)),
        ]
        self.up = [
            self.child("up3", Conv(c3, c2, rng=rng)),
            self.child("up2", Conv(2 * c2, c1, rng=rng)),
            self.child("up1", Conv(2 * c1, c0, rng=rng)),
        ]
        self.head = self.child("head", Conv(2 * c0, 1, rng=rng, gain=1.0))
        self.levels = 4

    def encode(self, source: Array) -> list[Array]:
        feats = [dc.relu(self.stem(source))]
        for conv in self.down:
            feats.append(dc.relu(conv(feats[-1])))
        return feats

    def decode(self, feats: list[Array]) -> Array:
        cur = feats[-1]
        for conv, skip in zip(self.up, reversed(feats[:-1])):
            cur = dc.up2_bilinear(dc.relu(conv(cur)))
            cur = dc.concat([cur, skip], axis=1)
        return dc.sigmoid(self.head(cur))

    def __call__(self, source: Array, flow: Array, inpaint: Array) -> Array:
        n = source.shape[0]
        h, w = self.image_shape
        if source.ndim != 4 or source.shape[1:] != (1, h, w):
            raise dc.ShapeError(f"generator expects source (N,1,{h},{w}), got {source.shape}")
        if flow.shape != (n, 2, h, w) or inpaint.shape != (n, 1, h, w):
            raise dc.ShapeError(f"generator: flow {flow.shape} / inpaint {inpaint.shape} "
                                f"must be {(n, 2, h, w)} / {(n, 1, h, w)}")
        feats = self.encode(source)
        warped = [warp_feature(f, scale_flow(flow, i), scale_mask(inpaint, i)) for i, f in enumerate(feats)]
        return self.decode(warped)


def generate(source, flow, inpaint, weights: Generator) -> np.ndarray:
    """Generated (H, W) image for a single (H, W) source, (2, H, W) flow and (H, W) mask."""
    with dc.no_grad():
        out = weights(Array(np.asarray(source, dtype=dc.DTYPE)[None, None]),
                      Array(np.asarray(flow, dtype=dc.DTYPE)[None]),
                      Array(np.asarray(inpaint, dtype=dc.DTYPE)[None, None]))
    return out.data[0, 0]
