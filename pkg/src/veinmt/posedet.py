"""Keypoint and pose detection.

A U-shaped network maps the image to K activation maps; after a sigmoid
and per-map normalization each map is a spatial distribution whose first
and second moments give the keypoint location and covariance. Gaussian
heatmaps are rebuilt from those moments.

Coordinates are continuous full-resolution pixel coordinates: origin at the
centre of pixel (0, 0), x to the right (columns), y downward (rows).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Array
from .layers import Conv, Hourglass, Module

EPS_REG = 1e-2
# Start the head in the sigmoid's exponential regime so each map is peaked, not flat.
HEAD_BIAS = -4.0


@dataclass
class KeyPoint:
    p: np.ndarray       # (2,) = (x, y)
    sigma: np.ndarray   # (2, 2) px^2


@dataclass
class KeyPointSet:
    points: list[KeyPoint]

    @property
    def locations(self) -> np.ndarray:
        return np.stack([k.p for k in self.points])

    @property
    def covariances(self) -> np.ndarray:
        return np.stack([k.sigma for k in self.points])

    def __len__(self) -> int:
        return len(self.points)


def grid_coords(h: int, w: int, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Full-resolution coordinates of the pixel centres of a map downscaled by ``scale``."""
    f = 1.0 / scale
    xs = (np.arange(w) + 0.5) * f - 0.5
    ys = (np.arange(h) + 0.5) * f - 0.5
    return xs.astype(dc.DTYPE), ys.astype(dc.DTYPE)


def keypoints_from_activation(act: Array, eps_reg: float = EPS_REG, xs=None, ys=None) -> tuple[Array, Array]:
    """Soft-argmax location and regularized covariance of each activation map.

    act: (N, K, h, w) nonnegative. Returns p (N, K, 2) and cov (N, K, 2, 2).
    """
    p = dc.soft_argmax(act, xs, ys)
    cov = dc.soft_covariance(act, p, eps_reg, xs, ys)
    return p, cov


def downscale(x: Array, scale: float) -> Array:
    steps = int(round(np.log2(1.0 / scale)))
    if not np.isclose(2.0 ** -steps, scale):
        raise ValueError(f"scale must be a power of 1/2, got {scale}")
    for _ in range(steps):
        x = dc.down2_avg(x)
    return x


class Detector(Module):
    """Keypoint detector (weights of the U-shaped network plus the K-channel head)."""

    def __init__(self, num_kp: int = 5, image_shape=(64, 144), base: int = 16, max_ch: int = 64,
                 depth: int = 3, scale: float = 0.5, eps_reg: float = EPS_REG, rng=None):
        super().__init__()
        self.num_kp = num_kp
        self.image_shape = tuple(image_shape)
        self.scale = scale
        self.eps_reg = eps_reg
        self.net = self.child("net", Hourglass(1, base, max_ch, depth, rng=rng))
        self.head = self.child("head", Conv(self.net.out_channels, num_kp, rng=rng, gain=1.0))
        self.head.bias.data[:] = HEAD_BIAS
        h, w = self.image_shape
        self.map_shape = (int(h * scale), int(w * scale))
        self.xs, self.ys = grid_coords(*self.map_shape, scale=scale)

    def check_input(self, images: Array) -> None:
        if images.ndim != 4 or images.shape[1] != 1 or images.shape[2:] != self.image_shape:
            raise dc.ShapeError(f"detector expects (N,1,{self.image_shape[0]},{self.image_shape[1]}), "
                                f"got {images.shape}")

    def activations(self, images: Array) -> Array:
        """Sigmoid activation maps, each normalized to unit mass."""
        self.check_input(images)
        return dc.normalized_sigmoid(self.head(self.net(downscale(images, self.scale))))

    def __call__(self, images: Array) -> tuple[Array, Array]:
        return keypoints_from_activation(self.activations(images), self.eps_reg, self.xs, self.ys)


def detect(image, weights: Detector) -> KeyPointSet:
    """Keypoints of a single (H, W) image."""
    img = np.asarray(image, dtype=dc.DTYPE)
    if img.shape != weights.image_shape:
        raise dc.ShapeError(f"detect: image shape {img.shape} != configured {weights.image_shape}")
    with dc.no_grad():
        p, cov = weights(Array(img[None, None]))
    return KeyPointSet([KeyPoint(p.data[0, k].copy(), cov.data[0, k].copy()) for k in range(weights.num_kp)])


def heatmap(kp: KeyPoint, shape) -> np.ndarray:
    """Gaussian confidence map of one keypoint on a full-resolution (h, w) grid."""
    h, w = shape
    sigma = np.asarray(kp.sigma, dtype=dc.DTYPE)
    if not np.allclose(sigma, sigma.T, atol=1e-5) or np.linalg.eigvalsh(sigma.astype(np.float64)).min() <= 0:
        raise ValueError("heatmap: covariance is not symmetric positive definite")
    p = Array(np.asarray(kp.p, dtype=dc.DTYPE).reshape(1, 1, 2))
    c = Array(sigma.reshape(1, 1, 2, 2))
    return dc.gaussian_heatmap(p, c, h, w).data[0, 0]
