"""Motion-transfer augmentation.

Keypoint displacements between consecutive samples of each class are
collected, a PCA basis of those displacements is fitted, and new poses are
synthesized by moving the detected keypoints along random convex
combinations of the principal motions and re-rendering the image with the
motion-transfer model.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffcore as dc
from .data import Dataset
from .densemotion import MotionDelta
from .diffcore import Array
from .model import MTModel
from .posedet import grid_coords

log = logging.getLogger(__name__)


@dataclass
class MotionBasis:
    mean: np.ndarray         # (2K,)
    components: np.ndarray   # (n, 2K), orthonormal rows
    variances: np.ndarray    # (n,), nonincreasing

    @property
    def n(self) -> int:
        return len(self.variances)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def to_state(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean.astype(np.float32), "components": self.components.astype(np.float32),
                "variances": self.variances.astype(np.float32)}

    @classmethod
    def from_state(cls, state: dict) -> "MotionBasis":
        return cls(np.asarray(state["mean"], np.float64), np.asarray(state["components"], np.float64),
                   np.asarray(state["variances"], np.float64))

    def export_text(self, path) -> None:
        """One principal component per line, preceded by comment lines with the mean and variances."""
        fmt = lambda v: " ".join(f"{x:.8g}" for x in v)
        lines = [f"# mean {fmt(self.mean)}", f"# variances {fmt(self.variances)}"]
        lines += [fmt(c) for c in self.components]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class AugConfig:
    n: int = 10
    scale_min: float = 0.5
    scale_max: float = 1.5
    prob: float = 0.5
    max_retries: int = 5

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"AugConfig.prob must be in [0, 1], got {self.prob}")
        if self.n <= 0 or self.scale_min < 0 or self.scale_max < self.scale_min:
            raise ValueError("AugConfig: need n > 0 and 0 <= scale_min <= scale_max")


# ---------------------------------------------------------------------------- analysis

def _detector_fn(detector) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(detector, "image_shape") and hasattr(detector, "num_kp"):
        def run(images):
            out = []
            with dc.no_grad():
                for b in range(0, len(images), 32):
                    p, _ = detector(Array(np.asarray(images[b:b + 32], dtype=dc.DTYPE)[:, None]))
                    out.append(p.data)
            return np.concatenate(out)
        return run
    return detector


def collect_deltas(dataset: Dataset, detector) -> np.ndarray:
    """Flattened ``p_S - p_D`` for every consecutive pair within each class: (m, 2K)."""
    run = _detector_fn(detector)
    kps = np.asarray(run(dataset.images), dtype=np.float64)
    deltas = []
    for c, idx in dataset.by_class().items():
        if len(idx) < 2:
            log.warning("class %s has a single sample; skipped", dataset.class_ids[c])
            continue
        for a, b in zip(idx[:-1], idx[1:]):
            deltas.append((kps[a] - kps[b]).reshape(-1))
    if not deltas:
        return np.zeros((0, kps.shape[1] * 2))
    return np.stack(deltas)


def fit_basis(deltas: np.ndarray, n: int = 10) -> MotionBasis:
    """Mean-centred PCA of the motion deltas, keeping ``min(n, 2K, m - 1)`` components."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.ndim != 2 or len(deltas) < 2:
        raise ValueError(f"fit_basis needs at least 2 motion deltas, got {len(deltas)}")
    m, d = deltas.shape
    n_eff = min(n, d, m - 1)
    if n_eff < n:
        log.info("principal motion count clipped from %d to %d", n, n_eff)
    mean = deltas.mean(axis=0)
    centred = deltas - mean
    cov = centred.T @ centred / (m - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_eff]
    variances = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return MotionBasis(mean, comps, variances)


def sample_motion(basis: MotionBasis, rng: np.random.Generator, scale: float = 1.0,
                  weights: np.ndarray | None = None, return_weights: bool = False):
    """``scale * sum_i a_i sqrt(var_i) v_i`` with ``a`` on the simplex (Dirichlet(1) unless given).

    With ``return_weights`` the pair ``(motion, a)`` is returned.
    """
    a = rng.dirichlet(np.ones(basis.n)) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.all(basis.variances <= 0):
        log.warning("degenerate motion basis (all variances zero); returning zero motion")
        v = np.zeros(basis.dim)
    else:
        v = scale * (a * np.sqrt(basis.variances)) @ basis.components
    return (v, a) if return_weights else v


def analyze_motion(dataset: Dataset, detector, n: int = 10) -> MotionBasis:
    return fit_basis(collect_deltas(dataset, detector), n)


# ---------------------------------------------------------------------------- synthesis

def animate(images: np.ndarray, model: MTModel, motions: np.ndarray) -> np.ndarray:
    """Re-render images with keypoints moved by ``motions`` (N, 2K): ``p_D = p_S + v``.

    The pseudo driving heatmaps reuse the source covariances.
    """
    x = np.asarray(images, dtype=dc.DTYPE)
    single = x.ndim == 2
    if single:
        x = x[None]
        motions = np.asarray(motions)[None]
    if x.shape[1:] != model.image_shape:
        raise dc.ShapeError(f"animate: images {x.shape[1:]} != model {model.image_shape}")
    n, k = len(x), model.num_kp
    v = Array(np.asarray(motions, dtype=dc.DTYPE).reshape(n, k, 2))
    src = Array(x[:, None])
    h, w = model.dense.map_shape
    xs, ys = grid_coords(h, w, model.dense.scale)
    with dc.no_grad():
        p_s, cov_s = model.detector(src)
        p_d = dc.add(p_s, v)
        dh = dc.sub(dc.gaussian_heatmap(p_s, cov_s, h, w, xs, ys), dc.gaussian_heatmap(p_d, cov_s, h, w, xs, ys))
        out, _ = model.animate(src, MotionDelta(dc.sub(p_s, p_d), dh))
    return out.data[:, 0][0] if single else out.data[:, 0]


def _in_bounds(p: np.ndarray, shape) -> bool:
    h, w = shape
    return bool((p[..., 0] >= 0).all() and (p[..., 0] <= w - 1).all()
                and (p[..., 1] >= 0).all() and (p[..., 1] <= h - 1).all())


def draw_motion(p_s: np.ndarray, basis: MotionBasis, rng: np.random.Generator, config: AugConfig,
                shape) -> np.ndarray:
    """Random motion keeping every pseudo driving keypoint inside the image.

    The overall sign is random: component signs are only a convention, so
    sampling one orientation would bias the augmentation.
    """
    h, w = shape
    k = len(p_s)
    for _ in range(config.max_retries + 1):
        scale = rng.uniform(config.scale_min, config.scale_max) * rng.choice((-1.0, 1.0))
        v = sample_motion(basis, rng, scale)
        if _in_bounds(p_s + v.reshape(k, 2), shape):
            return v
    target = p_s + v.reshape(k, 2)
    target[:, 0] = np.clip(target[:, 0], 0, w - 1)
    target[:, 1] = np.clip(target[:, 1], 0, h - 1)
    return (target - p_s).reshape(-1)


def augment(x: np.ndarray, model: MTModel, basis: MotionBasis, rng: np.random.Generator,
            config: AugConfig | None = None) -> np.ndarray:
    """Novel-pose version of one (H, W) image (always applied; see MTAugmentor for the probability)."""
    config = config or AugConfig()
    x = np.asarray(x, dtype=dc.DTYPE)
    if x.shape != model.image_shape:
        raise dc.ShapeError(f"augment: image {x.shape} != model {model.image_shape}")
    if basis.dim != 2 * model.num_kp:
        raise ValueError(f"augment: basis dim {basis.dim} != 2K = {2 * model.num_kp}")
    with dc.no_grad():
        p_s = model.detector(Array(x[None, None]))[0].data[0].astype(np.float64)
    v = draw_motion(p_s, basis, rng, config, model.image_shape)
    return animate(x, model, v)


class MTAugmentor:
    """Online augmentation: each image is re-posed with probability ``config.prob``."""

    def __init__(self, model: MTModel, basis: MotionBasis, config: AugConfig | None = None):
        self.model = model
        self.basis = basis
        self.config = config or AugConfig()

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.model.image_shape

    def __call__(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        images = np.asarray(images, dtype=dc.DTYPE)
        out = images.copy()
        chosen = np.flatnonzero(rng.random(len(images)) < self.config.prob)
        if len(chosen) == 0:
            return out
        with dc.no_grad():
            p_s = self.model.detector(Array(images[chosen][:, None]))[0].data.astype(np.float64)
        motions = np.stack([draw_motion(p, self.basis, rng, self.config, self.image_shape) for p in p_s])
        out[chosen] = animate(images[chosen], self.model, motions)
        return out
