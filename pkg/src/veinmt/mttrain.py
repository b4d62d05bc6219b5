"""Self-supervised training of the motion-transfer model on intra-class pairs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .data import Dataset
from .diffcore import Array
from .model import MTConfig, MTModel

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Non-finite loss; the message carries the batch indices and loss components."""


@dataclass
class TrainConfig:
    epochs: int = 80
    batch_size: int = 32
    lr: float = 0.01
    lr_decay: float = 0.1
    decay_epoch: int = 40
    momentum: float = 0.9
    seed: int = 0
    num_kp: int = 5
    n_basis: int = 10
    perc_weight: float = 1.0
    eq_weight: float = 1.0
    micro_batch: int = 8

    def __post_init__(self):
        for name in ("batch_size", "num_kp", "n_basis", "micro_batch", "decay_epoch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.epochs < 0 or self.lr < 0 or self.lr_decay <= 0:
            raise ValueError("TrainConfig: epochs and lr must be >= 0, lr_decay > 0")
        if self.epochs and self.decay_epoch >= self.epochs and self.epochs > 1:
            log.debug("decay epoch %d >= epochs %d: no decay will happen", self.decay_epoch, self.epochs)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``: decayed once the decay epoch has passed."""
        return self.lr * (self.lr_decay if epoch > self.decay_epoch else 1.0)


# ---------------------------------------------------------------------------- losses

def perceptual_loss(recon: Array, target: Array, pyramid) -> Array:
    """Sum over pyramid levels of the mean absolute feature difference."""
    if recon.shape != target.shape:
        raise dc.ShapeError(f"perceptual_loss: shapes {recon.shape} and {target.shape} differ")
    with dc.no_grad():
        tfeats = pyramid(target)
    total = None
    for fr, ft in zip(pyramid(recon), tfeats):
        term = dc.mean(dc.abs_(dc.sub(fr, ft)))
        total = term if total is None else dc.add(total, term)
    return total


@dataclass
class Affine:
    """``y = matrix @ x + offset`` in pixel coordinates."""
    matrix: np.ndarray
    offset: np.ndarray

    @classmethod
    def identity(cls) -> "Affine":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Affine":
        return cls(np.eye(2), np.array([tx, ty], dtype=float))

    def inverse(self) -> "Affine":
        inv = np.linalg.inv(self.matrix)
        return Affine(inv, -inv @ self.offset)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.matrix.T + self.offset


def random_affine(rng: np.random.Generator, shape=(64, 144), max_rot: float = 15.0,
                  max_shift: float = 0.10, scale_range=(0.9, 1.1)) -> Affine:
    """Rotation/scale about the image centre plus translation; near-singular draws are resampled."""
    h, w = shape
    c = np.array([(w - 1) / 2, (h - 1) / 2])
    while True:
        theta = np.deg2rad(rng.uniform(-max_rot, max_rot))
        s = rng.uniform(*scale_range)
        t = rng.uniform(-max_shift, max_shift, 2) * np.array([w, h])
        m = s * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        if abs(np.linalg.det(m)) > 0.1:
            return Affine(m, c + t - m @ c)


def affine_flow(transforms: Sequence[Affine], shape) -> np.ndarray:
    """Backward-warp flow (N, 2, H, W) rendering ``img(T^-1 y)`` at every output pixel y."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    out = np.empty((len(transforms), 2, h, w), dtype=dc.DTYPE)
    for i, t in enumerate(transforms):
        src = t.inverse().apply(pts)
        out[i, 0] = (src[:, 0] - pts[:, 0]).reshape(h, w)
        out[i, 1] = (src[:, 1] - pts[:, 1]).reshape(h, w)
    return out


def warp_images(images: Array, transforms: Sequence[Affine]) -> Array:
    return dc.grid_sample(images, Array(affine_flow(transforms, images.shape[2:])))


def map_points(p: Array, transforms: Sequence[Affine]) -> Array:
    """Apply one affine per batch item to keypoints p (N, K, 2), differentiably."""
    n, k, _ = p.shape
    mats = np.stack([t.matrix for t in transforms]).astype(dc.DTYPE)
    offs = np.stack([t.offset for t in transforms]).astype(dc.DTYPE)
    x = dc.slice_axis(p, 2, 0, 1)
    y = dc.slice_axis(p, 2, 1, 2)

    def const(v):
        return Array(np.broadcast_to(v[:, None, None], (n, k, 1)))

    out = []
    for r in range(2):
        out.append(dc.add(dc.add(dc.mul(x, const(mats[:, r, 0])), dc.mul(y, const(mats[:, r, 1]))),
                          const(offs[:, r])))
    return dc.concat(out, axis=2)


def equivariance_from_points(p: Array, p_hat: Array, transforms: Sequence[Affine]) -> Array:
    """Mean over keypoints of ``|p - T^-1(p_hat)|_1``."""
    back = map_points(p_hat, [t.inverse() for t in transforms])
    diff = dc.abs_(dc.sub(p, back))
    n, k, _ = p.shape
    return dc.mul(dc.sum_(diff), 1.0 / (n * k))


def equivariance_loss(images: Array, detector: Callable, transforms: Sequence[Affine],
                      p: Array | None = None) -> Array:
    """Keypoints of the transformed images, mapped back, against those of the originals."""
    if p is None:
        p = detector(images)[0]
    p_hat = detector(warp_images(images, transforms))[0]
    return equivariance_from_points(p, p_hat, transforms)


# ---------------------------------------------------------------------------- sampling

class PairSampler:
    """Ordered intra-class (source, driving) pairs, one per driving sample per epoch."""

    def __init__(self, labels: np.ndarray, rng: np.random.Generator):
        self.labels = np.asarray(labels)
        self.rng = rng
        self.groups = {c: np.flatnonzero(self.labels == c) for c in np.unique(self.labels)}

    def epoch(self) -> list[tuple[int, int]]:
        pairs = []
        for d in self.rng.permutation(len(self.labels)):
            members = self.groups[self.labels[d]]
            others = members[members != d]
            s = d if len(others) == 0 else int(self.rng.choice(others))
            pairs.append((s, int(d)))
        return pairs


# ---------------------------------------------------------------------------- training

@dataclass
class EpochMetrics:
    epoch: int
    loss_perc: float
    loss_eq: float
    total: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.loss_perc:.8g}\t{self.loss_eq:.8g}\t{self.total:.8g}\n"


@dataclass
class Trainer:
    model: MTModel
    config: TrainConfig
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        self.params = self.model.trainable_parameters()
        self.opt = dc.SGD(self.params, lr=self.config.lr, momentum=self.config.momentum)

    def losses(self, src: np.ndarray, drv: np.ndarray, transforms=None,
               zero_motion: bool = False) -> tuple[Array, Array, Array, dict]:
        """Forward pass on one chunk. Returns (perceptual, equivariance, weighted total, outputs)."""
        m = self.model
        S = Array(src[:, None])
        D = Array(drv[:, None])
        if zero_motion:
            from .densemotion import MotionDelta
            n = len(src)
            h, w = m.dense.map_shape
            p_d = m.detector(D)[0]
            delta = MotionDelta(Array(np.zeros((n, m.num_kp, 2), dc.DTYPE)),
                                Array(np.zeros((n, m.num_kp, h, w), dc.DTYPE)))
            recon, _ = m.animate(S, delta)
            out = {"recon": recon, "p_d": p_d}
        else:
            out = m.transfer(S, D)
        l_perc = perceptual_loss(out["recon"], D, m.pyramid)
        if transforms is None:
            transforms = [random_affine(self.rng, m.image_shape) for _ in range(len(src))]
        l_eq = equivariance_loss(D, m.detector, transforms, p=out["p_d"])
        total = dc.add(dc.mul(l_perc, self.config.perc_weight), dc.mul(l_eq, self.config.eq_weight))
        return l_perc, l_eq, total, out

    def step(self, src: np.ndarray, drv: np.ndarray, lr: float | None = None,
             indices: Sequence[int] | None = None, zero_motion: bool = False) -> dict:
        """One optimizer step on a batch, accumulated over micro-batches."""
        n = len(src)
        self.opt.zero_grad()
        self.opt.lr = self.config.lr if lr is None else lr
        sums = np.zeros(3)
        mb = self.config.micro_batch
        for start in range(0, n, mb):
            sl = slice(start, min(n, start + mb))
            frac = (sl.stop - sl.start) / n
            try:
                l_perc, l_eq, total, _ = self.losses(src[sl], drv[sl], zero_motion=zero_motion)
            except (dc.NonFiniteError, FloatingPointError) as exc:
                raise TrainingDiverged(f"non-finite value in forward pass: {exc}; "
                                       f"batch indices {list(indices) if indices is not None else '?'}") from exc
            vals = np.array([l_perc.item(), l_eq.item(), total.item()])
            if not np.isfinite(vals).all():
                raise TrainingDiverged(f"non-finite loss: perc={vals[0]} eq={vals[1]} total={vals[2]}; "
                                       f"batch indices {list(indices) if indices is not None else '?'}")
            dc.backward(dc.mul(total, frac))
            sums += vals * frac
        for p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise TrainingDiverged(f"non-finite gradient; batch indices "
                                       f"{list(indices) if indices is not None else '?'}")
        self.opt.step()
        return {"loss_perc": float(sums[0]), "loss_eq": float(sums[1]), "total": float(sums[2])}


def train_step(trainer: Trainer, pair: tuple[np.ndarray, np.ndarray], **kw) -> dict:
    return trainer.step(pair[0], pair[1], **kw)


@dataclass
class TrainResult:
    model: MTModel
    history: list[EpochMetrics]


def train(dataset: Dataset, config: TrainConfig, model: MTModel | None = None,
          log_path=None, model_config: MTConfig | None = None,
          on_epoch: Callable[[EpochMetrics], None] | None = None) -> TrainResult:
    """Run ``config.epochs`` epochs of shuffled intra-class pairs.

    The metrics log (one ``epoch<TAB>loss_perc<TAB>loss_eq<TAB>total`` line per
    epoch) is written to ``log_path`` when given.
    """
    if len(dataset) == 0:
        raise ValueError("train: empty dataset")
    counts = np.bincount(dataset.labels)
    if len(counts) < 2 or counts.min() < 2:
        log.warning("dataset has classes with fewer than 2 samples; those pairs degenerate to S = D")
    if model is None:
        mc = model_config or MTConfig(num_kp=config.num_kp, image_shape=tuple(dataset.image_shape),
                                      seed=config.seed)
        model = MTModel(mc)
    if tuple(dataset.image_shape) != model.image_shape:
        raise dc.ShapeError(f"train: dataset images {dataset.image_shape} != model {model.image_shape}")
    ss = np.random.SeedSequence([config.seed, 1])
    r_pairs, r_aff = (np.random.default_rng(s) for s in ss.spawn(2))
    trainer = Trainer(model, config, r_aff)
    sampler = PairSampler(dataset.labels, r_pairs)
    history: list[EpochMetrics] = []
    fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, config.epochs + 1):
            lr = config.lr_at(epoch)
            pairs = sampler.epoch()
            acc = np.zeros(3)
            count = 0
            for b in range(0, len(pairs), config.batch_size):
                chunk = pairs[b:b + config.batch_size]
                s_idx = [s for s, _ in chunk]
                d_idx = [d for _, d in chunk]
                m = trainer.step(dataset.images[s_idx], dataset.images[d_idx], lr=lr, indices=chunk)
                acc += np.array([m["loss_perc"], m["loss_eq"], m["total"]]) * len(chunk)
                count += len(chunk)
            acc /= count
            em = EpochMetrics(epoch, *acc.tolist())
            history.append(em)
            log.info("epoch %d lr %.4g perc %.5f eq %.5f total %.5f", epoch, lr, *acc)
            if fh is not None:
                fh.write(em.line())
                fh.flush()
            if on_epoch is not None:
                on_epoch(em)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(model, history)
