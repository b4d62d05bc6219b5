"""Compact vein recognition baseline: embedding CNN, fusion loss, cosine matching and EER."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .data import Dataset
from .diffcore import Array
from .layers import Conv, Linear, Module
from .mttrain import Affine, warp_images

log = logging.getLogger(__name__)

EMBED_DIM = 128


class Embedder(Module):
    """Four downsampling blocks, global average pool, linear projection, L2 norm.

    A block is a stride-2 conv followed by ``convs_per_block - 1`` stride-1
    convs, each with group norm and ReLU.
    """

    def __init__(self, image_shape=(64, 144), widths=(16, 32, 64, 128), dim: int = EMBED_DIM,
                 groups: int = 4, convs_per_block: int = 1, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.image_shape = tuple(image_shape)
        self.groups = groups
        self.convs_per_block = convs_per_block
        self.convs = []
        cin = 1
        for i, w in enumerate(widths):
            for j in range(convs_per_block):
                self.convs.append(self.child(f"block{i + 1}.conv{j + 1}", Conv(cin, w, stride=2 if j == 0 else 1, rng=rng)))
                cin = w
        self.proj = self.child("proj", Linear(cin, dim, rng=rng))
        # pooled features are standardized with batch statistics while training and
        # with these running estimates otherwise
        self.run_mean = self.param("bn_mean", np.zeros(cin), trainable=False)
        self.run_var = self.param("bn_var", np.ones(cin), trainable=False)
        self.bn_momentum = 0.1
        self.training = False

    def __call__(self, x: Array) -> Array:
        if x.ndim != 4 or x.shape[1] != 1 or tuple(x.shape[2:]) != self.image_shape:
            raise dc.ShapeError(f"embedder expects (N, 1, {self.image_shape[0]}, {self.image_shape[1]}), got {x.shape}")
        h = dc.sub(x, Array(np.full(x.shape, 0.5, dc.DTYPE)))
        for conv in self.convs:
            h = dc.relu(dc.group_norm(conv(h), self.groups))
        pooled = dc.mean(h, axis=(2, 3))
        if self.training and x.shape[0] > 1:
            pooled, mu, var = dc.batch_norm(pooled)
            m = self.bn_momentum
            self.run_mean.data = ((1 - m) * self.run_mean.data + m * mu).astype(dc.DTYPE)
            self.run_var.data = ((1 - m) * self.run_var.data + m * var).astype(dc.DTYPE)
        else:
            pooled = dc.batch_norm(pooled, self.run_mean.data, self.run_var.data)[0]
        return dc.l2_normalize(self.proj(pooled), axis=1)

    def trainable(self) -> list[Array]:
        return [p for p in self.parameters() if p.requires_grad]


def embed(images: np.ndarray, embedder: Embedder, batch: int = 64) -> np.ndarray:
    """Unit-norm embeddings for (H, W) or (N, H, W) images."""
    x = np.asarray(images, dtype=dc.DTYPE)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != embedder.image_shape:
        raise dc.ShapeError(f"embed: images must be {embedder.image_shape}, got {x.shape[-2:]}")
    out = []
    with dc.no_grad():
        for b in range(0, len(x), batch):
            out.append(embedder(Array(x[b:b + batch, None])).data)
    e = np.concatenate(out)
    return e[0] if single else e


# ---------------------------------------------------------------------------- loss

def hardest_pairs(dist: np.ndarray, labels: np.ndarray):
    """Per anchor: index of the farthest positive and the nearest negative, and which anchors have both."""
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = labels[:, None] != labels[None, :]
    valid = same.any(axis=1) & diff.any(axis=1)
    pos = np.where(same, dist, -np.inf).argmax(axis=1)
    neg = np.where(diff, dist, np.inf).argmin(axis=1)
    return pos, neg, valid


def fusion_loss(emb: Array, labels: np.ndarray, prototypes: Array, scale: float = 16.0,
                margin: float = 0.2) -> tuple[Array, dict]:
    """Cosine-softmax cross-entropy against unit prototypes plus batch-hard triplet on cosine distance."""
    labels = np.asarray(labels, dtype=np.intp)
    n_cls = prototypes.shape[0]
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ValueError(f"fusion_loss: labels must lie in [0, {n_cls}), got range [{labels.min()}, {labels.max()}]")
    n = emb.shape[0]
    protos = dc.l2_normalize(prototypes, axis=1)
    logits = dc.mul(dc.matmul(emb, dc.transpose(protos)), scale)
    ce = dc.neg(dc.mean(dc.pick(dc.log_softmax(logits, axis=1), labels)))

    cos = dc.matmul(emb, dc.transpose(emb))
    dist = dc.sub(Array(np.ones((n, n), dc.DTYPE)), cos)
    pos, neg, valid = hardest_pairs(dist.data, labels)
    parts = {"ce": float(ce.data)}
    if not valid.any():
        log.warning("batch has no anchor with both a positive and a negative; triplet term skipped")
        parts["triplet"] = 0.0
        return ce, parts
    rows = np.flatnonzero(valid)
    d = _rows(dist, rows)
    gap = dc.add(dc.sub(dc.pick(d, pos[rows]), dc.pick(d, neg[rows])), margin)
    trip = dc.mean(dc.relu(gap))
    parts["triplet"] = float(trip.data)
    return dc.add(ce, trip), parts


def _rows(x: Array, rows: np.ndarray) -> Array:
    if len(rows) == x.shape[0]:
        return x
    sel = np.zeros((len(rows), x.shape[0]), dc.DTYPE)
    sel[np.arange(len(rows)), rows] = 1.0
    return dc.matmul(Array(sel), x)


# ---------------------------------------------------------------------------- metrics

@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.impostor = np.asarray(self.impostor, dtype=np.float64).ravel()
        if not (np.isfinite(self.genuine).all() and np.isfinite(self.impostor).all()):
            raise FloatingPointError("ScoreSet: scores must be finite")


def compute_eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Candidate thresholds are the midpoints between consecutive distinct scores,
    plus one below and one above the whole range. FAR(t) counts impostors with
    score >= t, FRR(t) genuines below t. The crossing is interpolated linearly
    between the two bracketing thresholds.
    """
    g, im = scores.genuine, scores.impostor
    if len(g) == 0 or len(im) == 0:
        raise ValueError("compute_eer: genuine and impostor scores must both be nonempty")
    vals = np.unique(np.concatenate([g, im]))
    thr = np.concatenate([[vals[0] - 1.0], (vals[:-1] + vals[1:]) / 2, [vals[-1] + 1.0]])
    gs, ims = np.sort(g), np.sort(im)
    far = 1.0 - np.searchsorted(ims, thr, side="left") / len(ims)
    frr = np.searchsorted(gs, thr, side="left") / len(gs)
    d = far - frr      # nonincreasing, +1 at the first threshold and -1 at the last
    i = int(np.flatnonzero(d <= 0)[0])
    if d[i] == 0:
        return float(far[i]), float(thr[i])
    alpha = d[i - 1] / (d[i - 1] - d[i])
    eer = far[i - 1] + alpha * (far[i] - far[i - 1])
    return float(eer), float(thr[i - 1] + alpha * (thr[i] - thr[i - 1]))


def pair_scores(emb: np.ndarray, labels: np.ndarray, rng: np.random.Generator | None = None,
                full: bool = False) -> ScoreSet:
    """All same-class pairs as genuine; an equal-size seeded sample of cross-class pairs as impostor."""
    labels = np.asarray(labels)
    cos = emb.astype(np.float64) @ emb.astype(np.float64).T
    iu, ju = np.triu_indices(len(labels), k=1)
    same = labels[iu] == labels[ju]
    genuine = cos[iu[same], ju[same]]
    imp_all = cos[iu[~same], ju[~same]]
    if not full and len(imp_all) > len(genuine):
        rng = np.random.default_rng(0) if rng is None else rng
        imp_all = imp_all[np.sort(rng.choice(len(imp_all), size=len(genuine), replace=False))]
    return ScoreSet(genuine, imp_all)


def write_scores(path, scores: ScoreSet) -> None:
    lines = [f"genuine {s:.9g}" for s in scores.genuine] + [f"impostor {s:.9g}" for s in scores.impostor]
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores(path) -> ScoreSet:
    g, im = [], []
    for no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("genuine", "impostor"):
            raise ValueError(f"{path}:{no}: expected 'genuine|impostor <score>', got {line!r}")
        (g if parts[0] == "genuine" else im).append(float(parts[1]))
    return ScoreSet(g, im)


# ---------------------------------------------------------------------------- training

@dataclass
class FVRConfig:
    epochs: int = 50
    classes_per_batch: int = 8
    samples_per_class: int = 4
    lr: float = 0.02
    momentum: float = 0.9
    decay_epoch: int | None = None     # default: three quarters of the run
    scale: float = 16.0
    margin: float = 0.2
    max_rot: float = 5.0
    max_zoom: float = 1.15
    brightness: float = 0.1
    train_fraction: float = 0.5
    split: str = "sample"               # "sample" (per class) or "class"
    full_impostor: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("FVRConfig: epochs and lr must be nonnegative")
        if self.split not in ("sample", "class"):
            raise ValueError(f"FVRConfig.split must be 'sample' or 'class', got {self.split!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def conventional_augment(images: np.ndarray, rng: np.random.Generator, config: FVRConfig) -> np.ndarray:
    """Random crop-resize, small rotation and brightness jitter."""
    n, h, w = images.shape
    c = np.array([(w - 1) / 2, (h - 1) / 2])
    transforms = []
    for _ in range(n):
        theta = np.deg2rad(rng.uniform(-config.max_rot, config.max_rot))
        s = rng.uniform(1.0, config.max_zoom)
        t = rng.uniform(-1, 1, 2) * (s - 1) * np.array([w, h]) / 2
        m = s * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        transforms.append(Affine(m, c + t - m @ c))
    with dc.no_grad():
        out = warp_images(Array(images[:, None].astype(dc.DTYPE)), transforms).data[:, 0]
    gain = rng.uniform(1 - config.brightness, 1 + config.brightness, (n, 1, 1))
    bias = rng.uniform(-config.brightness / 2, config.brightness / 2, (n, 1, 1))
    return np.clip(out * gain + bias, 0.0, 1.0).astype(dc.DTYPE)


def pk_batches(labels: np.ndarray, config: FVRConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of P-classes x K-samples batches covering roughly every training image once."""
    by_cls = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    per_batch = config.classes_per_batch * config.samples_per_class
    n_batches = max(1, int(np.ceil(len(labels) / per_batch)))
    batches = []
    for _ in range(n_batches):
        cls = rng.choice(len(by_cls), size=min(config.classes_per_batch, len(by_cls)), replace=False)
        idx = [rng.choice(by_cls[c], size=config.samples_per_class, replace=len(by_cls[c]) < config.samples_per_class)
               for c in cls]
        batches.append(np.concatenate(idx))
    return batches


@dataclass
class FVRResult:
    embedder: Embedder
    prototypes: np.ndarray
    eer: float
    threshold: float
    scores: ScoreSet
    history: list = field(default_factory=list)


def init_prototypes(n_classes: int, rng: np.random.Generator, dim: int = EMBED_DIM) -> np.ndarray:
    # unit norm: the gradient through the normalization scales with 1 / norm
    p = rng.normal(size=(n_classes, dim))
    return (p / np.linalg.norm(p, axis=1, keepdims=True)).astype(dc.DTYPE)


def split_dataset(dataset: Dataset, config: FVRConfig) -> tuple[Dataset, Dataset]:
    if config.split == "sample":
        return dataset.split_per_class(config.train_fraction)
    cut = int(round(dataset.num_classes * config.train_fraction))
    train_idx = np.flatnonzero(dataset.labels < cut)
    test_idx = np.flatnonzero(dataset.labels >= cut)
    return dataset.subset(train_idx), dataset.subset(test_idx)


def evaluate(embedder: Embedder, test: Dataset, seed: int = 0, full: bool = False) -> tuple[float, float, ScoreSet]:
    emb = embed(test.images, embedder)
    scores = pair_scores(emb, test.labels, np.random.default_rng([seed, 7]), full)
    eer, thr = compute_eer(scores)
    return eer, thr, scores


def train_fvr(dataset: Dataset, augmentor=None, config: FVRConfig | None = None, log_path=None) -> FVRResult:
    """Train the embedder on the training split (optionally with MT-Aug first) and report held-out EER."""
    config = config or FVRConfig()
    if augmentor is not None and tuple(augmentor.image_shape) != tuple(dataset.image_shape):
        raise dc.ShapeError(f"train_fvr: augmentor works on {augmentor.image_shape}, dataset is {dataset.image_shape}")
    train, test = split_dataset(dataset, config)
    ss = np.random.SeedSequence([config.seed, 2])
    r_init, r_batch, r_conv, r_mt = (np.random.default_rng(s) for s in ss.spawn(4))
    embedder = Embedder(dataset.image_shape, rng=r_init)
    protos = Array(init_prototypes(train.num_classes, r_init), requires_grad=True)
    params = embedder.trainable() + [protos]
    opt = dc.SGD(params, lr=config.lr, momentum=config.momentum)
    decay = config.decay_epoch if config.decay_epoch is not None else int(0.75 * config.epochs)
    history = []
    fh = open(log_path, "w") if log_path is not None else None
    embedder.training = True
    try:
        for epoch in range(1, config.epochs + 1):
            opt.lr = config.lr * (0.1 if epoch > decay else 1.0)
            tot, cnt = 0.0, 0
            for idx in pk_batches(train.labels, config, r_batch):
                x = train.images[idx]
                if augmentor is not None:
                    x = augmentor(x, r_mt)
                x = conventional_augment(x, r_conv, config)
                opt.zero_grad()
                loss, _ = fusion_loss(embedder(Array(x[:, None])), train.labels[idx], protos,
                                      config.scale, config.margin)
                dc.backward(loss)
                opt.step()
                tot += float(loss.data) * len(idx)
                cnt += len(idx)
            history.append(tot / cnt)
            log.info("fvr epoch %d loss %.5f", epoch, tot / cnt)
            if fh is not None:
                fh.write(f"{epoch}\t{tot / cnt:.8g}\n")
    finally:
        embedder.training = False
        if fh is not None:
            fh.close()
    eer, thr, scores = evaluate(embedder, test, config.seed, config.full_impostor)
    return FVRResult(embedder, protos.data.copy(), eer, thr, scores, history)
