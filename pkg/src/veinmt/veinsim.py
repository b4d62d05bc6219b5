"""Procedural finger-vein images with controlled pose and exact ground-truth motion.

A template is a continuous canonical finger: a bright cylinder-like body on a
dark background with dark Gaussian-profile vein ridges along random cubic
splines. Rendering evaluates the template at the inverse-posed coordinate of
every output pixel, so translated and rotated renders are exact resamplings
of the canonical one. Rolling about the finger axis moves surface points
across the finger as on a rigid cylinder.

Ground-truth flow is defined on the posed pixel grid as ``flow(y) = y - q``
where ``q`` is the canonical point seen at ``y``; i.e. ``posed(y) ~= canon(y - flow(y))``.
"""
from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .data import Dataset

log = logging.getLogger(__name__)

H, W = 64, 144
NOISE_SIGMA = 0.01
MAX_ROLL = 40.0
BORDER = 2.0


@dataclass
class VeinCurve:
    points: np.ndarray   # (M, 2) canonical (x, v) samples, v in units of the local radius
    width: float         # Gaussian sigma of the ridge, px
    depth: float         # fractional darkening at the ridge centre


@dataclass
class VeinTemplate:
    seed: int
    curves: list[VeinCurve]
    center_y: float
    radius: float
    radius_wobble: float
    wobble_phase: float
    brightness: float
    background: float
    falloff: float
    shape: tuple = (H, W)

    def radius_at(self, x: np.ndarray) -> np.ndarray:
        return self.radius * (1.0 + self.radius_wobble * np.sin(2 * np.pi * x / 180.0 + self.wobble_phase))


@dataclass
class Pose:
    tx: float = 0.0
    ty: float = 0.0
    rot: float = 0.0    # degrees, in-plane
    roll: float = 0.0   # degrees, about the finger axis

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.tx, self.ty, self.rot, self.roll)


@dataclass
class PoseRange:
    """Symmetric sampling bounds: each pose field is drawn uniformly from [-bound, bound]."""
    tx: float = 6.0
    ty: float = 3.0
    rot: float = 2.0
    roll: float = 20.0

    def sample(self, rng: np.random.Generator) -> Pose:
        return Pose(*(float(rng.uniform(-b, b)) if b > 0 else 0.0 for b in (self.tx, self.ty, self.rot, self.roll)))


def make_template(seed: int, shape=(H, W)) -> VeinTemplate:
    rng = np.random.default_rng(seed)
    h, w = shape
    radius = rng.uniform(19.0, 22.0) * h / H
    tmpl = VeinTemplate(
        seed=seed,
        curves=[],
        center_y=(h - 1) / 2 + rng.uniform(-1.0, 1.0),
        radius=radius,
        radius_wobble=rng.uniform(0.02, 0.06),
        wobble_phase=rng.uniform(0, 2 * np.pi),
        brightness=rng.uniform(0.62, 0.78),
        background=rng.uniform(0.05, 0.10),
        falloff=rng.uniform(0.15, 0.35),
        shape=tuple(shape),
    )
    for _ in range(int(rng.integers(3, 8))):
        # curves are longitudinal-ish y(x) splines that may start/end inside the finger
        x0 = rng.uniform(-20, w * 0.5)
        x1 = rng.uniform(max(x0 + 50, w * 0.5), w + 20)
        n_ctrl = int(rng.integers(4, 7))
        xs = np.linspace(x0, x1, n_ctrl)
        v = np.clip(np.cumsum(rng.normal(0, 0.25, n_ctrl)) + rng.uniform(-0.5, 0.5), -0.75, 0.75)
        spline = CubicSpline(xs, v)
        xx = np.arange(x0, x1, 0.5)
        vv = np.clip(spline(xx), -0.8, 0.8)
        tmpl.curves.append(VeinCurve(np.stack([xx, vv], 1), float(rng.uniform(1.5, 4.0)),
                                     float(rng.uniform(0.25, 0.5))))
    return tmpl


def _check_pose(tmpl: VeinTemplate, pose: Pose) -> None:
    if abs(pose.roll) > MAX_ROLL:
        raise ValueError(f"pose roll {pose.roll} outside +-{MAX_ROLL} deg")
    h, w = tmpl.shape
    c = np.array([(w - 1) / 2, (h - 1) / 2])
    th = np.deg2rad(pose.rot)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    xs = np.linspace(-40, w + 40, 400)
    r = tmpl.radius_at(xs)
    for side in (-1, 1):
        edge = np.stack([xs, tmpl.center_y + side * r], 1)
        posed = (edge - c) @ rot.T + c + np.array([pose.tx, pose.ty])
        vis = (posed[:, 0] >= 0) & (posed[:, 0] <= w - 1)
        ys = posed[vis, 1]
        if ys.size and (ys.min() < BORDER or ys.max() > h - 1 - BORDER):
            raise ValueError(f"pose {pose} moves the finger within {BORDER} px of the image border")


def _inverse_rigid(tmpl: VeinTemplate, pose: Pose, px: np.ndarray, py: np.ndarray):
    h, w = tmpl.shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    th = np.deg2rad(pose.rot)
    dx = px - cx - pose.tx
    dy = py - cy - pose.ty
    qx = np.cos(th) * dx + np.sin(th) * dy + cx
    qy = -np.sin(th) * dx + np.cos(th) * dy + cy
    return qx, qy


def _vein_darkening(tmpl: VeinTemplate, qx: np.ndarray, v: np.ndarray, r: np.ndarray) -> np.ndarray:
    dark = np.zeros(qx.shape)
    pts = np.stack([qx.ravel(), (tmpl.center_y + r * v).ravel()], 1)
    for curve in tmpl.curves:
        cx = curve.points[:, 0]
        cy = tmpl.center_y + tmpl.radius_at(cx) * curve.points[:, 1]
        d, _ = cKDTree(np.stack([cx, cy], 1)).query(pts)
        dark = np.maximum(dark, (curve.depth * np.exp(-0.5 * (d / curve.width) ** 2)).reshape(qx.shape))
    return dark


def render(tmpl: VeinTemplate, pose: Pose, noise_rng: np.random.Generator | None = None,
           noise: float = NOISE_SIGMA) -> tuple[np.ndarray, np.ndarray]:
    """Image (H, W) in [0, 1] and ground-truth flow (2, H, W) relative to the canonical pose.

    Pass ``noise_rng=None`` for a noiseless render.
    """
    _check_pose(tmpl, pose)
    h, w = tmpl.shape
    py, px = np.mgrid[0:h, 0:w].astype(np.float64)
    qx, qy = _inverse_rigid(tmpl, pose, px, py)
    r = tmpl.radius_at(qx)
    v = (qy - tmpl.center_y) / r
    inside = np.abs(v) < 1.0
    # roll: the surface point seen at angle asin(v) sat at asin(v) - roll in the canonical pose
    ang = np.arcsin(np.clip(v, -1.0, 1.0)) - np.deg2rad(pose.roll)
    vc = np.where(inside, np.sin(np.clip(ang, -np.pi / 2, np.pi / 2)), v)
    qcy = tmpl.center_y + r * vc

    edge = np.clip((1.0 - np.abs(v)) * r / 2.0, 0.0, 1.0)      # ~2 px soft silhouette edge
    profile = 0.7 + 0.3 * np.sqrt(np.clip(1.0 - v ** 2, 0.0, 1.0))
    longi = 1.0 - tmpl.falloff * ((qx - (w - 1) / 2) / (w / 2)) ** 2
    body = tmpl.brightness * profile * longi
    veins = _vein_darkening(tmpl, qx, vc, r) * inside
    img = tmpl.background + edge * (body * (1.0 - veins) - tmpl.background)
    if noise_rng is not None and noise > 0:
        img = img + noise_rng.normal(0.0, noise, img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    flow = np.stack([px - qx, py - qcy]).astype(np.float32)
    return img, flow


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(np.float64).ravel() - a.mean()
    b = b.astype(np.float64).ravel() - b.mean()
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))


@dataclass
class SynthSample:
    class_id: str
    sample_id: str
    pose: Pose
    image: np.ndarray
    flow: np.ndarray


@dataclass
class SynthDataset:
    samples: list[SynthSample] = field(default_factory=list)

    def to_dataset(self, paths: list[str] | None = None) -> Dataset:
        class_ids = sorted({s.class_id for s in self.samples})
        index = {c: i for i, c in enumerate(class_ids)}
        return Dataset(np.stack([s.image for s in self.samples]),
                       np.array([index[s.class_id] for s in self.samples]),
                       class_ids, [s.sample_id for s in self.samples], paths or [])


def synthesize(n_classes: int, n_samples: int, pose_ranges: PoseRange | None = None, seed: int = 0,
               test_pose_ranges: PoseRange | None = None, shape=(H, W)) -> SynthDataset:
    """In-memory dataset; with ``test_pose_ranges`` the second half of each class uses those bounds."""
    if n_classes < 2 or n_samples < 2:
        raise ValueError(f"need n_classes >= 2 and n_samples >= 2, got {n_classes}, {n_samples}")
    pose_ranges = pose_ranges or PoseRange()
    out = SynthDataset()
    for ci, child in enumerate(np.random.SeedSequence(seed).spawn(n_classes)):
        t_seed, p_seed, n_seed = child.generate_state(3)
        tmpl = make_template(int(t_seed), shape)
        prng = np.random.default_rng(p_seed)
        nrng = np.random.default_rng(n_seed)
        for si in range(n_samples):
            bounds = test_pose_ranges if (test_pose_ranges is not None and si >= (n_samples + 1) // 2) else pose_ranges
            for _ in range(100):
                pose = bounds.sample(prng)
                try:
                    img, flow = render(tmpl, pose, nrng)
                    break
                except ValueError:
                    continue
            else:
                raise RuntimeError(f"could not sample an in-bounds pose for class {ci}")
            out.samples.append(SynthSample(f"c{ci:03d}", f"s{si:02d}", pose, img, flow))
    return out


def save_png(path: Path, img: np.ndarray) -> None:
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8), mode="L").save(path, format="PNG")


def gen_dataset(root, n_classes: int, n_samples: int, pose_ranges: PoseRange | None = None, seed: int = 0,
                overwrite: bool = False, test_pose_ranges: PoseRange | None = None) -> Dataset:
    """Write ``<root>/<class_id>/<sample_id>.png`` plus ``manifest.txt`` and ``flows.npy``."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not overwrite:
            raise FileExistsError(f"{root} exists and is not empty (use overwrite)")
        shutil.rmtree(root)
    synth = synthesize(n_classes, n_samples, pose_ranges, seed, test_pose_ranges)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    paths = []
    for s in synth.samples:
        d = root / s.class_id
        d.mkdir(exist_ok=True)
        path = d / f"{s.sample_id}.png"
        save_png(path, s.image)
        paths.append(str(path))
        lines.append(f"{s.class_id} {s.sample_id} " + " ".join(f"{v:.4f}" for v in s.pose.as_tuple()) + "\n")
    (root / "manifest.txt").write_text("".join(lines))
    # flows stacked in manifest order (npz would embed timestamps)
    np.save(root / "flows.npy", np.stack([s.flow for s in synth.samples]))
    # images as stored on disk (8-bit quantized)
    ds = synth.to_dataset(paths)
    ds.images = np.round(np.clip(ds.images, 0, 1) * 255).astype(np.float32) / 255.0
    return ds


def read_manifest(root) -> list[tuple[str, str, Pose]]:
    out = []
    for line in (Path(root) / "manifest.txt").read_text().splitlines():
        if line.strip():
            c, s, *vals = line.split()
            out.append((c, s, Pose(*map(float, vals))))
    return out
