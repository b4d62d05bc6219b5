"""The motion-transfer model: detector, dense motion network, generator and the frozen loss features."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .densemotion import DenseMotion, DenseMotionOutput, MotionDelta
from .diffcore import Array
from .imggen import Generator
from .layers import Conv, Module
from .posedet import EPS_REG, Detector


@dataclass
class MTConfig:
    num_kp: int = 5
    image_shape: tuple = (64, 144)
    scale: float = 0.5
    det_base: int = 16
    det_max: int = 64
    dm_base: int = 16
    dm_max: int = 64
    depth: int = 3
    gen_widths: tuple = (16, 32, 64, 64)
    pyramid_widths: tuple = (8, 16, 32, 32)
    eps_reg: float = EPS_REG
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MTConfig":
        d = dict(d)
        for key in ("image_shape", "gen_widths", "pyramid_widths"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class FeaturePyramid(Module):
    """Frozen random conv pyramid used as the perceptual feature network.

    Level 0 is the image itself; level i > 0 is a stride-2 conv + ReLU of level i-1.
    """

    def __init__(self, widths=(8, 16, 32, 32), rng=None):
        super().__init__()
        cin = 1
        self.convs = []
        for i, w in enumerate(widths):
            self.convs.append(self.child(f"level{i + 1}", Conv(cin, w, stride=2, rng=rng)))
            cin = w
        self.freeze()

    def __call__(self, x: Array) -> list[Array]:
        feats = [x]
        for conv in self.convs:
            feats.append(dc.relu(conv(feats[-1])))
        return feats


class MTModel:
    def __init__(self, config: MTConfig | None = None):
        self.config = cfg = config or MTConfig()
        ss = np.random.SeedSequence(cfg.seed)
        r_det, r_dm, r_gen, r_pyr = (np.random.default_rng(s) for s in ss.spawn(4))
        self.detector = Detector(cfg.num_kp, cfg.image_shape, cfg.det_base, cfg.det_max, cfg.depth,
                                 cfg.scale, cfg.eps_reg, rng=r_det)
        self.dense = DenseMotion(cfg.num_kp, cfg.image_shape, cfg.dm_base, cfg.dm_max, cfg.depth,
                                 cfg.scale, rng=r_dm)
        self.generator = Generator(cfg.image_shape, cfg.gen_widths, rng=r_gen)
        self.pyramid = FeaturePyramid(cfg.pyramid_widths, rng=r_pyr)

    @property
    def num_kp(self) -> int:
        return self.config.num_kp

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.config.image_shape)

    def modules(self) -> dict[str, Module]:
        return {"detector": self.detector, "densemotion": self.dense,
                "generator": self.generator, "feature-pyramid": self.pyramid}

    def trainable_parameters(self) -> list[Array]:
        return self.detector.parameters() + self.dense.parameters() + self.generator.parameters()

    def num_parameters(self) -> int:
        """Parameters of the MT model proper (the frozen loss network excluded)."""
        return self.detector.num_parameters() + self.dense.num_parameters() + self.generator.num_parameters()

    def animate(self, source: Array, delta: MotionDelta) -> tuple[Array, DenseMotionOutput]:
        motion = self.dense(source, delta)
        return self.generator(source, motion.flow, motion.inpaint), motion

    def transfer(self, source: Array, driving: Array) -> dict:
        """Full forward pass: re-render ``source`` in the pose of ``driving``."""
        p_s, cov_s = self.detector(source)
        p_d, cov_d = self.detector(driving)
        delta = self.dense.delta(p_s, cov_s, p_d, cov_d)
        recon, motion = self.animate(source, delta)
        return {"recon": recon, "p_s": p_s, "cov_s": cov_s, "p_d": p_d, "cov_d": cov_d,
                "delta": delta, "motion": motion}

    def reconstruct_identity(self, images: np.ndarray) -> np.ndarray:
        """Autoencoding pass: zero motion, every image re-rendered in its own pose."""
        x = np.asarray(images, dtype=dc.DTYPE)
        if x.ndim == 2:
            x = x[None]
        src = Array(x[:, None])
        n = len(x)
        h, w = self.dense.map_shape
        with dc.no_grad():
            delta = MotionDelta(Array(np.zeros((n, self.num_kp, 2), dc.DTYPE)),
                                Array(np.zeros((n, self.num_kp, h, w), dc.DTYPE)))
            recon, _ = self.animate(src, delta)
        return recon.data[:, 0]

    # ------------------------------------------------------------------ state
    def state(self) -> dict[str, dict[str, np.ndarray]]:
        return {name: mod.state_dict() for name, mod in self.modules().items()}

    def load_state(self, sections: dict) -> None:
        for name, mod in self.modules().items():
            mod.load_state_dict(sections[name])
        self.pyramid.freeze()
