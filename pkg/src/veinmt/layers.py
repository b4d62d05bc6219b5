"""Parameter containers and the conv building blocks shared by the networks."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import diffcore as dc
from .diffcore import Array


class Module:
    """Ordered registry of parameters and child modules."""

    def __init__(self):
        self._params: "OrderedDict[str, Array]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def param(self, name: str, data: np.ndarray, trainable: bool = True) -> Array:
        a = Array(data, requires_grad=trainable)
        self._params[name] = a
        return a

    def child(self, name: str, mod: "Module") -> "Module":
        self._children[name] = mod
        return mod

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Array]]:
        out = [(prefix + k, v) for k, v in self._params.items()]
        for name, mod in self._children.items():
            out.extend(mod.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Array]:
        return [a for _, a in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.parameters()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters())

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, a in own.items():
            if state[k].shape != a.shape:
                raise dc.ShapeError(f"{k}: stored shape {state[k].shape} != model shape {a.shape}")
            a.data = np.array(state[k], dtype=dc.DTYPE, copy=True)

    def freeze(self) -> None:
        for a in self.parameters():
            a.requires_grad = False

    def zero_grad(self) -> None:
        for a in self.parameters():
            a.grad = None


class Conv(Module):
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, rng=None, gain: float = 2.0):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        std = np.sqrt(gain / (cin * k * k))
        self.weight = self.param("weight", rng.normal(0.0, std, (cout, cin, k, k)))
        self.bias = self.param("bias", np.zeros(cout))
        self.stride = stride

    def __call__(self, x: Array) -> Array:
        return dc.conv2d(x, self.weight, self.bias, stride=self.stride, padding="same")


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = self.param("weight", rng.normal(0.0, np.sqrt(1.0 / cin), (cin, cout)))
        self.bias = self.param("bias", np.zeros(cout))

    def __call__(self, x: Array) -> Array:
        y = dc.matmul(x, self.weight)
        return dc.add(y, dc.expand(self.bias, y.shape))


def channel_widths(base: int, max_ch: int, depth: int) -> list[int]:
    return [min(max_ch, base * 2 ** i) for i in range(depth)]


class Hourglass(Module):
    """U-shaped encoder/decoder with skip connections.

    Encoder block i: conv3x3 + ReLU then 2x average pool. Decoder block:
    conv3x3 + ReLU at the coarse level, bilinear 2x upsample, concat with the
    matching encoder feature. Output has ``widths[0] + in_ch`` channels at the
    input resolution; spatial dims must be divisible by ``2**depth``.
    """

    def __init__(self, in_ch: int, base: int = 16, max_ch: int = 64, depth: int = 3, rng=None):
        super().__init__()
        self.depth = depth
        widths = channel_widths(base, max_ch, depth)
        self.down = []
        cin = in_ch
        for i, w in enumerate(widths):
            self.down.append(self.child(f"down{i}", Conv(cin, w, rng=rng)))
            cin = w
        # decoder mirrors the encoder; skip i has widths[i-1] (or in_ch) channels
        self.up = []
        skips = [in_ch] + widths[:-1]
        cur = widths[-1]
        for i in reversed(range(depth)):
            out = widths[i - 1] if i > 0 else widths[0]
            self.up.append(self.child(f"up{i}", Conv(cur, out, rng=rng)))
            cur = out + skips[i]
        self.out_channels = cur

    def __call__(self, x: Array) -> Array:
        h, w = x.shape[-2:]
        if h % 2 ** self.depth or w % 2 ** self.depth:
            raise dc.ShapeError(f"Hourglass: input {h}x{w} not divisible by {2 ** self.depth}")
        feats = [x]
        cur = x
        for conv in self.down:
            cur = dc.down2_avg(dc.relu(conv(cur)))
            feats.append(cur)
        cur = feats.pop()
        for conv in self.up:
            cur = dc.up2_bilinear(dc.relu(conv(cur)))
            cur = dc.concat([cur, feats.pop()], axis=1)
        return cur
