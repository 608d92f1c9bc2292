"""CSP backbone, SPP, PAN neck and anchor head."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..nn import Tensor, add, batch_norm2d, concat_channels, conv2d, maxpool2d, silu, upsample_nearest2x
from ..nn import checkpoint
from ..nn.tensor import DTYPE
from .spec import ModelSpec

BN_EPS = 1e-3
BN_MOMENTUM = 0.03


class Module:
    """Holds named parameters, buffers and child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for name, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self._buffers.items()}
        for name, child in self._children.items():
            out.update(child.named_buffers(f"{prefix}{name}."))
        return out


class ConvBlock(Module):
    """conv (no bias) -> batch norm -> SiLU"""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 1, s: int = 1):
        super().__init__()
        self.stride, self.pad = s, k // 2
        conv, bn = Module(), Module()
        fan_in = c_in * k * k
        conv._params["weight"] = Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), (c_out, c_in, k, k)), requires_grad=True)
        bn._params["weight"] = Tensor(np.ones(c_out), requires_grad=True)
        bn._params["bias"] = Tensor(np.zeros(c_out), requires_grad=True)
        bn._buffers["running_mean"] = np.zeros(c_out, dtype=DTYPE)
        bn._buffers["running_var"] = np.ones(c_out, dtype=DTYPE)
        self.conv = self.add_child("conv", conv)
        self.bn = self.add_child("bn", bn)
        self.c_out = c_out

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = conv2d(x, self.conv._params["weight"], None, self.stride, self.pad)
        y = batch_norm2d(
            y,
            self.bn._params["weight"],
            self.bn._params["bias"],
            self.bn._buffers["running_mean"],
            self.bn._buffers["running_var"],
            eps=BN_EPS,
            momentum=BN_MOMENTUM,
            training=training,
        )
        return silu(y)


class Bottleneck(Module):
    def __init__(self, rng, c: int, shortcut: bool = True):
        super().__init__()
        self.cv1 = self.add_child("cv1", ConvBlock(rng, c, c, 1))
        self.cv2 = self.add_child("cv2", ConvBlock(rng, c, c, 3))
        self.shortcut = shortcut

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = self.cv2(self.cv1(x, training), training)
        return add(x, y) if self.shortcut else y


class C3(Module):
    """Cross-stage-partial block: a bottleneck path and a bypass path, merged by a 1x1 conv."""

    def __init__(self, rng, c_in: int, c_out: int, n: int = 1, shortcut: bool = True):
        super().__init__()
        hidden = c_out // 2
        self.cv1 = self.add_child("cv1", ConvBlock(rng, c_in, hidden, 1))
        self.cv2 = self.add_child("cv2", ConvBlock(rng, c_in, hidden, 1))
        self.blocks = [self.add_child(f"m{i}", Bottleneck(rng, hidden, shortcut)) for i in range(n)]
        self.cv3 = self.add_child("cv3", ConvBlock(rng, 2 * hidden, c_out, 1))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = self.cv1(x, training)
        for block in self.blocks:
            y = block(y, training)
        return self.cv3(concat_channels([y, self.cv2(x, training)]), training)


class SPP(Module):
    """Spatial pyramid pooling: parallel stride-1 max-pools of growing size, concatenated."""

    def __init__(self, rng, c_in: int, c_out: int, kernels=(5, 9, 13)):
        super().__init__()
        hidden = c_in // 2
        self.kernels = kernels
        self.cv1 = self.add_child("cv1", ConvBlock(rng, c_in, hidden, 1))
        self.cv2 = self.add_child("cv2", ConvBlock(rng, hidden * (len(kernels) + 1), c_out, 1))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = self.cv1(x, training)
        pooled = [maxpool2d(y, k, 1, k // 2) for k in self.kernels]
        return self.cv2(concat_channels([y, *pooled]), training)


class Head(Module):
    """Three 1x1 convs producing 3 * (5 + num_classes) channels per scale."""

    def __init__(self, rng, spec: ModelSpec, in_channels: list[int]):
        super().__init__()
        no = spec.outputs_per_anchor
        self.names = ["p3", "p4", "p5"]
        for name, c, stride in zip(self.names, in_channels, spec.strides):
            m = self.add_child(name, Module())
            m._params["weight"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(c), (3 * no, c, 1, 1)), requires_grad=True)
            bias = np.zeros((3, no))
            # start objectness near the expected positive rate (~8 objects per image)
            bias[:, 4] = math.log(8.0 / (spec.input_size / stride) ** 2)
            bias[:, 5:] = math.log(0.6 / (spec.num_classes - 0.99))
            m._params["bias"] = Tensor(bias.reshape(-1), requires_grad=True)

    def __call__(self, feats: list[Tensor]) -> list[Tensor]:
        out = []
        for name, x in zip(self.names, feats):
            m = self._children[name]
            out.append(conv2d(x, m._params["weight"], m._params["bias"], 1, 0))
        return out


class Network(Module):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        ch = spec.channels
        c1, c2, c3, c4, c5 = ch(64), ch(128), ch(256), ch(512), ch(1024)
        bb = self.add_child("backbone", Module())
        self.stem = bb.add_child("stem", ConvBlock(rng, 3, c1, 3, 2))
        self.down1 = bb.add_child("down1", ConvBlock(rng, c1, c2, 3, 2))
        self.stage1 = bb.add_child("stage1", C3(rng, c2, c2, spec.depth(3)))
        self.down2 = bb.add_child("down2", ConvBlock(rng, c2, c3, 3, 2))
        self.stage2 = bb.add_child("stage2", C3(rng, c3, c3, spec.depth(6)))
        self.down3 = bb.add_child("down3", ConvBlock(rng, c3, c4, 3, 2))
        self.stage3 = bb.add_child("stage3", C3(rng, c4, c4, spec.depth(9)))
        self.down4 = bb.add_child("down4", ConvBlock(rng, c4, c5, 3, 2))
        self.stage4 = bb.add_child("stage4", C3(rng, c5, c5, spec.depth(3)))
        self.spp = bb.add_child("spp", SPP(rng, c5, c5))

        nk = self.add_child("neck", Module())
        n3 = spec.depth(3)
        self.lat5 = nk.add_child("lat5", ConvBlock(rng, c5, c4, 1))
        self.td4 = nk.add_child("td4", C3(rng, 2 * c4, c4, n3, shortcut=False))
        self.lat4 = nk.add_child("lat4", ConvBlock(rng, c4, c3, 1))
        self.td3 = nk.add_child("td3", C3(rng, 2 * c3, c3, n3, shortcut=False))
        self.bu3 = nk.add_child("bu3", ConvBlock(rng, c3, c3, 3, 2))
        self.out4 = nk.add_child("out4", C3(rng, 2 * c3, c4, n3, shortcut=False))
        self.bu4 = nk.add_child("bu4", ConvBlock(rng, c4, c4, 3, 2))
        self.out5 = nk.add_child("out5", C3(rng, 2 * c4, c5, n3, shortcut=False))

        self.head = self.add_child("head", Head(rng, spec, [c3, c4, c5]))

    def __call__(self, x: Tensor, training: bool) -> list[Tensor]:
        t = training
        x = self.down1(self.stem(x, t), t)
        x = self.stage1(x, t)
        p3 = self.stage2(self.down2(x, t), t)
        p4 = self.stage3(self.down3(p3, t), t)
        p5 = self.spp(self.stage4(self.down4(p4, t), t), t)

        h5 = self.lat5(p5, t)
        x = self.td4(concat_channels([upsample_nearest2x(h5), p4]), t)
        h4 = self.lat4(x, t)
        o3 = self.td3(concat_channels([upsample_nearest2x(h4), p3]), t)
        o4 = self.out4(concat_channels([self.bu3(o3, t), h4]), t)
        o5 = self.out5(concat_channels([self.bu4(o4, t), h5]), t)
        return self.head([o3, o4, o5])


class Detector:
    """A built network plus its spec; the unit that is trained, saved and run."""

    def __init__(self, spec: ModelSpec, network: Network):
        self.spec = spec
        self.network = network

    def parameters(self) -> dict[str, Tensor]:
        return dict(sorted(self.network.named_parameters().items()))

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(sorted(self.network.named_buffers().items()))

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None

    def forward(self, batch: Tensor | np.ndarray, training: bool = False) -> list[Tensor]:
        if not isinstance(batch, Tensor):
            batch = Tensor(batch)
        s = self.spec.input_size
        if batch.data.ndim != 4 or batch.shape[1] != 3 or batch.shape[2:] != (s, s):
            raise ValueError(f"expected input of shape (N, 3, {s}, {s}), got {batch.shape}")
        return self.network(batch, training)

    __call__ = forward

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: t.data for k, t in self.parameters().items()}
        state.update(self.buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params, buffers = self.parameters(), self.buffers()
        expected = set(params) | set(buffers)
        missing, unexpected = expected - set(state), set(state) - expected
        if missing or unexpected:
            raise ValueError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(unexpected)[:5]}")
        for name, t in params.items():
            if state[name].shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {state[name].shape} != model shape {t.shape}")
            t.data = np.array(state[name], dtype=DTYPE)
        for name, buf in buffers.items():
            if state[name].shape != buf.shape:
                raise ValueError(f"{name}: checkpoint shape {state[name].shape} != model shape {buf.shape}")
            buf[...] = state[name]

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.state_dict())

    def load(self, path: str | Path) -> "Detector":
        self.load_state_dict(checkpoint.load(path))
        return self


def build_model(spec: ModelSpec, seed: int = 0) -> Detector:
    spec.validate()
    rng = np.random.default_rng(seed)
    return Detector(spec, Network(spec, rng))


def load_detector(spec: ModelSpec, path: str | Path) -> Detector:
    return build_model(spec, 0).load(path)
