"""Q-network: conv perception module plus a fully-connected action head."""

from __future__ import annotations

import copy
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .layers import BatchNorm2D, Conv2D, Flatten, Layer, Linear, MaxPool2D, ReLU

N_ACTIONS = 7
CHECKPOINT_VERSION = 1


class QNetwork:
    """conv5x5x16/2 - pool - conv3x3x32 - pool - conv3x3x64 - pool - conv1x1x1 - fc(7).

    Each convolution is followed by batch normalisation and ReLU. With a
    64x64 input the 1x1 layer emits a 4x4 map, so the action head sees a
    16-dimensional feature vector.
    """

    def __init__(self, height: int = 64, width: int = 64, in_channels: int = 2,
                 n_actions: int = N_ACTIONS, seed: int = 0, dtype=np.float32,
                 input_scale: float = 1.0 / 16, zero_head: bool = False,
                 channels: Tuple[int, int, int] = (16, 32, 64)):
        self.height, self.width, self.in_channels = height, width, in_channels
        self.n_actions = n_actions
        self.input_scale = input_scale
        self.dtype = np.dtype(dtype)
        self.channels = tuple(channels)
        rng = np.random.default_rng(seed)
        c1, c2, c3 = channels
        spec: List[Tuple[str, Layer]] = [
            ("conv1", Conv2D(in_channels, c1, 5, 2, rng, dtype)), ("bn1", BatchNorm2D(c1, dtype=dtype)),
            ("relu1", ReLU()), ("pool1", MaxPool2D()),
            ("conv2", Conv2D(c1, c2, 3, 1, rng, dtype)), ("bn2", BatchNorm2D(c2, dtype=dtype)),
            ("relu2", ReLU()), ("pool2", MaxPool2D()),
            ("conv3", Conv2D(c2, c3, 3, 1, rng, dtype)), ("bn3", BatchNorm2D(c3, dtype=dtype)),
            ("relu3", ReLU()), ("pool3", MaxPool2D()),
            ("conv4", Conv2D(c3, 1, 1, 1, rng, dtype)), ("bn4", BatchNorm2D(1, dtype=dtype)),
            ("relu4", ReLU()), ("flatten", Flatten()),
        ]
        self.feature_shape = self._feature_shape()
        self.feature_length = int(np.prod(self.feature_shape))
        if self.feature_length == 0:
            raise ValueError(f"input {height}x{width} is too small for this architecture")
        spec[0][1].input_grad = False
        spec.append(("fc", Linear(self.feature_length, n_actions, rng, dtype, zero_init=zero_head)))
        self.layers = spec

    def _feature_shape(self) -> Tuple[int, int]:
        h, w = self.height, self.width
        h, w = (h + 4 - 5) // 2 + 1, (w + 4 - 5) // 2 + 1
        for _ in range(3):
            h, w = h // 2, w // 2
        return h, w

    # --- parameters -------------------------------------------------------

    def named_params(self) -> Dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.params.items()}

    def named_grads(self) -> Dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.grads.items()}

    def named_buffers(self) -> Dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.buffers.items()}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in {**self.named_params(), **self.named_buffers()}.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for n, layer in self.layers:
            for store in (layer.params, layer.buffers):
                for k in store:
                    arr = np.asarray(state[f"{n}.{k}"], dtype=self.dtype)
                    if arr.shape != store[k].shape:
                        raise ValueError(f"shape mismatch for {n}.{k}: {arr.shape} vs {store[k].shape}")
                    store[k] = arr.copy()

    def zero_grad(self):
        for _, layer in self.layers:
            layer.zero_grad()

    def clone(self) -> "QNetwork":
        return copy.deepcopy(self)

    def layer(self, name: str) -> Layer:
        return dict(self.layers)[name]

    # --- passes -----------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1:] != (self.in_channels, self.height, self.width):
            raise ValueError(f"input shape {x.shape[1:]} does not match network "
                             f"{(self.in_channels, self.height, self.width)}")
        h = x.astype(self.dtype) * self.dtype.type(self.input_scale)
        for _, layer in self.layers:
            h = layer.forward(h, train)
        return h[0] if single else h

    def backward(self, grad_q: np.ndarray) -> None:
        g = grad_q.astype(self.dtype)
        for _, layer in reversed(self.layers):
            g = layer.backward(g)

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.forward(obs, train=False)

    # --- checkpoints ------------------------------------------------------

    def config_vector(self) -> np.ndarray:
        return np.array([self.in_channels, self.height, self.width, self.n_actions,
                         self.input_scale, *self.channels], dtype=np.float32)

    def save(self, path) -> None:
        Path(path).write_bytes(dump_checkpoint(self))

    @classmethod
    def load(cls, path) -> "QNetwork":
        return load_checkpoint(Path(path).read_bytes())


def act_greedy(q: np.ndarray) -> int:
    """Index of the largest Q-value; ties go to the lowest index."""
    return int(np.argmax(np.asarray(q)))


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    nb = name.encode()
    head = struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def dump_checkpoint(net: QNetwork) -> bytes:
    parts = [b"QNET", struct.pack("<I", CHECKPOINT_VERSION),
             _pack_entry("__config__", net.config_vector())]
    for name, arr in net.state_dict().items():
        parts.append(_pack_entry(name, arr))
    return b"".join(parts)


def load_checkpoint(data: bytes) -> QNetwork:
    if data[:4] != b"QNET":
        raise ValueError("not a Q-network checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 8
    entries: Dict[str, np.ndarray] = {}
    while off < len(data):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + n].decode()
        off += n
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        entries[name] = np.frombuffer(data, "<f4", count, off).reshape(shape).copy()
        off += 4 * count
    cfg = entries.pop("__config__")
    c, h, w, a = (int(v) for v in cfg[:4])
    net = QNetwork(h, w, c, a, input_scale=float(cfg[4]),
                   channels=tuple(int(v) for v in cfg[5:8]))
    net.load_state_dict(entries)
    return net
