"""The 7-block all-convolutional 3D network.

Each block is conv(3, stride 1) -> dropout -> BN -> ReLU -> conv(3, stride 2)
-> dropout -> BN -> ReLU. The head global-average-pools the last block and
maps it affinely to two logits followed by softmax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FeatureMismatch, ShapeMismatch
from ..rng import substream
from . import layers as L

CHANNELS = (16, 32, 32, 64, 64, 32, 16)
N_CLASSES = 2


@dataclass(frozen=True)
class ArchDescriptor:
    channels: tuple = CHANNELS
    in_channels: int = 1
    kernel: int = 3
    n_classes: int = N_CLASSES

    def layer_specs(self):
        """(name, in_ch, out_ch, stride) for every conv layer in order."""
        specs = []
        cin = self.in_channels
        for i, cout in enumerate(self.channels):
            specs.append((f"b{i}.conv1", cin, cout, 1))
            specs.append((f"b{i}.conv2", cout, cout, 2))
            cin = cout
        return specs


def param_names(arch: ArchDescriptor):
    """Trainable parameter names in serialization order."""
    names = []
    for name, _, _, _ in arch.layer_specs():
        bn = name.replace("conv", "bn")
        names += [f"{name}.w", f"{name}.b", f"{bn}.gamma", f"{bn}.beta"]
    names += ["head.w", "head.b"]
    return names


def state_names(arch: ArchDescriptor):
    names = []
    for name, _, _, _ in arch.layer_specs():
        bn = name.replace("conv", "bn")
        names += [f"{bn}.mean", f"{bn}.var"]
    return names


@dataclass
class CnnModel:
    arch: ArchDescriptor
    params: dict
    state: dict
    dtype: np.dtype = np.float32
    dropout_rate: float = 0.2
    bn_momentum: float = 0.99
    input_mean: float = 0.0
    input_std: float = 1.0
    meta: dict = field(default_factory=dict)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "CnnModel":
        return CnnModel(self.arch, {k: v.copy() for k, v in self.params.items()},
                        {k: v.copy() for k, v in self.state.items()}, self.dtype, self.dropout_rate,
                        self.bn_momentum, self.input_mean, self.input_std, dict(self.meta))

    def astype(self, dtype) -> "CnnModel":
        m = self.copy()
        m.dtype = np.dtype(dtype)
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        m.state = {k: v.astype(dtype) for k, v in m.state.items()}
        return m


def build_model(seed: int = 0, arch: ArchDescriptor | None = None, dtype=np.float32,
                dropout_rate: float = 0.2, bn_momentum: float = 0.99) -> CnnModel:
    """He-scaled Gaussian kernels, zero biases, BN scale 1 and shift 0."""
    arch = arch or ArchDescriptor()
    rng = substream(seed, "init")
    params, state = {}, {}
    for name, cin, cout, _ in arch.layer_specs():
        fan_in = cin * 27
        params[f"{name}.w"] = (rng.standard_normal((cout, cin, 3, 3, 3)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"{name}.b"] = np.zeros(cout, dtype=dtype)
        bn = name.replace("conv", "bn")
        params[f"{bn}.gamma"] = np.ones(cout, dtype=dtype)
        params[f"{bn}.beta"] = np.zeros(cout, dtype=dtype)
        state[f"{bn}.mean"] = np.zeros(cout, dtype=dtype)
        state[f"{bn}.var"] = np.ones(cout, dtype=dtype)
    cin = arch.channels[-1]
    params["head.w"] = (rng.standard_normal((cin, arch.n_classes)) * np.sqrt(2.0 / cin)).astype(dtype)
    params["head.b"] = np.zeros(arch.n_classes, dtype=dtype)
    return CnnModel(arch, params, state, np.dtype(dtype), dropout_rate, bn_momentum)


def prepare_input(model: CnnModel, volumes) -> np.ndarray:
    """Stack volumes to (N, X, Y, Z, 1) and apply the stored input standardization."""
    x = np.asarray(volumes, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N, X, Y, Z) volumes, got shape {x.shape}")
    x = (x - model.input_mean) / model.input_std
    return x[..., None].astype(model.dtype)


def forward(model: CnnModel, x, training: bool = False, step: int = 0, seed: int = 0, keep_cache: bool = True):
    """Run the network on prepared input ``x``; returns (probs, logits, cache)."""
    p = model.params
    caches = []
    h = x
    for li, (name, _, _, stride) in enumerate(model.arch.layer_specs()):
        bn = name.replace("conv", "bn")
        h, conv_cache = L.conv_forward(h, p[f"{name}.w"], p[f"{name}.b"], stride)
        rng = substream(seed, "dropout", step, li) if training and model.dropout_rate > 0 else None
        h, drop_mask = L.dropout_forward(h, model.dropout_rate, training, rng)
        h, bn_cache = L.batchnorm_forward(h, p[f"{bn}.gamma"], p[f"{bn}.beta"], model.state[f"{bn}.mean"],
                                          model.state[f"{bn}.var"], training, model.bn_momentum)
        pre = h
        h = np.maximum(h, 0)
        if keep_cache:
            caches.append((conv_cache, drop_mask, bn_cache, pre))
    probs, logits, pooled = L.head_forward(h, p["head.w"], p["head.b"])
    return probs, logits, (caches, h, pooled)


def backward(model: CnnModel, dlogits, cache, guided: bool = False, need_input_grad: bool = False):
    """Reverse pass from logit gradients. Returns (param grads, input grad or None)."""
    caches, feat, pooled = cache
    p = model.params
    dlogits = np.asarray(dlogits, dtype=model.dtype)
    grads = {
        "head.w": pooled.T @ dlogits,
        "head.b": dlogits.sum(axis=0),
    }
    dh = L.global_avg_pool_backward(dlogits @ p["head.w"].T, feat.shape)
    specs = model.arch.layer_specs()
    for li in range(len(specs) - 1, -1, -1):
        name = specs[li][0]
        bn = name.replace("conv", "bn")
        conv_cache, drop_mask, bn_cache, pre = caches[li]
        dh = L.relu_backward(dh, pre, guided=guided)
        dh, grads[f"{bn}.gamma"], grads[f"{bn}.beta"] = L.batchnorm_backward(dh, bn_cache)
        dh = L.dropout_backward(dh, drop_mask)
        need_dx = li > 0 or need_input_grad
        dh, grads[f"{name}.w"], grads[f"{name}.b"] = L.conv_backward(dh, conv_cache, p[f"{name}.w"], need_dx)
    return grads, dh


def loss_and_grads(model: CnnModel, x, targets, training=True, step=0, seed=0):
    probs, logits, cache = forward(model, x, training, step, seed)
    loss = L.bce_loss(probs, targets)
    dprobs = L.bce_backward(probs, targets)
    dlogits = L.softmax_backward(dprobs, probs)
    grads, _ = backward(model, dlogits, cache)
    return loss, grads, probs


def predict(model: CnnModel, volumes, batch_size: int = 8) -> np.ndarray:
    """Class-1 softmax probability per volume in inference mode."""
    x = prepare_input(model, volumes)
    out = []
    for start in range(0, x.shape[0], batch_size):
        probs, _, _ = forward(model, x[start:start + batch_size], training=False, keep_cache=False)
        out.append(probs[:, 1])
    return np.concatenate(out)


# -- serialization ----------------------------------------------------------------

def _pair(path):
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def save_cnn(model: CnnModel, path) -> None:
    header_path, raw_path = _pair(path)
    order = param_names(model.arch) + state_names(model.arch)
    arrays = {**model.params, **model.state}
    header = {
        "kind": "cnn",
        "architecture": {
            "channels": list(model.arch.channels),
            "in_channels": model.arch.in_channels,
            "kernel": model.arch.kernel,
            "n_classes": model.arch.n_classes,
            "block": ["conv3_s1", "dropout", "batchnorm", "relu", "conv3_s2", "dropout", "batchnorm", "relu"],
            "head": ["global_avg_pool", "affine", "softmax"],
        },
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in order],
        "dropout_rate": model.dropout_rate,
        "bn_momentum": model.bn_momentum,
        "input_mean": model.input_mean,
        "input_std": model.input_std,
        "meta": model.meta,
    }
    payload = b"".join(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes() for n in order)
    raw_path.write_bytes(payload)
    header_path.write_text(json.dumps(header, sort_keys=True) + "\n")


def load_cnn(path) -> CnnModel:
    header_path, raw_path = _pair(path)
    header = json.loads(header_path.read_text())
    if header.get("kind") != "cnn":
        raise FeatureMismatch(f"{header_path} is not a CNN model")
    a = header["architecture"]
    arch = ArchDescriptor(tuple(a["channels"]), a["in_channels"], a["kernel"], a["n_classes"])
    flat = np.frombuffer(raw_path.read_bytes(), dtype="<f4").astype(np.float32)
    arrays, pos = {}, 0
    for t in header["tensors"]:
        size = int(np.prod(t["shape"]))
        arrays[t["name"]] = flat[pos:pos + size].reshape(t["shape"]).copy()
        pos += size
    if pos != flat.size:
        raise FeatureMismatch(f"{raw_path}: payload length does not match the tensor list")
    params = {n: arrays[n] for n in param_names(arch)}
    state = {n: arrays[n] for n in state_names(arch)}
    return CnnModel(arch, params, state, np.dtype(np.float32), header["dropout_rate"], header["bn_momentum"],
                    header["input_mean"], header["input_std"], header.get("meta", {}))
