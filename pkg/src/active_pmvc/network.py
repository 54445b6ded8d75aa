"""View-specific MLP autoencoders with hand-written backprop (float64 throughout)."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataio import MultiViewDataset
from .graph import RelationGraph

CHECKPOINT_FORMAT = "active-pmvc-checkpoint"
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("relu", "sigmoid", "linear")


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dims: Tuple[int, ...]
    latent_dim: int
    hidden: Tuple[int, ...] = (256, 64)
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for a in (self.hidden_activation, self.output_activation):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    def encoder_widths(self, v: int) -> List[int]:
        return [self.input_dims[v], *self.hidden, self.latent_dim]

    def decoder_widths(self, v: int) -> List[int]:
        return [self.latent_dim, *reversed(self.hidden), self.input_dims[v]]

    def encoder_activations(self) -> List[str]:
        return [self.hidden_activation] * len(self.hidden) + ["linear"]

    def decoder_activations(self) -> List[str]:
        return [self.hidden_activation] * len(self.hidden) + [self.output_activation]


class AutoencoderParams:
    """Weights ``W`` (fan_in x fan_out) and biases per layer, per view."""

    def __init__(self, spec: ArchitectureSpec, encoders, decoders):
        self.spec = spec
        self.encoders: List[List[List[np.ndarray]]] = encoders
        self.decoders: List[List[List[np.ndarray]]] = decoders

    @property
    def n_views(self) -> int:
        return len(self.encoders)

    def arrays(self) -> List[np.ndarray]:
        """All tensors in a fixed order; views, then encoder before decoder, W before b."""
        out = []
        for enc, dec in zip(self.encoders, self.decoders):
            for layer in enc + dec:
                out.extend(layer)
        return out

    def names(self) -> List[str]:
        out = []
        for v, (enc, dec) in enumerate(zip(self.encoders, self.decoders)):
            for part, layers in (("enc", enc), ("dec", dec)):
                for l in range(len(layers)):
                    out += [f"v{v}.{part}{l}.W", f"v{v}.{part}{l}.b"]
        return out

    def copy(self) -> "AutoencoderParams":
        dup = lambda nets: [[[a.copy() for a in layer] for layer in net] for net in nets]
        return AutoencoderParams(self.spec, dup(self.encoders), dup(self.decoders))

    def zeros_like(self) -> List[np.ndarray]:
        return [np.zeros_like(a) for a in self.arrays()]


def init_params(spec: ArchitectureSpec, seed: int) -> AutoencoderParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)

    def net(widths):
        layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append([rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)])
        return layers

    encoders, decoders = [], []
    for v in range(len(spec.input_dims)):
        encoders.append(net(spec.encoder_widths(v)))
        decoders.append(net(spec.decoder_widths(v)))
    return AutoencoderParams(spec, encoders, decoders)


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    return a


def _activate_grad(out: np.ndarray, pre: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return pre > 0
    if kind == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(pre)


def mlp_forward(layers, acts: Sequence[str], x: np.ndarray):
    """Return the output and a cache of (input, pre-activation, output) per layer."""
    cache = []
    h = x
    for (w, b), kind in zip(layers, acts):
        pre = h @ w + b
        out = _activate(pre, kind)
        cache.append((h, pre, out))
        h = out
    return h, cache


def mlp_backward(layers, acts: Sequence[str], cache, dout: np.ndarray):
    """Gradients ``[[dW, db], ...]`` and the gradient w.r.t. the input."""
    grads = [None] * len(layers)
    g = dout
    for l in range(len(layers) - 1, -1, -1):
        h, pre, out = cache[l]
        g = g * _activate_grad(out, pre, acts[l])
        grads[l] = [h.T @ g, g.sum(axis=0)]
        g = g @ layers[l][0].T
    return grads, g


def _check_dim(x: np.ndarray, d: int) -> None:
    if x.shape[-1] != d:
        raise ValueError(f"expected input dimension {d}, got {x.shape[-1]}")


def encode(params: AutoencoderParams, v: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_dim(x, params.spec.input_dims[v])
    z, _ = mlp_forward(params.encoders[v], params.spec.encoder_activations(), np.atleast_2d(x))
    return z[0] if x.ndim == 1 else z


def decode(params: AutoencoderParams, v: int, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    _check_dim(z, params.spec.latent_dim)
    xh, _ = mlp_forward(params.decoders[v], params.spec.decoder_activations(), np.atleast_2d(z))
    return xh[0] if z.ndim == 1 else xh


def surrogate_input(ds: MultiViewDataset, graph: RelationGraph, v: int, i: int) -> np.ndarray:
    if ds.mask[i, v]:
        raise ValueError(f"sample {i} is available in view {v}")
    nb = graph.neighbor_list(v, i)
    if nb.size == 0:
        raise ValueError(f"sample {i} has an empty transferred graph in view {v}")
    return ds.views[v][nb].mean(axis=0)


def surrogate_inputs(ds: MultiViewDataset, graph: RelationGraph) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Encoder inputs for every (sample, view) and the reconstruction offsets.

    Missing rows get the mean of their transferred neighbours. The offset of a
    missing row is the mean squared distance of those neighbours to that mean,
    so that the averaged reconstruction loss equals ``|xhat - mean|^2 + offset``.
    """
    inputs, offsets = [], []
    for v, x in enumerate(ds.views):
        filled = x.copy()
        off = np.zeros(ds.n_samples)
        for i in np.flatnonzero(~ds.available(v)):
            nb = x[graph.neighbor_list(v, i)]
            mu = nb.mean(axis=0)
            filled[i] = mu
            off[i] = ((nb - mu) ** 2).sum(axis=1).mean()
        inputs.append(filled)
        offsets.append(off)
    return inputs, offsets


def encode_all(params: AutoencoderParams, inputs: Sequence[np.ndarray]) -> List[np.ndarray]:
    return [encode(params, v, x) for v, x in enumerate(inputs)]


def save_checkpoint(path: str, params: AutoencoderParams, extra: Optional[Dict[str, np.ndarray]] = None,
                    meta: Optional[Dict[str, str]] = None) -> None:
    """Write ``manifest.txt`` (format, version, architecture, tensor shapes) and ``tensors.npz``."""
    os.makedirs(path, exist_ok=True)
    tensors = dict(zip(params.names(), params.arrays()))
    for key, arr in (extra or {}).items():
        tensors[f"extra.{key}"] = np.asarray(arr)
    spec = params.spec
    with open(os.path.join(path, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write(f"format={CHECKPOINT_FORMAT}\nversion={CHECKPOINT_VERSION}\n")
        f.write("input_dims=" + ",".join(map(str, spec.input_dims)) + "\n")
        f.write(f"latent_dim={spec.latent_dim}\n")
        f.write("hidden=" + ",".join(map(str, spec.hidden)) + "\n")
        f.write(f"hidden_activation={spec.hidden_activation}\noutput_activation={spec.output_activation}\n")
        for key, value in sorted((meta or {}).items()):
            f.write(f"meta.{key}={value}\n")
        for name, arr in tensors.items():
            f.write(f"tensor.{name}=" + "x".join(map(str, arr.shape)) + "\n")
    np.savez(os.path.join(path, "tensors.npz"), **tensors)


def load_checkpoint(path: str):
    """Return ``(params, extra, meta)`` as written by :func:`save_checkpoint`."""
    manifest = {}
    with open(os.path.join(path, "manifest.txt"), encoding="utf-8") as f:
        for line in f:
            key, _, value = line.rstrip("\n").partition("=")
            manifest[key] = value
    if manifest.get("format") != CHECKPOINT_FORMAT or int(manifest.get("version", -1)) != CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    ints = lambda s: tuple(int(t) for t in s.split(",") if t)
    spec = ArchitectureSpec(ints(manifest["input_dims"]), int(manifest["latent_dim"]), ints(manifest["hidden"]),
                            manifest["hidden_activation"], manifest["output_activation"])
    params = init_params(spec, 0)
    with np.load(os.path.join(path, "tensors.npz")) as data:
        for name, arr in zip(params.names(), params.arrays()):
            stored = data[name]
            if stored.shape != arr.shape:
                raise ValueError(f"tensor {name} has shape {stored.shape}, expected {arr.shape}")
            arr[...] = stored
        extra = {k[len("extra."):]: data[k].copy() for k in data.files if k.startswith("extra.")}
    meta = {k[len("meta."):]: v for k, v in manifest.items() if k.startswith("meta.")}
    return params, extra, meta
