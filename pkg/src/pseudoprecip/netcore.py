"""Minimal dense-network engine with exact reverse-mode gradients.

Sufficient for the point-wise encoder/decoder pair: affine layers with
tanh or identity activations, a bias-corrected Adam optimizer and a
binary checkpoint format.  Heavy lifting is delegated to the selected
kernel backend (compiled or numpy).

PPM checkpoint layout (little-endian)::

    "PPM1" | n_enc:u32 | enc widths u32... | enc act codes u8...
    | n_dec:u32 | dec widths u32... | dec act codes u8...
    | tp_scale:f64 | vimd_mean:f64 | vimd_std:f64
    | parameter blocks f64 (per layer: W row-major, then b), encoder first
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import _kernels as K
from .errors import BadWidths, MalformedCheckpoint, ShapeMismatch, VersionMismatch

PPM_MAGIC = b"PPM1"


class Activation(IntEnum):
    IDENTITY = 0
    TANH = 1


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in) float64
    bias: np.ndarray  # (out,) float64
    activation: Activation

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(
                f"layer weights {self.weights.shape} incompatible with bias {self.bias.shape}")
        self.activation = Activation(self.activation)


@dataclass
class MLP:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise BadWidths("MLP needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ShapeMismatch(
                    f"layer widths do not chain: {a.weights.shape} -> {b.weights.shape}")

    @property
    def in_width(self):
        return self.layers[0].weights.shape[1]

    @property
    def out_width(self):
        return self.layers[-1].weights.shape[0]

    def parameters(self):
        """Flat list of parameter arrays in deterministic order."""
        out = []
        for lay in self.layers:
            out.append(lay.weights)
            out.append(lay.bias)
        return out


def init_mlp(widths, activations=None, seed=0):
    """Glorot-uniform weights, zero biases, deterministic in seed.

    ``activations`` defaults to tanh on hidden layers and identity on
    the output layer.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise BadWidths(f"need >= 2 widths, got {widths}")
    if any(w < 1 for w in widths):
        raise BadWidths(f"widths must be positive, got {widths}")
    nlayer = len(widths) - 1
    if activations is None:
        activations = [Activation.TANH] * (nlayer - 1) + [Activation.IDENTITY]
    if len(activations) != nlayer:
        raise BadWidths(f"{len(activations)} activations for {nlayer} layers")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    layers = []
    for fan_in, fan_out, act in zip(widths, widths[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return MLP(layers)


def forward(mlp, x):
    """Run the network; returns (outputs, cache for backward).

    Pure: identical inputs give identical outputs.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.in_width:
        raise ShapeMismatch(f"input shape {x.shape}, expected (*, {mlp.in_width})")
    cache = [x]
    for lay in mlp.layers:
        z = K.affine_forward(x, lay.weights, lay.bias)
        x = K.tanh_forward(z) if lay.activation == Activation.TANH else z
        cache.append(x)
    return x, cache


def backward(mlp, cache, dout):
    """Exact reverse-mode gradients.

    Returns (per-layer [(dW, db), ...], gradient w.r.t. the input batch)
    for the upstream output gradient ``dout``.
    """
    dout = np.ascontiguousarray(dout, dtype=np.float64)
    if len(cache) != len(mlp.layers) + 1:
        raise ShapeMismatch("cache does not match network depth")
    if dout.shape != cache[-1].shape:
        raise ShapeMismatch(f"output grad {dout.shape} != output {cache[-1].shape}")
    grads = [None] * len(mlp.layers)
    d = dout
    for i in range(len(mlp.layers) - 1, -1, -1):
        lay = mlp.layers[i]
        if lay.activation == Activation.TANH:
            d = K.tanh_backward(cache[i + 1], d)
        dx, dw, db = K.affine_backward(cache[i], lay.weights, d)
        grads[i] = (dw, db)
        d = dx
    return grads, d


@dataclass
class AdamState:
    """Optimizer state shaped like a flat parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        st = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        st.m = [np.zeros_like(p) for p in params]
        st.v = [np.zeros_like(p) for p in params]
        return st


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on params and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params/grads/state length mismatch")
    state.step += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
        K.adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                      m.reshape(-1), v.reshape(-1), state.step,
                      state.lr, state.beta1, state.beta2, state.eps)
    return params, state


@dataclass
class NormParams:
    """Input normalization frozen into a trained model.

    tp is compressed as log1p(TP / tp_scale); vimd is standardized.
    """

    tp_scale: float
    vimd_mean: float
    vimd_std: float


@dataclass
class PPModel:
    """Encoder (TP', VIMD') -> PP and decoder PP -> TP' with normalization."""

    encoder: MLP
    decoder: MLP
    norm: NormParams

    def __post_init__(self):
        if self.encoder.in_width != 2 or self.encoder.out_width != 1:
            raise ShapeMismatch("encoder must map 2 -> 1")
        if self.decoder.in_width != 1 or self.decoder.out_width != 1:
            raise ShapeMismatch("decoder must map 1 -> 1")


def _write_mlp_header(parts, mlp):
    widths = [mlp.in_width] + [lay.weights.shape[0] for lay in mlp.layers]
    parts.append(struct.pack("<I", len(widths)))
    parts.append(struct.pack(f"<{len(widths)}I", *widths))
    parts.append(bytes(int(lay.activation) for lay in mlp.layers))


def save_model(model, path):
    parts = [PPM_MAGIC]
    _write_mlp_header(parts, model.encoder)
    _write_mlp_header(parts, model.decoder)
    parts.append(struct.pack("<3d", model.norm.tp_scale,
                             model.norm.vimd_mean, model.norm.vimd_std))
    for mlp in (model.encoder, model.decoder):
        for lay in mlp.layers:
            parts.append(lay.weights.astype("<f8").tobytes())
            parts.append(lay.bias.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n):
        if self.off + n > len(self.raw):
            raise MalformedCheckpoint(
                f"{self.path}: truncated at offset {self.off} (need {n} more bytes)")
        out = self.raw[self.off:self.off + n]
        self.off += n
        return out


def _read_mlp_header(rd):
    (nw,) = struct.unpack("<I", rd.take(4))
    if nw < 2 or nw > 64:
        raise MalformedCheckpoint(f"{rd.path}: implausible width count {nw}")
    widths = struct.unpack(f"<{nw}I", rd.take(4 * nw))
    acts = [Activation(b) for b in rd.take(nw - 1)]
    return list(widths), acts


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != PPM_MAGIC:
        raise VersionMismatch(f"{path}: magic {raw[:4]!r} is not {PPM_MAGIC!r}")
    rd = _Reader(raw, path)
    rd.take(4)
    try:
        enc_widths, enc_acts = _read_mlp_header(rd)
        dec_widths, dec_acts = _read_mlp_header(rd)
        norm = NormParams(*struct.unpack("<3d", rd.take(24)))
        mlps = []
        for widths, acts in ((enc_widths, enc_acts), (dec_widths, dec_acts)):
            layers = []
            for fan_in, fan_out, act in zip(widths, widths[1:], acts):
                w = np.frombuffer(rd.take(8 * fan_out * fan_in), "<f8").reshape(fan_out, fan_in)
                b = np.frombuffer(rd.take(8 * fan_out), "<f8")
                layers.append(DenseLayer(w.copy(), b.copy(), act))
            mlps.append(MLP(layers))
    except (struct.error, ValueError) as exc:
        raise MalformedCheckpoint(f"{path}: {exc}") from exc
    if rd.off != len(raw):
        raise MalformedCheckpoint(f"{path}: {len(raw) - rd.off} trailing bytes")
    return PPModel(mlps[0], mlps[1], norm)
