"""Patch encoder (MLP over flattened patches), Adam and the HSENC001 checkpoint format."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, as_tensor, l2_normalize

CHECKPOINT_MAGIC = b"HSENC001"


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class EncoderConfig:
    patch_size: int = 5
    in_bands: int = 3
    hidden_dims: list[int] = field(default_factory=lambda: [64, 32])
    embed_dim: int = 16
    activation: str = "relu"

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be a positive odd integer")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be non-empty")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_bands

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.embed_dim]


@dataclass
class EncoderParams:
    cfg: EncoderConfig
    weights: list[Tensor]
    biases: list[Tensor]
    seed: int = 0

    def named(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def zero_grad(self) -> None:
        for t in self.named().values():
            t.zero_grad()

    def num_parameters(self) -> int:
        return sum(t.value.size for t in self.named().values())

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.cfg,
                             [Tensor(w.value.copy(), requires_grad=True) for w in self.weights],
                             [Tensor(b.value.copy(), requires_grad=True) for b in self.biases],
                             self.seed)


def init_encoder(cfg: EncoderConfig, seed: int) -> EncoderParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = cfg.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return EncoderParams(cfg, weights, biases, seed)


def forward_layers(params: EncoderParams, patches) -> list[Tensor]:
    """Pre-activation output of every layer (the last one is the raw embedding)."""
    x = as_tensor(_as_batch(params.cfg, patches))
    outs = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = x @ w + b
        outs.append(z)
        if i < last:
            x = z.relu() if params.cfg.activation == "relu" else z.tanh()
    return outs


def forward(params: EncoderParams, patches) -> Tensor:
    """Unit-norm embeddings, one row per patch (all-zero rows stay zero)."""
    return l2_normalize(forward_layers(params, patches)[-1])


def _as_batch(cfg: EncoderConfig, patches) -> np.ndarray:
    if isinstance(patches, Tensor):
        patches = patches.value
    if isinstance(patches, (list, tuple)):
        patches = np.stack([np.asarray(getattr(p, "values", p)).ravel() for p in patches])
    X = np.asarray(patches, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    elif X.ndim > 2:
        X = X.reshape(X.shape[0], -1)
    if X.shape[1] != cfg.input_dim:
        raise ValueError(f"patch has {X.shape[1]} values, encoder expects {cfg.input_dim}")
    return X


# ---------------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``."""
    step = state.step + 1
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name} at step {step}")
    for name in sorted(params):
        g = grads[name]
        m = beta1 * state.m.get(name, np.zeros_like(g)) + (1 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(g)) + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1 ** step)
        v_hat = v / (1 - beta2 ** step)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    state.step = step
    return state


def adam_update(params: EncoderParams, state: AdamState, lr: float) -> AdamState:
    named = params.named()
    return adam_step({k: t.value for k, t in named.items()},
                     {k: t.grad for k, t in named.items()}, state, lr)


# ---------------------------------------------------------------------- checkpoint

def save_checkpoint(params: EncoderParams, path) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(params.weights))]
    for w, b in zip(params.weights, params.biases):
        fan_in, fan_out = w.shape
        chunks.append(struct.pack("<2I", fan_in, fan_out))
        chunks.append(np.ascontiguousarray(w.value, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(b.value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (weight, bias) arrays as float32."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an HSENC001 checkpoint")
    (n_layers,) = struct.unpack_from("<I", raw, 8)
    off, layers = 12, []
    for _ in range(n_layers):
        fan_in, fan_out = struct.unpack_from("<2I", raw, off)
        off += 8
        w = np.frombuffer(raw, "<f4", fan_in * fan_out, off).reshape(fan_in, fan_out)
        off += 4 * fan_in * fan_out
        b = np.frombuffer(raw, "<f4", fan_out, off)
        off += 4 * fan_out
        layers.append((w.astype(np.float32), b.astype(np.float32)))
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return layers
