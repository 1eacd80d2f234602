"""A small LLaMA-style byte-level decoder on the autodiff engine.

Pre-norm residual blocks:

    x = x + W_o . attention(rms_norm(x))          (rotary positions, causal)
    x = x + W_down . (silu(W_gate h) * W_up h),   h = rms_norm(x)

Feed-forward width is exactly 8d/3 (d must be divisible by 3), so one layer
carries 12 d^2 + 2 d parameters: the planning formulas in stagegrow.memory
count this model exactly.

Weight matrices are stored (out_features, in_features); the forward pass
multiplies by their transpose.  A layer may be frozen (weights excluded
from gradients) and may carry low-rank adapters: y = W x + s * A (B x)
with A zero at attach time so attaching is a no-op until training moves it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MATRIX_NAMES = ("w_q", "w_k", "w_v", "w_o", "w_gate", "w_up", "w_down")
RESIDUAL_OUTPUT_NAMES = ("w_o", "w_down")  # zeroing these silences a layer
INIT_STD = 0.02
NORM_EPS = 1e-5
MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int
    layer_count: int
    head_count: int
    vocab_size: int = 256
    max_seq_len: int = 512
    tied_embeddings: bool = False
    rope_base: float = 10000.0

    def __post_init__(self) -> None:
        if self.hidden_dim % 3 != 0:
            raise ValueError(f"hidden_dim must be divisible by 3, got {self.hidden_dim}")
        if self.hidden_dim % self.head_count != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by head_count {self.head_count}")
        if self.head_dim % 2 != 0:
            raise ValueError(f"head_dim must be even for rotary mixing, got {self.head_dim}")
        if self.layer_count < 1:
            raise ValueError(f"layer_count must be >= 1, got {self.layer_count}")
        if self.vocab_size < 1 or self.max_seq_len < 1:
            raise ValueError("vocab_size and max_seq_len must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.head_count

    @property
    def ffn_dim(self) -> int:
        return 8 * self.hidden_dim // 3


@dataclass
class Adapter:
    """Low-rank residual factors for one weight matrix: delta = scale * a @ b."""

    a: Tensor  # (out_features, rank), zero at attach
    b: Tensor  # (rank, in_features), small random
    scale: float

    @property
    def rank(self) -> int:
        return self.a.data.shape[1]

    def param_count(self) -> int:
        return self.a.data.size + self.b.data.size


@dataclass
class LayerBlock:
    """One decoder layer: weight tensors, norm gains, frozen flag, adapters."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w_gate: Tensor
    w_up: Tensor
    w_down: Tensor
    g_attn: Tensor
    g_ffn: Tensor
    frozen: bool = False
    adapters: dict[str, Adapter] = field(default_factory=dict)

    def matrices(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in MATRIX_NAMES}

    def all_tensors(self) -> dict[str, Tensor]:
        out = self.matrices()
        out["g_attn"] = self.g_attn
        out["g_ffn"] = self.g_ffn
        return out

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        for t in self.all_tensors().values():
            t.requires_grad = not frozen

    def param_count(self) -> int:
        return sum(t.data.size for t in self.all_tensors().values())

    def adapter_param_count(self) -> int:
        return sum(a.param_count() for a in self.adapters.values())


@dataclass
class ToyModel:
    config: ModelConfig
    embed: Tensor            # (vocab, hidden)
    unembed: Tensor | None   # (vocab, hidden); None when tied
    final_gain: Tensor       # (hidden,)
    layers: list[LayerBlock]
    rope_cos: np.ndarray
    rope_sin: np.ndarray
    dtype: np.dtype

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def output_matrix(self) -> Tensor:
        return self.embed if self.unembed is None else self.unembed


def rope_cache(max_seq_len: int, head_dim: int, base: float,
               dtype) -> tuple[np.ndarray, np.ndarray]:
    """Constant cos/sin tables, shape (max_seq_len, head_dim) each."""
    half = head_dim // 2
    inv_freq = base ** (-np.arange(0, half, dtype=np.float64) / half)
    angles = np.outer(np.arange(max_seq_len, dtype=np.float64), inv_freq)
    doubled = np.concatenate([angles, angles], axis=-1)
    return np.cos(doubled).astype(dtype), np.sin(doubled).astype(dtype)


def _init_matrix(rng: np.random.Generator, out_dim: int, in_dim: int,
                 std: float, dtype) -> Tensor:
    data = rng.normal(0.0, std, size=(out_dim, in_dim)).astype(dtype)
    return Tensor(data, requires_grad=True)


def init_layer(rng: np.random.Generator, config: ModelConfig, dtype) -> LayerBlock:
    """Fresh trainable layer; residual outputs get depth-scaled init."""
    d, f = config.hidden_dim, config.ffn_dim
    out_std = INIT_STD / np.sqrt(2.0 * config.layer_count)
    return LayerBlock(
        w_q=_init_matrix(rng, d, d, INIT_STD, dtype),
        w_k=_init_matrix(rng, d, d, INIT_STD, dtype),
        w_v=_init_matrix(rng, d, d, INIT_STD, dtype),
        w_o=_init_matrix(rng, d, d, out_std, dtype),
        w_gate=_init_matrix(rng, f, d, INIT_STD, dtype),
        w_up=_init_matrix(rng, f, d, INIT_STD, dtype),
        w_down=_init_matrix(rng, d, f, out_std, dtype),
        g_attn=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        g_ffn=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
    )


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> ToyModel:
    """Deterministic model construction from a seed."""
    dtype = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    d = config.hidden_dim
    embed = _init_matrix(rng, config.vocab_size, d, INIT_STD, dtype)
    unembed = None
    if not config.tied_embeddings:
        unembed = _init_matrix(rng, config.vocab_size, d, INIT_STD, dtype)
    layers = [init_layer(rng, config, dtype) for _ in range(config.layer_count)]
    cos, sin = rope_cache(config.max_seq_len, config.head_dim, config.rope_base, dtype)
    return ToyModel(
        config=config, embed=embed, unembed=unembed,
        final_gain=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        layers=layers, rope_cos=cos, rope_sin=sin, dtype=dtype)


def _linear(x: Tensor, layer: LayerBlock, name: str) -> Tensor:
    """x @ W^T plus the adapter path when one is attached."""
    w = getattr(layer, name)
    out = ad.matmul(x, ad.transpose(w))
    adapter = layer.adapters.get(name)
    if adapter is not None:
        low = ad.matmul(x, ad.transpose(adapter.b))
        out = ad.add(out, ad.scale(ad.matmul(low, ad.transpose(adapter.a)),
                                   adapter.scale))
    return out


def _split_heads(x: Tensor, batch: int, seq: int, config: ModelConfig) -> Tensor:
    x = ad.reshape(x, (batch, seq, config.head_count, config.head_dim))
    return ad.transpose(x, (0, 2, 1, 3))  # (batch, head, seq, head_dim)


def causal_mask(seq: int, dtype) -> np.ndarray:
    """(seq, seq) additive mask: 0 on/below the diagonal, large negative above."""
    mask = np.zeros((seq, seq), dtype=dtype)
    mask[np.triu_indices(seq, k=1)] = MASK_VALUE
    return mask


def forward(model: ToyModel, tokens: np.ndarray) -> Tensor:
    """Logits (batch, seq, vocab) for integer tokens (batch, seq)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"tokens must be 2-D (batch, seq), got {tokens.shape}")
    batch, seq = tokens.shape
    cfg = model.config
    if seq > cfg.max_seq_len:
        raise ValueError(f"sequence length {seq} exceeds max_seq_len {cfg.max_seq_len}")

    cos = model.rope_cos[:seq]
    sin = model.rope_sin[:seq]
    mask = causal_mask(seq, model.dtype)
    inv_sqrt_hd = 1.0 / math.sqrt(cfg.head_dim)  # python float: keeps dtype

    x = ad.embedding(model.embed, tokens)
    for layer in model.layers:
        h = ad.rms_norm(x, layer.g_attn, NORM_EPS)
        q = _split_heads(_linear(h, layer, "w_q"), batch, seq, cfg)
        k = _split_heads(_linear(h, layer, "w_k"), batch, seq, cfg)
        v = _split_heads(_linear(h, layer, "w_v"), batch, seq, cfg)
        q = ad.rope(q, cos, sin)
        k = ad.rope(k, cos, sin)
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), inv_sqrt_hd)
        scores = ad.add(scores, mask)
        mixed = ad.matmul(ad.softmax(scores), v)
        mixed = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (batch, seq, cfg.hidden_dim))
        x = ad.add(x, _linear(mixed, layer, "w_o"))

        h = ad.rms_norm(x, layer.g_ffn, NORM_EPS)
        gated = ad.mul(ad.silu(_linear(h, layer, "w_gate")), _linear(h, layer, "w_up"))
        x = ad.add(x, _linear(gated, layer, "w_down"))

    x = ad.rms_norm(x, model.final_gain, NORM_EPS)
    return ad.matmul(x, ad.transpose(model.output_matrix))


def named_parameters(model: ToyModel) -> list[tuple[str, Tensor]]:
    """Deterministic (name, tensor) list; checkpoint order matches this."""
    out: list[tuple[str, Tensor]] = [("embed", model.embed)]
    if model.unembed is not None:
        out.append(("unembed", model.unembed))
    out.append(("final_gain", model.final_gain))
    for i, layer in enumerate(model.layers):
        for name, t in layer.all_tensors().items():
            out.append((f"layers.{i}.{name}", t))
        for m_name in MATRIX_NAMES:
            adapter = layer.adapters.get(m_name)
            if adapter is not None:
                out.append((f"layers.{i}.adapters.{m_name}.a", adapter.a))
                out.append((f"layers.{i}.adapters.{m_name}.b", adapter.b))
    return out


def trainable_parameters(model: ToyModel) -> list[tuple[str, Tensor]]:
    return [(n, t) for n, t in named_parameters(model) if t.requires_grad]


@dataclass(frozen=True)
class ParamCounts:
    """Exact parameter census, partitioned by training role."""

    trainable_layer: int
    frozen_layer: int
    adapter: int
    embedding: int

    @property
    def total(self) -> int:
        return self.trainable_layer + self.frozen_layer + self.adapter + self.embedding

    @property
    def trainable(self) -> int:
        # Adapters and embeddings always train; frozen applies to layers only.
        return self.trainable_layer + self.adapter + self.embedding


def param_counts(model: ToyModel) -> ParamCounts:
    trainable_layer = frozen_layer = adapter = 0
    for layer in model.layers:
        n = layer.param_count()
        if layer.frozen:
            frozen_layer += n
        else:
            trainable_layer += n
        adapter += layer.adapter_param_count()
    embedding = model.embed.data.size + model.final_gain.data.size
    if model.unembed is not None:
        embedding += model.unembed.data.size
    return ParamCounts(trainable_layer, frozen_layer, adapter, embedding)


def count_params(model: ToyModel, trainable_only: bool = False) -> int:
    counts = param_counts(model)
    return counts.trainable if trainable_only else counts.total
