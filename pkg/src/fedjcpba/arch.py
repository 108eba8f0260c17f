"""Transformer shape accounting: emulator/adapter split, structured pruning,
parameter counts, bit sizes, per-iteration FLOPs and memory footprint.

Only counts are modelled. Layers follow the GPT-2 block layout:

    ln_1 -> attn (fused qkv + output projection) -> ln_2 -> mlp (fc + proj)

Token and position embeddings, the final layer norm and the (tied) LM head
belong to the emulator, which is frozen on clients and never uploaded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from fedjcpba.errors import InvalidPartition, OutOfRange

BITS_PER_BYTE = 8


@dataclass(frozen=True)
class TransformerDescriptor:
    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab_size: int
    seq_len: int
    bytes_per_param: int = 2
    n_positions: int = 1024
    tie_embeddings: bool = True

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size",
                     "seq_len", "bytes_per_param", "n_positions"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.n_layers < 2:
            raise ValueError("n_layers must be >= 2 to hold an emulator and an adapter")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


PRESETS = {
    "gpt2-medium": dict(n_layers=24, d_model=1024, n_heads=16, d_ff=4096,
                        vocab_size=50257, n_positions=1024),
    "gpt2": dict(n_layers=12, d_model=768, n_heads=12, d_ff=3072,
                 vocab_size=50257, n_positions=1024),
    "gpt2-large": dict(n_layers=36, d_model=1280, n_heads=20, d_ff=5120,
                       vocab_size=50257, n_positions=1024),
}


def preset(name: str, seq_len: int = 256, bytes_per_param: int = 2) -> TransformerDescriptor:
    try:
        shape = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown architecture preset {name!r}; "
                       f"known: {sorted(PRESETS)}") from None
    return TransformerDescriptor(seq_len=seq_len, bytes_per_param=bytes_per_param, **shape)


@dataclass(frozen=True)
class PartitionSpec:
    """Inclusive layer ranges. The adapter must be the non-empty suffix."""

    emulator_layers: tuple[int, int]
    adapter_layers: Optional[tuple[int, int]]

    @classmethod
    def suffix(cls, n_layers: int, n_adapter: int) -> "PartitionSpec":
        if not 0 < n_adapter < n_layers:
            raise InvalidPartition(
                f"adapter must hold between 1 and {n_layers - 1} layers, got {n_adapter}")
        return cls((0, n_layers - n_adapter - 1), (n_layers - n_adapter, n_layers - 1))

    def validate(self, desc: TransformerDescriptor) -> None:
        if self.adapter_layers is None:
            raise InvalidPartition("adapter range is empty")
        e_lo, e_hi = self.emulator_layers
        a_lo, a_hi = self.adapter_layers
        if e_lo != 0:
            raise InvalidPartition("emulator range must start at layer 0")
        if e_hi < e_lo:
            raise InvalidPartition("emulator range is empty")
        if a_hi < a_lo:
            raise InvalidPartition("adapter range is empty")
        if a_lo != e_hi + 1:
            raise InvalidPartition("ranges must be disjoint and contiguous")
        if a_hi != desc.n_layers - 1:
            raise InvalidPartition(
                f"adapter range must end at the last layer ({desc.n_layers - 1})")

    @property
    def n_emulator(self) -> int:
        return self.emulator_layers[1] - self.emulator_layers[0] + 1

    @property
    def n_adapter(self) -> int:
        if self.adapter_layers is None:
            return 0
        return self.adapter_layers[1] - self.adapter_layers[0] + 1


@dataclass(frozen=True)
class ModelSizes:
    emulator_params: int
    adapter_params: int
    bytes_per_param: int

    @property
    def emulator_bits(self) -> int:
        return self.emulator_params * self.bytes_per_param * BITS_PER_BYTE

    @property
    def adapter_bits(self) -> int:
        return self.adapter_params * self.bytes_per_param * BITS_PER_BYTE

    @property
    def adapter_update_bits(self) -> int:
        # the uploaded delta has the adapter's shape
        return self.adapter_bits

    @property
    def emulator_bytes(self) -> int:
        return self.emulator_params * self.bytes_per_param

    @property
    def adapter_bytes(self) -> int:
        return self.adapter_params * self.bytes_per_param

    @property
    def total_params(self) -> int:
        return self.emulator_params + self.adapter_params


# --- per-layer enumeration -------------------------------------------------

def attention_params(d_model: int, heads: int, head_dim: int) -> int:
    inner = heads * head_dim
    qkv = d_model * 3 * inner + 3 * inner
    out = inner * d_model + d_model
    return qkv + out


def mlp_params(d_model: int, d_ff: int) -> int:
    return (d_model * d_ff + d_ff) + (d_ff * d_model + d_model)


def layer_norm_params(d_model: int) -> int:
    return 2 * d_model


def layer_params(desc: TransformerDescriptor, heads: Optional[int] = None,
                 d_ff: Optional[int] = None) -> int:
    """Parameters of one block, optionally with pruned head/neuron counts."""
    heads = desc.n_heads if heads is None else heads
    d_ff = desc.d_ff if d_ff is None else d_ff
    return (attention_params(desc.d_model, heads, desc.head_dim)
            + mlp_params(desc.d_model, d_ff)
            + 2 * layer_norm_params(desc.d_model))


def prunable_layer_params(desc: TransformerDescriptor, heads: Optional[int] = None,
                          d_ff: Optional[int] = None) -> int:
    """The part of a block that shrinks when heads or MLP neurons are removed.

    Output-projection biases and layer norms live in d_model space and stay.
    """
    heads = desc.n_heads if heads is None else heads
    d_ff = desc.d_ff if d_ff is None else d_ff
    d = desc.d_model
    return layer_params(desc, heads, d_ff) - 2 * d - 2 * layer_norm_params(d)


def embedding_params(desc: TransformerDescriptor) -> int:
    n = desc.vocab_size * desc.d_model + desc.n_positions * desc.d_model
    n += layer_norm_params(desc.d_model)  # final ln_f
    if not desc.tie_embeddings:
        n += desc.vocab_size * desc.d_model
    return n


def partition_model(desc: TransformerDescriptor, spec: PartitionSpec) -> ModelSizes:
    spec.validate(desc)
    per_layer = layer_params(desc)
    return ModelSizes(
        emulator_params=embedding_params(desc) + spec.n_emulator * per_layer,
        adapter_params=spec.n_adapter * per_layer,
        bytes_per_param=desc.bytes_per_param,
    )


# --- structured pruning ----------------------------------------------------

def retained_count(total: int, beta: float) -> int:
    """round((1 - beta) * total), half-up, clamped to at least one unit."""
    kept = math.floor((1.0 - beta) * total + 0.5 + 1e-9)
    return max(1, min(total, kept))


@dataclass(frozen=True)
class PrunedEmulatorDescriptor:
    base: TransformerDescriptor
    partition: PartitionSpec
    pruning_rate: float
    retained_heads_per_layer: int
    retained_ff_per_layer: int

    @property
    def layer_params(self) -> int:
        return layer_params(self.base, self.retained_heads_per_layer,
                            self.retained_ff_per_layer)

    @property
    def prunable_params(self) -> int:
        return self.partition.n_emulator * prunable_layer_params(
            self.base, self.retained_heads_per_layer, self.retained_ff_per_layer)

    @property
    def params(self) -> int:
        return embedding_params(self.base) + self.partition.n_emulator * self.layer_params

    @property
    def bits(self) -> int:
        return self.params * self.base.bytes_per_param * BITS_PER_BYTE


def prune_emulator(desc: TransformerDescriptor, spec: PartitionSpec,
                   beta: float) -> PrunedEmulatorDescriptor:
    if not 0.0 <= beta < 1.0:
        raise OutOfRange(f"pruning rate must lie in [0, 1), got {beta}")
    spec.validate(desc)
    return PrunedEmulatorDescriptor(
        base=desc,
        partition=spec,
        pruning_rate=beta,
        retained_heads_per_layer=retained_count(desc.n_heads, beta),
        retained_ff_per_layer=retained_count(desc.d_ff, beta),
    )


def emulator_prunable_params(desc: TransformerDescriptor, spec: PartitionSpec) -> int:
    return spec.n_emulator * prunable_layer_params(desc)


def emulator_bits_linear(sizes: ModelSizes, beta: float) -> float:
    """Emulator size under the linear model used by the optimizer: (1-beta)|w^E|."""
    return (1.0 - beta) * sizes.emulator_bits


# --- compute and memory ----------------------------------------------------

FLOPS_PER_PARAM_TRAINED = 6   # forward 2 + backward 4
FLOPS_PER_PARAM_FROZEN = 2    # forward only


def flops_per_iteration(desc: TransformerDescriptor, spec: PartitionSpec,
                        beta: float, batch: int) -> tuple[float, float, float]:
    """Return ``(a, e0, d_k)`` in FLOPs for one local iteration.

    ``a`` is the adapter cost, ``e0`` the unpruned emulator cost and
    ``d_k = a + e0 * (1 - beta)``.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    sizes = partition_model(desc, spec)
    tokens = batch * desc.seq_len
    a = float(FLOPS_PER_PARAM_TRAINED * sizes.adapter_params * tokens)
    e0 = float(FLOPS_PER_PARAM_FROZEN * sizes.emulator_params * tokens)
    return a, e0, a + e0 * (1.0 - beta)


def memory_footprint(sizes: ModelSizes, beta: float, overhead_factor: float = 4.0) -> float:
    """Client memory b(beta) in bytes; ``overhead_factor`` covers activations
    and optimizer state on top of the raw parameter bytes."""
    if overhead_factor < 1.0:
        raise ValueError("overhead_factor must be >= 1")
    return overhead_factor * (sizes.adapter_bytes + (1.0 - beta) * sizes.emulator_bytes)
