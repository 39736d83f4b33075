"""Small layer library on top of the tensor engine.

Modules discover parameters by walking their attributes in definition
order, so parameter names (and hence checkpoints and optimizer state)
are deterministic for a fixed architecture.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .tensor import (
    Tensor,
    concat,
    conv2d,
    gelu,
    layer_norm,
    matmul,
    reshape,
    softmax,
    transpose,
)

__all__ = [
    "Module",
    "Linear",
    "Conv2d",
    "LayerNorm",
    "MultiHeadSelfAttention",
    "TransformerBlock",
    "he_uniform",
]


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class providing named parameter traversal and state dicts."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for key, val in vars(self).items():
            name = prefix + key
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{name}.{i}", item))
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{k}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{name}.{k}", item))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into existing parameters; names and shapes must match exactly."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ContractViolation(
                f"state dict mismatch: missing {missing[:3]}, unexpected {extra[:3]}"
            )
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ContractViolation(
                    f"state dict entry '{name}' has shape {arr.shape}, expected {p.data.shape}"
                )
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = Tensor(he_uniform(rng, (d_in, d_out), d_in), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ):
        fan_in = c_in * kernel * kernel
        self.weight = Tensor(
            he_uniform(rng, (c_out, c_in, kernel, kernel), fan_in), requires_grad=True
        )
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)


class MultiHeadSelfAttention(Module):
    def __init__(self, rng: np.random.Generator, d: int, n_heads: int):
        if d % n_heads:
            raise ContractViolation(f"attention: dim {d} not divisible by {n_heads} heads")
        self.qkv = Linear(rng, d, 3 * d)
        self.proj = Linear(rng, d, d)
        self.n_heads = n_heads
        self.d_head = d // n_heads

    def __call__(self, x: Tensor) -> Tensor:
        """Full self-attention over (B, S, d) sequences."""
        b, s, d = x.shape
        qkv = self.qkv(x)  # (B, S, 3d)
        qkv = reshape(qkv, (b, s, 3, self.n_heads, self.d_head))
        qkv = transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, heads, S, d_head)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_head))
        attn = softmax(scores, axis=-1)
        out = matmul(attn, v)  # (B, heads, S, d_head)
        out = reshape(transpose(out, (0, 2, 1, 3)), (b, s, d))
        return self.proj(out)


class TransformerBlock(Module):
    """Pre-norm block: x + MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, rng: np.random.Generator, d: int, n_heads: int, mlp_ratio: int = 4):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadSelfAttention(rng, d, n_heads)
        self.norm2 = LayerNorm(d)
        self.fc1 = Linear(rng, d, mlp_ratio * d)
        self.fc2 = Linear(rng, mlp_ratio * d, d)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(gelu(self.fc1(self.norm2(x))))
