"""AdamW with decoupled weight decay and bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NumericError
from .tensor import Tensor

__all__ = ["OptimizerState", "AdamW"]


@dataclass
class OptimizerState:
    """Moment accumulators plus the scalar hyperparameters.

    Attributes:
        step_count: number of completed steps; strictly increasing.
        lr: learning rate.
        weight_decay: decoupled decay coefficient.
        beta1, beta2: moment decay rates.
        eps: denominator floor.
        m, v: first/second moment arrays keyed by parameter name.
    """

    step_count: int = 0
    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Optimizer over named leaf tensors.

    Args:
        named_params: (name, tensor) pairs; names key the moment buffers and
            appear in non-finite-gradient diagnostics.
        lr, betas, eps, weight_decay: usual AdamW hyperparameters.
    """

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        names = [n for n, _ in named_params]
        if len(set(names)) != len(names):
            raise ContractViolation("AdamW: duplicate parameter names")
        self._params = list(named_params)
        self.state = OptimizerState(
            lr=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1], eps=eps
        )
        for name, p in self._params:
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for _, p in self._params:
            p.grad = None

    def step(self) -> None:
        """Apply one update to every parameter that received a gradient.

        Raises:
            NumericError: if any gradient contains non-finite values; the
                message carries the parameter name.
        """
        st = self.state
        st.step_count += 1
        t = st.step_count
        bc1 = 1.0 - st.beta1**t
        bc2 = 1.0 - st.beta2**t
        for name, p in self._params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
            if g.shape != p.data.shape:
                raise ContractViolation(
                    f"gradient shape {g.shape} does not match parameter "
                    f"'{name}' shape {p.data.shape}"
                )
            m = st.m[name]
            v = st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + st.eps)
            if st.weight_decay:
                update = update + st.weight_decay * p.data
            p.data -= st.lr * update
