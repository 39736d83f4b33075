"""Layer library: parameter traversal, state dicts, attention gradients."""

import numpy as np
import pytest

from heightbins.errors import ContractViolation
from heightbins.gradcheck import check_gradients
from heightbins.nn import (
    Conv2d,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    TransformerBlock,
)
from heightbins.tensor import Tensor, tsum


class TinyNet(Module):
    def __init__(self, rng):
        self.fc = Linear(rng, 3, 4)
        self.blocks = [LayerNorm(4), LayerNorm(4)]
        self.heads = {"f5": Linear(rng, 4, 2)}


def test_named_parameters_are_deterministic_and_nested():
    rng = np.random.default_rng(0)
    net = TinyNet(rng)
    names = [n for n, _ in net.named_parameters()]
    assert names == [
        "fc.weight",
        "fc.bias",
        "blocks.0.gamma",
        "blocks.0.beta",
        "blocks.1.gamma",
        "blocks.1.beta",
        "heads.f5.weight",
        "heads.f5.bias",
    ]


def test_state_dict_round_trip():
    rng = np.random.default_rng(1)
    net = TinyNet(rng)
    state = net.state_dict()
    net2 = TinyNet(np.random.default_rng(2))
    assert not np.array_equal(net2.fc.weight.data, net.fc.weight.data)
    net2.load_state_dict(state)
    np.testing.assert_array_equal(net2.fc.weight.data, net.fc.weight.data)


def test_load_state_dict_rejects_mismatches():
    rng = np.random.default_rng(0)
    net = TinyNet(rng)
    state = net.state_dict()
    state.pop("fc.bias")
    with pytest.raises(ContractViolation, match="missing"):
        net.load_state_dict(state)
    state = net.state_dict()
    state["fc.weight"] = np.zeros((5, 5))
    with pytest.raises(ContractViolation, match="shape"):
        net.load_state_dict(state)


def test_linear_and_conv_bias_start_at_zero():
    rng = np.random.default_rng(3)
    assert np.all(Linear(rng, 4, 5).bias.data == 0)
    assert np.all(Conv2d(rng, 2, 3, 3).bias.data == 0)


def test_attention_output_shape_and_gradients():
    rng = np.random.default_rng(4)
    attn = MultiHeadSelfAttention(rng, d=8, n_heads=2)
    x = Tensor(rng.standard_normal((2, 5, 8)), requires_grad=True)
    out = attn(x)
    assert out.shape == (2, 5, 8)
    params = [x] + attn.parameters()
    check_gradients(lambda: tsum(attn(x)), params, name="attention")


def test_transformer_block_gradients():
    rng = np.random.default_rng(5)
    block = TransformerBlock(rng, d=6, n_heads=2, mlp_ratio=2)
    x = Tensor(rng.standard_normal((1, 4, 6)), requires_grad=True)
    check_gradients(lambda: tsum(block(x)), [x] + block.parameters(), name="block")


def test_attention_rejects_indivisible_heads():
    with pytest.raises(ContractViolation, match="divisible"):
        MultiHeadSelfAttention(np.random.default_rng(0), d=7, n_heads=2)
