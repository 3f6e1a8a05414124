"""
DeskMT: Building Block Tests
============================
Unit tests for the module base class and the individual layers.

Author: DeskMT Testing Team
Date: 2026-02-12
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from errors import ConfigurationError, ContractError, DimensionError
from modules import (
    AverageAttn, AvgAttnState, CrossAttn, Dropout, Linear, LSTMCell, Module, Noiser,
    PositionalEmb, PositionwiseFF, ResidueCombiner, SelfAttn, positional_embedding,
    scaled_dot_attention,
)
from tensor import Parameter, RandomStreams, Tensor, backward


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


class Pair(Module):
    """Two linears sharing one weight"""

    def __init__(self):
        super().__init__()
        self.first = Linear(3, 3, rng())
        self.second = Linear(3, 3, rng(1))
        self.second.weight = self.first.weight
        self.blocks = [Linear(3, 2, rng(2))]


class TestModuleBase:
    """Parameter discovery and state handling"""

    def test_named_parameters_dotted(self):
        """Test nested and list children get dotted names"""
        names = [n for n, _ in Pair().named_parameters()]
        assert names == ["first.weight", "first.bias", "second.bias", "blocks.0.weight", "blocks.0.bias"]

    def test_tied_parameter_listed_once(self):
        """Test a shared weight counts once"""
        model = Pair()
        assert model.num_parameters() == 9 + 3 + 3 + 6 + 2

    def test_train_eval_propagates(self):
        """Test mode switches reach every sub-module"""
        model = Pair().eval()
        assert not model.first.training and not model.blocks[0].training
        model.train()
        assert model.blocks[0].training

    def test_state_dict_copies(self):
        """Test state_dict arrays are independent of the parameters"""
        model = Pair()
        state = model.state_dict()
        state["first.bias"][:] = 5.0
        assert not np.any(model.first.bias.data == 5.0)

    def test_load_state_dict_round_trip(self):
        """Test loading another model's state reproduces its outputs"""
        a, b = Pair(), Pair()
        b.first.weight.data[...] = 0.0
        b.load_state_dict(a.state_dict())
        x = Tensor(np.ones((1, 3)))
        np.testing.assert_array_equal(a.first(x).data, b.first(x).data)

    def test_load_state_dict_missing_name(self):
        """Test strict loading reports missing names"""
        state = Pair().state_dict()
        del state["first.bias"]
        with pytest.raises(ConfigurationError, match="first.bias"):
            Pair().load_state_dict(state)

    def test_load_state_dict_shape_mismatch(self):
        """Test shape mismatch names the parameter"""
        state = Pair().state_dict()
        state["first.bias"] = np.zeros(4)
        with pytest.raises(DimensionError, match="first.bias"):
            Pair().load_state_dict(state)

    def test_zero_grad(self):
        """Test gradients are cleared"""
        model = Pair()
        backward(model.first(Tensor(np.ones((2, 3)))).sum())
        assert model.first.weight.grad is not None
        model.zero_grad()
        assert all(p.grad is None for p in model.parameters())


class TestPositionalEmbedding:
    """Sinusoidal positions"""

    def test_values(self):
        """Test sin/cos layout at known positions"""
        table = positional_embedding(3, 4)
        np.testing.assert_allclose(table[0], [0.0, 1.0, 0.0, 1.0])
        np.testing.assert_allclose(table[1, :2], [np.sin(1.0), np.cos(1.0)])
        np.testing.assert_allclose(table[2, 2:], [np.sin(2 / 100.0), np.cos(2 / 100.0)])

    def test_odd_dimension(self):
        """Test odd dimensions are refused"""
        with pytest.raises(DimensionError):
            positional_embedding(4, 5)

    def test_cache_extends_consistently(self):
        """Test rows past the cache equal a direct computation"""
        pe = PositionalEmb(6, cache_len=4)
        rows = pe.rows(3, 7)
        assert pe.cached >= 10
        np.testing.assert_allclose(rows, positional_embedding(10, 6)[3:10])


class TestAttention:
    """Scaled dot-product attention and its wrappers"""

    def test_fully_masked_rows_reported(self):
        """Test rows without visible keys are zero and flagged"""
        q = k = v = Tensor(rng().normal(size=(1, 1, 2, 4)))
        mask = np.array([[[[True, True], [False, True]]]])
        ctx, fully = scaled_dot_attention(q, k, v, mask)
        assert fully.tolist() == [[[True, False]]]
        np.testing.assert_array_equal(ctx.data[0, 0, 0], 0.0)
        np.testing.assert_allclose(ctx.data[0, 0, 1], v.data[0, 0, 0], rtol=1e-6)

    def test_head_divisibility(self):
        """Test attention size must divide by the head count"""
        with pytest.raises(ConfigurationError):
            SelfAttn(8, 9, 8, 2, 0.0, rng())

    def test_self_attention_cache_matches_full(self, float64):
        """Test incremental attention with a cache equals full causal attention"""
        attn = SelfAttn(8, 8, 8, 2, 0.0, rng())
        x = Tensor(rng(1).normal(size=(2, 4, 8)))
        causal = np.triu(np.ones((4, 4), dtype=bool), k=1)
        full = attn(x, causal)
        cache = {}
        steps = [attn(x[:, t:t + 1], None, cache).data for t in range(4)]
        np.testing.assert_allclose(np.concatenate(steps, axis=1), full.data, atol=1e-12)

    def test_cross_attention_needs_memory(self):
        """Test missing memory and keys is a contract error"""
        attn = CrossAttn(4, 4, 4, 2, 0.0, rng())
        with pytest.raises(ContractError):
            attn(Tensor(np.ones((1, 1, 4))))

    def test_cross_attention_projection_reused(self, float64):
        """Test precomputed keys/values give the same output"""
        attn = CrossAttn(4, 4, 4, 2, 0.0, rng())
        mem = Tensor(rng(2).normal(size=(1, 3, 4)))
        q = Tensor(rng(3).normal(size=(1, 2, 4)))
        np.testing.assert_allclose(attn(q, mem).data, attn(q, kv=attn.project(mem)).data)


class TestAverageAttention:
    """Cumulative-average attention and its constant-size state"""

    def test_state_matches_parallel(self, float64):
        """Test step-by-step decoding equals the parallel cumulative form"""
        layer = AverageAttn(6, 12, 0.0, rng())
        y = Tensor(rng(4).normal(size=(2, 5, 6)))
        full = layer(y).data
        state = AvgAttnState()
        steps = [layer(y[:, t:t + 1], state).data for t in range(5)]
        np.testing.assert_allclose(np.concatenate(steps, axis=1), full, atol=1e-12)
        assert state.steps == 5

    def test_state_size_constant(self):
        """Test the state does not grow with the number of steps"""
        layer = AverageAttn(4, 8, 0.0, rng())
        state = AvgAttnState()
        layer(Tensor(np.ones((1, 1, 4))), state)
        first = state.nbytes
        for _ in range(20):
            layer(Tensor(np.ones((1, 1, 4))), state)
        assert state.nbytes == first

    def test_empty_state_mean(self):
        """Test querying before any step"""
        with pytest.raises(ContractError):
            AvgAttnState().mean()

    def test_empty_sequence(self):
        """Test zero-length input"""
        with pytest.raises(ContractError):
            AverageAttn(4, 8, 0.0, rng())(Tensor(np.ones((1, 0, 4))))


class TestCombinerAndCells:
    """Residue combiner, feed-forward, LSTM and noise"""

    def test_combiner_needs_two(self):
        """Test fewer than two inputs is a configuration error"""
        with pytest.raises(ConfigurationError):
            ResidueCombiner(4, 1, 8, 0.0, rng())

    def test_combiner_wrong_count(self):
        """Test calling with the wrong number of inputs"""
        comb = ResidueCombiner(4, 2, 8, 0.0, rng())
        with pytest.raises(DimensionError):
            comb([Tensor(np.ones((1, 2, 4)))] * 3)

    def test_combiner_shape_mismatch(self):
        """Test inputs must share a shape"""
        comb = ResidueCombiner(4, 2, 8, 0.0, rng())
        with pytest.raises(DimensionError):
            comb([Tensor(np.ones((1, 2, 4))), Tensor(np.ones((1, 3, 4)))])

    def test_combiner_output_normalized(self):
        """Test the output is layer-normalized"""
        comb = ResidueCombiner(4, 3, 8, 0.0, rng())
        out = comb([Tensor(rng(i).normal(size=(2, 3, 4))) for i in range(3)])
        assert out.shape == (2, 3, 4)
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)

    def test_combiner_zero_weights_is_normalized_sum(self, float64):
        """Test zeroed projections reduce the combiner to LN of the summed inputs"""
        comb = ResidueCombiner(4, 3, 8, 0.0, rng())
        for linear in (comb.w1, comb.w2):
            linear.weight.data[...] = 0.0
            linear.bias.data[...] = 0.0
        inputs = [rng(i).normal(size=(2, 3, 4)) for i in range(3)]
        out = comb([Tensor(x) for x in inputs])
        expected = comb.normer(Tensor(inputs[0] + inputs[1] + inputs[2]))
        np.testing.assert_allclose(out.data, expected.data, atol=1e-12)

    def test_combiner_is_order_sensitive(self, float64):
        """Test permuting the inputs changes the output through the concatenation"""
        comb = ResidueCombiner(4, 3, 8, 0.0, rng())
        inputs = [Tensor(rng(i).normal(size=(2, 3, 4))) for i in range(3)]
        forward = comb(inputs).data
        swapped = comb([inputs[1], inputs[0], inputs[2]]).data
        assert not np.allclose(forward, swapped)

    def test_feed_forward_shape(self):
        """Test position-wise feed-forward keeps the shape"""
        assert PositionwiseFF(4, 16, 0.0, rng())(Tensor(np.ones((2, 3, 4)))).shape == (2, 3, 4)

    def test_lstm_cell_shapes(self):
        """Test LSTM cell output and memory shapes"""
        cell = LSTMCell(4, 6, rng())
        h, c = cell(Tensor(np.ones((2, 4))), (Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 6)))))
        assert h.shape == c.shape == (2, 6)
        assert np.all(np.abs(h.data) < 1)

    def test_dropout_module_deterministic_per_seed(self):
        """Test the same stream seed gives the same mask"""
        x = Tensor(np.ones((4, 4)))
        a = Dropout(0.5, RandomStreams(3).stream("drop"))(x).data
        b = Dropout(0.5, RandomStreams(3).stream("drop"))(x).data
        np.testing.assert_array_equal(a, b)

    def test_noiser_identity_in_eval(self):
        """Test noise is only applied in training"""
        noiser = Noiser(0.1, RandomStreams(0).stream("noise"))
        x = Tensor(np.ones((2, 4)))
        assert noiser.eval()(x) is x
        assert not np.array_equal(noiser.train()(x).data, x.data)

    @pytest.mark.parametrize("scale", [0.05, 0.3])
    def test_noiser_scales_with_rms(self, scale, float64):
        """Test the added noise has standard deviation scale * rms(x) per row, within 5%"""
        noiser = Noiser(scale, RandomStreams(5).stream("noise")).train()
        x = rng(1).normal(size=(200, 128)) * rng(2).uniform(0.5, 3.0, size=(200, 1))
        noise = noiser(Tensor(x)).data - x
        rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True))
        assert np.std(noise / rms) == pytest.approx(scale, rel=0.05)
        assert abs(np.mean(noise / rms)) < 0.05 * scale

    def test_noiser_zero_scale_is_identity(self):
        """Test a zero scale leaves inputs untouched in training"""
        x = Tensor(np.ones((2, 4)))
        assert Noiser(0.0, RandomStreams(0).stream("noise")).train()(x) is x

    def test_noiser_negative_scale(self):
        """Test negative scales are refused"""
        with pytest.raises(ConfigurationError):
            Noiser(-0.1, None)

    def test_parameter_is_trainable_leaf(self):
        """Test parameters require grad and are not frozen"""
        p = Parameter(np.zeros(2))
        assert p.requires_grad and not p.frozen
