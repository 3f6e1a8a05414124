"""
DeskMT: Loss and Optimizer Tests
================================
Unit tests for label smoothing, the warm-up schedule and Adam.

Author: DeskMT Testing Team
Date: 2026-02-13
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from errors import ConfigurationError, ContractError, DimensionError
from loss import LabelSmoothingLoss, label_smoothing_loss
from optim import Adam, adam_step, noam_lr, OptimizerState
from tensor import Parameter, Tensor, backward, precision


def logits_for(shape, seed: int = 0) -> Tensor:
    return Parameter(np.random.default_rng(seed).normal(size=shape))


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@pytest.mark.usefixtures("float64")
class TestLabelSmoothing:
    """Smoothed cross-entropy with forbidden classes"""

    def test_distribution(self):
        """Test gold mass, spread over allowed classes and zero on forbidden"""
        q = LabelSmoothingLoss(6, smoothing=0.1, forbidden=(0, 1)).distribution(np.array([3, 5]))
        np.testing.assert_allclose(q.sum(axis=-1), 1.0)
        np.testing.assert_array_equal(q[:, :2], 0.0)
        assert q[0, 3] == pytest.approx(0.9)
        assert q[0, 2] == pytest.approx(0.1 / 3)

    def test_value_matches_manual(self):
        """Test the loss equals -sum(q * log_softmax) averaged over tokens"""
        crit = LabelSmoothingLoss(6, smoothing=0.2, forbidden=(0, 1))
        logits = logits_for((2, 3, 6))
        targets = np.array([[2, 3, 4], [5, 2, 0]])
        loss, _, count = crit(logits, targets)
        keep = targets != 0
        q = crit.distribution(targets[keep])
        expected = -(q * log_softmax_np(logits.data[keep])).sum() / 5
        assert count == 5
        assert loss.item() == pytest.approx(expected)

    def test_zero_smoothing_is_cross_entropy(self):
        """Test smoothing 0 reduces to negative log-likelihood"""
        logits = logits_for((1, 2, 5), seed=1)
        targets = np.array([[2, 4]])
        loss, _, _ = label_smoothing_loss(logits, targets, smoothing=0.0, reduction="sum")
        lp = log_softmax_np(logits.data[0])
        assert loss.item() == pytest.approx(-(lp[0, 2] + lp[1, 4]))

    def test_padding_ignored(self):
        """Test extra padding positions change neither loss nor count"""
        crit = LabelSmoothingLoss(6, reduction="sum")
        logits = logits_for((1, 4, 6), seed=2)
        full, _, n_full = crit(logits, np.array([[2, 3, 0, 0]]))
        short, _, n_short = crit(Tensor(logits.data[:, :2]), np.array([[2, 3]]))
        assert n_full == n_short == 2
        assert full.item() == pytest.approx(short.item())

    def test_gradient(self):
        """Test gradient equals (softmax - q) / count on kept tokens"""
        crit = LabelSmoothingLoss(5, smoothing=0.1, forbidden=(0, 1))
        logits = logits_for((1, 3, 5), seed=3)
        targets = np.array([[2, 4, 0]])
        loss, _, _ = crit(logits, targets)
        backward(loss)
        p = np.exp(log_softmax_np(logits.data[0, :2]))
        expected = (p - crit.distribution(np.array([2, 4]))) / 2
        np.testing.assert_allclose(logits.grad[0, :2], expected, atol=1e-12)
        np.testing.assert_array_equal(logits.grad[0, 2], 0.0)

    def test_error_count(self):
        """Test argmax mistakes on kept tokens"""
        logits = Tensor(np.array([[[0, 0, 5, 0], [0, 0, 5, 0], [9, 0, 0, 0]]], dtype=np.float64))
        _, errors, count = label_smoothing_loss(logits, np.array([[2, 3, 0]]))
        assert (errors, count) == (1, 2)

    def test_error_ignores_forbidden_argmax(self):
        """Test the predicted class is the best allowed one"""
        logits = Tensor(np.array([[[9, 8, 5, 0], [0, 9, 1, 4]]], dtype=np.float64))
        _, errors, count = label_smoothing_loss(logits, np.array([[2, 3]]))
        assert (errors, count) == (0, 2)

    def test_forbidden_gold(self):
        """Test a forbidden gold index is a contract error"""
        with pytest.raises(ContractError, match="forbidden"):
            LabelSmoothingLoss(5)(logits_for((1, 2, 5)), np.array([[2, 1]]))

    def test_shape_mismatch(self):
        """Test logits and targets must agree"""
        with pytest.raises(DimensionError):
            LabelSmoothingLoss(5)(logits_for((1, 2, 5)), np.array([[2, 3, 4]]))

    def test_reduction_none(self):
        """Test per-token losses with zeros at padding"""
        loss, _, _ = LabelSmoothingLoss(5, reduction="none")(logits_for((2, 2, 5)), np.array([[2, 0], [3, 4]]))
        assert loss.shape == (2, 2)
        assert loss.data[0, 1] == 0.0

    @pytest.mark.parametrize("kwargs", [{"smoothing": 1.0}, {"reduction": "avg"}, {"forbidden": (7,)}])
    def test_invalid_settings(self, kwargs):
        """Test invalid smoothing, reduction and forbidden sets"""
        with pytest.raises(ConfigurationError):
            LabelSmoothingLoss(5, **kwargs)


class TestSchedule:
    """Warm-up then inverse square root decay"""

    def test_peak_at_warm_step(self):
        """Test the schedule rises to the warm step and decays after"""
        values = [noam_lr(s, 512, 100) for s in (1, 50, 100, 200, 400)]
        assert values[0] < values[1] < values[2]
        assert values[2] > values[3] > values[4]
        assert values[2] == pytest.approx(512 ** -0.5 * 100 ** -0.5)

    def test_scale(self):
        """Test lr_scale multiplies the schedule"""
        assert noam_lr(10, 64, 8, scale=2.0) == pytest.approx(2 * noam_lr(10, 64, 8))

    def test_step_zero(self):
        """Test steps start at 1"""
        with pytest.raises(ConfigurationError):
            noam_lr(0, 512, 100)


@pytest.mark.usefixtures("float64")
class TestAdam:
    """Adam, AMSGrad, weight decay and state handling"""

    def _params(self, seed: int = 0):
        return {"w": Parameter(np.random.default_rng(seed).normal(size=(3, 2)))}

    def test_first_step_is_signed_lr(self):
        """Test the first bias-corrected step moves each entry by about lr"""
        params = self._params()
        before = params["w"].data.copy()
        grads = {"w": np.array([[1.0, -2.0], [0.5, -0.1], [3.0, 1.0]])}
        adam_step(params, grads, OptimizerState(), lr=0.01)
        np.testing.assert_allclose(before - params["w"].data, 0.01 * np.sign(grads["w"]), rtol=1e-6)

    def test_frozen_parameter_unchanged(self):
        """Test frozen parameters keep their values"""
        params = self._params()
        params["w"].frozen = True
        before = params["w"].data.copy()
        adam_step(params, {"w": np.ones((3, 2))}, OptimizerState(), lr=0.1)
        np.testing.assert_array_equal(params["w"].data, before)

    def test_weight_decay_shrinks(self):
        """Test L2 decay moves parameters toward zero with zero gradient"""
        params = {"w": Parameter(np.array([2.0, -2.0]))}
        adam_step(params, {"w": np.zeros(2)}, OptimizerState(), lr=0.1, weight_decay=0.5)
        np.testing.assert_allclose(params["w"].data, [1.9, -1.9], rtol=1e-6)

    def test_amsgrad_keeps_max_second_moment(self):
        """Test AMSGrad takes a smaller step after a gradient spike"""
        moves = {}
        for ams in (False, True):
            params = {"w": Parameter(np.zeros(1))}
            state = OptimizerState()
            adam_step(params, {"w": np.array([10.0])}, state, lr=0.1, use_ams=ams)
            before = params["w"].data.copy()
            for _ in range(20):
                adam_step(params, {"w": np.array([0.01])}, state, lr=0.1, use_ams=ams)
            moves[ams] = abs(float(params["w"].data[0] - before[0]))
        assert moves[True] < moves[False]

    def test_grad_scale(self):
        """Test grad_scale equals pre-scaled gradients"""
        a, b = self._params(), self._params()
        a["w"].grad = np.full((3, 2), 4.0)
        b["w"].grad = np.full((3, 2), 1.0)
        opt_a, opt_b = Adam(a.items()), Adam(b.items())
        opt_a.step(0.01, grad_scale=0.25)
        opt_b.step(0.01)
        np.testing.assert_array_equal(a["w"].data, b["w"].data)
        assert opt_a.step_count == 1

    def test_state_round_trip(self):
        """Test a restored optimizer continues identically"""
        rng = np.random.default_rng(5)
        grads = [rng.normal(size=(3, 2)) for _ in range(4)]
        a = self._params()
        opt_a = Adam(a.items(), use_ams=True)
        for g in grads[:2]:
            a["w"].grad = g
            opt_a.step(0.01)
        b = {"w": Parameter(a["w"].data.copy())}
        opt_b = Adam(b.items(), use_ams=True)
        opt_b.load_state_dict(opt_a.state_dict())
        for g in grads[2:]:
            a["w"].grad, b["w"].grad = g, g.copy()
            opt_a.step(0.01)
            opt_b.step(0.01)
        np.testing.assert_array_equal(a["w"].data, b["w"].data)
        assert opt_b.step_count == 4

    def test_state_shape_mismatch(self):
        """Test buffers with the wrong shape are refused"""
        opt = Adam(self._params().items())
        state = {"step": 1, "counts": {"w": 1}, "exp_avg": {"w": np.zeros(5)}}
        with pytest.raises(ConfigurationError):
            opt.load_state_dict(state)

    def test_zero_grad(self):
        """Test gradients are cleared"""
        params = self._params()
        params["w"].grad = np.ones((3, 2))
        Adam(params.items()).zero_grad()
        assert params["w"].grad is None

    @pytest.mark.parametrize("use_ams,weight_decay", [(False, 0.0), (True, 0.01)])
    def test_matches_torch(self, use_ams, weight_decay):
        """Test trajectories against torch.optim.Adam"""
        torch = pytest.importorskip("torch")
        rng = np.random.default_rng(7)
        init = rng.normal(size=(4,))
        grads = [rng.normal(size=(4,)) for _ in range(5)]
        ours = {"w": Parameter(init.copy())}
        opt = Adam(ours.items(), use_ams=use_ams, weight_decay=weight_decay)
        theirs = torch.tensor(init.copy(), requires_grad=True)
        ref = torch.optim.Adam([theirs], lr=0.05, betas=(0.9, 0.98), eps=1e-9,
                               amsgrad=use_ams, weight_decay=weight_decay)
        for g in grads:
            ours["w"].grad = g
            opt.step(0.05)
            theirs.grad = torch.tensor(g)
            ref.step()
        np.testing.assert_allclose(ours["w"].data, theirs.detach().numpy(), rtol=1e-10, atol=1e-12)


def test_float32_default_parameters():
    """Test parameters created outside a precision block are float32"""
    with precision(np.float32):
        assert Parameter(np.zeros(2)).dtype == np.float32
