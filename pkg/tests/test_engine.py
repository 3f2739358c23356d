import math

import numpy as np
import pytest

from app.core.errors import NumericalError, UsageError
from app.engine.functional import bce_loss, gelu, layer_norm, softmax
from app.engine.gradcheck import grad_check
from app.engine.optim import AdamW, OptimizerState, adamw_step, clip_grad_norm, lr_schedule
from app.engine.random import Stream, make_rng
from app.engine.tensor import ComputationTape, Tensor, concat, no_grad, stack
from app.models.layers import EncoderBlock


class TestTensor:
    def test_matmul_identity(self):
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal((Tensor(np.eye(2)) @ b).data, b.data)

    def test_matmul_zero(self):
        out = Tensor(np.zeros((2, 3))) @ Tensor(np.arange(6.0).reshape(3, 2))
        assert np.array_equal(out.data, np.zeros((2, 2)))

    def test_matmul_dot_product(self):
        assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_matmul_is_associative(self):
        rng = make_rng(7, Stream.GRAD_CHECK)
        for _ in range(100):
            a, b, c = (Tensor(rng.standard_normal((4, 4))) for _ in range(3))
            assert np.max(np.abs(((a @ b) @ c).data - (a @ (b @ c)).data)) < 1e-9

    def test_non_finite_construction_raises(self):
        with pytest.raises(NumericalError):
            Tensor([1.0, float("nan")])

    def test_non_finite_result_raises(self):
        x = Tensor([0.0, 1.0], requires_grad=True)
        with pytest.raises(NumericalError):
            x.log()

    def test_item_needs_scalar(self):
        with pytest.raises(UsageError):
            Tensor([1.0, 2.0]).item()

    def test_backward_linear(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        x.sum().backward()
        assert x.grad.tolist() == [1.0, 1.0, 1.0]

    def test_backward_quadratic(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * x).sum().backward()
        assert x.grad.tolist() == [2.0, 4.0]

    def test_shared_input_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x + x).sum().backward()
        assert x.grad.tolist() == [7.0]

    def test_backward_needs_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(UsageError):
            (x * 2.0).backward()

    def test_tape_is_topological(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = (x * 2.0).tanh()
        loss = (y * x).sum()
        tape = ComputationTape.record(loss)
        position = {id(node): i for i, node in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node._parents:
                if parent.requires_grad:
                    assert position[id(parent)] < position[id(node)]
        assert tape.leaves() == [x]

    def test_no_grad_does_not_record(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_concat_and_stack_gradients(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((1, 3)), requires_grad=True)
        (concat([a, b], axis=0) * 2.0).sum().backward()
        assert np.array_equal(a.grad, np.full((2, 3), 2.0))
        c = Tensor(np.ones(3), requires_grad=True)
        stack([c, c], axis=0).sum().backward()
        assert np.array_equal(c.grad, np.full(3, 2.0))


class TestFunctional:
    def test_softmax_uniform(self):
        assert np.allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)

    def test_softmax_closed_form(self):
        assert np.allclose(softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75])

    def test_softmax_is_stable(self):
        assert np.allclose(softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])

    def test_softmax_shift_invariance(self):
        rng = make_rng(8, Stream.GRAD_CHECK)
        for _ in range(100):
            x = rng.standard_normal((3, 5)) * 10.0
            shift = rng.uniform(-500.0, 500.0)
            assert np.max(np.abs(softmax(Tensor(x + shift)).data - softmax(Tensor(x)).data)) < 1e-9

    def test_layer_norm_two_values(self):
        out = layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), 1e-12)
        assert np.allclose(out.data, [[-1.0, 1.0]])

    def test_layer_norm_constant_row(self):
        out = layer_norm(Tensor([[4.0, 4.0, 4.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)), 1e-12)
        assert np.allclose(out.data, 0.0)

    def test_layer_norm_zero_scale(self):
        out = layer_norm(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.zeros(3)), Tensor(np.full(3, 5.0)), 1e-12)
        assert np.allclose(out.data, 5.0)

    def test_bce_perfect(self):
        assert bce_loss(Tensor([1.0]), [1.0]).item() == pytest.approx(0.0, abs=1e-6)

    def test_bce_half(self):
        assert bce_loss(Tensor([0.5, 0.5]), [1.0, 0.0]).item() == pytest.approx(math.log(2.0))

    def test_bce_mean(self):
        assert bce_loss(Tensor([0.9, 0.1]), [1.0, 0.0]).item() == pytest.approx(-math.log(0.9))

    def test_bce_mask_ignores_padding(self):
        masked = bce_loss(Tensor([[0.9, 0.3]]), [[1.0, 0.0]], mask=np.array([[True, False]]))
        assert masked.item() == pytest.approx(-math.log(0.9))


class TestGradCheck:
    def test_linear_function(self):
        x = Tensor(make_rng(0, Stream.GRAD_CHECK, 1).standard_normal((3, 4)), requires_grad=True)
        w = Tensor(make_rng(0, Stream.GRAD_CHECK, 2).standard_normal((4, 2)), requires_grad=True)
        assert grad_check(lambda a, b: (a @ b).sum(), [x, w]) < 1e-8

    def test_softmax_cross_entropy(self):
        logits = Tensor(make_rng(1, Stream.GRAD_CHECK).standard_normal((4, 5)), requires_grad=True)
        target = np.eye(5)[[0, 2, 4, 1]]
        assert grad_check(lambda x: -(softmax(x).log() * Tensor(target)).sum(), [logits]) < 1e-4

    def test_gelu_and_layer_norm(self):
        rng = make_rng(2, Stream.GRAD_CHECK)
        x = Tensor(rng.standard_normal((2, 6)), requires_grad=True)
        gamma = Tensor(rng.standard_normal(6), requires_grad=True)
        beta = Tensor(rng.standard_normal(6), requires_grad=True)
        fn = lambda a, g, b: (gelu(layer_norm(a, g, b, 1e-12)) * Tensor(np.arange(6.0))).sum()
        assert grad_check(fn, [x, gamma, beta]) < 1e-4

    def test_encoder_block(self):
        rng = make_rng(3, Stream.INIT)
        block = EncoderBlock(8, 2, 16, 1e-12, rng)
        x = Tensor(rng.standard_normal((2, 3, 8)), requires_grad=True)
        mask = np.array([[True, True, False], [True, True, True]])
        weights = Tensor(rng.standard_normal((2, 3, 8)))
        fn = lambda *_: (block(x, mask) * weights).sum()
        assert grad_check(fn, [x, *block.parameters()], max_coordinates=80) < 1e-4


class TestOptimizer:
    def test_zero_gradient_is_fixed_point(self):
        params = {"w": np.array([1.0, -2.0])}
        adamw_step(params, {"w": np.zeros(2)}, OptimizerState(weight_decay=0.0), lr=0.1)
        assert params["w"].tolist() == [1.0, -2.0]

    def test_first_step_is_sign_update(self):
        params = {"w": np.array([1.0])}
        adamw_step(params, {"w": np.array([0.5])}, OptimizerState(weight_decay=0.0), lr=0.1)
        assert params["w"][0] == pytest.approx(0.9, abs=1e-6)

    def test_decoupled_decay(self):
        params = {"w": np.array([1.0])}
        adamw_step(params, {"w": np.array([0.0])}, OptimizerState(weight_decay=0.1), lr=0.1)
        assert params["w"][0] == pytest.approx(0.99)

    def test_state_shapes_and_counter(self):
        w = Tensor(np.ones((2, 3)), requires_grad=True)
        optimizer = AdamW({"w": w})
        for expected in (1, 2):
            (w * w).sum().backward()
            optimizer.step(0.01)
            optimizer.zero_grad()
            assert optimizer.state.step == expected
        assert optimizer.state.first_moment["w"].shape == (2, 3)
        assert optimizer.state.second_moment["w"].shape == (2, 3)

    def test_clip_grad_norm(self):
        w = Tensor(np.zeros(2), requires_grad=True)
        w.grad = np.array([3.0, 4.0])
        norm = clip_grad_norm({"w": w}, 1.0)
        assert norm == pytest.approx(5.0)
        assert np.allclose(w.grad, [0.6, 0.8])

    def test_schedule_start(self):
        assert lr_schedule(0, 10, 2, 0.0, 1e-3) == 1e-3

    def test_schedule_half_cycle(self):
        assert lr_schedule(5, 10, 2, 1e-5, 1e-3) == pytest.approx((1e-3 + 1e-5) / 2)

    def test_schedule_restart(self):
        assert lr_schedule(10, 10, 2, 0.0, 1e-3) == 1e-3
        assert lr_schedule(30, 10, 2, 0.0, 1e-3) == 1e-3
        assert lr_schedule(20, 10, 2, 0.0, 1e-3) < 1e-3


def test_streams_are_independent():
    a = make_rng(5, Stream.SCENE, 17).random(4)
    make_rng(5, Stream.SHUFFLE, 0).random(100)
    assert np.array_equal(a, make_rng(5, Stream.SCENE, 17).random(4))
    assert not np.array_equal(a, make_rng(5, Stream.SCENE, 18).random(4))
