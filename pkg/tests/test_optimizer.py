import numpy as np
import pytest

from captrfuse.config import TrainConfig
from captrfuse.core.tensor import parameter
from captrfuse.services.optimizer import AdamW, AdamWState, adamw_step, lr_schedule


def test_first_step_moves_by_learning_rate(f64):
    config = TrainConfig(weight_decay=0.0)
    p = parameter([1.0, -2.0])
    adamw_step([p], [np.ones(2)], AdamWState(), config, lr=0.1)
    np.testing.assert_allclose(p.data, [0.9, -2.1], atol=1e-6)


def test_zero_gradient_without_decay_is_a_no_op(f64):
    config = TrainConfig(weight_decay=0.0)
    p = parameter([1.0, -2.0])
    state = AdamWState()
    for _ in range(3):
        adamw_step([p], [None], state, config, lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.step == 3


def test_decay_is_decoupled(f64):
    config = TrainConfig(weight_decay=0.01)
    p = parameter([1.0, -2.0])
    adamw_step([p], [np.zeros(2)], AdamWState(), config, lr=0.1)
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) * (1 - 0.1 * 0.01))


def test_lr_schedule():
    assert lr_schedule(0, 100, 5e-5) == 5e-5
    assert lr_schedule(50, 100, 5e-5) == pytest.approx(2.5e-5)
    assert lr_schedule(100, 100, 5e-5) == 0.0
    assert lr_schedule(150, 100, 5e-5) == 0.0
    assert lr_schedule(0, 0, 5e-5) == 0.0


def test_optimizer_follows_schedule(f64):
    p = parameter([0.0])
    opt = AdamW([p], TrainConfig(weight_decay=0.0), base_lr=0.1, total_steps=2)
    p.grad = np.ones(1)
    assert opt.step() == 0.1
    assert opt.lr == pytest.approx(0.05)
    opt.zero_grad()
    assert p.grad is None
