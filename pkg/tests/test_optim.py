"""Adam update math, frozen against hand-evaluated values."""

import numpy as np
import pytest

from playlang.autodiff import Tensor
from playlang.optim import AdamState, OptimError, adam_step


def _param(value):
    return {"w": Tensor(np.array([value], dtype=np.float32), requires_grad=True)}


def test_first_step_matches_hand_value():
    # g=0.5, lr=1e-3: m_hat=0.5, v_hat=0.25,
    # delta = 1e-3 * 0.5 / (0.5 + 1e-8) = 9.9999998e-4
    params = _param(1.0)
    state = AdamState(params, lr=1e-3)
    adam_step(params, {"w": np.array([0.5], np.float32)}, state)
    assert abs(float(params["w"].data[0]) - (1.0 - 9.9999998e-4)) < 1e-7
    assert state.step_count == 1


def test_second_step_same_gradient_not_larger():
    params = _param(1.0)
    state = AdamState(params, lr=1e-3)
    g = {"w": np.array([0.5], np.float32)}
    adam_step(params, g, state)
    p1 = float(params["w"].data[0])
    step1 = 1.0 - p1
    adam_step(params, g, state)
    step2 = p1 - float(params["w"].data[0])
    assert step2 <= step1 + 1e-9


def test_zero_gradient_leaves_params_but_advances_count():
    params = _param(3.0)
    state = AdamState(params, lr=1e-2)
    adam_step(params, {"w": np.zeros(1, np.float32)}, state)
    assert float(params["w"].data[0]) == 3.0
    assert state.step_count == 1


def test_missing_gradient_is_skipped():
    params = {"a": Tensor(np.ones(2, np.float32), requires_grad=True),
              "b": Tensor(np.ones(2, np.float32), requires_grad=True)}
    state = AdamState(params, lr=0.1)
    adam_step(params, {"a": np.full(2, 0.3, np.float32)}, state)
    assert np.array_equal(params["b"].data, np.ones(2, np.float32))
    assert not np.array_equal(params["a"].data, np.ones(2, np.float32))


def test_non_finite_gradient_names_parameter():
    params = _param(1.0)
    state = AdamState(params)
    with pytest.raises(OptimError) as err:
        adam_step(params, {"w": np.array([np.nan], np.float32)}, state)
    assert "'w'" in str(err.value)


def test_unknown_parameter_rejected():
    params = _param(1.0)
    state = AdamState(params)
    with pytest.raises(OptimError):
        adam_step(params, {"nope": np.zeros(1, np.float32)}, state)


def test_descends_a_quadratic():
    # sanity: 300 steps of Adam on f(w) = (w - 2)^2 gets close to the minimum
    params = _param(-1.0)
    state = AdamState(params, lr=0.05)
    for _ in range(300):
        w = float(params["w"].data[0])
        adam_step(params, {"w": np.array([2 * (w - 2.0)], np.float32)}, state)
    assert abs(float(params["w"].data[0]) - 2.0) < 0.05


def test_float32_dtype_preserved():
    params = _param(1.0)
    state = AdamState(params, lr=1e-3)
    adam_step(params, {"w": np.array([0.25], np.float32)}, state)
    assert params["w"].data.dtype == np.float32
