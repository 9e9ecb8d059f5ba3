import numpy as np
import pytest

from microdualnet.nn import Buffer, Parameter
from microdualnet.optim import OptimState, decay_groups, lr_at, sgd_step
from microdualnet.tensor import NonFiniteError


def test_plain_gradient_descent():
    p = Parameter(np.array([1.0, 2.0]))
    sgd_step([p], OptimState(lr=1.0, momentum=0.0, weight_decay=0.0), [np.array([0.5, -1.0])])
    assert np.array_equal(p.data, [0.5, 3.0])


def test_momentum_recursion_two_steps():
    g = np.array([1.0, -2.0])
    p = Parameter(np.zeros(2))
    state = OptimState(lr=1.0, momentum=0.9, weight_decay=0.0)
    sgd_step([p], state, [g])
    sgd_step([p], state, [g])
    assert np.allclose(p.data, -(g + 1.9 * g))


def test_zero_grad_no_change():
    p = Parameter(np.array([3.0]))
    sgd_step([p], OptimState(weight_decay=0.0), [np.zeros(1)])
    assert p.data[0] == 3.0


def test_weight_decay_skips_exempt_params():
    a, b = Parameter(np.ones(1)), Parameter(np.ones(1), decay=False)
    sgd_step([a, b], OptimState(lr=1.0, momentum=0.0, weight_decay=0.1), [np.zeros(1), np.zeros(1)])
    assert a.data[0] == pytest.approx(0.9) and b.data[0] == 1.0


def test_buffers_are_never_stepped():
    buf = Buffer(np.ones(2))
    buf.grad = np.ones(2)
    sgd_step([buf], OptimState(lr=1.0))
    assert np.array_equal(buf.data, [1.0, 1.0])


def test_nonfinite_gradient_leaves_model_untouched():
    a, b = Parameter(np.ones(1)), Parameter(np.ones(1))
    with pytest.raises(NonFiniteError):
        sgd_step([a, b], OptimState(lr=1.0), [np.ones(1), np.array([np.nan])])
    assert a.data[0] == 1.0


def test_schedule_endpoints():
    assert lr_at(0, 120) == 0.001
    assert lr_at(10, 120) == 0.010
    assert lr_at(120, 120) == 0.0


def test_schedule_monotone_segments():
    warm = [lr_at(e, 120) for e in np.linspace(0, 10, 21)]
    decay = [lr_at(e, 120) for e in np.linspace(10, 120, 50)]
    assert np.all(np.diff(warm) > 0) and np.all(np.diff(decay) <= 0)


def test_decay_groups():
    named = [("w", Parameter(np.ones(1))), ("b", Parameter(np.ones(1), decay=False))]
    assert decay_groups(named) == (["w"], ["b"])
