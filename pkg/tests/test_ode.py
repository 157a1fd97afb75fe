import numpy as np
import pytest

from vortonlab.ode import StepUnderflow, dopri5, rk4_fixed


def oscillator(t, y):
    return np.array([y[1], -y[0]])


def test_dopri5_harmonic_oscillator():
    t = np.linspace(0, 20, 11)
    res = dopri5(oscillator, [1.0, 0.0], t, rtol=1e-11, atol=1e-11)
    assert res.reason == "completed"
    assert np.array_equal(res.t, t)
    assert np.allclose(res.y[:, 0], np.cos(t), atol=1e-9)
    assert np.allclose(res.y[:, 1], -np.sin(t), atol=1e-9)


def test_dopri5_error_tracks_tolerance():
    errs = []
    for tol in (1e-6, 1e-9):
        res = dopri5(oscillator, [1.0, 0.0], [10.0], rtol=tol, atol=tol)
        errs.append(abs(res.y[-1, 0] - np.cos(10.0)))
    assert errs[1] < errs[0] / 100


def test_dopri5_includes_start_time_sample():
    res = dopri5(oscillator, [1.0, 0.0], [0.0, 1.0])
    assert np.allclose(res.y[0], [1.0, 0.0])


def test_dopri5_stop_callback():
    res = dopri5(oscillator, [1.0, 0.0], [10.0], stop=lambda t, y: y[0] < 0)
    assert res.reason == "stopped"
    assert res.t_last < 10.0
    assert res.y_last[0] < 0


def test_dopri5_step_underflow_keeps_partial_result():
    # y' = y^2 blows up at t = 1
    with pytest.raises(StepUnderflow) as info:
        dopri5(lambda t, y: y * y, [1.0], np.linspace(0, 2, 5), min_step_frac=1e-10)
    part = info.value.result
    assert part.reason == "step_underflow"
    assert 0.99 < part.t_last < 1.0
    assert len(part.t) == 2


@pytest.mark.parametrize("t_out", [[], [1.0, 0.5], [-1.0]])
def test_output_time_validation(t_out):
    with pytest.raises(ValueError):
        dopri5(oscillator, [1.0, 0.0], t_out)


def test_rk4_fourth_order():
    errs = []
    for dt in (0.1, 0.05):
        res = rk4_fixed(oscillator, [1.0, 0.0], [5.0], dt)
        errs.append(abs(res.y[-1, 0] - np.cos(5.0)))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(4.0, abs=0.1)


def test_rk4_hits_output_times_exactly():
    t = np.array([0.3, 0.35, 1.0])
    res = rk4_fixed(oscillator, [1.0, 0.0], t, 0.1)
    assert np.array_equal(res.t, t)
    assert np.allclose(res.y[:, 0], np.cos(t), atol=1e-6)


def test_rk4_requires_positive_step():
    with pytest.raises(ValueError):
        rk4_fixed(oscillator, [1.0, 0.0], [1.0], 0.0)


def test_unreachable_tolerance_underflows_instead_of_spinning():
    with pytest.raises(StepUnderflow):
        dopri5(oscillator, [1.0, 0.0], [1.0], rtol=1e-300, atol=1e-300)


def test_tolerances_must_be_positive():
    with pytest.raises(ValueError):
        dopri5(oscillator, [1.0, 0.0], [1.0], rtol=0.0)
