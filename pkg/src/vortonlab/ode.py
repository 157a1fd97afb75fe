"""Explicit Runge-Kutta integrators shared by the vorton and reduced solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["OdeResult", "StepUnderflow", "dopri5", "rk4_fixed"]


class StepUnderflow(ArithmeticError):
    """Adaptive step fell below the allowed minimum.

    ``result`` holds the trajectory up to the last accepted step.
    """

    def __init__(self, message: str, result: "OdeResult"):
        super().__init__(message)
        self.result = result


@dataclass
class OdeResult:
    t: np.ndarray
    y: np.ndarray
    reason: str = "completed"
    n_steps: int = 0
    n_rejected: int = 0
    t_last: float = 0.0
    y_last: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4


def _check_times(t0: float, t_out) -> np.ndarray:
    t_out = np.asarray(t_out, dtype=float)
    if t_out.ndim != 1 or len(t_out) == 0:
        raise ValueError("output times must be a non-empty 1-D sequence")
    if np.any(np.diff(t_out) < 0) or t_out[0] < t0:
        raise ValueError("output times must be sorted and not before the start time")
    return t_out


def dopri5(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t_out,
    *,
    t0: float = 0.0,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    h0: float | None = None,
    min_step_frac: float = 1e-14,
    max_steps: int = 10_000_000,
    stop: Callable[[float, np.ndarray], bool] | None = None,
) -> OdeResult:
    """Embedded Dormand-Prince 5(4) with PI step-size control.

    Steps are clipped so every requested output time is hit exactly. If the
    step falls below ``min_step_frac * (t_end - t0)`` a :class:`StepUnderflow`
    carrying the partial result is raised. ``stop(t, y)`` is checked after
    each accepted step and ends the integration early.
    """
    if not (rtol > 0 and atol > 0):
        raise ValueError("tolerances must be positive")
    t_out = _check_times(t0, t_out)
    y = np.array(y0, dtype=float)
    span = t_out[-1] - t0
    h_min = min_step_frac * max(span, 1e-300)
    ts, ys = [], []
    t = t0
    k1 = f(t, y)
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        with np.errstate(over="ignore", invalid="ignore"):
            d0 = np.sqrt(np.mean((y / scale) ** 2))
            d1 = np.sqrt(np.mean((k1 / scale) ** 2))
            h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
        if not np.isfinite(h):
            h = 1e-6
        h = min(h, span if span > 0 else 1.0)
    else:
        h = h0
    err_old = 1e-4
    n_steps = n_rej = 0
    idx = 0
    while idx < len(t_out) and t_out[idx] <= t:
        ts.append(t_out[idx])
        ys.append(y.copy())
        idx += 1

    def result(reason):
        return OdeResult(
            np.array(ts), np.array(ys) if ys else np.empty((0,) + y.shape), reason, n_steps, n_rej, t, y.copy()
        )

    while idx < len(t_out):
        target = t_out[idx]
        if n_steps + n_rej > max_steps:
            raise StepUnderflow("maximum number of steps exceeded", result("max_steps"))
        clipped = t + h >= target
        step = target - t if clipped else h
        ks = [k1]
        for s in range(1, 7):
            yi = y + step * sum(a * k for a, k in zip(_A[s], ks))
            ks.append(f(t + _C[s] * step, yi))
        y_new = y + step * sum(b * k for b, k in zip(_B, ks) if b != 0.0)
        err_vec = step * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(over="ignore", invalid="ignore"):
            err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not np.isfinite(err):
            err = 1e10
        if err <= 1.0:
            t = target if clipped else t + step
            y = y_new
            k1 = ks[6]
            n_steps += 1
            fac = 0.9 * err ** (-0.7 / 5) * err_old ** (0.4 / 5) if err > 0 else 10.0
            fac = min(10.0, max(0.2, fac))
            err_old = max(err, 1e-4)
            if not clipped:
                h = step * fac
            else:
                h = max(h, step * fac) if step < h else step * fac
            while idx < len(t_out) and t_out[idx] <= t:
                ts.append(t_out[idx])
                ys.append(y.copy())
                idx += 1
            if stop is not None and stop(t, y):
                return result("stopped")
        else:
            n_rej += 1
            h = step * max(0.2, 0.9 * err ** (-1 / 5))
        if not (h >= h_min) and idx < len(t_out):
            raise StepUnderflow(f"step size {h:.3e} below minimum {h_min:.3e} at t={t:.6g}", result("step_underflow"))
    return result("completed")


def rk4_fixed(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t_out,
    dt: float,
    *,
    t0: float = 0.0,
    stop: Callable[[float, np.ndarray], bool] | None = None,
) -> OdeResult:
    """Classical fourth-order Runge-Kutta with step dt, clipped at output times."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    t_out = _check_times(t0, t_out)
    y = np.array(y0, dtype=float)
    t = t0
    ts, ys = [], []
    n_steps = 0
    for target in t_out:
        while t < target - 1e-14 * max(1.0, abs(target)):
            h = min(dt, target - t)
            a = f(t, y)
            b = f(t + h / 2, y + h / 2 * a)
            c = f(t + h / 2, y + h / 2 * b)
            d = f(t + h, y + h * c)
            y = y + h / 6 * (a + 2 * b + 2 * c + d)
            t = t + h
            n_steps += 1
            if stop is not None and stop(t, y):
                return OdeResult(np.array(ts), np.array(ys), "stopped", n_steps, 0, t, y.copy())
        t = target
        ts.append(target)
        ys.append(y.copy())
    return OdeResult(np.array(ts), np.array(ys), "completed", n_steps, 0, t, y.copy())
