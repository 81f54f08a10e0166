"""Dormand-Prince 5(4) pair with its free 4th-order continuous extension."""

from __future__ import annotations

import math

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

ORDER = 5
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class Step:
    """One accepted (or attempted) step with dense output on ``[t, t + h]``."""

    __slots__ = ("t", "h", "y0", "y1", "f0", "f1", "K", "error", "_Q")

    def __init__(self, t, h, y0, y1, f0, f1, K, error):
        self.t, self.h, self.y0, self.y1 = t, h, y0, y1
        self.f0, self.f1, self.K, self.error = f0, f1, K, error
        self._Q = None

    @property
    def t1(self) -> float:
        return self.t + self.h

    def dense(self, t: float) -> np.ndarray:
        if self._Q is None:
            self._Q = self.K.T @ P
        x = (t - self.t) / self.h
        p = np.array([x, x * x, x ** 3, x ** 4])
        return self.y0 + self.h * (self._Q @ p)


def rk_step(fun, t: float, y: np.ndarray, f0: np.ndarray, h: float, rtol: float, atol: float) -> Step:
    n = y.size
    K = np.empty((7, n))
    K[0] = f0
    for s in range(1, 6):
        dy = K[:s].T @ A[s] * h
        K[s] = fun(y + dy)
    y1 = y + h * (K[:6].T @ B)
    f1 = fun(y1)
    K[6] = f1
    err = h * (K.T @ E)
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y1))
    r = err / scale
    error = math.sqrt(float(r @ r) / n)
    return Step(t, h, y, y1, f0, f1, K, error)


def initial_step(fun, y: np.ndarray, f0: np.ndarray, rtol: float, atol: float, h_max: float) -> float:
    """Starting step from the usual two-evaluation estimate (Hairer, Norsett, Wanner)."""
    scale = atol + np.abs(y) * rtol
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, h_max)
    f1 = fun(y + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / ORDER)
    return min(100 * h0, h1, h_max)


def step_factor(error: float) -> float:
    if error == 0.0:
        return MAX_FACTOR
    return min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * error ** (-1 / ORDER)))
