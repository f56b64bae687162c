from __future__ import annotations

import numpy as np


class Quintic:
    """Quintic p(t) on [0, T] matching position, velocity and acceleration at both ends."""

    def __init__(self, p0, v0, a0, p1, v1, a1, T):
        if T <= 0:
            raise ValueError("duration must be positive")
        self.T = float(T)
        A = np.array(
            [
                [T**3, T**4, T**5],
                [3 * T**2, 4 * T**3, 5 * T**4],
                [6 * T, 12 * T**2, 20 * T**3],
            ]
        )
        b = np.array(
            [
                p1 - p0 - v0 * T - 0.5 * a0 * T**2,
                v1 - v0 - a0 * T,
                a1 - a0,
            ]
        )
        c3, c4, c5 = np.linalg.solve(A, b)
        self.coef = np.array([p0, v0, 0.5 * a0, c3, c4, c5], dtype=float)

    def _clip(self, t):
        return np.clip(t, 0.0, self.T)

    def pos(self, t):
        c = self.coef
        tc = self._clip(t)
        p = c[0] + tc * (c[1] + tc * (c[2] + tc * (c[3] + tc * (c[4] + tc * c[5]))))
        # outside [0, T]: continue at the boundary velocity
        t = np.asarray(t, dtype=float)
        return p + np.where(t > self.T, (t - self.T) * self.vel(self.T), np.minimum(t, 0.0) * c[1])

    def vel(self, t):
        c = self.coef
        t = self._clip(t)
        return c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])))

    def acc(self, t):
        c = self.coef
        tc = self._clip(t)
        a = 2 * c[2] + tc * (6 * c[3] + tc * (12 * c[4] + tc * 20 * c[5]))
        return np.where(np.asarray(t) > self.T, 0.0, a) if np.ndim(t) else (0.0 if t > self.T else float(a))

    def jerk(self, t):
        c = self.coef
        t = self._clip(t)
        return 6 * c[3] + t * (24 * c[4] + t * 60 * c[5])
