"""Ground-truth plants used as stand-ins for the unknown dynamics."""

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class PlantSpec:
    name: str
    state_dim: int
    input_dim: int
    input_low: np.ndarray
    input_high: np.ndarray
    step: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.input_low, dtype=float))
        hi = np.atleast_1d(np.asarray(self.input_high, dtype=float))
        if lo.shape != (self.input_dim,) or hi.shape != (self.input_dim,):
            raise ValueError("input bounds must have one entry per input dimension")
        if np.any(lo > hi):
            raise ValueError("input_low must not exceed input_high")
        object.__setattr__(self, "input_low", lo)
        object.__setattr__(self, "input_high", hi)

    def __call__(self, x, u):
        return self.step(np.asarray(x, dtype=float), np.atleast_1d(np.asarray(u, dtype=float)))


def pendulum_step(x, u, dt=0.2):
    """Euler-discretised damped inverted pendulum; x = [angle, angular velocity]."""
    x1, x2 = float(x[0]), float(x[1])
    u = float(np.ravel(u)[0])
    return np.array([x1 + dt * x2, x2 + dt * (np.sin(x1) - x2 + u)])


def linear_step(x, u, a=0.5, b=1.0):
    return np.array([a * float(x[0]) + b * float(np.ravel(u)[0])])


def clamp_input(u, spec):
    return np.clip(np.atleast_1d(np.asarray(u, dtype=float)), spec.input_low, spec.input_high)


def pendulum(dt=0.2, u_max=1.5):
    return PlantSpec(
        "pendulum", 2, 1, [-u_max], [u_max], lambda x, u: pendulum_step(x, u, dt)
    )


def linear(a=0.5, b=1.0, u_max=1.0):
    return PlantSpec("linear", 1, 1, [-u_max], [u_max], lambda x, u: linear_step(x, u, a, b))
