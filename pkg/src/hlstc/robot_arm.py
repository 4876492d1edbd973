"""Single-link robot arm: plant, feedback-linearising controller, observer.

Plant ``x1' = x2``, ``x2' = -a sin(x1) + b u``, output ``y = x1``.
Controller ``u = (a sin(x1) - x1 - x2) / b`` evaluated at the observer state.
Observer is a Luenberger copy of the plant with output injection gains
``theta1`` and ``theta2``.

With ``e = x_hat - x_p`` the closed loop is exactly ``A x + B(a_t) e`` where
``a_t = a (sin(x1 + e1) - sin(x1)) / e1`` lies in ``[-a, a]``; the observer
error obeys ``e_o' = A_o(a_t) e_o`` with the same divided difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

A_CLOSED = np.array([[0.0, 1.0], [-1.0, -1.0]])


@dataclass(frozen=True)
class RobotArmParams:
    a: float = 9.81 / 2
    b: float = 2.0
    theta1: float = 10.0
    theta2: float = 10.0

    def __post_init__(self):
        if self.b == 0:
            raise ValueError("input gain b must be nonzero")
        if self.a < 0:
            raise ValueError("gravity coefficient a must be nonnegative")


def plant_rhs(x_p, u_hat: float, p: RobotArmParams) -> np.ndarray:
    return np.array([x_p[1], -p.a * math.sin(x_p[0]) + p.b * u_hat])


def controller(x, p: RobotArmParams) -> float:
    return (p.a * math.sin(x[0]) - x[0] - x[1]) / p.b


def observer_rhs(x_o, u_hat: float, y: float, p: RobotArmParams) -> np.ndarray:
    innovation = y - x_o[0]
    return np.array(
        [
            x_o[1] + p.theta1 * innovation,
            -p.a * math.sin(x_o[0]) + p.b * u_hat + p.theta2 * innovation,
        ]
    )


def mean_value_param(x1, e1, a: float):
    """Divided difference ``a (sin(x1 + e1) - sin(x1)) / e1``; ``a cos(x1)`` at ``e1 = 0``.

    Uses ``sin(x+e) - sin(x) = 2 cos(x + e/2) sin(e/2)`` so small ``e1`` do not
    cancel catastrophically. Vectorised.
    """
    x1 = np.asarray(x1, dtype=float)
    e1 = np.asarray(e1, dtype=float)
    half = 0.5 * e1
    # sinc(z) = sin(pi z)/(pi z), so sin(h)/h = sinc(h/pi)
    ratio = np.sinc(half / np.pi)
    return a * np.cos(x1 + half) * ratio


@dataclass(frozen=True)
class PolytopicAbstraction:
    """Linear embedding of the closed loop and observer error over ``a_t in [-a, a]``.

    ``B_vertices[k]`` and ``A_o_vertices[k]`` belong to ``vertices[k]``.
    """

    A: np.ndarray
    vertices: tuple[float, float]
    B_vertices: tuple[np.ndarray, np.ndarray]
    A_o_vertices: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        if len(self.vertices) != 2 or len(self.B_vertices) != 2 or len(self.A_o_vertices) != 2:
            raise ValueError("a scalar polytope has exactly two vertices")


def error_input_matrix(a_t: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [a_t - 1.0, -1.0]])


def observer_error_matrix(a_t: float, p: RobotArmParams) -> np.ndarray:
    return np.array([[-p.theta1, 1.0], [-p.theta2 - a_t, 0.0]])


def polytopic(p: RobotArmParams) -> PolytopicAbstraction:
    vertices = (-p.a, p.a)
    return PolytopicAbstraction(
        A=A_CLOSED.copy(),
        vertices=vertices,
        B_vertices=tuple(error_input_matrix(v) for v in vertices),
        A_o_vertices=tuple(observer_error_matrix(v, p) for v in vertices),
    )


class RobotArm:
    """Model bundle consumed by the hybrid simulator."""

    name = "robot_arm"
    n_x = 2

    def __init__(self, params: RobotArmParams | None = None):
        self.params = params or RobotArmParams()

    def __repr__(self):
        return f"RobotArm({self.params})"

    def plant_rhs(self, x_p, u_hat):
        return plant_rhs(x_p, u_hat, self.params)

    def observer_rhs(self, x_o, u_hat, y):
        return observer_rhs(x_o, u_hat, y, self.params)

    def controller(self, x):
        return controller(x, self.params)

    def output(self, x_p):
        return x_p[0]

    def polytopic(self) -> PolytopicAbstraction:
        return polytopic(self.params)


MODELS = {"robot_arm": (RobotArm, RobotArmParams)}


def make_model(name: str, params: dict | None = None):
    try:
        cls, params_cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; available: {sorted(MODELS)}") from None
    return cls(params_cls(**(params or {})))
