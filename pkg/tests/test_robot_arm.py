import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hlstc.robot_arm import (
    A_CLOSED,
    RobotArm,
    RobotArmParams,
    controller,
    error_input_matrix,
    make_model,
    mean_value_param,
    observer_rhs,
    plant_rhs,
    polytopic,
)

P = RobotArmParams()
coords = st.floats(-10, 10)


def test_default_params():
    assert P.a == pytest.approx(4.905)
    assert (P.b, P.theta1, P.theta2) == (2.0, 10.0, 10.0)
    with pytest.raises(ValueError):
        RobotArmParams(b=0.0)


def test_plant_examples():
    np.testing.assert_array_equal(plant_rhs([0.0, 0.0], 0.0, P), [0.0, 0.0])
    np.testing.assert_allclose(plant_rhs([math.pi / 2, 1.0], 0.0, P), [1.0, -4.905], rtol=1e-15)
    np.testing.assert_allclose(plant_rhs([1.0, 0.0], controller([1.0, 0.0], P), P), [0.0, -1.0], atol=1e-15)


def test_controller_examples():
    assert controller([0.0, 0.0], P) == 0.0
    assert controller([math.pi / 2, 0.0], P) == pytest.approx(0.5 * (4.905 - math.pi / 2), rel=1e-15)
    assert controller([math.pi / 2, 0.0], P) == pytest.approx(1.66710, abs=5e-6)


@given(coords, coords)
def test_controller_odd(x1, x2):
    assert controller([-x1, -x2], P) == -controller([x1, x2], P)


def test_observer_examples():
    np.testing.assert_array_equal(observer_rhs([0.0, 0.0], 0.0, 1.0, P), [10.0, 10.0])


@given(coords, coords, st.floats(-5, 5))
def test_observer_zero_innovation_copies_plant(x1, x2, u):
    x = [x1, x2]
    np.testing.assert_array_equal(observer_rhs(x, u, x1, P), plant_rhs(x, u, P))


def test_observer_error_vertices_hurwitz():
    for A_o in polytopic(P).A_o_vertices:
        assert np.all(np.linalg.eigvals(A_o).real < 0)
    # characteristic polynomial s^2 + 10 s + (10 + a_t) at each vertex
    for v, A_o in zip(polytopic(P).vertices, polytopic(P).A_o_vertices):
        np.testing.assert_allclose(np.poly(A_o), [1.0, 10.0, 10.0 + v], atol=1e-12)


def test_polytopic_structure():
    abst = polytopic(P)
    np.testing.assert_array_equal(abst.A, A_CLOSED)
    np.testing.assert_array_equal(abst.A, [[0, 1], [-1, -1]])
    assert abst.vertices == (-P.a, P.a)
    np.testing.assert_array_equal(error_input_matrix(0.0), [[0, 0], [-1, -1]])
    # same vertex set as [[-t1, 1], [-t2 + a_t, 0]]
    flipped = {tuple(np.array([[-10.0, 1.0], [-10.0 + v, 0.0]]).ravel()) for v in abst.vertices}
    assert {tuple(m.ravel()) for m in abst.A_o_vertices} == flipped


def test_polytopic_residual_random_grid():
    rng = np.random.default_rng(0)
    for x_p, e in zip(rng.uniform(-10, 10, (500, 2)), rng.uniform(-10, 10, (500, 2))):
        a_t = float(mean_value_param(x_p[0], e[0], P.a))
        lhs = plant_rhs(x_p, controller(x_p + e, P), P)
        rhs = A_CLOSED @ x_p + error_input_matrix(a_t) @ e
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


def test_polytopic_e_zero_is_linear():
    rng = np.random.default_rng(1)
    for x_p in rng.uniform(-10, 10, (50, 2)):
        np.testing.assert_allclose(plant_rhs(x_p, controller(x_p, P), P), A_CLOSED @ x_p, atol=1e-13)


def test_observer_error_matches_polytope():
    rng = np.random.default_rng(2)
    for x_p, x_o, u in zip(rng.uniform(-10, 10, (200, 2)), rng.uniform(-10, 10, (200, 2)), rng.normal(size=200)):
        e_o = x_o - x_p
        a_t = float(mean_value_param(x_p[0], e_o[0], P.a))
        lhs = observer_rhs(x_o, u, x_p[0], P) - plant_rhs(x_p, u, P)
        rhs = np.array([[-10.0, 1.0], [-10.0 - a_t, 0.0]]) @ e_o
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_mean_value_identity_grid():
    x1, e1 = np.meshgrid(np.linspace(-10, 10, 100), np.linspace(-10, 10, 100))
    a_t = mean_value_param(x1, e1, P.a)
    np.testing.assert_allclose(-P.a * (np.sin(x1) - np.sin(x1 + e1)), a_t * e1, atol=1e-12)
    assert np.all(np.abs(a_t) <= P.a * (1 + 1e-15))


def test_mean_value_limit():
    x1 = np.linspace(-10, 10, 41)
    np.testing.assert_allclose(mean_value_param(x1, 0.0, P.a), P.a * np.cos(x1), rtol=1e-15)
    np.testing.assert_allclose(mean_value_param(x1, 1e-9, P.a), P.a * np.cos(x1), atol=1e-8)


def test_closed_loop_origin_unique():
    g = np.linspace(-10, 10, 201)
    x1, x2 = np.meshgrid(g, g)
    u = (P.a * np.sin(x1) - x1 - x2) / P.b
    f = np.stack([x2, -P.a * np.sin(x1) + P.b * u])
    norms = np.linalg.norm(f, axis=0)
    zero = norms < 1e-12
    assert zero.sum() == 1
    assert x1[zero][0] == 0.0 and x2[zero][0] == 0.0


def test_model_bundle():
    arm = make_model("robot_arm", {"theta2": 4.0})
    assert isinstance(arm, RobotArm)
    assert arm.params.theta2 == 4.0
    assert arm.output([3.0, 1.0]) == 3.0
    with pytest.raises(ValueError):
        make_model("pendulum")
