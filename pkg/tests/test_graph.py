import math

import numpy as np
import pytest

from slammot.core import Detection
from slammot.geometry import NoiseModel, Pose2, Velocity2, compose
from slammot.graph import (
    CompiledGraph,
    Factor,
    FactorGraph,
    FactorKind,
    GraphStructureError,
    add_motion,
    add_odometry,
    add_perception,
    add_prior,
    add_velocity,
    ego_key,
    factor_residual,
    obj_key,
    perception_payload,
    promote_to_keyframe,
    selected_component,
    vel_key,
)

from factories import BETA, EPS_DET, GAMMA, jacobian_fd_error, single_factor_graph


def det(pose, score=0.9):
    return Detection(pose, 4.0, 1.8, score, 0, 0.0)


def test_key_names_and_order():
    assert str(ego_key(5)) == "X5"
    assert str(obj_key(3, 7)) == "O3@7"
    assert str(vel_key(3, 7)) == "V3@7"
    assert ego_key(1) < obj_key(0, 0) < vel_key(0, 0)


def test_factor_arity_checked():
    with pytest.raises(GraphStructureError):
        Factor(FactorKind.ODO, (ego_key(0),), NoiseModel.from_sigmas([1, 1, 1]))


def test_add_factor_needs_existing_variables():
    g = FactorGraph()
    g.add_variable(ego_key(0), Pose2())
    with pytest.raises(GraphStructureError):
        add_odometry(g, 1, 2, Pose2(), NoiseModel.from_sigmas([1, 1, 1]))
    with pytest.raises(GraphStructureError):
        add_velocity(g, 1, 0, 1, NoiseModel.from_sigmas([1, 1]))


def test_add_odometry_initialises_new_keyframe():
    g = FactorGraph()
    g.add_variable(ego_key(0), Pose2(1, 0, math.pi / 2))
    add_odometry(g, 0, 5, Pose2(2, 0, 0), NoiseModel.from_sigmas([1, 1, 1]))
    p = g.pose(ego_key(5))
    assert (p.x, p.y, p.yaw) == pytest.approx((1, 2, math.pi / 2))
    assert np.allclose(factor_residual(g, 0), 0.0)


def test_perception_zero_residual_at_measurement():
    g = FactorGraph()
    X = Pose2(3, -1, 0.4)
    g.add_variable(ego_key(0), X)
    add_perception(g, 0, 1, 0, perception_payload([det(Pose2(10, 2, 0.1))], GAMMA, BETA, EPS_DET))
    assert compose(X, Pose2(10, 2, 0.1)).as_array() == pytest.approx(g.value(obj_key(1, 0)))
    assert np.allclose(factor_residual(g, 0), 0.0)


def test_perception_selection_switches_across_boundary():
    """Sweep O between two equal-weight components; the choice flips at the midpoint."""
    g = FactorGraph()
    g.add_variable(ego_key(0), Pose2())
    payload = perception_payload([det(Pose2(0, 0, 0)), det(Pose2(4, 0, 0))], GAMMA, BETA, EPS_DET)
    add_perception(g, 0, 1, 0, payload)
    chosen = []
    for x in np.linspace(0.0, 4.0, 41):
        g.set_value(obj_key(1, 0), Pose2(x, 0, 0))
        chosen.append(selected_component(g, 0))
        # brute force over the two components
        nll = [-payload.log_c[j] + 0.5 * np.sum((payload.sqrt_info[j] @ (np.array([x, 0, 0]) - payload.z_ego[j])) ** 2)
               for j in range(2)]
        assert chosen[-1] == int(np.argmin(nll))
    assert chosen[0] == 0 and chosen[-1] == 1
    assert chosen.index(1) in (20, 21)


def test_motion_and_velocity_residuals():
    g = FactorGraph()
    g.add_variable(obj_key(1, 0), Pose2(0, 0, 0))
    g.add_variable(vel_key(1, 0), Velocity2(10, 0))
    g.add_variable(obj_key(1, 1), Pose2(1, 0, 0))
    g.add_variable(vel_key(1, 1), Velocity2(9, 0.1))
    add_motion(g, 1, 0, 1, 0.1, NoiseModel.from_sigmas([1, 1, 1]))
    add_velocity(g, 1, 0, 1, NoiseModel.from_sigmas([1, 1]))
    assert np.allclose(factor_residual(g, 0), 0.0)
    assert np.allclose(factor_residual(g, 1), [1.0, -0.1])
    with pytest.raises(GraphStructureError):
        add_motion(g, 1, 0, 1, -0.1, NoiseModel.from_sigmas([1, 1, 1]))


def test_promote_to_keyframe():
    rel = Pose2(2.0, 0.5, 0.1)
    d = det(Pose2(10, 1, 0.2))
    (p,) = promote_to_keyframe([d], rel)
    assert p.pose_ego.as_array() == pytest.approx(compose(rel, d.pose_ego).as_array())
    assert (p.score, p.frame, p.stamp) == (d.score, d.frame, d.stamp)


def test_compiled_graph_matches_per_factor_residuals(rng):
    g = FactorGraph()
    for kind in FactorKind:
        sub = single_factor_graph(kind, rng)
        offset = len(g.factors)
        # shift track ids / frames so graphs do not collide
        for k, v in sub.variables.items():
            g.variables[type(k)(k.kind, k.frame + 10 * offset, k.track)] = v
        for f in sub.factors:
            keys = tuple(type(k)(k.kind, k.frame + 10 * offset, k.track) for k in f.keys)
            g.add_factor(Factor(f.kind, keys, f.noise, f.payload))
    cg = CompiledGraph(g)
    r = cg.residual(cg.pack())
    stacked = np.concatenate([r_ for r_ in (factor_residual(g, i) for i in range(len(g.factors)))])
    assert np.allclose(np.sort(r), np.sort(stacked))
    assert cg.cost(cg.pack()) == pytest.approx(0.5 * float(stacked @ stacked))


@pytest.mark.parametrize("kind", list(FactorKind))
def test_jacobians_match_fd(kind, rng):
    for _ in range(25):
        g = single_factor_graph(kind, rng)
        assert jacobian_fd_error(g, 0) < 1e-6


def test_without_object_factors():
    g = FactorGraph()
    g.add_variable(ego_key(0), Pose2())
    add_prior(g, ego_key(0), Pose2(), NoiseModel.from_sigmas([1, 1, 1]))
    add_perception(g, 0, 1, 0, perception_payload([det(Pose2(5, 0, 0))], GAMMA, BETA, EPS_DET))
    h = g.without_object_factors()
    assert [f.kind for f in h.factors] == [FactorKind.PRIOR]
    assert obj_key(1, 0) not in h.variables
