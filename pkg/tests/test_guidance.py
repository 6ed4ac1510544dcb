import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ogmp.guidance import (
    BREAKDOWN_COLUMNS,
    OBS_SIZE,
    TERM_NAMES,
    DeviationBounds,
    RankTraceState,
    RewardConfig,
    check_termination,
    object_rewards,
    observe,
    preference_reward,
    regularization_rewards,
    total_reward,
    tracking_rewards,
    write_reward_breakdown,
)
from ogmp.oracle import ReferenceState
from ogmp.world import make_task, reset


@pytest.fixture
def world():
    return reset(make_task("soccer_stop", init_randomization=0.0), seed=0)


def perfect_ref(w):
    return ReferenceState.measured(w.robot.p, w.robot.heading, w.object_position, w.robot.v, w.robot.omega,
                                   w.object_velocity)


def all_terms(w, ref, cfg, rank, violated=0.0):
    terms = {**tracking_rewards(w, ref, cfg), **object_rewards(w, ref, cfg, rank),
             **regularization_rewards(w, cfg)}
    terms["mode_preference"] = np.atleast_1d(float(violated))
    return terms


class TestObserve:
    def test_layout_at_rest(self, world):
        obs = observe(world, make_task("soccer_stop"), 0, 20)
        assert obs.shape == (1, OBS_SIZE)
        np.testing.assert_allclose(obs[0, :2], [1.0, 0.0])
        np.testing.assert_array_equal(obs[0, 2:8], 0.0)
        np.testing.assert_allclose(obs[0, 16:], [1.0, 0.0])

    def test_phase_encoding(self, world):
        spec = make_task("soccer_stop")
        np.testing.assert_allclose(observe(world, spec, 10, 20)[0, 16:], [-1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(observe(world, spec, 5, 20)[0, 16:], [0.0, 1.0], atol=1e-12)

    def test_offsets(self, world):
        spec = make_task("soccer_stop")
        obs = observe(world, spec, 0, 20)[0]
        np.testing.assert_allclose(obs[8:10], world.object_position[0] - world.robot.p[0])
        np.testing.assert_allclose(obs[12:14], np.asarray(spec.target) - world.robot.p[0])


class TestPreference:
    @pytest.mark.parametrize("ranks,expected", [
        ([0, 1, 0], [0, 0, 1]),
        ([0, 1, 2, 1], [0, 0, 0, 1]),
        ([0, 0, 0], [0, 0, 0]),
        ([2, 0, 1, 2], [0, 1, 1, 0]),
    ])
    def test_examples(self, ranks, expected):
        trace = RankTraceState.fresh()
        got = []
        for r in ranks:
            v, trace = preference_reward(trace, [r])
            got.append(v[0])
        assert got == expected

    def test_reset_clears_history(self):
        trace = RankTraceState.fresh(2)
        preference_reward(trace, [2, 2])
        trace.reset(np.array([True, False]))
        v, _ = preference_reward(trace, [0, 0])
        np.testing.assert_array_equal(v, [0.0, 1.0])

    def test_violation_weight(self):
        cfg = RewardConfig.paper_defaults()
        total, weighted = total_reward({"mode_preference": np.ones(1)}, cfg)
        assert total[0] == -5.0 and weighted["mode_preference"][0] == -5.0


class TestTracking:
    def test_perfect_tracking_is_one(self, world):
        for v in tracking_rewards(world, perfect_ref(world), RewardConfig()).values():
            assert v[0] == 1.0

    def test_position_error(self, world):
        ref = perfect_ref(world)
        ref.p_robot_ref = ref.p_robot_ref + [0.2, 0.0]
        assert tracking_rewards(world, ref, RewardConfig())["base_pos"][0] == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_orthogonal_heading(self, world):
        ref = perfect_ref(world)
        ref.heading_ref = np.array([[0.0, 1.0]])
        assert tracking_rewards(world, ref, RewardConfig())["base_ori"][0] == pytest.approx(np.exp(-5.0), rel=1e-12)

    def test_heading_sign_invariant(self, world):
        ref = perfect_ref(world)
        ref.heading_ref = -ref.heading_ref
        assert tracking_rewards(world, ref, RewardConfig())["base_ori"][0] == pytest.approx(1.0)


class TestObjectTerms:
    def test_gated_off_in_reach(self, world):
        terms = object_rewards(world, perfect_ref(world), RewardConfig(), np.array([0]))
        assert all(v[0] == 0.0 for v in terms.values())

    def test_manipulate_gate(self, world):
        world.robot.p[:] = world.object_position - [0.3, 0.0]
        terms = object_rewards(world, perfect_ref(world), RewardConfig(), np.array([1]))
        assert terms["object_proximity"][0] == 1.0
        assert terms["ball_rest_penalty"][0] == 1.0
        assert terms["object_pos"][0] == 0.0

    def test_detach_gate(self, world):
        terms = object_rewards(world, perfect_ref(world), RewardConfig(), np.array([2]))
        assert terms["object_pos"][0] == 1.0 and terms["object_lin_vel"][0] == 1.0
        assert terms["object_proximity"][0] == 0.0


class TestRegularization:
    def test_disabled_by_default(self, world):
        assert all(v[0] == 0.0 for v in regularization_rewards(world, RewardConfig()).values())

    def test_zero_wrench(self, world):
        terms = regularization_rewards(world, RewardConfig(regularization_enabled=True))
        assert all(v[0] == 1.0 for v in terms.values())

    def test_effort_magnitude(self, world):
        cfg = RewardConfig(regularization_enabled=True)
        terms = regularization_rewards(world, cfg, action=[4.0, 0.0, 0.0])
        assert terms["effort_mag"][0] == pytest.approx(np.exp(-1.0), rel=1e-12)
        assert terms["effort_rate"][0] == pytest.approx(np.exp(-1.0), rel=1e-12)


class TestTotal:
    def test_perfect_reach(self, world):
        cfg = RewardConfig.paper_defaults()
        total, _ = total_reward(all_terms(world, perfect_ref(world), cfg, np.array([0])), cfg)
        assert total[0] == pytest.approx(0.9, abs=1e-12)

    def test_perfect_reach_with_violation(self, world):
        cfg = RewardConfig.paper_defaults()
        total, _ = total_reward(all_terms(world, perfect_ref(world), cfg, np.array([0]), 1.0), cfg)
        assert total[0] == pytest.approx(-4.1, abs=1e-12)

    def test_config_validation(self):
        assert len(TERM_NAMES) == 12
        with pytest.raises(ValueError):
            RewardConfig(terms={"bogus": None})


class TestTermination:
    def test_inside_bounds(self, world):
        ref = perfect_ref(world)
        ref.p_robot_ref = ref.p_robot_ref + [0.39, -0.39]
        assert not check_termination(world, ref, DeviationBounds(), True)[0]

    @pytest.mark.parametrize("coord", range(4))
    def test_each_coordinate(self, world, coord):
        ref = perfect_ref(world)
        shift = np.zeros(4)
        shift[coord] = 0.41
        ref.p_robot_ref = ref.p_robot_ref + shift[:2]
        ref.p_object_ref = ref.p_object_ref + shift[2:]
        assert check_termination(world, ref, DeviationBounds(), True)[0]
        assert not check_termination(world, ref, DeviationBounds(), False)[0]

    def test_zero_weight_disables(self, world):
        ref = perfect_ref(world)
        ref.p_object_ref = ref.p_object_ref + [5.0, 5.0]
        bounds = DeviationBounds(weight_matrix_diag=(1.0, 1.0, 0.0, 0.0))
        assert not check_termination(world, ref, bounds, True)[0]

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            DeviationBounds(rho_robot_x=0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(1.0, 2.0))
    def test_monotone_in_deviation(self, d, factor):
        w = reset(make_task("soccer_stop", init_randomization=0.0), seed=0)
        ref = perfect_ref(w)
        small, large = ref, perfect_ref(w)
        small.p_robot_ref = small.p_robot_ref + [d, 0.0]
        large.p_robot_ref = large.p_robot_ref + [d * factor, 0.0]
        if check_termination(w, small, DeviationBounds(), True)[0]:
            assert check_termination(w, large, DeviationBounds(), True)[0]


def test_breakdown_csv(tmp_path):
    path = write_reward_breakdown(tmp_path / "b.csv", [(0, "base_pos", 1.0, 0.3), (0, "mode_preference", 1, -5)])
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == BREAKDOWN_COLUMNS
    assert rows[2] == ["0", "mode_preference", "1", "-5"]
