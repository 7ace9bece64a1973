"""Forward model: training, prediction, ARD relevance, rollouts."""

import numpy as np
import pytest

from plankrl import forward_model as fwd
from plankrl import gp
from plankrl.domain import Action, ActionBounds, GaussianState, State, Transition
from plankrl.errors import ContractViolationError

BOUNDS = ActionBounds.default()


def make_state(rng, goal=0.5):
    d = float(rng.uniform(0.05, 0.95))
    return State(
        x=float(rng.normal(scale=0.2)),
        z=float(rng.normal(scale=0.2)),
        theta=float(rng.uniform(-0.3, 0.3)),
        delta_d=d - goal,
        d=d,
        d_dot=float(rng.normal(scale=0.3)),
        tau=float(rng.uniform(0, 2)),
    )


def make_action(rng):
    return Action.from_array(rng.uniform(-1, 1, size=3) * BOUNDS.xi)


def stationary_transitions(rng, n=15):
    out = []
    for _ in range(n):
        s = make_state(rng)
        out.append(Transition(s, make_action(rng), s))
    return out


def synthetic_transitions(rng, n=60, goal=0.5):
    """Next state depends smoothly on the current state and action."""
    out = []
    for _ in range(n):
        s = make_state(rng, goal)
        a = make_action(rng)
        sv = s.as_array()
        nxt = sv.copy()
        nxt[0] += 0.25 * a.x_dot
        nxt[1] += 0.25 * a.z_dot
        nxt[2] = np.clip(sv[2] + 0.25 * a.theta_dot, -0.5, 0.5)
        nxt[4] = np.clip(sv[4] - 0.1 * np.sin(sv[2]), 0.0, 1.0)
        nxt[3] = nxt[4] - goal
        nxt[5] = 0.9 * sv[5] - 0.7 * np.sin(sv[2])
        nxt[6] = abs(0.5 * a.x_dot) + 0.5 * sv[6]
        out.append(Transition(s, a, State.from_array(nxt)))
    return out


class TestTrain:
    def test_requires_minimum_transitions(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ContractViolationError):
            fwd.train(stationary_transitions(rng, n=5))

    def test_stationary_data_predicts_zero_change(self):
        rng = np.random.default_rng(1)
        trs = stationary_transitions(rng, n=15)
        fm = fwd.train(trs, restarts=2, seed=0)
        for tr in trs[:5]:
            g = fwd.predict(fm, tr.s, tr.a)
            np.testing.assert_allclose(g.mean, tr.s.as_array(), atol=1e-3)

    def test_training_is_deterministic(self):
        rng = np.random.default_rng(2)
        trs = synthetic_transitions(rng, n=20)
        fm1 = fwd.train(trs, restarts=2, seed=5)
        fm2 = fwd.train(trs, restarts=2, seed=5)
        for m1, m2 in zip(fm1.models, fm2.models):
            assert np.array_equal(m1.hyper.lengthscales, m2.hyper.lengthscales)
            assert m1.hyper.signal_std == m2.hyper.signal_std

    def test_shared_training_inputs(self):
        rng = np.random.default_rng(3)
        fm = fwd.train(synthetic_transitions(rng, n=20), restarts=1)
        for m in fm.models[1:]:
            np.testing.assert_array_equal(m.inputs, fm.models[0].inputs)


class TestPredict:
    def test_prior_model_returns_state_and_prior_variance(self):
        hyper = gp.Hyperparams(np.ones(10), signal_std=0.8, noise_std=0.0)
        fm = fwd.ForwardModel.prior(hyper)
        s = np.array([0.1, 0.2, 0.0, -0.2, 0.3, 0.0, 1.0])
        g = fwd.predict(fm, s, np.zeros(3))
        np.testing.assert_allclose(g.mean, s, atol=1e-15)
        np.testing.assert_allclose(g.var, 0.64, atol=1e-15)

    def test_predictive_variance_includes_noise(self):
        hyper = gp.Hyperparams(np.ones(10), signal_std=0.8, noise_std=0.1)
        fm = fwd.ForwardModel.prior(hyper)
        g = fwd.predict(fm, np.zeros(7), np.zeros(3))
        np.testing.assert_allclose(g.var, 0.64 + 0.01, atol=1e-15)

    def test_interpolates_training_transition(self):
        rng = np.random.default_rng(4)
        trs = synthetic_transitions(rng, n=40)
        fm = fwd.train(trs, restarts=2, seed=1)
        tr = trs[7]
        g = fwd.predict(fm, tr.s, tr.a)
        np.testing.assert_allclose(g.mean, tr.s_next.as_array(), atol=0.05)

    def test_delta_d_consistency_reimposed(self):
        rng = np.random.default_rng(5)
        fm = fwd.train(synthetic_transitions(rng, n=30, goal=0.6), restarts=1)
        s = make_state(rng, goal=0.6)
        g = fwd.predict(fm, s, make_action(rng))
        goal = s.d - s.delta_d
        assert g.mean[3] == pytest.approx(g.mean[4] - goal, abs=1e-12)
        assert g.var[3] == g.var[4]

    def test_variances_bounded_on_random_queries(self):
        rng = np.random.default_rng(6)
        fm = fwd.train(synthetic_transitions(rng, n=30), restarts=1)
        for _ in range(200):
            g = fwd.predict(fm, make_state(rng), make_action(rng))
            for dim, m in enumerate(fm.models):
                cap = m.hyper.signal_std**2 + m.hyper.noise_std**2
                assert 0.0 <= g.var[dim] <= cap + 1e-12

    def test_predict_is_pure(self):
        rng = np.random.default_rng(7)
        fm = fwd.train(synthetic_transitions(rng, n=20), restarts=1)
        s, a = make_state(rng), make_action(rng)
        g1, g2 = fwd.predict(fm, s, a), fwd.predict(fm, s, a)
        np.testing.assert_array_equal(g1.mean, g2.mean)
        np.testing.assert_array_equal(g1.var, g2.var)

    def test_mean_change_within_sanity_envelope(self):
        rng = np.random.default_rng(8)
        trs = synthetic_transitions(rng, n=40)
        fm = fwd.train(trs, restarts=2, seed=2)
        X, dY = fwd.stack_transitions(trs)
        for _ in range(500):
            s, a = make_state(rng), make_action(rng)
            g = fwd.predict(fm, s, a)
            delta = g.mean - s.as_array()
            for dim, m in enumerate(fm.models):
                cap = np.max(np.abs(dY[:, dim])) + 3 * m.hyper.signal_std
                assert abs(delta[dim]) <= cap + 1e-9


class TestRelevance:
    def test_single_relevant_input_dominates(self):
        rng = np.random.default_rng(9)
        # Output 0 (x change) driven only by input 3 (delta_d).
        out = []
        for _ in range(50):
            s = make_state(rng)
            a = make_action(rng)
            nxt = s.as_array().copy()
            nxt[0] += np.sin(3.0 * s.delta_d)
            out.append(Transition(s, a, State.from_array(nxt)))
        fm = fwd.train(out, restarts=3, seed=3)
        table = fwd.relevance(fm)
        row = table[0]
        assert np.argmax(row) == 3
        others = np.delete(row, 3)
        assert np.all(others < 0.1)

    def test_rows_normalized_to_unit_max(self):
        rng = np.random.default_rng(10)
        fm = fwd.train(synthetic_transitions(rng, n=30), restarts=1)
        table = fwd.relevance(fm)
        assert table.shape == (7, 10)
        np.testing.assert_allclose(table.max(axis=1), 1.0, atol=1e-12)
        assert np.all(table > 0)

    def test_constant_targets_give_flat_row(self):
        rng = np.random.default_rng(11)
        trs = stationary_transitions(rng, n=20)
        fm = fwd.train(trs, restarts=2, seed=4)
        table = fwd.relevance(fm)
        # No signal: lengthscales stay at comparable magnitudes per row.
        for row in table:
            assert row.max() / row.min() < 1e3


class TestRollout:
    def test_fixed_point_on_stationary_model(self):
        rng = np.random.default_rng(12)
        fm = fwd.train(stationary_transitions(rng, n=15), restarts=2, seed=0)
        s0 = make_state(rng)
        steps = fwd.rollout(fm, s0, lambda s, r: np.zeros(3), steps=10, seed=0)
        for g, _ in steps:
            np.testing.assert_allclose(g.mean, s0.as_array(), atol=1e-2)
        # Consecutive means stay put even more tightly than the data fit.
        for (g1, _), (g2, _) in zip(steps, steps[1:]):
            np.testing.assert_allclose(g2.mean, g1.mean, atol=1e-6)

    def test_length_one_equals_predict(self):
        rng = np.random.default_rng(13)
        fm = fwd.train(synthetic_transitions(rng, n=20), restarts=1)
        s0 = make_state(rng)
        a = np.array([0.05, -0.02, 0.1])
        [(g, used)] = fwd.rollout(fm, s0, lambda s, r: a, steps=1, seed=0)
        direct = fwd.predict(fm, s0, a)
        np.testing.assert_array_equal(g.mean, direct.mean)
        np.testing.assert_array_equal(used, a)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(14)
        fm = fwd.train(synthetic_transitions(rng, n=20), restarts=1)
        s0 = make_state(rng)
        policy = lambda s, r: r.uniform(-1, 1, size=3) * BOUNDS.xi
        r1 = fwd.rollout(fm, s0, policy, steps=5, seed=42)
        r2 = fwd.rollout(fm, s0, policy, steps=5, seed=42)
        for (g1, a1), (g2, a2) in zip(r1, r2):
            np.testing.assert_array_equal(g1.mean, g2.mean)
            np.testing.assert_array_equal(a1, a2)

    def test_out_of_bounds_policy_rejected(self):
        rng = np.random.default_rng(15)
        fm = fwd.train(synthetic_transitions(rng, n=20), restarts=1)
        with pytest.raises(ContractViolationError):
            fwd.rollout(fm, make_state(rng), lambda s, r: np.array([1.0, 0, 0]), steps=2, seed=0, bounds=BOUNDS)


class TestIncremental:
    def test_add_transitions_matches_batch_build(self):
        rng = np.random.default_rng(16)
        trs = synthetic_transitions(rng, n=30)
        fm = fwd.train(trs[:20], restarts=2, seed=6)
        fm_inc = fwd.add_transitions(fm, trs[20:])
        X, dY = fwd.stack_transitions(trs)
        for dim in range(7):
            batch = gp.GpModel.build(X, dY[:, dim], fm.models[dim].hyper)
            q = np.concatenate([make_state(rng).as_array(), make_action(rng).as_array()])
            m1, v1 = gp.posterior(fm_inc.models[dim], q)
            m2, v2 = gp.posterior(batch, q)
            assert m1 == pytest.approx(m2, abs=1e-8)
            assert v1 == pytest.approx(v2, abs=1e-8)

    def test_add_empty_is_identity(self):
        rng = np.random.default_rng(17)
        fm = fwd.train(synthetic_transitions(rng, n=15), restarts=1)
        assert fwd.add_transitions(fm, []) is fm
