import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syncnet.errors import DimensionMismatch, MatchingInfeasible, NonPositiveParameter, NotCompanionForm
from syncnet.linalg import is_hurwitz
from syncnet.models import (LINEAR, SINE, AgentModel, BasisWeighted, NoUncertainty, RandomPiecewiseConstant,
                            ReferenceModel, Sinusoid, agent_derivative, eval_uncertainty, ideal_uncertainty_weights,
                            make_mimo3, make_pendulum, reference_derivative, sample_heterogeneous_network, sigma,
                            solve_coupling_matching, solve_feedback_matching, solve_uncertainty_matching)
from syncnet.topology import tree_adjacency, validate_graph


def test_sigma():
    np.testing.assert_array_equal(sigma(SINE, [0.0, 5.0]), [0.0, 5.0])
    np.testing.assert_allclose(sigma(SINE, [math.pi / 2, -1.0]), [1.0, -1.0])
    np.testing.assert_array_equal(sigma(LINEAR, [3.0, 4.0, 5.0]), [3.0, 4.0, 5.0])


def test_uncertainty_values():
    np.testing.assert_array_equal(eval_uncertainty(Sinusoid(0.1), [1.0, 2.0], 0.0), [0.0])
    np.testing.assert_allclose(eval_uncertainty(Sinusoid(0.1), [1.0, 2.0], math.pi / 2), [0.1])
    np.testing.assert_array_equal(eval_uncertainty(NoUncertainty(2), [9.0], 3.0), [0.0, 0.0])
    w = BasisWeighted([[0.5], [2.0]], ("one", "x2"))
    np.testing.assert_allclose(eval_uncertainty(w, [0.0, 3.0], 1.0), [6.5])


def test_random_piecewise_constant_holds_and_is_seeded():
    a = RandomPiecewiseConstant(-1.0, 1.0, hold=0.5, seed=3)
    b = RandomPiecewiseConstant(-1.0, 1.0, hold=0.5, seed=3)
    assert np.array_equal(a.table, b.table)
    assert np.all(np.abs(a.table) <= 1.0)
    np.testing.assert_array_equal(eval_uncertainty(a, [0.0], 0.1), eval_uncertainty(a, [0.0], 0.49))
    assert not np.array_equal(a.table, RandomPiecewiseConstant(-1.0, 1.0, hold=0.5, seed=4).table)


def test_ideal_weights():
    np.testing.assert_array_equal(ideal_uncertainty_weights(Sinusoid(0.1), ("one", "sin_t"), 1), [[0.0], [0.1]])
    assert ideal_uncertainty_weights(Sinusoid(0.1, omega=2.0), ("sin_t",), 1) is None
    assert ideal_uncertainty_weights(RandomPiecewiseConstant(-1, 1), ("one",), 1) is None


class TestDerivatives:
    def test_pendulum(self):
        pend = make_pendulum()
        np.testing.assert_array_equal(agent_derivative(pend, [0.0, 0.0], [0.0], 0.0), [0.0, 0.0])
        np.testing.assert_allclose(agent_derivative(pend, [math.pi / 2, 0.0], [0.0], 0.0), [0.0, 9.81])

    def test_pendulum_includes_disturbance(self):
        pend = make_pendulum(uncertainty=Sinusoid(0.1))
        np.testing.assert_allclose(agent_derivative(pend, [0.0, 0.0], [0.0], math.pi / 2), [0.0, 0.1])

    def test_mimo3(self):
        m = make_mimo3()
        np.testing.assert_array_equal(agent_derivative(m, [1.0, 0.0, 0.0], [0.0], 0.0), [0.0, 0.0, -1.0])
        np.testing.assert_array_equal(agent_derivative(m, [0.0, 0.0, 0.0], [1.0], 0.0), [0.0, 0.0, 1.0])

    def test_mimo3_literal_state_disturbance(self):
        m = make_mimo3(Sinusoid(0.1), literal_state_disturbance=True)
        np.testing.assert_allclose(agent_derivative(m, [0.0, 0.0, 0.0], [0.0], math.pi / 2), [0.0, 0.1, 0.0])

    def test_reference(self):
        ref = ReferenceModel(-np.eye(2), [[0.0], [1.0]], map=LINEAR)
        np.testing.assert_array_equal(reference_derivative(ref, [1.0, 1.0], [2.0]), [-1.0, 1.0])
        np.testing.assert_array_equal(reference_derivative(ref, [0.0, 0.0], [0.0]), [0.0, 0.0])
        pend = make_pendulum(mass=1.0, length=2.0)
        ref = ReferenceModel(pend.A, pend.B, map=SINE)
        np.testing.assert_allclose(reference_derivative(ref, [math.pi / 2, 0.0], [0.0]), [0.0, 9.81 / 2.0])


class TestBuilders:
    def test_pendulum_matrices(self):
        p = make_pendulum()
        np.testing.assert_array_equal(p.A, [[0.0, 1.0], [9.81, 0.0]])
        np.testing.assert_array_equal(p.B, [[0.0], [1.0]])
        np.testing.assert_array_equal(make_pendulum(mass=2.0).B, [[0.0], [0.5]])

    @pytest.mark.parametrize("kwargs", [{"length": 0.0}, {"mass": -1.0}, {"damping": -0.1}])
    def test_pendulum_rejects_bad_parameters(self, kwargs):
        with pytest.raises(NonPositiveParameter):
            make_pendulum(**kwargs)

    def test_mimo3_is_hurwitz_by_cubic_roots(self):
        a = make_mimo3().A
        np.testing.assert_array_equal(a[2], [-1.0, -2.0, -3.0])
        roots = np.roots([1.0, 3.0, 2.0, 1.0])
        assert np.all(roots.real < 0)
        assert is_hurwitz(a)

    def test_companion_form_enforced(self):
        with pytest.raises(NotCompanionForm):
            AgentModel(np.zeros((2, 2)), [[1.0], [1.0]])

    def test_uncertainty_channel_count(self):
        with pytest.raises(DimensionMismatch):
            make_pendulum(uncertainty=Sinusoid(0.1, p=2))


class TestMatching:
    def test_identity_cases(self):
        a = make_pendulum()
        ref = ReferenceModel(a.A, a.B)
        k_m, k_r = solve_feedback_matching(a, ref)
        np.testing.assert_allclose(k_m, 0.0, atol=1e-15)
        np.testing.assert_allclose(k_r, np.eye(1))
        k_ij, k_rij = solve_coupling_matching(a, a)
        np.testing.assert_allclose(k_ij, 0.0, atol=1e-15)
        np.testing.assert_allclose(k_rij, np.eye(1))
        np.testing.assert_allclose(solve_uncertainty_matching(a, a), np.eye(1))

    def test_scaled_input(self):
        a = make_pendulum()
        b = AgentModel(a.A, 2 * a.B)
        np.testing.assert_allclose(solve_uncertainty_matching(a, b), 2 * np.eye(1))

    def test_construct_then_recover_feedback(self, rng):
        for _ in range(20):
            ref = make_pendulum(*rng.uniform(0.75, 1.25, 2))
            k_hat = rng.normal(size=(2, 1))
            kr_hat = np.array([[rng.uniform(0.5, 2.0)]])
            lam = np.diag(rng.uniform(0.5, 1.5, 1))
            b = ref.B @ np.linalg.inv(lam) @ np.linalg.inv(kr_hat.T)
            a = ref.A - b @ lam @ k_hat.T
            agent = AgentModel(a, b, Lam=lam)
            k_m, k_r = solve_feedback_matching(agent, ReferenceModel(ref.A, ref.B))
            np.testing.assert_allclose(k_m, k_hat, atol=1e-10)
            np.testing.assert_allclose(k_r, kr_hat, atol=1e-10)

    def test_unactuated_perturbation_is_infeasible(self):
        a = make_pendulum()
        bad = AgentModel(a.A + np.array([[0.0, 0.3], [0.0, 0.0]]), a.B)
        with pytest.raises(MatchingInfeasible):
            solve_feedback_matching(bad, ReferenceModel(a.A, a.B))
        with pytest.raises(MatchingInfeasible):
            solve_coupling_matching(a, bad)

    def test_input_outside_span(self):
        a = make_pendulum()
        with pytest.raises(NotCompanionForm):
            AgentModel(a.A, [[1.0], [0.0]])
        two = AgentModel(np.zeros((2, 2)), np.eye(2))
        other = AgentModel(np.zeros((2, 2)), np.array([[0.0, 0.0], [1.0, 1.0]]))
        with pytest.raises(MatchingInfeasible):
            solve_uncertainty_matching(other, two)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            solve_coupling_matching(make_pendulum(), make_mimo3())


class TestSampling:
    def test_degenerate_range(self):
        agents = sample_heterogeneous_network("pendulum", {}, (1.0, 1.0), 7, 5)
        base = make_pendulum()
        assert all(np.array_equal(a.A, base.A) and np.array_equal(a.B, base.B) for a in agents)

    def test_twelve_distinct_and_matched(self):
        g = validate_graph(tree_adjacency(12), 1)
        ref_model = make_pendulum()
        agents = sample_heterogeneous_network("pendulum", {}, (0.75, 1.25), 42, 12, graph=g,
                                              reference=ReferenceModel(ref_model.A, ref_model.B))
        assert len({(a.params["mass"], a.params["length"]) for a in agents}) == 12
        assert all(0.75 <= a.params["mass"] <= 1.25 for a in agents)

    def test_zero_agents(self):
        with pytest.raises(ValueError):
            sample_heterogeneous_network("pendulum", {}, (0.75, 1.25), 0, 0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_same_seed_same_network(self, seed):
        a = sample_heterogeneous_network("mimo3", {}, (0.75, 1.25), seed, 3)
        b = sample_heterogeneous_network("mimo3", {}, (0.75, 1.25), seed, 3)
        assert all(np.array_equal(x.A, y.A) and np.array_equal(x.B, y.B) for x, y in zip(a, b))
