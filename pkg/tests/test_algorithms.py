"""Round updates: hand cases, oracle equivalence, shared invariants."""

import numpy as np
import pytest

from dflsim.algorithms import (
    ClientState,
    RoundInputs,
    init_network_state,
    init_states,
    round_fedndl1,
    round_fedndl2,
    round_fedndl3,
    round_fednmut,
    round_fednmut_matrix,
    stack_states,
    tracking_bias,
)
from dflsim.metrics import consensus_error
from dflsim.topology import FULLY_CONNECTED, RING, TORUS, MixingMatrix, TopologySpec, build_mixing


def states_from_columns(X):
    return [ClientState(x=X[:, i].copy()) for i in range(X.shape[1])]


def identity_mixing(n):
    # unit fixture only; a disconnected graph is not a valid gossip matrix
    return MixingMatrix(n=n, weights=np.eye(n), rho=0.0)


def single_client_mixing():
    return build_mixing(TopologySpec(FULLY_CONNECTED, 1))


class TestFedNDL1:
    def test_single_client_is_plain_sgd(self):
        states = states_from_columns(np.array([[1.0], [2.0]]))
        grads = np.array([[0.5], [-1.0]])
        inputs = RoundInputs(eta=0.1, W=single_client_mixing(), grads=grads, noises=np.zeros((2, 1)))
        out = round_fedndl1(states, inputs)
        np.testing.assert_allclose(out[0].x, [0.95, 2.1])

    def test_two_clients_average(self):
        # post-SGD parameters [1], [3] under uniform weights land both at [2]
        w = MixingMatrix(n=2, weights=np.full((2, 2), 0.5), rho=1.0)
        states = states_from_columns(np.array([[1.0, 3.0]]))
        inputs = RoundInputs(eta=1.0, W=w, grads=np.zeros((1, 2)), noises=np.zeros((1, 2)))
        out = round_fedndl1(states, inputs)
        np.testing.assert_array_equal(stack_states(out), [[2.0, 2.0]])

    def test_identity_mixing_isolates_noise_path(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((4, 3))
        noises = rng.standard_normal((4, 3))
        inputs = RoundInputs(eta=0.3, W=identity_mixing(3), grads=np.zeros((4, 3)), noises=noises)
        out = round_fedndl1(states_from_columns(X), inputs)
        np.testing.assert_allclose(stack_states(out), X + noises, atol=1e-15)


class TestFedNDL2:
    def test_equal_clients_reduce_to_parallel_sgd(self):
        x0 = np.array([1.0, -2.0])
        mixing = build_mixing(TopologySpec(FULLY_CONNECTED, 4))
        states = states_from_columns(np.tile(x0[:, None], (1, 4)))
        g = np.array([0.25, 0.5])
        inputs = RoundInputs(eta=0.2, W=mixing, grads=None, noises=np.zeros((2, 4)))
        out = round_fedndl2(states, inputs, lambda i, x: g)
        np.testing.assert_allclose(stack_states(out), np.tile((x0 - 0.2 * g)[:, None], (1, 4)))

    def test_zero_gradient_is_pure_gossip(self):
        mixing = build_mixing(TopologySpec(RING, 8))
        rng = np.random.default_rng(1)
        X = rng.standard_normal((5, 8))
        inputs = RoundInputs(eta=0.1, W=mixing, grads=None, noises=np.zeros((5, 8)))
        out = round_fedndl2(states_from_columns(X), inputs, lambda i, x: np.zeros(5))
        assert consensus_error(stack_states(out)) <= (1 - mixing.rho) * consensus_error(X) + 1e-12

    def test_single_client_noisy_self_loop(self):
        states = states_from_columns(np.array([[2.0]]))
        noises = np.array([[0.5]])
        inputs = RoundInputs(eta=0.1, W=single_client_mixing(), grads=None, noises=noises)
        out = round_fedndl2(states, inputs, lambda i, x: np.array([x[0]]))
        # gossiped point is 2.5, gradient callback returns it
        np.testing.assert_allclose(out[0].x, [2.5 - 0.1 * 2.5])


class TestFedNDL3:
    def test_uniform_weights_take_average_gradient_step(self):
        mixing = build_mixing(TopologySpec(FULLY_CONNECTED, 4))
        rng = np.random.default_rng(2)
        X = rng.standard_normal((3, 4))
        grads = rng.standard_normal((3, 4))
        inputs = RoundInputs(eta=0.2, W=mixing, grads=grads, noises=np.zeros((3, 4)))
        out = round_fedndl3(states_from_columns(X), inputs)
        expected = X - 0.2 * grads.mean(axis=1, keepdims=True)
        np.testing.assert_allclose(stack_states(out), expected, atol=1e-14)

    def test_single_client_plain_sgd(self):
        states = states_from_columns(np.array([[1.0]]))
        inputs = RoundInputs(
            eta=0.5, W=single_client_mixing(), grads=np.array([[2.0]]), noises=np.zeros((1, 1))
        )
        out = round_fedndl3(states, inputs)
        np.testing.assert_allclose(out[0].x, [0.0])

    def test_noise_enters_through_mixed_broadcast(self):
        # with zero gradients the step is exactly -eta * (delta W), i.e. one
        # draw per sender, weighted at every receiver
        mixing = build_mixing(TopologySpec(RING, 4))
        rng = np.random.default_rng(3)
        X = rng.standard_normal((2, 4))
        noises = rng.standard_normal((2, 4))
        inputs = RoundInputs(eta=0.3, W=mixing, grads=np.zeros((2, 4)), noises=noises)
        out = round_fedndl3(states_from_columns(X), inputs)
        np.testing.assert_allclose(stack_states(out) - X, -0.3 * noises @ mixing.weights, atol=1e-15)

    def test_noise_variance_per_round(self):
        # per-coordinate variance of the update is eta^2 * v * sum_j w_ij^2
        mixing = build_mixing(TopologySpec(RING, 4))
        eta, v, rounds = 0.2, 0.5, 10_000
        rng = np.random.default_rng(4)
        X = np.zeros((4, 4))
        steps = []
        inputs_grads = np.zeros((4, 4))
        for _ in range(rounds):
            noises = rng.normal(0.0, np.sqrt(v), size=(4, 4))
            inputs = RoundInputs(eta=eta, W=mixing, grads=inputs_grads, noises=noises)
            out = round_fedndl3(states_from_columns(X), inputs)
            steps.append(stack_states(out) - X)
        samples = np.stack(steps)
        target = eta * eta * v * float((mixing.weights[0] ** 2).sum())
        np.testing.assert_allclose(samples.var(), target, rtol=0.05)


class TestFedNMUT:
    def test_mu_zero_matrix_identity(self):
        # with consistent copies the round is gossip-then-gradient exactly
        mixing = build_mixing(TopologySpec(RING, 8))
        rng = np.random.default_rng(5)
        X = rng.standard_normal((6, 8))
        grads = rng.standard_normal((6, 8))
        inputs = RoundInputs(eta=0.1, W=mixing, grads=grads, noises=np.zeros((6, 8)), mu=0.0)
        out = round_fednmut(states_from_columns(X), inputs)
        np.testing.assert_allclose(stack_states(out), X @ mixing.weights - 0.1 * grads, atol=1e-12)

    def test_cold_start_from_consensus_broadcasts_raw_gradients(self):
        mixing = build_mixing(TopologySpec(TORUS, 9))
        x0 = np.random.default_rng(6).standard_normal(5)
        states = [ClientState(x=x0.copy()) for _ in range(9)]
        grads = np.random.default_rng(7).standard_normal((5, 9))
        inputs = RoundInputs(eta=0.2, W=mixing, grads=grads, noises=np.zeros((5, 9)), mu=0.9)
        with pytest.warns(RuntimeWarning):
            out = round_fednmut(states, inputs)
        np.testing.assert_allclose(stack_states(out), stack_states(states) - 0.2 * grads, atol=1e-13)
        for i, s in enumerate(out):
            np.testing.assert_allclose(s.y_tilde_prev[i], grads[:, i], atol=1e-13)

    def test_zero_step_size_rejected(self):
        with pytest.raises(ValueError, match="> 0"):
            RoundInputs(eta=0.0, W=single_client_mixing(), grads=np.zeros((1, 1)), noises=np.zeros((1, 1)))

    def test_mu_outside_tracking_regime_warns(self):
        mixing = build_mixing(TopologySpec(RING, 8))  # rho/42 ~ 0.0084
        states = init_states(8, 3, "shared_random", np.random.default_rng(8))
        inputs = RoundInputs(
            eta=0.1, W=mixing, grads=np.zeros((3, 8)), noises=np.zeros((3, 8)), mu=0.02
        )
        with pytest.warns(RuntimeWarning, match="rho/42"):
            round_fednmut(states, inputs)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@pytest.mark.parametrize(
    "kind,n", [(FULLY_CONNECTED, 4), (RING, 8), (TORUS, 16)]
)
def test_per_client_matches_matrix_oracle(kind, n):
    """100 noisy rounds: per-client trajectory vs matrix/bias oracle."""
    d, rounds, eta, mu, variance = 16, 100, 0.05, 0.02, 0.005
    mixing = build_mixing(TopologySpec(kind, n))
    rng = np.random.default_rng(1000 + n)
    x0 = rng.standard_normal(d)
    states = [ClientState(x=x0.copy()) for _ in range(n)]
    net = init_network_state(np.tile(x0[:, None], (1, n)))
    for _ in range(rounds):
        grads = rng.standard_normal((d, n))
        noises = rng.normal(0.0, np.sqrt(variance), size=(d, n))
        inputs = RoundInputs(eta=eta, W=mixing, grads=grads, noises=noises, mu=mu)

        x_before = stack_states(states)
        bias = tracking_bias(states, inputs)
        states = round_fednmut(states, inputs)
        net = round_fednmut_matrix(net, inputs)
        x_after = stack_states(states)

        assert np.max(np.abs(x_after - net.X)) <= 1e-8
        np.testing.assert_allclose(bias, net.B, atol=1e-8)
        # neighbor copies stay bit-identical to the owners' parameters
        for i, s in enumerate(states):
            for j, copy in s.x_hat.items():
                assert np.max(np.abs(copy - states[j].x)) <= 1e-12
        # column-mean dynamics: xbar' = xbar - eta (gbar + mu bbar + dbar)
        drift = (
            x_after.mean(axis=1)
            - x_before.mean(axis=1)
            + eta * (grads.mean(axis=1) + mu * bias.mean(axis=1) + noises.mean(axis=1))
        )
        assert np.max(np.abs(drift)) <= 1e-10


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_neighbor_copies_stay_consistent_for_200_rounds():
    d, n = 6, 8
    mixing = build_mixing(TopologySpec(RING, n))
    rng = np.random.default_rng(99)
    states = init_states(n, d, "independent_random", rng)
    for _ in range(200):
        inputs = RoundInputs(
            eta=0.05,
            W=mixing,
            grads=rng.standard_normal((d, n)),
            noises=rng.normal(0.0, 0.07, size=(d, n)),
            mu=0.02,
        )
        states = round_fednmut(states, inputs)
        for i, s in enumerate(states):
            for j, copy in s.x_hat.items():
                assert np.max(np.abs(copy - states[j].x)) <= 1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_bias_column_mean_follows_noise_recursion():
    """bbar_{t+1} = mu * bbar_t + dbar_t on the live per-client dynamics."""
    d, n, eta, mu, variance = 8, 8, 0.1, 0.02, 0.01
    mixing = build_mixing(TopologySpec(RING, n))
    rng = np.random.default_rng(12)
    states = init_states(n, d, "independent_random", rng)
    prev_bias_mean = np.zeros(d)
    prev_noise_mean = np.zeros(d)
    for t in range(40):
        grads = rng.standard_normal((d, n))
        noises = rng.normal(0.0, np.sqrt(variance), size=(d, n))
        inputs = RoundInputs(eta=eta, W=mixing, grads=grads, noises=noises, mu=mu)
        bias_mean = tracking_bias(states, inputs).mean(axis=1)
        if t == 0:
            np.testing.assert_allclose(bias_mean, np.zeros(d), atol=1e-12)
        else:
            np.testing.assert_allclose(
                bias_mean, mu * prev_bias_mean + prev_noise_mean, atol=1e-10
            )
        states = round_fednmut(states, inputs)
        prev_bias_mean = bias_mean
        prev_noise_mean = noises.mean(axis=1)


def test_consensus_sgd_equivalence_with_shared_gradient_draws():
    """Identical draws for every client: the three one-shot-gradient rules
    all become centralized SGD from a consensus point."""
    d, n, rounds, eta = 12, 8, 50, 0.1
    mixing = build_mixing(TopologySpec(FULLY_CONNECTED, n))
    rng = np.random.default_rng(21)
    x0 = rng.standard_normal(d)
    s1 = [ClientState(x=x0.copy()) for _ in range(n)]
    s3 = [ClientState(x=x0.copy()) for _ in range(n)]
    smut = [ClientState(x=x0.copy()) for _ in range(n)]
    zero = np.zeros((d, n))
    for _ in range(rounds):
        g = rng.standard_normal(d)
        grads = np.tile(g[:, None], (1, n))
        s1 = round_fedndl1(s1, RoundInputs(eta=eta, W=mixing, grads=grads, noises=zero))
        s3 = round_fedndl3(s3, RoundInputs(eta=eta, W=mixing, grads=grads, noises=zero))
        smut = round_fednmut(smut, RoundInputs(eta=eta, W=mixing, grads=grads, noises=zero, mu=0.0))
        a, b, c = stack_states(s1), stack_states(s3), stack_states(smut)
        assert np.max(np.abs(a - b)) <= 1e-10
        assert np.max(np.abs(a - c)) <= 1e-10


class TestInitStates:
    def test_zeros(self):
        states = init_states(4, 3, "zeros", np.random.default_rng(0))
        assert consensus_error(stack_states(states)) == 0.0
        assert np.all(stack_states(states) == 0.0)

    def test_shared_random_starts_at_consensus(self):
        states = init_states(5, 7, "shared_random", np.random.default_rng(1))
        # averaging n identical columns can differ in the last ulp
        assert consensus_error(stack_states(states)) <= 1e-28
        assert np.any(states[0].x != 0.0)
        for s in states[1:]:
            np.testing.assert_array_equal(s.x, states[0].x)

    def test_independent_random_disagrees(self):
        states = init_states(2, 4, "independent_random", np.random.default_rng(2))
        assert consensus_error(stack_states(states)) > 0.0

    def test_hand_computed_consensus_error(self):
        X = np.array([[0.0, 2.0]])
        assert consensus_error(X) == 1.0

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            init_states(2, 2, "warm", np.random.default_rng(0))


def test_dimension_mismatch_rejected():
    mixing = build_mixing(TopologySpec(RING, 4))
    states = init_states(3, 2, "zeros", np.random.default_rng(0))
    inputs = RoundInputs(eta=0.1, W=mixing, grads=np.zeros((2, 3)), noises=np.zeros((2, 3)))
    with pytest.raises(ValueError, match="dimension mismatch"):
        round_fedndl1(states, inputs)
    bad_noise = RoundInputs(
        eta=0.1,
        W=build_mixing(TopologySpec(RING, 3)),
        grads=np.zeros((2, 3)),
        noises=np.zeros((3, 3)),
    )
    with pytest.raises(ValueError, match="dimension mismatch"):
        round_fedndl3(states, bad_noise)
