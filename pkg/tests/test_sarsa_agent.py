import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from sarsaloc.sarsa_agent import (
    POLICIES, MdpAction, MdpState, QTable, RewardSignal, SarsaConfig, boost,
    immediate_reward, next_state, sarsa_update, select_action, select_epsilon_greedy,
    select_greedy, select_softmax, softmax_probs,
)

S1, S2 = MdpState.S1, MdpState.S2
A1, A2 = MdpAction.A1, MdpAction.A2
q_values = st.floats(-500, 500, allow_nan=False)


def table(row, s=S1):
    v = np.zeros((2, 2))
    v[int(s)] = row
    return QTable(v)


def binomial_band(p, n):
    half = 3 * math.sqrt(p * (1 - p) / n)
    return p - half, p + half


class TestMdp:
    def test_actions_lead_to_their_states(self):
        assert next_state(A1) is S1
        assert next_state(A2) is S2

    @pytest.mark.parametrize("member", list(MdpState) + list(MdpAction))
    def test_names_round_trip(self, member):
        assert type(member).parse(member.name) is member
        assert type(member).parse(f" {member.name.lower()} ") is member

    def test_parse_rejects_unknown(self):
        with pytest.raises(ValueError):
            MdpState.parse("S3")
        with pytest.raises(ValueError):
            MdpAction.parse("")

    def test_fresh_table_is_zero(self):
        assert np.array_equal(QTable.zeros().values, np.zeros((2, 2)))
        assert np.array_equal(QTable().values, np.zeros((2, 2)))

    def test_table_rejects_non_finite_and_bad_shape(self):
        with pytest.raises(ValueError):
            QTable([[0, math.nan], [0, 0]])
        with pytest.raises(ValueError):
            QTable(np.zeros(3))

    def test_table_is_read_only(self):
        q = QTable.zeros()
        with pytest.raises(ValueError):
            q.values[0, 0] = 1.0

    def test_to_dict_names_every_cell(self):
        d = QTable([[1, 2], [3, 4]]).to_dict()
        assert d == {"S1,A1": 1.0, "S1,A2": 2.0, "S2,A1": 3.0, "S2,A2": 4.0}


class TestConfig:
    def test_defaults(self):
        c = SarsaConfig()
        assert (c.alpha, c.gamma, c.epsilon, c.tau) == (0.4, 0.9, 0.1, 1.0)

    @pytest.mark.parametrize("kwargs", [
        {"alpha": -0.1}, {"alpha": 1.5}, {"gamma": 1.0}, {"gamma": -0.01},
        {"epsilon": 1.1}, {"tau": 0.0}, {"tau": math.inf}, {"policy": "boltzmann"},
        {"rng_seed": -1},
    ])
    def test_out_of_range_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SarsaConfig(**kwargs)

    def test_zero_learning_rate_is_allowed(self):
        assert SarsaConfig(alpha=0.0).alpha == 0.0


class TestRewards:
    @pytest.mark.parametrize("s,a,r", [(S1, A1, -1), (S2, A2, 1), (S1, A2, 0), (S2, A1, 0)])
    def test_reward_table(self, s, a, r):
        assert immediate_reward(s, a) == r

    @pytest.mark.parametrize("e_t,e_prev,b", [(2.0, 2.0, -1), (1.0, 2.0, 1), (0.0, 0.0, -1),
                                              (3.0, 2.0, -1)])
    def test_boost(self, e_t, e_prev, b):
        assert boost(e_t, e_prev) == b

    @pytest.mark.parametrize("args", [(math.nan, 1.0), (1.0, math.inf), (-1.0, 2.0)])
    def test_boost_rejects_bad_errors(self, args):
        with pytest.raises(ValueError):
            boost(*args)

    def test_signal_sets(self):
        assert RewardSignal(1, -1).total == 0
        with pytest.raises(ValueError):
            RewardSignal(2, 1)
        with pytest.raises(ValueError):
            RewardSignal(0, 0)

    @given(st.sampled_from(list(MdpState)), st.sampled_from(list(MdpAction)),
           st.sampled_from([-1, 1]))
    def test_total_signal_bounds(self, s, a, b):
        r = immediate_reward(s, a)
        assert r in (-1, 0, 1)
        assert r + b in (-2, -1, 0, 1, 2)


class TestSarsaUpdate:
    cfg = SarsaConfig()

    def test_positive_example(self):
        q = sarsa_update(QTable.zeros(), S2, A2, 1, S2, A2, self.cfg)
        assert q[S2, A2] == pytest.approx(0.8, abs=1e-15)

    def test_negative_example(self):
        q = sarsa_update(QTable.zeros(), S1, A1, -1, S1, A1, self.cfg)
        assert q[S1, A1] == pytest.approx(-0.8, abs=1e-15)

    @given(st.lists(q_values, min_size=4, max_size=4), st.sampled_from(list(MdpState)),
           st.sampled_from(list(MdpAction)), st.sampled_from([-1, 1]),
           st.sampled_from(list(MdpAction)))
    def test_zero_learning_rate_is_identity(self, vals, s, a, b, a_next):
        q = QTable(np.reshape(vals, (2, 2)))
        out = sarsa_update(q, s, a, b, next_state(a), a_next, SarsaConfig(alpha=0.0))
        assert np.array_equal(out.values, q.values)

    @given(st.lists(q_values, min_size=4, max_size=4), st.sampled_from(list(MdpState)),
           st.sampled_from(list(MdpAction)), st.sampled_from([-1, 1]),
           st.sampled_from(list(MdpAction)), st.floats(0, 1), st.floats(0, 0.99))
    def test_only_one_cell_changes(self, vals, s, a, b, a_next, alpha, gamma):
        q = QTable(np.reshape(vals, (2, 2)))
        out = sarsa_update(q, s, a, b, next_state(a), a_next, SarsaConfig(alpha=alpha, gamma=gamma))
        changed = out.values != q.values
        changed[int(s), int(a)] = False
        assert not changed.any()
        assert np.all(np.isfinite(out.values))

    def test_fixpoint(self):
        # B + r + gamma*Q(s',a') - Q(s,a) = 0 with B=+1, r=+1, Q(S2,A2)=2/(1-0.9)=20
        q = QTable([[0, 0], [0, 20.0]])
        out = sarsa_update(q, S2, A2, 1, S2, A2, self.cfg)
        assert out[S2, A2] == pytest.approx(20.0, abs=1e-12)

    def test_input_untouched(self):
        q = QTable.zeros()
        sarsa_update(q, S1, A1, 1, S1, A1, self.cfg)
        assert np.array_equal(q.values, np.zeros((2, 2)))


class TestGreedy:
    @pytest.mark.parametrize("row,expected", [((0.5, -0.2), A1), ((0.0, 0.0), A1), ((-1, 1), A2)])
    def test_examples(self, row, expected):
        assert select_greedy(table(row), S1) is expected

    def test_tie_values_really_equal(self):
        # the tie example: both actions carry the same value, so the rule decides
        q = table((0.0, 0.0))
        assert {q[S1, a] for a in MdpAction} == {0.0}
        assert select_greedy(q, S1) is A1


class TestEpsilonGreedy:
    def test_zero_epsilon_is_greedy(self, rng):
        cfg = SarsaConfig(epsilon=0.0)
        for row in [(1, 0), (0, 1), (0, 0)]:
            q = table(row)
            assert all(select_epsilon_greedy(q, S1, cfg, rng) is select_greedy(q, S1)
                       for _ in range(200))

    def test_full_exploration_is_uniform(self, rng):
        cfg = SarsaConfig(epsilon=1.0)
        q = table((3, -3))
        picks = [select_epsilon_greedy(q, S1, cfg, rng) for _ in range(100_000)]
        assert abs(np.mean([p is A1 for p in picks]) - 0.5) <= 0.01

    def test_greedy_share(self, rng):
        cfg = SarsaConfig(epsilon=0.1)
        q = table((1, 0))
        n = 100_000
        share = np.mean([select_epsilon_greedy(q, S1, cfg, rng) is A1 for _ in range(n)])
        assert abs(share - 0.95) <= 0.01
        lo, hi = binomial_band(0.95, n)
        assert lo <= share <= hi


class TestSoftmax:
    @given(q_values, st.floats(1e-3, 1e6))
    def test_equal_values_give_half(self, c, tau):
        p = softmax_probs(table((c, c)), S1, tau)
        assert p[0] == pytest.approx(0.5, abs=1e-12)

    def test_unit_gap(self):
        p = softmax_probs(table((1, 0)), S1, 1.0)
        e = math.e
        assert p == pytest.approx([e / (e + 1), 1 / (e + 1)], abs=1e-9)

    def test_hot_limit(self):
        assert softmax_probs(table((5, -5)), S1, 1e6) == pytest.approx([0.5, 0.5], abs=1e-5)

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            softmax_probs(QTable.zeros(), S1, 0.0)

    @given(q_values, q_values, st.floats(1e-3, 1e6))
    def test_normalised_without_overflow(self, a, b, tau):
        p = softmax_probs(table((a, b)), S1, tau)
        assert np.all(np.isfinite(p))
        assert abs(p.sum() - 1.0) <= 1e-12

    @given(q_values, q_values)
    def test_cold_limit_matches_greedy(self, a, b):
        assume(abs(a - b) > 1e-6)
        p = softmax_probs(table((a, b)), S1, 1e-3)
        assert MdpAction(int(np.argmax(p))) is select_greedy(table((a, b)), S1)

    def test_sampling_frequency(self, rng):
        cfg = SarsaConfig(policy="softmax", tau=1.0)
        share = np.mean([select_softmax(table((1, 0)), S1, cfg, rng) is A1
                         for _ in range(100_000)])
        assert abs(share - 0.731) <= 0.01

    def test_hot_sampling_uniform(self, rng):
        cfg = SarsaConfig(policy="softmax", tau=1e6)
        share = np.mean([select_softmax(table((1, 0)), S1, cfg, rng) is A1
                         for _ in range(100_000)])
        assert abs(share - 0.5) <= 0.01

    def test_dominant_action(self, rng):
        cfg = SarsaConfig(policy="softmax", tau=0.1)
        picks = [select_softmax(table((50, 0)), S1, cfg, rng) for _ in range(100_000)]
        assert np.mean([p is A1 for p in picks]) >= 1 - 1e-6


@pytest.mark.parametrize("policy", POLICIES)
def test_same_seed_same_actions(policy):
    cfg = SarsaConfig(policy=policy)
    q = table((0.3, 0.1))

    def run(seed):
        g = np.random.default_rng(seed)
        return [select_action(q, S1, cfg, g) for _ in range(500)]

    assert run(4) == run(4)
