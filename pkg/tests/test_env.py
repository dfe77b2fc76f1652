import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqrdqn import env as hrap
from vqrdqn.env import HrapConfig, HrapInstance


def make_instance(capability, event_times, transition, **cfg):
    C = np.asarray(capability, dtype=np.int64)
    O, E, T = C.shape
    config = HrapConfig(num_officers=O, num_events=E, num_tasks=T, **cfg)
    return HrapInstance(C, np.asarray(event_times, dtype=np.int64),
                        np.asarray(transition, dtype=np.int64), config)


def reference_makespan(instance, assignment):
    """Straight transcription of the attribution rule, independent of env.py."""
    cfg = instance.config
    E, T = cfg.num_events, cfg.num_tasks
    totals = [0] * E
    for e in range(E):
        for t in range(T):
            o = assignment[e * T + t]
            totals[e] += int(instance.capability[o - 1, e, t])
    for o in range(1, cfg.num_officers + 1):
        events = sorted({k // T for k, a in enumerate(assignment) if a == o},
                        key=lambda e: instance.event_times[e])
        prev = 0
        for e in events:
            totals[e] += int(instance.transition[prev, e + 1])
            prev = e + 1
    return max(totals)


small_configs = st.builds(
    HrapConfig,
    num_officers=st.integers(1, 3),
    num_events=st.integers(1, 3),
    num_tasks=st.integers(1, 2),
    value_lo=st.integers(1, 5),
    value_hi=st.integers(5, 30),
    seed=st.integers(0, 2**32),
)


class TestConfig:
    def test_defaults_match_smallest_setting(self):
        cfg = HrapConfig()
        assert cfg.label == "3O-2T-2E"
        assert cfg.num_slots == 4

    @pytest.mark.parametrize("kwargs", [
        dict(num_officers=0), dict(num_events=0), dict(num_tasks=0),
        dict(value_lo=0), dict(value_lo=5, value_hi=4), dict(seed=-1),
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(hrap.ConfigError):
            HrapConfig(**kwargs)

    @pytest.mark.parametrize("o,e,t,mode,d", [
        (3, 2, 2, "literal", 23),
        (5, 4, 4, "literal", 109),
        (3, 2, 2, "augmented", 31),
    ])
    def test_observation_dim(self, o, e, t, mode, d):
        cfg = HrapConfig(num_officers=o, num_events=e, num_tasks=t)
        assert cfg.observation_dim(mode) == d
        state, obs = hrap.reset(cfg, 0, mode)
        assert obs.shape == (d,)


class TestGenerate:
    def test_default_bounds(self):
        inst = hrap.generate_instance(HrapConfig(seed=11))
        assert inst.capability.shape == (3, 2, 2)
        assert inst.capability.min() >= 1 and inst.capability.max() <= 20
        assert np.all(np.diff(inst.event_times) >= 0)
        assert inst.transition.shape == (3, 3)
        assert np.array_equal(inst.transition, inst.transition.T)
        assert np.all(np.diag(inst.transition) == 0)

    def test_single_event(self):
        inst = hrap.generate_instance(HrapConfig(num_events=1, seed=3))
        assert inst.event_times.shape == (1,)

    def test_same_seed_same_instance(self):
        a = hrap.generate_instance(HrapConfig(seed=5))
        b = hrap.generate_instance(HrapConfig(seed=5))
        c = hrap.generate_instance(HrapConfig(seed=6))
        assert a == b
        assert a != c

    def test_arrays_read_only(self):
        inst = hrap.generate_instance(HrapConfig())
        with pytest.raises(ValueError):
            inst.capability[0, 0, 0] = 99

    def test_json_round_trip(self):
        inst = hrap.generate_instance(HrapConfig(num_officers=4, seed=21))
        back = HrapInstance.from_json(inst.to_json())
        assert back == inst
        assert set(json.loads(inst.to_json())) == {"capability", "event_times", "transition", "config"}

    @settings(max_examples=60, deadline=None)
    @given(small_configs)
    def test_invariants_hold_for_any_config(self, cfg):
        inst = hrap.generate_instance(cfg)
        lo, hi = cfg.value_lo, cfg.value_hi
        assert inst.capability.min() >= lo and inst.capability.max() <= hi
        assert np.all(np.diff(inst.event_times) >= 0)
        off = ~np.eye(cfg.num_events + 1, dtype=bool)
        assert np.all(inst.transition[off] >= lo) and np.all(inst.transition[off] <= hi)
        assert np.array_equal(inst.transition, inst.transition.T)


class TestPsi:
    def test_worked_example(self):
        C = np.full((2, 2, 2), 3)
        C[1, 1, 0] = 18
        M = np.array([[0, 15, 2], [15, 0, 4], [2, 4, 0]])
        assert hrap.psi(make_instance(C, [1, 2], M, value_hi=20)) == 18 * 4 + 15 * 4 == 132

    def test_minimal_instance(self):
        assert hrap.psi(make_instance([[[1]]], [1], [[0, 1], [1, 0]])) == 2

    @pytest.mark.parametrize("c,m", [(3, 7), (20, 1)])
    def test_constant_entries(self, c, m):
        E, T = 3, 2
        C = np.full((2, E, T), c)
        M = np.full((E + 1, E + 1), m) - np.diag(np.full(E + 1, m))
        assert hrap.psi(make_instance(C, [1, 2, 3], M, value_hi=20)) == (c + m) * E * T


class TestMakespan:
    def test_single_task_single_hop(self):
        inst = make_instance([[[5]]], [1], [[0, 3], [3, 0]])
        assert hrap.makespan(inst, [1]) == 8

    def test_both_hops_charged_to_the_shared_event(self):
        C = np.array([[[4, 9]], [[9, 6]]])
        inst = make_instance(C, [1], [[0, 2], [2, 0]])
        assert hrap.makespan(inst, [1, 2]) == 4 + 6 + 2 + 2 == 14

    def test_hop_between_events(self):
        # one officer serves both events: depot->1 charged to event 0, 1->2 to event 1
        C = np.array([[[1], [1]]])
        M = np.array([[0, 5, 9], [5, 0, 2], [9, 2, 0]])
        inst = make_instance(C, [1, 2], M)
        assert hrap.makespan(inst, [1, 1]) == max(1 + 5, 1 + 2)

    def test_rejects_partial_assignments(self):
        inst = hrap.generate_instance(HrapConfig())
        with pytest.raises(ValueError):
            hrap.makespan(inst, [1, 0, 2, 3])
        with pytest.raises(ValueError):
            hrap.makespan(inst, [1, 2, 3])

    @settings(max_examples=40, deadline=None)
    @given(small_configs, st.data())
    def test_matches_reference_and_batch(self, cfg, data):
        inst = hrap.generate_instance(cfg)
        a = data.draw(st.lists(st.integers(1, cfg.num_officers),
                               min_size=cfg.num_slots, max_size=cfg.num_slots))
        expected = reference_makespan(inst, a)
        assert hrap.makespan(inst, a) == expected
        assert hrap.batch_makespans(inst, np.array([a]))[0] == expected

    def test_two_officer_one_task_oracle_consistency(self):
        cfg = HrapConfig(num_officers=2, num_events=2, num_tasks=1, seed=4)
        inst = hrap.generate_instance(cfg)
        spans = [hrap.makespan(inst, a) for a in hrap.enumerate_assignments(cfg)]
        assert len(spans) == 4
        assert hrap.brute_force_best(inst)[1] == min(spans)


class TestBruteForce:
    def test_single_officer_unique_assignment(self):
        cfg = HrapConfig(num_officers=1, num_events=2, num_tasks=3, seed=2)
        best, span = hrap.brute_force_best(hrap.generate_instance(cfg))
        assert best == (1,) * 6

    def test_identical_officers_tie_break_lowest(self):
        C = np.array([[[3, 4]], [[3, 4]]])
        inst = make_instance(C, [1], [[0, 2], [2, 0]])
        assert hrap.brute_force_best(inst)[0] == (1, 1)

    def test_beats_random_assignments(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            inst = hrap.generate_instance(HrapConfig(seed=seed))
            _, best = hrap.brute_force_best(inst)
            samples = rng.integers(1, 4, size=(100, 4))
            assert best <= hrap.batch_makespans(inst, samples).min()

    def test_agrees_with_itertools_enumeration(self):
        for seed in range(5):
            cfg = HrapConfig(num_officers=3, num_events=2, num_tasks=2, seed=seed)
            inst = hrap.generate_instance(cfg)
            spans = {a: reference_makespan(inst, a) for a in hrap.enumerate_assignments(cfg)}
            best = min(spans.values())
            first = next(a for a in itertools.product((1, 2, 3), repeat=4) if spans[a] == best)
            assert hrap.brute_force_best(inst) == (first, best)

    def test_limit(self):
        cfg = HrapConfig(num_officers=5, num_events=4, num_tasks=4)
        with pytest.raises(hrap.SearchSpaceTooLarge):
            hrap.brute_force_best(hrap.generate_instance(cfg))


class TestEpisode:
    def test_reset_is_deterministic(self):
        _, a = hrap.reset(HrapConfig(), 77)
        _, b = hrap.reset(HrapConfig(), 77)
        assert np.array_equal(a, b)

    def test_reset_not_done(self):
        state, _ = hrap.reset(HrapConfig(num_events=1, num_tasks=1), 0)
        assert not state.done
        assert state.current_slot == (0, 0)

    def test_one_slot_episode(self):
        inst = make_instance([[[5]]], [1], [[0, 3], [3, 0]])
        state, _ = hrap.start(inst)
        out = hrap.step(state, 1)
        assert hrap.psi(inst) == 8
        assert out.reward == -1.0
        assert out.done
        with pytest.raises(hrap.EpisodeFinishedError):
            hrap.step(state, 1)

    @pytest.mark.parametrize("officer", [0, 4, -1])
    def test_invalid_officer(self, officer):
        state, _ = hrap.reset(HrapConfig(), 0)
        with pytest.raises(hrap.ActionError):
            hrap.step(state, officer)

    def test_slot_order_and_encoding(self):
        cfg = HrapConfig()
        state, obs = hrap.reset(cfg, 9)
        base = cfg.observation_dim("literal")
        assert obs[base:base + 4].tolist() == [1, 0, 0, 0]
        hrap.step(state, 3)
        assert state.current_slot == (0, 1)
        obs = hrap.encode_state(state)
        assert obs[base:base + 4].tolist() == [0, 1, 0, 0]
        assert obs[base + 4:].tolist() == [1.0, 0, 0, 0]
        lit = hrap.encode_state(state, "literal")
        assert np.array_equal(lit, obs[:base])
        assert lit[:12].max() <= 1.0

    @settings(max_examples=40, deadline=None)
    @given(small_configs, st.data())
    def test_rewards_non_increasing_and_bounded(self, cfg, data):
        state, _ = hrap.reset(cfg, cfg.seed)
        last = 0.0
        while not state.done:
            out = hrap.step(state, data.draw(st.integers(1, cfg.num_officers)))
            assert -1.0 <= out.reward <= last
            last = out.reward
        assert last == -hrap.makespan(state.instance, state.assignment) / hrap.psi(state.instance)

    def test_all_rewards_at_least_minus_one(self):
        cfg = HrapConfig(num_officers=2, num_events=1, num_tasks=2, seed=13)
        inst = hrap.generate_instance(cfg)
        worst = max(hrap.makespan(inst, a) for a in hrap.enumerate_assignments(cfg))
        assert -worst / hrap.psi(inst) >= -1.0


class TestSeedsAndBaseline:
    def test_streams_disjoint(self):
        for master in (0, 1, 12345):
            train = set(hrap.episode_seeds(master, 5000, "train"))
            test = set(hrap.episode_seeds(master, 1000, "eval"))
            assert not train & test

    def test_prefix_stable(self):
        assert hrap.episode_seeds(3, 10) == hrap.episode_seeds(3, 50)[:10]

    def test_random_baseline(self):
        a = hrap.random_baseline(HrapConfig(), 1, seed=4)
        assert a == hrap.random_baseline(HrapConfig(), 1, seed=4)
        m = hrap.random_baseline(HrapConfig(), 200, seed=0)
        assert -1.0 <= m <= 0.0
