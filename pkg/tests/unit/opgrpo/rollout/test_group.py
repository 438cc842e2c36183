import numpy as np
import pytest

from opgrpo.buffer import ReplayBuffer
from opgrpo.flow import ClampCounter, Condition, Origin
from opgrpo.rewards import reward
from opgrpo.rollout import (
    BufferMissError,
    GroupBatch,
    GroupRequest,
    GroupSizeError,
    build_group,
    build_groups,
    truncate_and_regenerate,
)
from opgrpo.utilities import RngStreams
from tests.unit.opgrpo._builders import (
    SMALL_REWARD,
    SMALL_SCHEDULE,
    filled_buffer,
    hybrid_groups,
    perturbed,
    sampled_trajectories,
    small_field,
    synthetic_group,
)


@pytest.fixture(scope="module")
def buffer_policy():
    return small_field(seed=50, requires_grad=False)


@pytest.fixture(scope="module")
def rollout_policy(buffer_policy):
    return perturbed(buffer_policy, 0.1, seed=51).snapshot()


@pytest.fixture(scope="module")
def buffer(buffer_policy):
    return filled_buffer(buffer_policy)


class TestBuildGroups:
    def test_on_policy_group(self, rollout_policy):
        (group,) = hybrid_groups(rollout_policy, None, use_buffer=(False,))
        assert group.group_size == 4
        assert all(m.origin is Origin.ON_POLICY for m in group.members)
        assert all(m.birth_iteration == 1 for m in group.members)
        assert group.advantages.mean() == pytest.approx(0.0, abs=1e-12)
        assert group.advantages.std() == pytest.approx(1.0)
        assert group.correction_weights.tolist() == [1.0] * 4
        assert not group.contains_buffer_member

    def test_buffer_group_holds_exactly_one_spliced_member(
        self, rollout_policy, buffer
    ):
        (group,) = hybrid_groups(rollout_policy, buffer, use_buffer=(True,))
        reused = [m for m in group.members if m.origin is Origin.BUFFER]
        assert len(reused) == 1
        member = reused[0]
        stored = buffer.retrieve(0)
        assert member.truncation_step == 2
        assert np.array_equal(member.step_logprobs[:2], stored.step_logprobs[:2])
        assert np.array_equal(member.latents[:3], stored.latents[:3])
        assert member.reward is not None
        position = group.members.index(member)
        assert group.correction_weights[position] != 1.0
        assert group.log_weights[position] == pytest.approx(
            np.log(group.correction_weights[position])
        )

    def test_full_reuse_keeps_the_stored_reward(self, rollout_policy, buffer):
        (group,) = hybrid_groups(
            rollout_policy, buffer, use_buffer=(True,), truncation_step=0
        )
        member = next(m for m in group.members if m.origin is Origin.BUFFER)
        assert member.reward == 0.5
        assert member.off_policy_steps == 4

    def test_rewards_are_scored_on_final_samples(self, rollout_policy, buffer):
        for group in hybrid_groups(rollout_policy, buffer):
            for member in group.members:
                expected = reward(member.sample, group.condition, SMALL_REWARD)
                assert member.reward == expected

    def test_same_streams_same_groups(self, rollout_policy, buffer):
        first = hybrid_groups(rollout_policy, buffer, seed=3)
        second = hybrid_groups(rollout_policy, buffer, seed=3)
        for a, b in zip(first, second):
            assert np.array_equal(a.advantages, b.advantages)
            for m, n in zip(a.members, b.members):
                assert m.latents.tobytes() == n.latents.tobytes()

    def test_other_iteration_other_groups(self, rollout_policy, buffer):
        first = hybrid_groups(rollout_policy, buffer, iteration=1)
        second = hybrid_groups(rollout_policy, buffer, iteration=2)
        assert not np.array_equal(first[1].rewards, second[1].rewards)

    def test_results_do_not_depend_on_batching(self, rollout_policy, buffer):
        together = hybrid_groups(rollout_policy, buffer, use_buffer=(True, False))
        streams = RngStreams(0, 1)
        alone = build_group(
            Condition.one_hot(0, 4),
            rollout_policy,
            buffer,
            SMALL_SCHEDULE,
            SMALL_REWARD,
            4,
            2,
            streams,
            use_buffer=True,
            iteration=1,
        )
        assert np.array_equal(together[0].rewards, alone.rewards)
        assert np.array_equal(together[0].advantages, alone.advantages)

    def test_slots_are_recorded(self, rollout_policy, buffer):
        groups = hybrid_groups(rollout_policy, buffer, use_buffer=(False, True, False))
        assert [g.slot for g in groups] == [0, 1, 2]
        assert [g.condition.id for g in groups] == [0, 1, 2]

    def test_missing_buffer_entry_raises(self, rollout_policy):
        empty = ReplayBuffer(4)
        with pytest.raises(BufferMissError, match=BufferMissError(0).args[0]):
            hybrid_groups(rollout_policy, empty, use_buffer=(True,))

    def test_group_size_below_two_raises(self, rollout_policy):
        with pytest.raises(GroupSizeError):
            hybrid_groups(rollout_policy, None, use_buffer=(False,), group_size=1)

    def test_weight_clamps_are_counted(self, buffer):
        far_policy = perturbed(small_field(seed=50), 2.0, seed=52).snapshot()
        counter = ClampCounter()
        groups = build_groups(
            [GroupRequest(Condition.one_hot(c, 4), True) for c in range(4)],
            far_policy,
            buffer,
            SMALL_SCHEDULE,
            SMALL_REWARD,
            4,
            0,
            RngStreams(0, 1),
            log_weight_bounds=(-0.01, 0.01),
            counter=counter,
        )
        clamped = sum(int(g.weight_clamped.sum()) for g in groups)
        assert clamped == counter.weight_events
        assert clamped > 0


class TestTruncateAndRegenerate:
    def test_keeps_stored_prefix(self, buffer_policy, rollout_policy):
        (stored,) = sampled_trajectories(buffer_policy, 1, 1, seed=5)
        mixed = truncate_and_regenerate(
            stored.with_reward(0.3),
            1,
            rollout_policy,
            SMALL_SCHEDULE,
            np.random.default_rng(0),
            birth_iteration=4,
        )
        assert np.array_equal(mixed.step_logprobs[:3], stored.step_logprobs[:3])
        assert mixed.origin is Origin.BUFFER
        assert mixed.birth_iteration == 4
        assert mixed.off_policy_mask.tolist() == [True, True, True, False]


class TestGroupBatch:
    def test_defaults_fill_log_weights_and_flags(self):
        members = synthetic_group(0, [0.1, 0.2])
        group = GroupBatch(members[0].condition, members, [-1.0, 1.0], [1.0, 1.0])
        assert group.log_weights.tolist() == [0.0, 0.0]
        assert group.weight_clamped.tolist() == [False, False]
        assert group.rewards.tolist() == [0.1, 0.2]

    def test_wrong_length_raises(self):
        members = synthetic_group(0, [0.1, 0.2])
        with pytest.raises(ValueError, match="advantages must hold one entry"):
            GroupBatch(members[0].condition, members, [0.0], [1.0, 1.0])

    def test_mixed_conditions_raise(self):
        members = synthetic_group(0, [0.1]) + synthetic_group(1, [0.2])
        with pytest.raises(ValueError, match="must share its condition"):
            GroupBatch(members[0].condition, members, [0.0, 0.0], [1.0, 1.0])

    def test_non_positive_weight_raises(self):
        members = synthetic_group(0, [0.1, 0.2])
        with pytest.raises(ValueError, match="finite and positive"):
            GroupBatch(
                members[0].condition,
                members,
                [0.0, 0.0],
                [1.0, 0.0],
                log_weights=np.zeros(2),
            )

    def test_to_dict(self):
        members = synthetic_group(3, [0.1, 0.2])
        group = GroupBatch(members[0].condition, members, [-1.0, 1.0], [1.0, 1.0])
        data = group.to_dict()
        assert data["condition_id"] == 3
        assert len(data["members"]) == 2
