import pytest

from opgrpo.diagnostics import DecayEvent, OfferEvent, reference_buffer_replay


class TestReferenceBufferReplay:
    def test_no_events(self):
        assert reference_buffer_replay([], capacity=3) == []

    def test_only_decays(self):
        assert reference_buffer_replay([DecayEvent()] * 3, capacity=3) == []

    def test_offer_keeps_the_best_reward(self):
        (entry,) = reference_buffer_replay([OfferEvent(2, (0.1, 0.6, 0.3), 4)], 3)
        assert (entry.condition_id, entry.reward, entry.insert_iteration) == (2, 0.6, 4)

    def test_decay_scales_retention_only(self):
        events = [OfferEvent(0, (1.0,)), DecayEvent(), DecayEvent()]
        (entry,) = reference_buffer_replay(events, 1, decay_rate=0.5)
        assert entry.retention_score == 0.25
        assert entry.reward == 1.0

    def test_full_buffer_evicts_the_weakest(self):
        events = [OfferEvent(0, (0.5,)), OfferEvent(1, (0.8,)), OfferEvent(2, (0.6,))]
        assert [e.condition_id for e in reference_buffer_replay(events, 2)] == [1, 2]

    def test_same_condition_rule(self):
        events = [OfferEvent(7, (0.9,)), OfferEvent(1, (0.2,)), OfferEvent(7, (0.8,))]
        entries = reference_buffer_replay(events, 2)
        assert [(e.condition_id, e.reward) for e in entries] == [(1, 0.2), (7, 0.9)]

    @pytest.mark.parametrize("capacity", [1, 2, 5])
    def test_size_never_exceeds_capacity(self, capacity):
        events = [OfferEvent(c, (0.1 * c,)) for c in range(1, 8)]
        assert len(reference_buffer_replay(events, capacity)) == capacity
