"""Placement semantics for past/future view construction."""

import numpy as np
import pytest

from cpclab import (
    AudioBuffer,
    AugPlacement,
    EffectChainSpec,
    PitchSpec,
    ReverbSpec,
    RngStream,
    TimeDropSpec,
    make_views,
)
from cpclab.errors import ChainError

RATE = 16000


def toy_batch(n=4, length=RATE // 2, seed=0):
    rng = np.random.default_rng(seed)
    return [AudioBuffer(0.3 * rng.standard_normal(length), RATE) for _ in range(n)]


SPEC = EffectChainSpec((PitchSpec(-300, 300), ReverbSpec(), TimeDropSpec()))


class TestPlacements:
    def test_past_only_leaves_future_untouched(self):
        batch = toy_batch()
        views = make_views(batch, AugPlacement.PAST_ONLY, SPEC, RngStream(1))
        for src, vp in zip(batch, views):
            assert vp.future is src
            assert vp.future_chain is None
            assert not np.array_equal(vp.past.samples, src.samples)

    def test_future_only_leaves_past_untouched(self):
        batch = toy_batch()
        views = make_views(batch, AugPlacement.FUTURE_ONLY, SPEC, RngStream(1))
        for src, vp in zip(batch, views):
            assert vp.past is src
            assert vp.past_chain is None
            assert not np.array_equal(vp.future.samples, src.samples)

    def test_same_for_all_uses_one_chain(self):
        batch = toy_batch(4)
        views = make_views(batch, AugPlacement.SAME_FOR_ALL, SPEC, RngStream(2))
        shared = views[0].past_chain
        for vp in views:
            assert vp.past_chain is shared
            assert vp.future_chain is shared
            assert np.array_equal(vp.past.samples, vp.future.samples)

    def test_per_sequence_shares_within_item_only(self):
        batch = toy_batch(4)
        views = make_views(batch, AugPlacement.PER_SEQUENCE, SPEC, RngStream(3))
        chains = [vp.past_chain for vp in views]
        assert len({id(c) for c in chains}) == 4
        assert len(set(chains)) == 4  # distinct draws with probability ~ 1
        for vp in views:
            assert vp.future_chain is vp.past_chain
            assert np.array_equal(vp.past.samples, vp.future.samples)

    def test_past_plus_future_draws_independent_chains(self):
        batch = toy_batch(1)
        differing = 0
        for seed in range(100):
            views = make_views(batch, AugPlacement.PAST_PLUS_FUTURE, SPEC, RngStream(seed))
            if views[0].past_chain != views[0].future_chain:
                differing += 1
        assert differing == 100


class TestDeterminism:
    @pytest.mark.parametrize("placement", list(AugPlacement))
    def test_threads_invisible(self, placement):
        batch = toy_batch(4)
        serial = make_views(batch, placement, SPEC, RngStream(7), threads=1)
        threaded = make_views(batch, placement, SPEC, RngStream(7), threads=4)
        for a, b in zip(serial, threaded):
            assert np.array_equal(a.past.samples, b.past.samples)
            assert np.array_equal(a.future.samples, b.future.samples)

    def test_replays_bit_identical(self):
        batch = toy_batch(3)
        a = make_views(batch, AugPlacement.PAST_PLUS_FUTURE, SPEC, RngStream(11))
        b = make_views(batch, AugPlacement.PAST_PLUS_FUTURE, SPEC, RngStream(11))
        for va, vb in zip(a, b):
            assert np.array_equal(va.past.samples, vb.past.samples)
            assert np.array_equal(va.future.samples, vb.future.samples)


class TestValidation:
    def test_mismatched_lengths(self):
        batch = [AudioBuffer(np.zeros(100), RATE), AudioBuffer(np.zeros(200), RATE)]
        with pytest.raises(ChainError):
            make_views(batch, AugPlacement.PAST_ONLY, SPEC, RngStream(0))

    def test_empty_batch(self):
        assert make_views([], AugPlacement.PAST_ONLY, SPEC, RngStream(0)) == []
