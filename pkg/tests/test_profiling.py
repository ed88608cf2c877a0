import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import messkit as mk
from messkit import errors


class TestPlacement:
    def test_uniform_profile(self):
        profile = mk.CostProfile((10.0,) * 6)
        assert mk.place_exit_points(profile, 3).exit_points == (2, 4, 6)

    def test_exact_cumulative_hit(self):
        profile = mk.CostProfile((5.0, 15.0, 10.0, 30.0))
        assert mk.place_exit_points(profile, 2).exit_points == (3, 4)

    def test_too_many_exits(self):
        with pytest.raises(errors.TooManyExits):
            mk.place_exit_points(mk.CostProfile((10.0, 10.0)), 3)

    def test_single_exit_is_final_block(self):
        profile = mk.CostProfile((1.0, 2.0, 3.0))
        assert mk.place_exit_points(profile, 1).exit_points == (3,)

    def test_tie_breaks_shallow(self):
        # cumulative (1, 3, 4); the n=1 target of 2 is equidistant from blocks 1 and 2
        profile = mk.CostProfile((1.0, 2.0, 1.0))
        assert mk.place_exit_points(profile, 2).exit_points == (1, 3)

    def test_duplicate_placement(self):
        # both workload targets resolve to the deepest block
        profile = mk.CostProfile((1.0, 1.0, 1000.0))
        with pytest.raises(errors.DuplicatePlacement):
            mk.place_exit_points(profile, 3)

    def test_invalid_exit_count(self):
        with pytest.raises(ValueError):
            mk.place_exit_points(mk.CostProfile((1.0,)), 0)

    @settings(max_examples=60, deadline=None)
    @given(
        blocks=st.lists(st.floats(0.125, 64.0), min_size=2, max_size=10),
        num_exits=st.integers(1, 4),
        scale=st.sampled_from([0.25, 0.5, 2.0, 8.0]),
    )
    def test_scale_invariance(self, blocks, num_exits, scale):
        num_exits = min(num_exits, len(blocks))
        base = mk.CostProfile(tuple(blocks))
        scaled = mk.CostProfile(tuple(b * scale for b in blocks))
        try:
            expected = mk.place_exit_points(base, num_exits)
        except errors.DuplicatePlacement:
            with pytest.raises(errors.DuplicatePlacement):
                mk.place_exit_points(scaled, num_exits)
            return
        assert mk.place_exit_points(scaled, num_exits) == expected

    @settings(max_examples=30, deadline=None)
    @given(factor=st.integers(1, 4), num_exits=st.integers(1, 5))
    def test_uniform_profiles_equally_spaced(self, factor, num_exits):
        n_blocks = num_exits * factor
        profile = mk.CostProfile((3.0,) * n_blocks)
        placement = mk.place_exit_points(profile, num_exits)
        assert placement.exit_points == tuple(factor * (n + 1) for n in range(num_exits))


def test_segment_workloads():
    profile = mk.CostProfile((1.0, 2.0, 3.0, 4.0))
    placement = mk.ExitPlacement((2, 4))
    assert mk.segment_workloads(placement, profile) == (3.0, 7.0)


def test_placement_validation():
    with pytest.raises(ValueError):
        mk.ExitPlacement((3, 2))
    with pytest.raises(ValueError):
        mk.ExitPlacement(())
    with pytest.raises(ValueError):
        mk.ExitPlacement((0, 2))
