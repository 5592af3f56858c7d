import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordforecast.quantizer import (
    OrdinalQuantizer,
    OrdinalSequence,
    build_quantizer,
    decode_density,
    encode,
    extend_range,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestExtendRange:
    def test_zero_slack_is_identity(self):
        assert extend_range(0, 3, 0, 15) == (0, 3)

    def test_formula(self):
        assert extend_range(0, 3, 2, 2) == (-4, 7)

    def test_constant_series(self):
        assert extend_range(-1, -1, 0.5, 2) == (-2, 0)

    @pytest.mark.parametrize("delta,horizon", [(-0.1, 3), (1.0, 0), (1.0, -2)])
    def test_rejects_bad_arguments(self, delta, horizon):
        with pytest.raises(ValueError):
            extend_range(0, 1, delta, horizon)

    @given(finite, finite, st.integers(1, 200))
    def test_zero_delta_identity_property(self, a, b, h):
        lo, hi = min(a, b), max(a, b)
        assert extend_range(lo, hi, 0.0, h) == (lo, hi)


class TestBuildQuantizer:
    def test_plain_range(self):
        q = build_quantizer([0, 1, 3], 150)
        assert (q.lo, q.hi) == (0, 3)
        assert q.width == pytest.approx(0.02)

    def test_extended_range(self):
        # max |diff| of [0, 1, 3] is 2, so the range widens by 2 * 2 on each side
        q = build_quantizer([0, 1, 3], 4, horizon=2, extend=True)
        assert (q.lo, q.hi) == (-4, 7)
        assert q.width == pytest.approx(2.75)
        np.testing.assert_allclose(q.edges, [-4, -1.25, 1.5, 4.25, 7])

    def test_default_bin_count(self):
        q = build_quantizer(np.sin(np.arange(30)), 150)
        assert q.edges.size == 151

    def test_downward_jump_counts_toward_delta(self):
        q = build_quantizer([5, 0, 1], 10, horizon=1, extend=True)
        assert (q.lo, q.hi) == (-5, 10)

    def test_constant_without_extension_rejected(self):
        with pytest.raises(ValueError):
            build_quantizer([2, 2, 2], 10)

    def test_constant_with_extension_gets_epsilon_slack(self):
        q = build_quantizer([2.0, 2.0, 2.0], 10, horizon=5, extend=True)
        assert q.lo == pytest.approx(2 - 5 * 2e-6)
        assert q.hi == pytest.approx(2 + 5 * 2e-6)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            build_quantizer([0, np.nan, 1], 10)

    def test_rejects_single_observation(self):
        with pytest.raises(ValueError):
            build_quantizer([1.0], 10)

    def test_extension_needs_horizon(self):
        with pytest.raises(ValueError):
            build_quantizer([0, 1], 10, horizon=0, extend=True)


@pytest.fixture
def unit4():
    return OrdinalQuantizer(4, 0.0, 1.0)


class TestEncode:
    def test_interior(self, unit4):
        assert encode(unit4, 0.6) == 2

    def test_upper_edge_clamps_to_last_bin(self, unit4):
        assert encode(unit4, 1.0) == 3

    def test_below_range_clamps_to_first_bin(self, unit4):
        assert encode(unit4, -5) == 0

    def test_above_range(self, unit4):
        assert encode(unit4, 42.0) == 3

    def test_left_closed(self, unit4):
        assert encode(unit4, 0.25) == 1
        assert encode(unit4, np.nextafter(0.25, 0)) == 0

    def test_rejects_non_finite(self, unit4):
        with pytest.raises(ValueError):
            encode(unit4, np.inf)

    @given(st.integers(1, 200), finite, st.floats(1e-3, 1e4))
    def test_midpoint_round_trip(self, m, lo, span):
        q = OrdinalQuantizer(m, lo, lo + span)
        k = np.arange(m)
        np.testing.assert_array_equal(q.encode(q.decode_midpoint(k)), k)

    @given(st.lists(finite, min_size=2, max_size=50))
    def test_monotone(self, xs):
        q = OrdinalQuantizer(17, -100.0, 250.0)
        xs = np.sort(xs)
        assert np.all(np.diff(q.encode(xs)) >= 0)


class TestDecodeDensity:
    def test_hand_value(self, unit4):
        assert decode_density(unit4, [0.1, 0.2, 0.3, 0.4], 0.6) == pytest.approx(1.2)

    def test_uniform_unit_density(self, unit4):
        for x in (0.0, 0.1, 0.5, 0.99, 1.0):
            assert decode_density(unit4, [0.25] * 4, x) == pytest.approx(1.0)

    def test_zero_outside_support(self, unit4):
        assert decode_density(unit4, [0.1, 0.2, 0.3, 0.4], 1.5) == 0.0
        assert decode_density(unit4, [0.1, 0.2, 0.3, 0.4], -0.01) == 0.0

    def test_rejects_unnormalised(self, unit4):
        with pytest.raises(ValueError):
            decode_density(unit4, [0.1, 0.2, 0.3, 0.5], 0.5)

    @settings(max_examples=50)
    @given(st.integers(1, 60), finite, st.floats(1e-2, 1e3), st.integers(0, 2**32 - 1))
    def test_normalisation(self, m, lo, span, seed):
        q = OrdinalQuantizer(m, lo, lo + span)
        p = np.random.default_rng(seed).dirichlet(np.ones(m))
        p /= p.sum()
        total = np.sum(q.width * decode_density(q, p, q.midpoints))
        assert total == pytest.approx(1.0, abs=1e-9)


class TestQuantizerType:
    def test_equal_widths(self):
        q = OrdinalQuantizer(150, -3.7, 12.1)
        np.testing.assert_allclose(np.diff(q.edges), q.width, rtol=1e-12)
        assert q.edges[0] == q.lo and q.edges[-1] == q.hi

    @pytest.mark.parametrize("m,lo,hi", [(0, 0, 1), (3, 1, 1), (3, 2, 1), (3, 0, np.inf)])
    def test_invalid(self, m, lo, hi):
        with pytest.raises(ValueError):
            OrdinalQuantizer(m, lo, hi)

    def test_dict_round_trip(self):
        q = OrdinalQuantizer(7, -1.5, 2.25)
        assert OrdinalQuantizer.from_dict(q.to_dict()) == q

    def test_sequence_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            OrdinalSequence([0, 4], OrdinalQuantizer(4, 0, 1))

    def test_sequence_from_values(self, unit4):
        seq = OrdinalSequence.from_values([0.1, 0.6, 2.0], unit4)
        np.testing.assert_array_equal(seq.indices, [0, 2, 3])
