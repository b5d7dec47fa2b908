"""
Tests for Sampford selection and sub-stratum construction
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schemas.errors import ConvergenceError, InfeasibleError
from schemas.records import PsuRecord
from services.sampford import inclusion_probabilities, sampford_select
from services.substrata import build_substrata
from utils.random_streams import make_rng


def _psus(sizes, stratum="A"):
    return [PsuRecord(psu_id=f"P{k + 1}", stratum_id=stratum, mos=m) for k, m in enumerate(sizes)]


class TestSampford:
    """Sampford's rejective procedure"""

    def test_inclusion_probabilities(self):
        np.testing.assert_allclose(inclusion_probabilities([1, 2, 2], 2), [0.4, 0.8, 0.8])

    def test_single_draw(self):
        draw = sampford_select([10, 30, 60], 1, seed=5)
        assert draw.selected.shape == (1,)
        np.testing.assert_allclose(draw.pik, [0.1, 0.3, 0.6])

    def test_distinct_sorted_sample(self):
        draw = sampford_select([5, 3, 8, 2, 7, 4], 3, seed=11)
        assert len(set(draw.selected.tolist())) == 3
        assert draw.selected.tolist() == sorted(draw.selected.tolist())
        assert draw.attempts >= 1

    def test_reproducible(self):
        first = sampford_select([5, 3, 8, 2, 7, 4], 3, seed=11)
        second = sampford_select([5, 3, 8, 2, 7, 4], 3, seed=11)
        assert first.selected.tolist() == second.selected.tolist()

    def test_m_not_below_count(self):
        with pytest.raises(InfeasibleError):
            sampford_select([1, 2], 2, seed=0)

    def test_probability_reaching_one(self):
        with pytest.raises(InfeasibleError):
            sampford_select([10, 1, 1], 2, seed=0)

    def test_attempt_cap(self):
        with pytest.raises(ConvergenceError):
            sampford_select([1, 2, 2], 2, seed=0, max_attempts=0)

    def test_equal_sizes_are_uniform(self):
        rng = make_rng(2024)
        counts = np.zeros(5)
        draws = 20_000
        for _ in range(draws):
            counts[sampford_select([7, 7, 7, 7, 7], 2, rng).selected] += 1
        frequencies = counts / draws
        se = np.sqrt(0.4 * 0.6 / draws)
        assert np.all(np.abs(frequencies - 0.4) < 4 * se)

    @pytest.mark.slow
    def test_empirical_inclusion_frequencies(self):
        rng = make_rng(31337)
        target = np.array([0.4, 0.8, 0.8])
        counts = np.zeros(3)
        draws = 100_000
        for _ in range(draws):
            counts[sampford_select([1, 2, 2], 2, rng).selected] += 1
        frequencies = counts / draws
        se = np.sqrt(target * (1 - target) / draws)
        assert np.all(np.abs(frequencies - target) < 3 * se)


class TestSubstrata:
    """Greedy grouping of non-self-representing PSUs"""

    def test_greedy_closure(self):
        substrata = build_substrata("A", _psus([40, 30, 20, 10]), threshold=50.0, psus_per_substratum=1)
        assert [s.sizes for s in substrata] == [(40, 30), (20, 10)]
        assert [s.sub_id for s in substrata] == ["A-1", "A-2"]
        assert [s.n_psu_to_select for s in substrata] == [1, 1]
        assert not any(s.is_sr for s in substrata)

    def test_all_above_threshold(self):
        substrata = build_substrata("A", _psus([600, 700, 800]), threshold=500.0)
        assert len(substrata) == 3
        assert all(s.is_sr and len(s.psu_ids) == 1 for s in substrata)
        assert [s.sizes[0] for s in substrata] == [800, 700, 600]
        assert all(s.pik.tolist() == [1.0] for s in substrata)

    def test_single_psu(self):
        substrata = build_substrata("A", _psus([10]), threshold=50.0)
        assert len(substrata) == 1
        assert substrata[0].psu_ids == ("P1",)

    def test_sr_first(self):
        substrata = build_substrata("A", _psus([30, 900, 25, 20, 25]), threshold=50.0, psus_per_substratum=2)
        assert substrata[0].is_sr
        assert substrata[0].psu_ids == ("P2",)
        assert all(not s.is_sr for s in substrata[1:])

    def test_large_psu_promoted(self):
        # remainder group of 170 draws two PSUs; 2 * 90 >= 170 uses one of them
        substrata = build_substrata("A", _psus([90, 20, 20, 20, 20]), threshold=100.0, psus_per_substratum=2)
        assert substrata[0].is_sr
        assert substrata[0].psu_ids == ("P1",)
        assert substrata[1].n_psu_to_select == 1
        np.testing.assert_allclose(substrata[1].pik, [0.25, 0.25, 0.25, 0.25])

    def test_last_nsr_psu_taken_with_certainty(self):
        substrata = build_substrata("A", _psus([50, 10]), threshold=30.0, psus_per_substratum=2)
        assert all(s.is_sr for s in substrata)
        assert sorted(s.psu_ids[0] for s in substrata) == ["P1", "P2"]

    @pytest.mark.property
    @settings(max_examples=150, deadline=None)
    @given(
        sizes=st.lists(st.integers(min_value=1, max_value=500), min_size=1, max_size=30),
        threshold=st.floats(min_value=1.0, max_value=2000.0),
        m=st.integers(min_value=1, max_value=3),
    )
    def test_partition_properties(self, sizes, threshold, m):
        psus = _psus(sizes)
        substrata = build_substrata("A", psus, threshold=threshold, psus_per_substratum=m)
        ids = [pid for s in substrata for pid in s.psu_ids]
        assert sorted(ids) == sorted(p.psu_id for p in psus)
        for sub in substrata:
            assert 1 <= sub.n_psu_to_select
            if not sub.is_sr:
                assert sub.n_psu_to_select < len(sub.psu_ids)
                assert np.all(sub.pik < 1.0)

    def test_planned_psu_count_on_equal_sizes(self):
        substrata = build_substrata("A", _psus([100] * 100), threshold=1000.0, psus_per_substratum=2, n_psu_nsr=40)
        assert len(substrata) == 20
        assert all(not s.is_sr and len(s.psu_ids) == 5 for s in substrata)
        assert sum(s.n_psu_to_select for s in substrata) == 40
        for sub in substrata:
            np.testing.assert_allclose(sub.pik, [0.4] * 5)

    def test_planned_psu_count_with_certainty_unit(self):
        # 3 * 400 >= 1000: P1 uses one of the three planned draws
        substrata = build_substrata("A", _psus([400] + [100] * 6), threshold=1000.0, psus_per_substratum=2, n_psu_nsr=3)
        assert substrata[0].is_sr
        assert substrata[0].psu_ids == ("P1",)
        assert len(substrata) == 2
        assert substrata[1].n_psu_to_select == 2
        np.testing.assert_allclose(substrata[1].pik, [1 / 3] * 6)

    def test_planned_count_capped_at_available_psus(self):
        substrata = build_substrata("A", _psus([10, 20, 30]), threshold=100.0, n_psu_nsr=8)
        assert all(s.is_sr for s in substrata)
        assert len(substrata) == 3

    @pytest.mark.property
    @settings(max_examples=200, deadline=None)
    @given(
        sizes=st.lists(st.integers(min_value=1, max_value=500), min_size=1, max_size=40),
        threshold=st.floats(min_value=1.0, max_value=2000.0),
        m=st.integers(min_value=1, max_value=3),
        planned=st.integers(min_value=0, max_value=50),
    )
    def test_planned_count_is_drawn_exactly(self, sizes, threshold, m, planned):
        psus = _psus(sizes)
        substrata = build_substrata("A", psus, threshold=threshold, psus_per_substratum=m, n_psu_nsr=planned)
        ids = [pid for s in substrata for pid in s.psu_ids]
        assert sorted(ids) == sorted(p.psu_id for p in psus)

        n_over = sum(1 for size in sizes if size > threshold)
        n_under = len(sizes) - n_over
        expected = n_over + (min(max(1, planned), n_under) if n_under else 0)
        assert sum(s.n_psu_to_select for s in substrata) == expected
        for sub in substrata:
            if not sub.is_sr:
                assert 1 <= sub.n_psu_to_select < len(sub.psu_ids)
                assert np.all(sub.pik < 1.0)
                assert sub.pik.sum() == pytest.approx(sub.n_psu_to_select, abs=1e-9)
