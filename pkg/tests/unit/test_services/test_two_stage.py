"""
Tests for the two-stage PSU/SSU allocation
"""

import numpy as np
import pytest

from schemas.errors import DanglingReferenceError, InfeasibleError, SchemaError
from schemas.records import DesignParams, PsuRecord, RhoRecord
from services.one_stage import beat_1st
from services.two_stage import StopRule, beat_2st, minimum_grid, sensitivity_min_ssu, stratum_psu_design


class TestStratumPsuDesign:
    """SR/NSR structure of one stratum"""

    def setup_method(self):
        self.psus = [
            PsuRecord(psu_id="P1", stratum_id="A", mos=600),
            PsuRecord(psu_id="P2", stratum_id="A", mos=200),
            PsuRecord(psu_id="P3", stratum_id="A", mos=200),
        ]
        self.design = DesignParams(stratum_id="A", delta=1.0, minimum=50)
        self.rho = RhoRecord(stratum_id="A", rho_sr=[1.0], rho_nsr=[0.1])

    def test_mixed_stratum(self):
        result = stratum_psu_design(100, 1000, self.psus, self.design, self.rho, min_psu_strat=2)
        assert result.threshold == pytest.approx(500.0)
        assert result.psu_sr == 1
        assert result.psu_nsr == 2
        assert result.n_sr == pytest.approx(60.0)
        assert result.n_nsr == pytest.approx(40.0)
        assert result.b_sr == pytest.approx(60.0)
        assert result.b_nsr == pytest.approx(20.0)
        assert result.deff[0] == pytest.approx((600**2 / 60 + 400**2 / 40 * 2.9) / (1000**2 / 100))

    def test_nsr_count_capped_at_available(self):
        result = stratum_psu_design(100, 1000, self.psus, self.design, self.rho, min_psu_strat=5)
        assert result.psu_nsr == 2

    def test_all_sr_has_no_clustering(self):
        result = stratum_psu_design(1000, 1000, self.psus, self.design, self.rho, min_psu_strat=2)
        assert result.psu_sr == 3
        assert result.psu_nsr == 0
        assert result.deff[0] == pytest.approx(1.0)


class TestStopRule:
    def test_defaults(self):
        rule = StopRule.from_settings()
        assert (rule.max_ssu_diff, rule.max_deft_diff, rule.max_iters) == (5.0, 0.06, 20)

    def test_rejects_non_positive(self):
        with pytest.raises(SchemaError):
            StopRule(max_ssu_diff=0)


class TestBeat2st:
    """Iterated allocation"""

    def test_zero_rho_matches_one_stage(self, two_stage_instance):
        inst = two_stage_instance
        one = beat_1st(inst["strata"], inst["constraints"])
        two = beat_2st(inst["strata"], inst["constraints"], inst["design"], inst["psus"], inst["rho"](0.0))
        assert two.n.tolist() == one.n.tolist()
        assert two.converged
        assert len(two.iterations) == 2
        assert two.deft_trace["DEFT1"].tolist() == [1.0] * 4

    def test_clustering_increases_sample(self, two_stage_instance):
        inst = two_stage_instance
        one = beat_1st(inst["strata"], inst["constraints"])
        two = beat_2st(inst["strata"], inst["constraints"], inst["design"], inst["psus"], inst["rho"](0.05))
        assert two.total_ssu > one.total_ssu
        assert two.is_two_stage
        assert np.all(two.psu_nsr >= 2)
        assert np.all(two.psu_sr == 0)

    def test_iteration_table(self, two_stage_instance):
        inst = two_stage_instance
        result = beat_2st(inst["strata"], inst["constraints"], inst["design"], inst["psus"], inst["rho"](0.05))
        table = result.iterations
        assert list(table.columns) == ["iter", "PSU_SR", "PSU_NSR", "PSU_Total", "SSU"]
        assert table.iloc[0][["PSU_SR", "PSU_NSR", "PSU_Total"]].tolist() == [0, 0, 0]
        assert table["iter"].tolist() == list(range(len(table)))
        assert (table["PSU_Total"] == table["PSU_SR"] + table["PSU_NSR"]).all()
        last = table.iloc[-1]
        assert last["SSU"] == result.total_ssu

    def test_iteration_cap_reports_non_convergence(self, two_stage_instance):
        inst = two_stage_instance
        result = beat_2st(
            inst["strata"],
            inst["constraints"],
            inst["design"],
            inst["psus"],
            inst["rho"](0.05),
            stop=StopRule(max_ssu_diff=0.5, max_deft_diff=1e-6, max_iters=1),
        )
        assert not result.converged
        assert len(result.iterations) == 2

    def test_alloc2_table(self, two_stage_instance):
        inst = two_stage_instance
        result = beat_2st(inst["strata"], inst["constraints"], inst["design"], inst["psus"], inst["rho"](0.05))
        alloc2 = result.alloc2_table()
        assert list(alloc2.columns) == ["STRATUM", "PSU_SR", "PSU_NSR", "PSU_TOTAL", "SSU", "THRESHOLD"]
        assert alloc2["SSU"].sum() == result.total_ssu
        assert np.all(alloc2["THRESHOLD"] > 0)

    def test_missing_rho_row(self, two_stage_instance):
        inst = two_stage_instance
        with pytest.raises(DanglingReferenceError):
            beat_2st(inst["strata"], inst["constraints"], inst["design"], inst["psus"], inst["rho"](0.05)[:1])

    def test_stratum_without_psus(self, two_stage_instance):
        inst = two_stage_instance
        psus = [p for p in inst["psus"] if p.stratum_id == "A"]
        with pytest.raises(DanglingReferenceError):
            beat_2st(inst["strata"], inst["constraints"], inst["design"], psus, inst["rho"](0.05))


class TestMinimumSensitivity:
    def test_grid(self):
        grid = minimum_grid(30, 80)
        assert len(grid) == 10
        assert grid[0] == 30 and grid[-1] == 80
        assert grid == sorted(set(grid))

    def test_degenerate_grid(self):
        assert minimum_grid(40, 40) == [40]

    def test_reversed_grid(self):
        with pytest.raises(InfeasibleError):
            minimum_grid(80, 30)

    def test_zero_rho_keeps_ssu_constant(self, two_stage_instance):
        inst = two_stage_instance
        table = sensitivity_min_ssu(
            inst["strata"], inst["constraints"], inst["design"], inst["psus"], inst["rho"](0.0), 30, 80, n_points=4
        )
        assert table["MINIMUM"].tolist() == [30, 47, 63, 80]
        assert table["SSU_TOTAL"].nunique() == 1
        assert table["PSU_TOTAL"].is_monotonic_decreasing

    def test_jobs_do_not_change_results(self, two_stage_instance):
        inst = two_stage_instance
        args = (inst["strata"], inst["constraints"], inst["design"], inst["psus"], inst["rho"](0.05), 20, 60)
        serial = sensitivity_min_ssu(*args, n_points=3)
        threaded = sensitivity_min_ssu(*args, n_points=3, jobs=3)
        assert serial.equals(threaded)
