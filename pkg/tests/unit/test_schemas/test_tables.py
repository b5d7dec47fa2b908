"""
Tests for record validation and CSV column conventions
"""

import pandas as pd
import pytest

from schemas import tables
from schemas.errors import DanglingReferenceError, ParseError, SchemaError, SurveyAllocError, UsageError
from schemas.records import AllocationResult, DesignParams, PsuRecord, RhoRecord, StratumInfo


def _text(df: pd.DataFrame) -> pd.DataFrame:
    return df.astype(str)


class TestRecords:
    """Validation rules carried by the record models"""

    def test_integral_float_count_accepted(self):
        stratum = StratumInfo(stratum_id="A", N=100.0, means=[1.0], stdevs=[0.5])
        assert stratum.N == 100

    def test_fractional_count_rejected(self):
        with pytest.raises(ValueError):
            StratumInfo(stratum_id="A", N=100.5, means=[1.0], stdevs=[0.5])

    def test_mean_stdev_arity(self):
        with pytest.raises(ValueError, match="arity"):
            StratumInfo(stratum_id="A", N=10, means=[1.0, 2.0], stdevs=[0.5, 0.5, 0.5])

    def test_negative_stdev_rejected(self):
        with pytest.raises(ValueError):
            StratumInfo(stratum_id="A", N=10, means=[1.0], stdevs=[-0.5])

    def test_rho_sr_must_be_one(self):
        with pytest.raises(ValueError):
            RhoRecord(stratum_id="A", rho_sr=[0.9], rho_nsr=[0.1])

    def test_rho_nsr_range(self):
        RhoRecord(stratum_id="A", rho_sr=[1.0], rho_nsr=[1.0])
        with pytest.raises(ValueError):
            RhoRecord(stratum_id="A", rho_sr=[1.0], rho_nsr=[-1.0])

    def test_psu_mos_positive(self):
        with pytest.raises(ValueError):
            PsuRecord(psu_id="P1", stratum_id="A", mos=0)

    def test_delta_at_least_one(self):
        with pytest.raises(ValueError):
            DesignParams(stratum_id="A", delta=0.5, minimum=10)


class TestErrorCategories:
    def test_exit_codes(self):
        assert SchemaError("x").exit_code == 1
        assert UsageError("x").exit_code == 2
        assert issubclass(ParseError, SchemaError)
        assert issubclass(DanglingReferenceError, SurveyAllocError)

    def test_parse_error_location(self):
        error = ParseError("non-numeric value 'x'", row=3, column="N")
        assert "row 3" in str(error)
        assert error.column == "N"


class TestStrataTable:
    """strata_from_frame / strata_to_frame"""

    def setup_method(self):
        self.frame = _text(
            pd.DataFrame(
                {
                    "STRATUM": ["A", "B"],
                    "N": [100, 300],
                    "M1": [10.0, 12.0],
                    "M2": [0.4, 0.5],
                    "S1": [2.0, 3.0],
                    "S2": [0.49, 0.5],
                    "COST": [1, 2],
                    "CENS": [0, 1],
                    "DOM1": ["1", "1"],
                    "DOM2": ["North", "South"],
                }
            )
        )

    def test_parse(self):
        strata = tables.strata_from_frame(self.frame)
        assert [s.stratum_id for s in strata] == ["A", "B"]
        assert strata[1].means == [12.0, 0.5]
        assert strata[1].cost == 2.0
        assert strata[1].cens is True
        assert strata[0].domains == {"DOM1": "1", "DOM2": "North"}

    def test_writer_layout_reads_back(self):
        strata = tables.strata_from_frame(self.frame)
        written = tables.strata_to_frame(strata)
        assert list(written.columns) == ["STRATUM", "N", "M1", "M2", "S1", "S2", "COST", "CENS", "DOM1", "DOM2"]
        assert tables.strata_from_frame(_text(written)) == strata

    def test_arity_mismatch(self):
        frame = self.frame.drop(columns=["S2"])
        with pytest.raises(SchemaError, match="mean/stdev arity mismatch"):
            tables.strata_from_frame(frame)

    def test_missing_dom1(self):
        with pytest.raises(SchemaError, match="DOM1"):
            tables.strata_from_frame(self.frame.drop(columns=["DOM1", "DOM2"]))

    def test_non_numeric_cell_reports_row_and_column(self):
        frame = self.frame.copy()
        frame.loc[1, "N"] = "many"
        with pytest.raises(ParseError) as excinfo:
            tables.strata_from_frame(frame)
        assert excinfo.value.row == 3
        assert excinfo.value.column == "N"

    def test_duplicate_stratum(self):
        frame = self.frame.copy()
        frame.loc[1, "STRATUM"] = "A"
        with pytest.raises(SchemaError, match="duplicate"):
            tables.strata_from_frame(frame)

    def test_indexed_columns_sorted_numerically(self):
        assert tables.indexed_columns(["M10", "M2", "M1", "MX"], "M") == ["M1", "M2", "M10"]


class TestOtherTables:
    def test_constraints(self):
        frame = _text(pd.DataFrame({"DOM": ["DOM1", "North"], "CV1": [0.05, 0.1], "CV2": [0.05, 0.1]}))
        constraints = tables.constraints_from_frame(frame)
        assert constraints[1].domain == "North"
        assert constraints[1].cv == [0.1, 0.1]

    def test_constraint_cv_range(self):
        frame = _text(pd.DataFrame({"DOM": ["DOM1"], "CV1": [1.5]}))
        with pytest.raises(SchemaError):
            tables.constraints_from_frame(frame)

    def test_rho_without_sr_columns_defaults_to_one(self):
        records = tables.rho_from_frame(_text(pd.DataFrame({"STRATUM": ["A"], "RHO_NAR1": [0.05]})))
        assert records[0].rho_sr == [1.0]
        assert records[0].rho_nsr == [0.05]

    def test_factor_matrix_alignment(self):
        records = tables.factors_from_frame(
            _text(pd.DataFrame({"STRATUM": ["B", "A"], "DEFT1": [1.5, 1.2]})), "DEFT"
        )
        matrix = tables.factor_matrix(records, ["A", "B"], 1)
        assert matrix[:, 0].tolist() == [1.2, 1.5]
        assert tables.factor_matrix(None, ["A", "B"], 2).tolist() == [[1.0, 1.0], [1.0, 1.0]]

    def test_factor_matrix_missing_stratum(self):
        records = tables.factors_from_frame(_text(pd.DataFrame({"STRATUM": ["A"], "EFFST1": [1.0]})), "EFFST")
        with pytest.raises(DanglingReferenceError):
            tables.factor_matrix(records, ["A", "B"], 1)

    def test_design_optional_strat_mos(self):
        design = tables.design_from_frame(_text(pd.DataFrame({"STRATUM": ["A"], "DELTA": [1], "MINIMUM": [50]})))
        assert design[0].stratum_mos is None
        assert design[0].minimum == 50

    def test_alloc2_round_trip_of_selection_inputs(self):
        import numpy as np

        result = AllocationResult(
            strata_ids=["A", "B"],
            n=np.array([286, 120]),
            n_continuous=np.array([285.2, 119.9]),
            iterations=pd.DataFrame(),
            expected_cv=pd.DataFrame(),
            planned_cv=pd.DataFrame(),
            sensitivity=pd.DataFrame(),
            alloc=pd.DataFrame(),
            take_all=np.array([False, False]),
            psu_sr=np.array([2, 0]),
            psu_nsr=np.array([0, 4]),
            threshold=np.array([100.0, 2500.0]),
        )
        alloc2 = result.alloc2_table()
        assert alloc2["PSU_TOTAL"].tolist() == [2, 4]
        ids, n_ssu, thresholds, psu_nsr = tables.alloc2_from_frame(_text(alloc2))
        assert ids == ["A", "B"]
        assert n_ssu == [286, 120]
        assert thresholds == [100.0, 2500.0]
        assert psu_nsr == [0, 4]

    def test_alloc2_without_psu_counts(self):
        frame = _text(pd.DataFrame({"STRATUM": ["A"], "SSU": [40], "THRESHOLD": [250.0]}))
        assert tables.alloc2_from_frame(frame) == (["A"], [40], [250.0], None)

    def test_alloc2_rejects_fractional_psu_count(self):
        frame = _text(pd.DataFrame({"STRATUM": ["A"], "SSU": [40], "THRESHOLD": [250.0], "PSU_NSR": [2.5]}))
        with pytest.raises(ParseError, match="PSU_NSR"):
            tables.alloc2_from_frame(frame)
