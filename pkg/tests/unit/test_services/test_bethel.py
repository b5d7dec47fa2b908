"""
Tests for the multivariate multi-domain allocation solver

Small instances are checked against closed forms and against an exhaustive search over
every integer allocation.
"""

import itertools
import math

import numpy as np
import pytest

from data.validation import validate_domains
from schemas.errors import SchemaError
from schemas.records import PrecisionConstraint
from services.bethel import bethel_solve, build_constraints, cv_matrix, expected_cv, planned_cv
from tests.conftest import make_stratum


def _solve(strata, constraints, minnumstrat=2):
    cells = validate_domains(strata, constraints)
    matrix = build_constraints(strata, cells, minnumstrat=minnumstrat)
    return cells, matrix, bethel_solve(matrix)


def _exhaustive_optimum(strata, cells, minnumstrat=2):
    """Cheapest integer allocation meeting every CV bound, by enumeration"""
    ranges = [range(min(minnumstrat, s.N), s.N + 1) for s in strata]
    grid = np.array(list(itertools.product(*ranges)), dtype=float)
    N = np.array([s.N for s in strata], dtype=float)
    means = np.array([s.means for s in strata])
    sds = np.array([s.stdevs for s in strata])
    cost = np.array([s.cost for s in strata])
    feasible = np.ones(len(grid), dtype=bool)
    fpc = np.clip(1.0 / grid - 1.0 / N, 0.0, None)
    for cell in cells:
        share = np.where(cell.members, N / N[cell.members].sum(), 0.0)
        for j in range(means.shape[1]):
            ybar = share @ means[:, j]
            variance = fpc @ (share**2 * sds[:, j] ** 2)
            feasible &= variance <= (cell.cv[j] * ybar) ** 2 * (1 + 1e-12)
    costs = grid[feasible] @ cost
    return float(costs.min())


class TestBuildConstraints:
    """Normalized constraint coefficients"""

    def test_single_stratum_coefficient(self, single_stratum, national_constraint):
        _, matrix, _ = _solve(single_stratum, national_constraint)
        # a = S^2 / (cv^2 mu^2 + S^2 / N)
        assert matrix.a[0, 0] == pytest.approx(4.0 / (0.0025 * 100.0 + 4.0 / 1000.0))

    def test_disjoint_domains_are_block_diagonal(self):
        strata = [
            make_stratum("A", 100, [5.0], [1.0], domains={"DOM1": "1", "DOM2": "North"}),
            make_stratum("B", 100, [5.0], [1.0], domains={"DOM1": "1", "DOM2": "South"}),
        ]
        _, matrix, _ = _solve(strata, [PrecisionConstraint(domain="DOM2", cv=[0.1])])
        assert matrix.n_constraints == 2
        assert matrix.a[1, 0] == 0.0
        assert matrix.a[0, 1] == 0.0
        assert np.all(matrix.a.sum(axis=0) > 0)

    def test_zero_domain_mean(self):
        strata = [make_stratum("A", 100, [0.0], [1.0])]
        with pytest.raises(SchemaError, match="CV undefined for zero mean"):
            _solve(strata, [PrecisionConstraint(domain="DOM1", cv=[0.1])])

    def test_relaxed_scales_only_one_target(self, single_stratum, national_constraint):
        _, matrix, _ = _solve(single_stratum, national_constraint)
        relaxed = matrix.relaxed(0, 1.1)
        assert relaxed.target[0] == pytest.approx(matrix.target[0] * 1.21)
        assert matrix.target[0] == pytest.approx(0.25)


class TestBethelSolve:
    """Allocation results"""

    def test_single_stratum_classic_sample_size(self, single_stratum, national_constraint):
        _, _, solution = _solve(single_stratum, national_constraint)
        expected = 1.0 / (0.0025 * 100.0 / 4.0 + 1.0 / 1000.0)
        assert solution.n_cont[0] == pytest.approx(expected, rel=1e-9)
        assert solution.n_int.tolist() == [16]
        assert solution.converged
        assert solution.multipliers.tolist() == [1.0]

    def test_single_stratum_matches_brute_force_scan(self, single_stratum, national_constraint):
        cells, _, solution = _solve(single_stratum, national_constraint)
        smallest = next(
            n for n in range(1, 1001) if cv_matrix(np.array([n]), single_stratum, cells)[0, 0] <= 0.05
        )
        assert solution.n_int[0] == smallest

    def test_one_constraint_gives_neyman_shares(self):
        strata = [make_stratum("A", 100, [10.0], [10.0]), make_stratum("B", 300, [10.0], [5.0])]
        _, _, solution = _solve(strata, [PrecisionConstraint(domain="DOM1", cv=[0.05])])
        assert solution.n_cont[0] / solution.n_cont[1] == pytest.approx(1000.0 / 1500.0, rel=1e-9)

    def test_loose_bound_gives_minnumstrat_everywhere(self):
        strata = [make_stratum(f"S{k}", 100, [10.0], [1.0]) for k in range(3)]
        _, _, solution = _solve(strata, [PrecisionConstraint(domain="DOM1", cv=[0.5])])
        assert solution.n_int.tolist() == [2, 2, 2]

    def test_minnumstrat_capped_at_population(self):
        strata = [make_stratum("A", 1, [10.0], [1.0]), make_stratum("B", 100, [10.0], [1.0])]
        _, _, solution = _solve(strata, [PrecisionConstraint(domain="DOM1", cv=[0.5])], minnumstrat=5)
        assert solution.n_int.tolist() == [1, 5]

    def test_tight_bound_gives_census(self):
        strata = [make_stratum("A", 20, [10.0], [5.0]), make_stratum("B", 30, [10.0], [5.0])]
        _, _, solution = _solve(strata, [PrecisionConstraint(domain="DOM1", cv=[0.001])])
        assert solution.n_int.tolist() == [20, 30]

    def test_census_flag_is_take_all(self):
        strata = [make_stratum("A", 40, [10.0], [1.0], cens=True), make_stratum("B", 1000, [10.0], [3.0])]
        _, _, solution = _solve(strata, [PrecisionConstraint(domain="DOM1", cv=[0.05])])
        assert solution.n_int[0] == 40
        assert solution.take_all[0]

    def test_zero_variance_stratum_gets_minimum(self):
        strata = [make_stratum("A", 500, [10.0], [0.0]), make_stratum("B", 500, [10.0], [4.0])]
        _, _, solution = _solve(strata, [PrecisionConstraint(domain="DOM1", cv=[0.05])])
        assert solution.n_int[0] == 2

    def test_multipliers_are_normalized(self):
        strata = [
            make_stratum("A", 200, [10.0, 0.3], [3.0, 0.46], domains={"DOM1": "1", "DOM2": "N"}),
            make_stratum("B", 300, [12.0, 0.5], [2.0, 0.5], domains={"DOM1": "1", "DOM2": "S"}),
        ]
        _, _, solution = _solve(strata, [PrecisionConstraint(domain="DOM2", cv=[0.05, 0.08])])
        assert np.all(solution.multipliers >= 0)
        assert solution.multipliers.sum() == pytest.approx(1.0)

    def test_integer_allocation_meets_every_bound(self):
        strata = [
            make_stratum("A", 200, [10.0, 0.3], [3.0, 0.46], domains={"DOM1": "1", "DOM2": "N"}),
            make_stratum("B", 300, [12.0, 0.5], [2.0, 0.5], domains={"DOM1": "1", "DOM2": "S"}),
            make_stratum("C", 250, [9.0, 0.2], [4.0, 0.4], domains={"DOM1": "1", "DOM2": "N"}),
        ]
        constraints = [PrecisionConstraint(domain="DOM1", cv=[0.03, 0.05]), PrecisionConstraint(domain="DOM2", cv=[0.06, 0.1])]
        cells, _, solution = _solve(strata, constraints)
        achieved = cv_matrix(solution.n_int, strata, cells)
        bounds = np.array([c.cv for c in cells])
        assert np.all(achieved <= bounds * (1 + 1e-9))

    def test_exhaustive_search_oracle(self):
        rng = np.random.default_rng(20240611)
        for _ in range(100):
            L = int(rng.integers(1, 4))
            J = int(rng.integers(1, 3))
            strata = [
                make_stratum(
                    f"S{h}",
                    int(rng.integers(3, 31)),
                    rng.uniform(5.0, 20.0, size=J).round(3),
                    rng.uniform(0.5, 6.0, size=J).round(3),
                    cost=float(rng.choice([1.0, 2.0, 3.0])),
                )
                for h in range(L)
            ]
            constraints = [PrecisionConstraint(domain="DOM1", cv=list(rng.uniform(0.02, 0.15, size=J).round(3)))]
            cells, matrix, solution = _solve(strata, constraints)
            optimum = _exhaustive_optimum(strata, cells)
            continuous_cost = float(np.dot(solution.n_cont, matrix.cost))
            # the continuous optimum bounds the integer one from below; ceilings add at most one unit per stratum
            assert continuous_cost <= optimum * (1 + 1e-6)
            assert solution.cost(matrix.cost) <= optimum * (1 + 1e-6) + float(matrix.cost.sum())
            achieved = cv_matrix(solution.n_int, strata, cells)
            assert np.all(achieved <= np.array([c.cv for c in cells]) * (1 + 1e-9))


class TestExpectedCv:
    def test_single_stratum_at_solution(self, single_stratum, national_constraint):
        cells = validate_domains(single_stratum, national_constraint)
        table = expected_cv(np.array([16]), single_stratum, cells)
        assert table.loc[0, "CV1"] == pytest.approx(math.sqrt(4.0 * (1 / 16 - 1 / 1000)) / 10.0)
        assert table.loc[0, "CV1"] <= 0.05

    def test_census_has_zero_cv(self):
        strata = [make_stratum("A", 50, [10.0], [3.0]), make_stratum("B", 70, [12.0], [2.0])]
        cells = validate_domains(strata, [PrecisionConstraint(domain="DOM1", cv=[0.05])])
        assert expected_cv(np.array([50, 70]), strata, cells).loc[0, "CV1"] == 0.0

    def test_planned_layout(self, single_stratum, national_constraint):
        cells = validate_domains(single_stratum, national_constraint)
        table = planned_cv(cells)
        assert list(table.columns) == ["DOM", "DOMAIN_VALUE", "CV1"]
        assert table.loc[0, "CV1"] == 0.05
