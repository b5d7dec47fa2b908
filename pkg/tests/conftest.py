"""
pytest configuration for SurveyAlloc

Shared builders for small strata, PSU and design instances used across the unit and
integration tests.
"""

import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pytest

# Ensure src directory is in Python path for all tests
repo_root = Path(__file__).parent.parent
src_dir = repo_root / "src"
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

from config.settings import reload_settings  # noqa: E402
from schemas.records import (  # noqa: E402
    DesignParams,
    PrecisionConstraint,
    PsuRecord,
    RhoRecord,
    StratumInfo,
)


def make_stratum(
    stratum_id: str,
    N: int,
    means: Sequence[float],
    stdevs: Sequence[float],
    cost: float = 1.0,
    cens: bool = False,
    domains: Optional[Dict[str, str]] = None,
) -> StratumInfo:
    return StratumInfo(
        stratum_id=stratum_id,
        N=N,
        means=list(means),
        stdevs=list(stdevs),
        cost=cost,
        cens=cens,
        domains=domains or {"DOM1": "1"},
    )


def equal_psus(stratum_id: str, n_psus: int, mos: int) -> List[PsuRecord]:
    return [PsuRecord(psu_id=f"{stratum_id}_{k + 1:03d}", stratum_id=stratum_id, mos=mos) for k in range(n_psus)]


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch):
    """Every test starts from default settings, unaffected by the caller's environment"""
    for name in list(os.environ):
        if name.startswith("SURVEYALLOC_"):
            monkeypatch.delenv(name, raising=False)
    reload_settings()
    yield
    monkeypatch.undo()
    reload_settings()


@pytest.fixture
def single_stratum():
    """N=1000, mean 10, sd 2: a 5% CV needs 16 units"""
    return [make_stratum("A", 1000, [10.0], [2.0])]


@pytest.fixture
def national_constraint():
    return [PrecisionConstraint(domain="DOM1", cv=[0.05])]


@pytest.fixture
def two_stage_instance():
    """
    Two strata of 10,000 units in 100 PSUs of 100 units each

    Every PSU stays non-self-representing for realistic allocations, so the cluster
    design effect is driven by rho and MINIMUM alone.
    """
    strata = [make_stratum("A", 10000, [10.0], [5.0]), make_stratum("B", 10000, [12.0], [6.0])]
    psus = equal_psus("A", 100, 100) + equal_psus("B", 100, 100)
    design = [DesignParams(stratum_id=sid, delta=1.0, minimum=10) for sid in ("A", "B")]
    constraints = [PrecisionConstraint(domain="DOM1", cv=[0.02])]

    def rho(value: float) -> List[RhoRecord]:
        return [RhoRecord(stratum_id=sid, rho_sr=[1.0], rho_nsr=[value]) for sid in ("A", "B")]

    return {"strata": strata, "psus": psus, "design": design, "constraints": constraints, "rho": rho}
