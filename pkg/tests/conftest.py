from functools import lru_cache

import numpy as np
import pytest

from multihedin import hedin, oracle
from multihedin.model import LatticeSpec, ModelSystem, SpeciesSpec, Statistics

ELECTRON = SpeciesSpec("electron", 1.0, -1.0, Statistics.FERMION, 1, is_electron=True)
NUCLEUS = SpeciesSpec("nucleus", 100.0, 1.0, Statistics.BOSON, 1)
REFERENCE_CAP = 24


def reference_model(coupling: float = 0.0, beta: float = 4.0, fields=None) -> ModelSystem:
    lattice = LatticeSpec.uniform(2, 1.0, softening=1.0, coupling_scale=coupling)
    return ModelSystem((ELECTRON, NUCLEUS), lattice, beta, fields)


@lru_cache(maxsize=None)
def cached_scf(coupling: float, scheme: str = "scgw", tol: float = 1e-11):
    return hedin.scf_run(reference_model(coupling), hedin.ScfConfig(scheme=scheme, tol=tol))


@lru_cache(maxsize=None)
def cached_oracle(coupling: float, cap: int = REFERENCE_CAP):
    return oracle.solve_thermal(reference_model(coupling), boson_cap=cap)


def max_density_deviation(state, thermal) -> float:
    exact = oracle.density_matrices(thermal)
    return max(float(np.max(np.abs(a - b))) for a, b in zip(state.density_matrices, exact))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    print(CRITERIA_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[number])
