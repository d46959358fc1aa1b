import sys
from pathlib import Path

import pytest

from polytrend.data_model import (
    DoseRecord,
    compute_dose_scores,
    parse_animal_csv,
    parse_grouped_csv,
)

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def lmice_records():
    return parse_grouped_csv(DATA / "lmice.csv")


@pytest.fixture(scope="session")
def nmice_records():
    return parse_grouped_csv(DATA / "nmice.csv")


@pytest.fixture(scope="session")
def melh_records():
    return parse_animal_csv(DATA / "melh.csv")


@pytest.fixture
def lmice(lmice_records):
    return compute_dose_scores(lmice_records)


def study_records(study, doses, tumors, n):
    return [DoseRecord(study, None, float(d), int(t), int(n)) for d, t in zip(doses, tumors)]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and getattr(mod, "RESULTS", None):
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
