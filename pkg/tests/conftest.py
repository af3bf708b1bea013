import os
import sys
from pathlib import Path

import pytest

from mrcdistill.evalcli import ExperimentConfig, ExperimentMatrix, experiment_matrix

ROOT = Path(__file__).resolve().parent.parent
DESK_CONFIG = ROOT / "configs" / "desk.json"

# one line per acceptance criterion, echoed again in the terminal summary
CRITERIA: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    CRITERIA.append(line)
    print(line)
    return ok


@pytest.fixture(scope="session")
def criterion():
    return record_criterion


@pytest.fixture(scope="session")
def desk_matrix():
    """The full desk-scale experiment matrix, run once per session.

    Set MRCDISTILL_DESK_MATRIX to a path to reuse a saved matrix across
    sessions; it is only reused when its embedded config matches.
    """
    cfg = ExperimentConfig.from_json(DESK_CONFIG)
    cache = os.environ.get("MRCDISTILL_DESK_MATRIX")
    if cache and Path(cache).exists():
        saved = ExperimentMatrix.load(cache)
        if saved.config == cfg.to_dict():
            return saved
    log = lambda msg: print(f"[desk matrix] {msg}", file=sys.stderr, flush=True)
    matrix = experiment_matrix(cfg, log=log)
    if cache:
        matrix.save(cache)
    return matrix


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
