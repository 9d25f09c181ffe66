import os

# single-threaded BLAS before numpy loads, for bit-reproducible runs
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest  # noqa: E402

from mgnflow.dataset import generate  # noqa: E402


@pytest.fixture(scope="session")
def desk_realizations():
    """Twelve desk-scale scenarios (about 270 cells, 19 report steps each)."""
    reals, failed = generate(range(12))
    assert not failed
    return reals


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  "
                                    f"{title}  [{detail}]")
