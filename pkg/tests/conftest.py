import os
import socket
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from harlm.features import extract_all  # noqa: E402
from harlm.synthetic import synthetic_records, synthetic_windows  # noqa: E402
from harlm.windowing import segment  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def report_line(line: str) -> None:
    """Print an acceptance result now and repeat it in the terminal summary."""
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


_real_connect = socket.socket.connect


def _loopback_only(self, address):
    host = address[0] if isinstance(address, tuple) else address
    if isinstance(host, str) and host not in ("127.0.0.1", "localhost", "::1"):
        raise OSError(f"network access disabled in tests (attempted {address!r})")
    return _real_connect(self, address)


@pytest.fixture(autouse=True)
def _no_network(monkeypatch):
    monkeypatch.setattr(socket.socket, "connect", _loopback_only)
    monkeypatch.delenv("HAR_LLM_API_KEY", raising=False)


@pytest.fixture(params=["numba", "numpy"])
def kernel_path(request, monkeypatch):
    monkeypatch.setenv("HARLM_DISABLE_NUMBA", "0" if request.param == "numba" else "1")
    return request.param


@pytest.fixture(scope="session")
def records6():
    """4 subjects x 6 activities x 400 rows of 9-channel synthetic records."""
    acts = ("walking", "running", "sitting", "standing", "walking_upstairs", "walking_downstairs")
    return synthetic_records(subjects=("1", "2", "3", "4"), activities=acts, rows_per_session=400, seed=7)


@pytest.fixture(scope="session")
def features6(records6):
    return extract_all(segment(records6, 200, 20))


@pytest.fixture(scope="session")
def window_set():
    return synthetic_windows(60, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def data_root() -> Path | None:
    root = os.environ.get("HARLM_DATA_ROOT")
    return Path(root) if root else None
