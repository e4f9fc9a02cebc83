from importlib import resources

import pytest

from secure_replay.compiler import compile_net
from secure_replay.net import parse_pnml

DATA = resources.files("secure_replay") / "data"


def data_path(name):
    return str(DATA / name)


@pytest.fixture(scope="session")
def running_net():
    return parse_pnml((DATA / "running_example.pnml").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def compiled(running_net):
    return compile_net(running_net)


@pytest.fixture(scope="session")
def compiled_full(running_net):
    return compile_net(running_net, prune=False)


@pytest.fixture
def data_dir():
    return DATA


# acceptance results, printed once at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
