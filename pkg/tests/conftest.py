import numpy as np
import pytest

from ogmp.policy_opt.env import EnvConfig, GuidedEnv
from ogmp.world import make_task

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_env(task="soccer_stop", n=8, seed=0, **kw):
    return GuidedEnv(EnvConfig(task=make_task(task), **kw), n=n, seed=seed)
