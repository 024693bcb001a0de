import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from foga.config import ModelConfig  # noqa: E402


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


@pytest.fixture
def tiny_config():
    """Small enough to run a forward/backward in milliseconds."""
    return ModelConfig(channel_plan=(8, 16, 24, 32), image_size=32, cfa_reduction=8)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config._acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config._acceptance_lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
