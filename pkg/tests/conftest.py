import os
from pathlib import Path

import pytest

from madod.cli import write_fake_mnist
from madod.harness import DATA_DIR_ENV, MNIST_FILES

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory) -> Path:
    """Real MNIST if the data directory env var points at it, else random
    digits in the same 70,000-sample IDX layout."""
    root = os.environ.get(DATA_DIR_ENV)
    if root and all((Path(root) / n).exists() or (Path(root) / (n + ".gz")).exists()
                    for n in MNIST_FILES["images"] + MNIST_FILES["labels"]):
        return Path(root)
    out = tmp_path_factory.mktemp("mnist")
    write_fake_mnist(out, seed=123)
    return out


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(name: str, passed: bool, detail: str) -> None:
        lines.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
