import sysconfig
from pathlib import Path

import numpy as np
import pytest

CORPUS_BYTES = 6_000_000

# Lines recorded by the acceptance tests; echoed after the run summary so
# they stay visible even with output capture on.
ACCEPTANCE_LINES: list[str] = []


def record_line(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def build_text_corpus(limit: int = CORPUS_BYTES) -> bytes:
    """Deterministic public-text corpus: concatenated stdlib sources."""
    stdlib = Path(sysconfig.get_paths()["stdlib"])
    chunks = []
    total = 0
    for path in sorted(stdlib.rglob("*.py")):
        if "test" in path.parts:
            continue
        try:
            data = path.read_bytes()
        except OSError:
            continue
        chunks.append(data)
        total += len(data)
        if total >= limit:
            break
    blob = b"".join(chunks)[:limit]
    assert len(blob) == limit, "stdlib sources too small for the corpus"
    return blob


@pytest.fixture(scope="session")
def text_corpus_file(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("corpus") / "stdlib_text.bin"
    path.write_bytes(build_text_corpus())
    return path


@pytest.fixture(scope="session")
def small_corpus_file(tmp_path_factory) -> Path:
    """200 KB of seeded random bytes for cheap training smoke runs."""
    rng = np.random.default_rng(1234)
    path = tmp_path_factory.mktemp("corpus_small") / "random_bytes.bin"
    path.write_bytes(bytes(rng.integers(0, 256, size=200_000, dtype=np.uint8)))
    return path
