import glob
import os
import sys

import pytest
import torch
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

torch.set_num_threads(1)

MIN_CORPUS_BYTES = 1_000_000


def build_text_corpus(path: str, min_bytes: int = MIN_CORPUS_BYTES) -> str:
    """Concatenate Python standard-library sources (sorted) until ``min_bytes``.

    The stdlib ships with every interpreter, so this gives a reproducible
    plain-text corpus without network access.
    """
    stdlib = os.path.dirname(os.__file__)
    chunks, total = [], 0
    for src in sorted(glob.glob(os.path.join(stdlib, "*.py"))):
        with open(src, "rb") as f:
            data = f.read()
        chunks.append(data)
        total += len(data)
        if total >= min_bytes:
            break
    if total < min_bytes:
        raise RuntimeError(f"only {total} bytes of stdlib source found")
    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    return path


@pytest.fixture(scope="session")
def text_corpus(tmp_path_factory) -> str:
    return build_text_corpus(str(tmp_path_factory.mktemp("corpus") / "stdlib.txt"))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("small") / "small.txt"
    text = b"the quick brown fox jumps over the lazy dog. " * 400
    path.write_bytes(text)
    return str(path)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict line; printed again in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"CRITERION {label} {'PASS' if ok else 'FAIL'}: {detail}"
        lines[label] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    order = lambda label: (int(label.rstrip("abc")), label)
    for label in sorted(lines, key=order):
        terminalreporter.write_line(lines[label])
