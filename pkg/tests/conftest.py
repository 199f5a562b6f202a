import numpy as np
import pytest

from twa.checkpoints import load_set, save_checkpoint

_CRITERIA: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_CRITERIA, key=lambda c: int(c[0].split()[0])):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {name}: {detail}")


@pytest.fixture
def criterion():
    """Record one acceptance line; the assertion itself stays in the test."""

    def record(name: str, ok: bool, detail: str = ""):
        _CRITERIA.append((name, bool(ok), detail))
        return ok

    return record


@pytest.fixture
def write_set(tmp_path):
    """Persist an (n, D) array as a checkpoint directory and load it back."""

    def _write(W, metrics=None, subdir="ckpts"):
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        for i, w in enumerate(W):
            save_checkpoint(tmp_path / subdir, w, step=10 * (i + 1), epoch=i,
                            val_metric=None if metrics is None else metrics[i])
        return load_set(tmp_path / subdir / "manifest.json")

    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
