import numpy as np
import pytest

from kvcompress import KvStore


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_store(rng, n, d, page_len=1, retain_all=False):
    keys = rng.standard_normal((n, d)).astype(np.float32)
    values = rng.standard_normal((n, d)).astype(np.float32)
    return KvStore.from_arrays(keys, values, page_len=page_len, retain_all=retain_all)


def batch_summaries(keys, page_len):
    """Page max/min recomputed from scratch, one page at a time."""
    n = keys.shape[0]
    mx, mn = [], []
    for lo in range(0, n, page_len):
        block = keys[lo: lo + page_len]
        mx.append(block.max(axis=0))
        mn.append(block.min(axis=0))
    return np.array(mx), np.array(mn)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
