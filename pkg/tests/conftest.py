import itertools
import math

import numpy as np
import pytest

from scanstat import GridField, Rect


def brute_sum(data, rect):
    """Direct summation over the rectangle's cells."""
    return float(np.sum(np.asarray(data)[rect.slices()], dtype=np.float64))


def brute_zscores(data, shape):
    """Z-score of every anchor at one shape, by explicit loops."""
    data = np.asarray(data)
    out_shape = tuple(n - h + 1 for n, h in zip(data.shape, shape))
    out = np.empty(out_shape)
    for t in itertools.product(*(range(k) for k in out_shape)):
        out[t] = brute_sum(data, Rect(t, shape)) / math.sqrt(math.prod(shape))
    return out


def brute_block_sums(data, a):
    """Sums over aligned blocks of side 2^a, by explicit loops."""
    data = np.asarray(data)
    out_shape = tuple(n >> aj for n, aj in zip(data.shape, a))
    out = np.empty(out_shape)
    for t in itertools.product(*(range(k) for k in out_shape)):
        sl = tuple(slice(tj << aj, (tj + 1) << aj) for tj, aj in zip(t, a))
        out[t] = data[sl].sum()
    return out


def random_rect(rng, dims):
    shape = tuple(int(rng.integers(1, n + 1)) for n in dims)
    anchor = tuple(int(rng.integers(0, n - h + 1)) for n, h in zip(dims, shape))
    return Rect(anchor, shape)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_field(rng):
    return GridField(rng.standard_normal((16, 16)))


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
