import itertools

import numpy as np
import pytest

from lingrok.types import Dataset, DatasetSpec, diagonal_direction


def random_separable(rng, n, d, gap=0.05):
    """Points in [-1, 1]^d labelled by a random affine plane, keeping a gap."""
    w = rng.normal(size=d)
    w /= np.linalg.norm(w)
    b = rng.uniform(-0.3, 0.3)
    X = []
    while len(X) < n:
        x = rng.uniform(-1, 1, size=d)
        if abs(x @ w + b) >= gap:
            X.append(x)
    X = np.array(X)
    y = np.where(X @ w + b > 0, 1.0, -1.0)
    if len(set(y)) < 2:           # force both classes
        y[0] = -y[0]
        X[0] = X[0] - 2 * (X[0] @ w + b) * w
    return Dataset(X, y)


def brute_force_svm(X, y, with_bias=True, tol=1e-9):
    """Minimum-norm feasible point over all basic active sets.

    The optimum of ``min |omega|^2 s.t. Z omega >= 1`` is the minimum-norm
    solution of ``Z_S omega = 1`` for some linearly independent subset S;
    enumerating every subset and keeping the feasible minimum finds it.
    """
    Z = (np.c_[X, np.ones(len(X))] if with_bias else np.array(X)) * y[:, None]
    p = Z.shape[1]
    best = None
    for k in range(1, min(len(Z), p) + 1):
        for S in itertools.combinations(range(len(Z)), k):
            ZS = Z[list(S)]
            if np.linalg.matrix_rank(ZS) < k:
                continue
            omega = np.linalg.pinv(ZS) @ np.ones(k)
            if np.all(Z @ omega >= 1 - tol):
                if best is None or omega @ omega < best @ best - 1e-15:
                    best = omega
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def planted_small():
    spec = DatasetSpec("planted", 0.1, diagonal_direction(2), (200, 200),
                       planted_support_counts=(10, 12), seed=0)
    from lingrok.datagen import generate
    return generate(spec)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[n])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
