import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def fd_gradient(f, x, h=1e-5):
    """Central finite differences, the gradient oracle."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        g[i] = (f(x + e) - f(x - e)) / (2 * e[i])
    return g


def random_reversible(n, rng, density=0.6):
    """Random reversible chain: symmetric conductances over a random positive pi."""
    pi = rng.uniform(0.1, 1.0, n)
    pi /= pi.sum()
    w = rng.uniform(0, 1, (n, n)) * (rng.uniform(size=(n, n)) < density)
    w = np.triu(w, 1)
    w = w + w.T
    # connect a path so the chain is irreducible
    for i in range(n - 1):
        w[i, i + 1] = w[i + 1, i] = max(w[i, i + 1], 0.05)
    # P(x,y) = c w(x,y)/pi(x) for x != y gives pi(x)P(x,y) symmetric
    rates = w / pi[:, None]
    c = 0.95 / rates.sum(1).max()
    P = c * rates
    P[np.diag_indices(n)] = 1 - P.sum(1)
    return P, pi


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
