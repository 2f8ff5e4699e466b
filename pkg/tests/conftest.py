import numpy as np
import pytest

from mrlft.lft import BlockKind, BlockSpec, BlockStructure, ParameterBox, StateSpace, realize_affine


def random_stable(rng, n, m=1, p=1, dt=None, margin=0.2):
    """Random realization with poles in Re < -margin (or |z| < 1 - margin)."""
    A = rng.standard_normal((n, n))
    if dt is None:
        shift = np.max(np.linalg.eigvals(A).real) + margin + rng.uniform(0, 1)
        A = A - shift * np.eye(n)
    else:
        rho = np.max(np.abs(np.linalg.eigvals(A)))
        A = A * (1 - margin) * rng.uniform(0.3, 1.0) / rho
    return StateSpace(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)),
                      rng.standard_normal((p, m)), dt)


def random_uncertain(rng, n=3, k=2, m=1, p=1, dt=None, scale=0.1):
    """Affine uncertain model with ``k`` parameters acting on ``A`` and ``B``."""
    nom = random_stable(rng, n, m, p, dt)
    names = tuple(f"p{i}" for i in range(k))
    box = ParameterBox(names, (0.0,) * k, (scale,) * k)
    coeffs = [(rng.standard_normal((n, n)), rng.standard_normal((n, m)), None, None)
              for _ in range(k)]
    return realize_affine(nom, coeffs, box)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scalar_structure(*sizes, role="parameter"):
    return BlockStructure(tuple(BlockSpec(f"d{i}", BlockKind.REAL_SCALAR, s, role=role)
                                for i, s in enumerate(sizes)))


# criterion number -> (title, passed, detail), filled by the acceptance tests
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {title}: {detail}")
