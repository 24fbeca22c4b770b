import numpy as np
import pytest

from graph_core import Graph, generate_sbm


@pytest.fixture
def easy_sbm():
    """300 nodes, 3 well separated blocks."""
    return generate_sbm(300, 3, 0.2, 0.01, seed=7)


@pytest.fixture
def tiny_sbm():
    return generate_sbm(40, 2, 0.3, 0.05, seed=3)


@pytest.fixture
def path_graph():
    n = 6
    graph, _, _ = Graph.from_edges(n, np.arange(n - 1), np.arange(1, n))
    return graph


@pytest.fixture
def tmp_edges(tmp_path):
    def write(text: str, name: str = "g.edges"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


def central_difference(loss, array: np.ndarray, idx, step: float = 1e-5) -> float:
    old = array[idx]
    array[idx] = old + step
    up = loss()
    array[idx] = old - step
    down = loss()
    array[idx] = old
    return (up - down) / (2.0 * step)


def assert_close_grad(analytic: float, numeric: float) -> None:
    tol = 1e-4 * max(abs(analytic), abs(numeric)) + 1e-7
    assert abs(analytic - numeric) <= tol, (analytic, numeric)


@pytest.fixture
def grad_check():
    """Compares analytic gradient entries against central differences at a few sampled positions."""

    def check(loss, values: np.ndarray, grad: np.ndarray, samples: int = 6, seed: int = 0):
        rng = np.random.default_rng(seed)
        flat = rng.choice(values.size, size=min(samples, values.size), replace=False)
        for f in flat:
            idx = np.unravel_index(f, values.shape)
            assert_close_grad(float(grad[idx]), central_difference(loss, values, idx))

    return check
