import numpy as np
import pytest

from qdsg.errors import ConnectivityError
from qdsg.graph import (
    MixingMatrix,
    Network,
    generate_rgg,
    geometric_edges,
    lazy_metropolis,
    read_adjacency,
    second_singular_value,
    verify_mixing_contraction,
    write_adjacency,
)

PATH3 = np.array([[3 / 4, 1 / 4, 0], [1 / 4, 1 / 2, 1 / 4], [0, 1 / 4, 3 / 4]])


class ScriptedRng:
    """Stands in for a generator and hands out fixed coordinate draws."""

    def __init__(self, draws):
        self.draws = list(draws)
        self.calls = 0

    def random(self, shape):
        self.calls += 1
        return np.asarray(self.draws.pop(0), dtype=float).reshape(shape)


def test_two_nodes_large_radius_connected():
    for seed in range(20):
        net = generate_rgg(2, 2.0, np.random.default_rng(seed))
        assert net.edges == {(0, 1)}
        assert net.attempts == 1


def test_disconnected_draw_is_retried():
    bad = [[0, 0], [0.3, 0], [0.9, 0]]
    assert geometric_edges(np.array(bad), 0.4) == {(0, 1)}
    good = [[0, 0], [0.3, 0], [0.6, 0]]
    rng = ScriptedRng([bad, good])
    net = generate_rgg(3, 0.4, rng)
    assert rng.calls == 2 and net.attempts == 2
    assert net.edges == {(0, 1), (1, 2)}


def test_edge_rule_is_strict():
    pts = np.array([[0.0, 0.0], [0.5, 0.0]])
    assert geometric_edges(pts, 0.5) == frozenset()
    assert geometric_edges(pts, 0.5000001) == {(0, 1)}


def test_fifty_node_graph_connects():
    net = generate_rgg(50, 0.4, np.random.default_rng(7))
    assert net.is_connected()
    assert net.coordinates.min() >= 0 and net.coordinates.max() <= 1


def test_sparse_regime_fails():
    with pytest.raises(ConnectivityError) as info:
        generate_rgg(50, 0.01, np.random.default_rng(0), max_attempts=20)
    assert info.value.attempts == 20


def test_path3_lazy_metropolis():
    A = lazy_metropolis(Network.from_edges(3, [(0, 1), (1, 2)]))
    np.testing.assert_allclose(A.entries, PATH3, atol=0)
    assert A.sigma2 == pytest.approx(0.75, abs=1e-12)
    assert verify_mixing_contraction(A) == pytest.approx(0.75, abs=1e-12)


def test_two_node_lazy_metropolis():
    A = lazy_metropolis(Network.from_edges(2, [(0, 1)]))
    np.testing.assert_array_equal(A.entries, [[0.5, 0.5], [0.5, 0.5]])
    assert A.sigma2 == pytest.approx(0.0, abs=1e-15)
    assert verify_mixing_contraction(A) == pytest.approx(0.0, abs=1e-15)


def test_single_node():
    A = lazy_metropolis(Network.from_edges(1, []))
    np.testing.assert_array_equal(A.entries, [[1.0]])
    assert A.sigma2 == 0.0
    assert verify_mixing_contraction(A) == 0.0


def test_path3_spectrum_from_characteristic_polynomial():
    # det(A - t I) for the path-3 matrix has roots 1, 3/4, 1/4
    roots = np.sort(np.roots(np.poly(PATH3)).real)
    np.testing.assert_allclose(roots, [0.25, 0.75, 1.0], atol=1e-12)
    assert second_singular_value(MixingMatrix(PATH3)) == pytest.approx(roots[1], abs=1e-12)


@pytest.mark.parametrize("seed", range(25))
def test_random_graph_properties(seed):
    rng = np.random.default_rng(seed)
    net = generate_rgg(15, 0.5, rng)
    A = lazy_metropolis(net)
    M = A.entries
    ones = np.ones(net.n)
    assert A.stochasticity_error() < 1e-12
    np.testing.assert_allclose(M @ ones, ones, atol=1e-12)
    np.testing.assert_allclose(ones @ M, ones, atol=1e-12)
    assert np.array_equal(M, M.T)
    assert np.all(M >= 0)
    support = M > 0
    expected = np.eye(net.n, dtype=bool)
    for i, j in net.edges:
        expected[i, j] = expected[j, i] = True
    assert np.array_equal(support, expected)
    assert A.sigma2 < 1
    assert verify_mixing_contraction(A) <= A.sigma2 + 1e-10


def test_adjacency_round_trip(tmp_path):
    net = generate_rgg(12, 0.5, np.random.default_rng(3))
    path = tmp_path / "g.txt"
    write_adjacency(net, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "12"
    assert lines[1].startswith("0: ")
    back = read_adjacency(path)
    assert back.edges == net.edges
    np.testing.assert_array_equal(back.coordinates, net.coordinates)


def test_mixing_csv_round_trip(tmp_path):
    A = lazy_metropolis(generate_rgg(10, 0.6, np.random.default_rng(1)))
    A.to_csv(tmp_path / "A.csv")
    np.testing.assert_array_equal(MixingMatrix.from_csv(tmp_path / "A.csv").entries, A.entries)
