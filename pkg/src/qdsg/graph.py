"""
Random geometric networks and lazy Metropolis mixing matrices.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConnectivityError, InvariantError

DEFAULT_MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class Network:
    """Undirected simple graph with node coordinates in the unit square.

    ``edges`` holds each unordered pair once as ``(i, j)`` with ``i < j``.
    """

    n: int
    coordinates: np.ndarray
    edges: frozenset
    attempts: int = 1
    neighbors: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("network needs at least one node")
        nbrs = [[] for _ in range(self.n)]
        for i, j in self.edges:
            if i == j:
                raise ConfigError(f"self-loop ({i}, {i}) not allowed")
            nbrs[i].append(j)
            nbrs[j].append(i)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(v)) for v in nbrs))

    @classmethod
    def from_edges(cls, n, edges, coordinates=None, attempts=1) -> "Network":
        norm = frozenset((min(i, j), max(i, j)) for i, j in edges)
        if coordinates is None:
            coordinates = np.zeros((n, 2))
        return cls(n, np.asarray(coordinates, dtype=float), norm, attempts)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(v) for v in self.neighbors])

    def is_connected(self) -> bool:
        return is_connected(self.n, self.neighbors)


def is_connected(n, neighbors) -> bool:
    """Breadth-first search from node 0."""
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in neighbors[i]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return bool(seen.all())


def geometric_edges(coordinates: np.ndarray, radius: float) -> frozenset:
    """Pairs of points strictly closer than ``radius``."""
    diff = coordinates[:, None, :] - coordinates[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=-1))
    i, j = np.nonzero(np.triu(dist < radius, k=1))
    return frozenset(zip(i.tolist(), j.tolist()))


def generate_rgg(n: int, radius: float, rng: np.random.Generator,
                 max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> Network:
    """
    Sample a connected random geometric graph.

    Node coordinates are uniform in the unit square and two nodes are joined
    when their distance is below ``radius``.  Disconnected draws are thrown
    away and the whole graph is resampled.

    Parameters
    ----------
    n : int
        Number of nodes, at least 2.
    radius : float
        Connection radius.
    rng : numpy.random.Generator
        Source of the coordinates.
    max_attempts : int, optional
        Number of draws before giving up.

    Returns
    -------
    Network
        The first connected draw; ``attempts`` records how many were needed.

    Raises
    ------
    ConnectivityError
        When no connected draw was found within ``max_attempts``.
    """
    if n < 2:
        raise ConfigError(f"random geometric graph needs n >= 2, got {n}")
    if not radius > 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    if max_attempts < 1:
        raise ConfigError("max_attempts must be positive")
    for attempt in range(1, max_attempts + 1):
        coords = rng.random((n, 2))
        net = Network(n, coords, geometric_edges(coords, radius), attempt)
        if net.is_connected():
            return net
    raise ConnectivityError(
        f"no connected graph with n={n}, radius={radius} after {max_attempts} attempts",
        attempts=max_attempts,
    )


class MixingMatrix:
    """Doubly stochastic weight matrix with a lazily cached second singular value."""

    def __init__(self, entries):
        entries = np.array(entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ConfigError(f"mixing matrix must be square, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ConfigError("mixing matrix has non-finite entries")
        entries.setflags(write=False)
        self.entries = entries
        self._sigma2 = None

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def sigma2(self) -> float:
        if self._sigma2 is None:
            self._sigma2 = second_singular_value(self)
        return self._sigma2

    def stochasticity_error(self) -> float:
        """Largest deviation of a row or column sum from one."""
        A = self.entries
        return float(max(np.max(np.abs(A.sum(axis=0) - 1)), np.max(np.abs(A.sum(axis=1) - 1))))

    def to_csv(self, path) -> None:
        np.savetxt(path, self.entries, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "MixingMatrix":
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))


def lazy_metropolis(net: Network) -> MixingMatrix:
    """Weights ``1 / (2 max(deg_i, deg_j))`` on edges, remainder on the diagonal."""
    if not net.is_connected():
        raise ConnectivityError("lazy Metropolis weights need a connected network", attempts=net.attempts)
    deg = net.degrees
    A = np.zeros((net.n, net.n))
    for i, j in net.edges:
        A[i, j] = A[j, i] = 1.0 / (2.0 * max(deg[i], deg[j]))
    A[np.diag_indices(net.n)] = 1.0 - A.sum(axis=1)
    return MixingMatrix(A)


def second_singular_value(A: MixingMatrix) -> float:
    """Second largest singular value; 0 for a single node."""
    M = A.entries if isinstance(A, MixingMatrix) else np.asarray(A, dtype=float)
    if M.shape[0] == 1:
        return 0.0
    try:
        s = np.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise InvariantError(f"singular value decomposition failed: {exc}") from exc
    return float(s[1])


def verify_mixing_contraction(A: MixingMatrix) -> float:
    """Spectral norm of ``A (I - 11^T / n)``; never exceeds ``sigma2`` for doubly stochastic ``A``."""
    M = A.entries
    n = M.shape[0]
    W = np.eye(n) - np.full((n, n), 1.0 / n)
    return float(np.linalg.norm(M @ W, 2))


def write_adjacency(net: Network, path) -> None:
    """Plain-text adjacency list: ``n`` then ``id: x y: neighbour ids`` per node."""
    lines = [str(net.n)]
    for i in range(net.n):
        x, y = net.coordinates[i]
        nbrs = " ".join(str(j) for j in net.neighbors[i])
        lines.append(f"{i}: {x:.17g} {y:.17g}: {nbrs}".rstrip())
    Path(path).write_text("\n".join(lines) + "\n")


def read_adjacency(path) -> Network:
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ConfigError(f"{path}: empty adjacency file")
    try:
        n = int(text[0])
        coords = np.zeros((n, 2))
        edges = set()
        for line in text[1:]:
            node, xy, nbrs = line.split(":")
            i = int(node)
            coords[i] = [float(v) for v in xy.split()]
            for j in nbrs.split():
                edges.add((min(i, int(j)), max(i, int(j))))
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed adjacency file ({exc})") from exc
    if len(text) - 1 != n:
        raise ConfigError(f"{path}: expected {n} node lines, found {len(text) - 1}")
    return Network(n, coords, frozenset(edges))
