"""
Per-node regression objectives, box projection and the centralized reference solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvariantError
from .quantizer import BoxDomain, build_grid

LOSS_KINDS = ("quadratic", "absolute")


@dataclass(frozen=True)
class RegressionData:
    """Training pairs held by one node: rows of ``features`` and matching ``targets``."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        A = np.array(self.features, dtype=float, ndmin=2)
        b = np.array(self.targets, dtype=float, ndmin=1)
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
            raise ConfigError(f"features {A.shape} and targets {b.shape} are inconsistent")
        if A.shape[0] < 1:
            raise ConfigError("regression data needs at least one point")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ConfigError("regression data must be finite")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "features", A)
        object.__setattr__(self, "targets", b)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_csv(cls, path) -> "RegressionData":
        """One row per point: feature columns followed by the target."""
        try:
            raw = np.loadtxt(path, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ConfigError(f"{path}: unreadable regression data ({exc})") from exc
        if raw.shape[1] < 2:
            raise ConfigError(f"{path}: need at least one feature column and a target column")
        return cls(raw[:, :-1], raw[:, -1])

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.features, self.targets]), delimiter=",", fmt="%.17g")


@dataclass(frozen=True)
class NodeObjective:
    """Sum of squared or absolute residuals over a node's data."""

    loss_kind: str
    data: RegressionData
    lipschitz: float
    strong_convexity: float

    @property
    def dim(self) -> int:
        return self.data.dim


def _check_kind(kind):
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def _check_dim(obj_or_data, x):
    x = np.asarray(x, dtype=float)
    d = obj_or_data.dim
    if x.shape[-1] != d:
        raise InvariantError(f"dimension mismatch: point has {x.shape[-1]} coordinates, objective has {d}")
    return x


def make_objective(loss_kind: str, data: RegressionData, box: BoxDomain) -> NodeObjective:
    _check_kind(loss_kind)
    if data.dim != box.dim:
        raise ConfigError(f"data dimension {data.dim} does not match box dimension {box.dim}")
    L = lipschitz_bound_for(loss_kind, data, box)
    mu = strong_convexity_for(loss_kind, data)
    return NodeObjective(loss_kind, data, L, mu)


def value(obj: NodeObjective, x) -> float:
    x = _check_dim(obj, x)
    r = obj.data.features @ x - obj.data.targets
    if obj.loss_kind == "quadratic":
        return float(r @ r)
    return float(np.sum(np.abs(r)))


def subgradient(obj: NodeObjective, x) -> np.ndarray:
    """Gradient of the squared loss, or ``sum sign(r_p) a_p`` with ``sign(0) = 0``."""
    x = _check_dim(obj, x)
    A = obj.data.features
    r = A @ x - obj.data.targets
    if obj.loss_kind == "quadratic":
        return 2.0 * (A.T @ r)
    return A.T @ np.sign(r)


def lipschitz_bound_for(loss_kind: str, data: RegressionData, box: BoxDomain) -> float:
    _check_kind(loss_kind)
    norms = np.linalg.norm(data.features, axis=1)
    if loss_kind == "absolute":
        return float(np.sum(norms))
    # largest |a^T x - b| over the box, coordinatewise
    reach = np.maximum(np.abs(box.lower), np.abs(box.upper))
    max_resid = np.abs(data.features) @ reach + np.abs(data.targets)
    return float(np.sum(2.0 * norms * max_resid))


def lipschitz_bound(obj: NodeObjective, box: BoxDomain) -> float:
    """Upper bound on the subgradient norm of ``obj`` anywhere in ``box``."""
    return lipschitz_bound_for(obj.loss_kind, obj.data, box)


def strong_convexity_for(loss_kind: str, data: RegressionData) -> float:
    _check_kind(loss_kind)
    if loss_kind == "absolute":
        return 0.0
    gram = data.features.T @ data.features
    lam = float(np.linalg.eigvalsh(gram)[0])
    # rank-deficient Gram matrices give tiny nonzero eigenvalues through roundoff
    if lam <= 1e-12 * max(1.0, float(np.trace(gram))):
        return 0.0
    return 2.0 * lam


def strong_convexity_modulus(obj: NodeObjective) -> float:
    return strong_convexity_for(obj.loss_kind, obj.data)


def project_box(x, box: BoxDomain) -> np.ndarray:
    """Euclidean projection onto the box (coordinatewise clamp); works row-wise on matrices."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != box.dim:
        raise InvariantError(f"dimension mismatch: got {x.shape[-1]}, box has {box.dim}")
    return np.clip(x, box.lower, box.upper)


@dataclass(frozen=True)
class ReferenceSolution:
    x_star: np.ndarray
    f_star: float
    iterations: int = 0
    history: tuple = field(default=(), repr=False, compare=False)

    def __iter__(self):
        return iter((self.x_star, self.f_star))


class ProblemInstance:
    """
    The network problem ``min_{x in box} sum_i f_i(x)``.

    Besides the per-node objectives this keeps stacked copies of the data so
    that all node subgradients, or the global objective at many points, are
    evaluated with a handful of array operations.
    """

    def __init__(self, objectives: Sequence[NodeObjective], box: BoxDomain,
                 reference_solution: ReferenceSolution | None = None):
        objectives = list(objectives)
        if not objectives:
            raise ConfigError("a problem needs at least one node objective")
        for i, obj in enumerate(objectives):
            if obj.dim != box.dim:
                raise ConfigError(f"node {i} has dimension {obj.dim}, box has {box.dim}")
        self.objectives = objectives
        self.box = box
        kinds = {o.loss_kind for o in objectives}
        self._kind = kinds.pop() if len(kinds) == 1 else None
        self._all_A = np.vstack([o.data.features for o in objectives])
        self._all_b = np.concatenate([o.data.targets for o in objectives])
        self._owner = np.concatenate([np.full(o.data.m, i) for i, o in enumerate(objectives)])
        ms = {o.data.m for o in objectives}
        if self._kind is not None and len(ms) == 1:
            self._stack_A = np.stack([o.data.features for o in objectives])
            self._stack_b = np.stack([o.data.targets for o in objectives])
        else:
            self._stack_A = self._stack_b = None
        self._lipschitz = np.array([o.lipschitz for o in objectives])
        self.reference_solution = None
        if reference_solution is not None:
            self.set_reference(reference_solution)

    @property
    def n(self) -> int:
        return len(self.objectives)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def loss_kind(self):
        return self._kind

    @property
    def lipschitz(self) -> np.ndarray:
        return self._lipschitz

    @property
    def total_lipschitz(self) -> float:
        return float(np.sum(self.lipschitz))

    @property
    def mu(self) -> float:
        return float(min(o.strong_convexity for o in self.objectives))

    def with_bits(self, bits: int) -> "ProblemInstance":
        """Same objectives and reference on a box re-gridded with ``bits`` per coordinate."""
        return ProblemInstance(self.objectives, self.box.with_bits(bits), self.reference_solution)

    def set_reference(self, ref: ReferenceSolution) -> None:
        f_check = self.value(ref.x_star)
        if abs(f_check - ref.f_star) > 1e-9 * max(1.0, abs(f_check)):
            raise InvariantError(f"stored f* {ref.f_star} differs from f(x*) = {f_check}")
        self.reference_solution = ref

    def value(self, x) -> float:
        """Global objective ``sum_i f_i(x)``."""
        return float(self.values(np.asarray(x, dtype=float)[None, :])[0])

    def values(self, Z: np.ndarray) -> np.ndarray:
        """Global objective at each row of ``Z``."""
        R = Z @ self._all_A.T - self._all_b
        if self._kind == "quadratic":
            return np.einsum("ij,ij->i", R, R)
        if self._kind == "absolute":
            return np.abs(R).sum(axis=1)
        return np.array([sum(value(o, z) for o in self.objectives) for z in Z])

    def subgradients(self, X: np.ndarray) -> np.ndarray:
        """Row ``i`` is a subgradient of ``f_i`` at ``X[i]``."""
        if X.shape != (self.n, self.dim):
            raise InvariantError(f"iterate matrix has shape {X.shape}, expected {(self.n, self.dim)}")
        if self._stack_A is None:
            return np.array([subgradient(o, x) for o, x in zip(self.objectives, X)])
        A = self._stack_A
        r = np.matmul(A, X[:, :, None])[:, :, 0] - self._stack_b
        w = 2.0 * r if self._kind == "quadratic" else np.sign(r)
        return np.matmul(w[:, None, :], A)[:, 0, :]

    def total_subgradient(self, x: np.ndarray) -> np.ndarray:
        r = self._all_A @ x - self._all_b
        if self._kind == "quadratic":
            return 2.0 * (self._all_A.T @ r)
        if self._kind == "absolute":
            return self._all_A.T @ np.sign(r)
        return sum(subgradient(o, x) for o in self.objectives)


def make_regression_problem(n: int, d: int, loss_kind: str = "quadratic", points_per_node: int | None = None,
                            rng: np.random.Generator | None = None, lower: float = -1.0,
                            upper: float = 1.0, bits: int = 8) -> ProblemInstance:
    """Regression network with features and targets i.i.d. uniform on [0, 1]."""
    _check_kind(loss_kind)
    if n < 1 or d < 1:
        raise ConfigError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    m = d + 2 if points_per_node is None else int(points_per_node)
    if m < 1:
        raise ConfigError(f"points_per_node must be >= 1, got {m}")
    rng = np.random.default_rng() if rng is None else rng
    box = BoxDomain.uniform(d, lower, upper, bits)
    objectives = []
    for _ in range(n):
        data = RegressionData(rng.random((m, d)), rng.random(m))
        objectives.append(make_objective(loss_kind, data, box))
    return ProblemInstance(objectives, box)


def solve_reference(problem: ProblemInstance, iterations: int = 1_000_000, step_scale: float | None = None,
                    x0=None, record_every: int = 0) -> ReferenceSolution:
    """
    Centralized projected subgradient method on ``sum_i f_i`` over the box.

    Steps are ``step_scale / sqrt(k + 1)`` times the subgradient and the best
    iterate seen is returned.  When ``step_scale`` is None it is set to the box
    diameter divided by the subgradient norm at the starting point.  The
    result is also stored on ``problem``.

    With ``record_every > 0`` the best value is recorded every that many
    iterations in ``history``.
    """
    if iterations < 1:
        raise ConfigError(f"reference solver needs iterations >= 1, got {iterations}")
    box = problem.box
    x = (box.lower + box.upper) / 2.0 if x0 is None else project_box(x0, box)
    A, b, kind = problem._all_A, problem._all_b, problem.loss_kind
    if kind is None:
        raise ConfigError("reference solver needs a single loss kind across nodes")
    lo, hi = box.lower, box.upper

    def f_and_g(z):
        r = A @ z - b
        if kind == "quadratic":
            return float(r @ r), 2.0 * (A.T @ r)
        return float(np.sum(np.abs(r))), A.T @ np.sign(r)

    f, g = f_and_g(x)
    if step_scale is None:
        gnorm = float(np.linalg.norm(g))
        step_scale = box.diameter() / gnorm if gnorm > 0 else 1.0
    best_x, best_f = x.copy(), f
    history = []
    sqrt_k = np.sqrt(np.arange(1, iterations + 1, dtype=float))
    for k in range(iterations):
        x = np.clip(x - (step_scale / sqrt_k[k]) * g, lo, hi)
        f, g = f_and_g(x)
        if f < best_f:
            best_f, best_x = f, x.copy()
        if record_every and (k + 1) % record_every == 0:
            history.append(best_f)
    # recompute through the public evaluator so f* == f(x*) exactly
    ref = ReferenceSolution(best_x, problem.value(best_x), iterations, tuple(history))
    problem.set_reference(ref)
    return ref


def save_problem(problem: ProblemInstance, directory, reference: bool = True) -> Path:
    """Write per-node CSV files plus ``problem.json`` (and ``reference.json``) into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, obj in enumerate(problem.objectives):
        name = f"node_{i:04d}.csv"
        obj.data.to_csv(directory / name)
        files.append(name)
    doc = {
        "loss_kind": problem.loss_kind,
        "box": {
            "lower": problem.box.lower.tolist(),
            "upper": problem.box.upper.tolist(),
            "bits": [g.bits for g in problem.box.grids],
        },
        "nodes": files,
    }
    path = directory / "problem.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    if reference and problem.reference_solution is not None:
        save_reference(problem.reference_solution, directory / "reference.json")
    return path


def load_problem(path) -> ProblemInstance:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        kind = doc["loss_kind"]
        box_doc = doc["box"]
        lower, upper = box_doc["lower"], box_doc["upper"]
        bits = box_doc.get("bits", 8)
        if isinstance(bits, int):
            bits = [bits] * len(lower)
        node_files = doc["nodes"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed problem document ({exc})") from exc
    box = BoxDomain(tuple(build_grid(l, u, b) for l, u, b in zip(lower, upper, bits)))
    objectives = [make_objective(kind, RegressionData.from_csv(path.parent / f), box) for f in node_files]
    problem = ProblemInstance(objectives, box)
    ref_path = path.parent / "reference.json"
    if ref_path.exists():
        problem.set_reference(load_reference(ref_path))
    return problem


def save_reference(ref: ReferenceSolution, path) -> None:
    doc = {"x_star": [float(v) for v in ref.x_star], "f_star": float(ref.f_star), "iterations": ref.iterations}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_reference(path) -> ReferenceSolution:
    try:
        doc = json.loads(Path(path).read_text())
        return ReferenceSolution(np.asarray(doc["x_star"], dtype=float), float(doc["f_star"]),
                                 int(doc.get("iterations", 0)))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed reference document ({exc})") from exc
