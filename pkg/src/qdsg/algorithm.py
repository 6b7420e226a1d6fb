"""
Two-time-scale distributed subgradient iteration with randomly quantized messages.

Each round every node broadcasts one random quantization ``q_i(k)`` of its
iterate and updates

    v_i = (1 - beta(k)) x_i + beta(k) sum_j a_ij q_j - alpha(k) g_i(x_i)
    x_i(k+1) = P_X[v_i]

The unquantized baseline ``x_i(k+1) = P_X[sum_j a_ij x_j - alpha(k) g_i]`` is
provided for comparison.
"""

from __future__ import annotations

import warnings
from functools import lru_cache
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, InvariantError
from .graph import MixingMatrix
from .metrics import BETA_CAP, BoundInputs, MetricRow, bound_convex, bound_strongly_convex
from .metrics import consensus_error, optimal_distance
from .problems import ProblemInstance
from .quantizer import quantize_array

SCHEDULE_KINDS = ("asymptotic", "convex_rate", "strongly_convex")
MODES = ("quantized", "dsg")

# purpose tags for the counter-based random streams
_INIT_STREAM = 1
_QUANT_STREAM = 2


class BetaClampWarning(UserWarning):
    """The strongly convex schedule's beta(0) was capped below one."""


@dataclass(frozen=True)
class StepSchedule:
    """Stepsize pair ``(alpha(k), beta(k))``.

    * ``asymptotic``: ``1/(k+2)`` and ``(k+2)**-s`` with ``s`` in (1/2, 1)
    * ``convex_rate``: ``(k+2)**-3/4`` and ``(k+2)**-1/2``
    * ``strongly_convex``: ``a/(k+2)`` and ``min(b/(k+2)**(2/3), 0.99)``
    """

    kind: str
    s: float = 0.75
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.kind == "asymptotic" and not 0.5 < self.s < 1.0:
            raise ConfigError(f"asymptotic schedule needs s in the open interval (1/2, 1), got {self.s}")
        if self.kind == "strongly_convex":
            if not (self.a > 0 and self.b > 0):
                raise ConfigError(f"strongly convex schedule needs a, b > 0, got a={self.a}, b={self.b}")
            if self.beta_clamped:
                warnings.warn(
                    f"beta(0) = {self.b / 2 ** (2 / 3):.4g} >= 1; beta(k) capped at {BETA_CAP}",
                    BetaClampWarning, stacklevel=3,
                )

    @classmethod
    def asymptotic(cls, s: float = 0.75) -> "StepSchedule":
        return cls("asymptotic", s=s)

    @classmethod
    def convex_rate(cls) -> "StepSchedule":
        return cls("convex_rate")

    @classmethod
    def strongly_convex(cls, a: float, b: float) -> "StepSchedule":
        return cls("strongly_convex", a=a, b=b)

    @classmethod
    def strongly_convex_for(cls, mu: float, sigma2: float, a: float | None = None,
                            b: float | None = None) -> "StepSchedule":
        """Smallest admissible ``a = 1/mu`` and ``b = 1/(1 - sigma2)`` unless given."""
        if not mu > 0:
            raise ConfigError("strongly convex schedule needs a strongly convex problem (mu > 0)")
        sched = cls.strongly_convex(1.0 / mu if a is None else a, 1.0 / (1.0 - sigma2) if b is None else b)
        sched.check_strongly_convex(mu, sigma2)
        return sched

    def check_strongly_convex(self, mu: float, sigma2: float) -> None:
        if self.kind != "strongly_convex":
            return
        if not mu > 0:
            raise ConfigError("strongly convex schedule needs a strongly convex problem (mu > 0)")
        if self.a < 1.0 / mu * (1 - 1e-12):
            raise ConfigError(f"schedule parameter a={self.a} below 1/mu={1.0 / mu}")
        if self.b < 1.0 / (1.0 - sigma2) * (1 - 1e-12):
            raise ConfigError(f"schedule parameter b={self.b} below 1/(1 - sigma2)={1.0 / (1.0 - sigma2)}")

    @property
    def beta_clamped(self) -> bool:
        return self.kind == "strongly_convex" and self.b / 2.0 ** (2.0 / 3.0) >= 1.0

    @property
    def keeps_average(self) -> bool:
        return self.kind != "asymptotic"

    def to_dict(self) -> dict:
        if self.kind == "asymptotic":
            return {"kind": self.kind, "s": self.s}
        if self.kind == "strongly_convex":
            return {"kind": self.kind, "a": self.a, "b": self.b}
        return {"kind": self.kind}


def alpha(schedule: StepSchedule, k: int) -> float:
    if schedule.kind == "asymptotic":
        return 1.0 / (k + 2)
    if schedule.kind == "convex_rate":
        return (k + 2) ** -0.75
    return schedule.a / (k + 2)


def beta(schedule: StepSchedule, k: int) -> float:
    if schedule.kind == "asymptotic":
        return (k + 2) ** -schedule.s
    if schedule.kind == "convex_rate":
        return (k + 2) ** -0.5
    return min(schedule.b / (k + 2) ** (2.0 / 3.0), BETA_CAP)


def average_weight(schedule: StepSchedule, k: int) -> float:
    """Weight of ``x(k)`` in the running average."""
    return alpha(schedule, k) if schedule.kind == "convex_rate" else 1.0


@dataclass(frozen=True)
class NetworkState:
    """Iterates ``X(k)`` (row ``i`` is node ``i``) and running averages.

    ``averages`` holds the weighted mean of ``x(0), ..., x(k-1)`` and
    ``weight_accumulator`` the total weight of those terms, so both are
    empty at round 0.
    """

    iterates: np.ndarray
    averages: np.ndarray | None = None
    weight_accumulator: float = 0.0
    round: int = 0

    @property
    def n(self) -> int:
        return self.iterates.shape[0]


@dataclass(frozen=True)
class StepTrace:
    quantized: np.ndarray
    quant_error: np.ndarray
    pre_projection: np.ndarray
    projection_error: np.ndarray


def update_running_average(state: NetworkState, schedule: StepSchedule) -> NetworkState:
    """Fold ``x(k)`` into the running averages (round counter unchanged)."""
    if not schedule.keeps_average:
        return state
    w = average_weight(schedule, state.round)
    S_next = state.weight_accumulator + w
    if state.averages is None or state.weight_accumulator == 0.0:
        Z = state.iterates.copy()
    else:
        Z = (w * state.iterates + state.weight_accumulator * state.averages) / S_next
    return replace(state, averages=Z, weight_accumulator=S_next)


def current_average(state: NetworkState, schedule: StepSchedule) -> np.ndarray:
    """Running average including ``x(k)``; the iterates themselves if no average is kept."""
    if not schedule.keeps_average:
        return state.iterates
    return update_running_average(state, schedule).averages


def _check_shapes(state, problem, A):
    n, d = state.iterates.shape
    if n != problem.n or d != problem.dim or A.n != n:
        raise InvariantError(
            f"inconsistent sizes: iterates {state.iterates.shape}, problem n={problem.n} d={problem.dim}, "
            f"mixing matrix n={A.n}"
        )


def quantized_step(state: NetworkState, problem: ProblemInstance, A: MixingMatrix, schedule: StepSchedule,
                   rng: np.random.Generator, check: bool = True) -> tuple[NetworkState, StepTrace]:
    """
    One synchronous round of the quantized iteration.

    All quantizations are drawn from the snapshot ``X(k)`` before any node
    moves; node ``i``'s mixing term uses its own quantized value through the
    diagonal of ``A``.  The ``n x d`` uniforms are taken from ``rng`` in
    row-major order, so entry ``(i, l)`` always drives node ``i``,
    coordinate ``l``.

    Parameters
    ----------
    state : NetworkState
        Iterates at round ``k``; every row must lie in the box.
    problem : ProblemInstance
        Node objectives and the constraint box.
    A : MixingMatrix
        Doubly stochastic weights.
    schedule : StepSchedule
        Supplies ``alpha(k)`` and ``beta(k)``.
    rng : numpy.random.Generator
        Stream for this round's quantization.
    check : bool, optional
        Assert the quantization and projection error bounds.

    Returns
    -------
    (NetworkState, StepTrace)
        State at round ``k + 1`` and the intermediate matrices of the round.
    """
    _check_shapes(state, problem, A)
    k = state.round
    a_k, b_k = alpha(schedule, k), beta(schedule, k)
    X = state.iterates
    box = problem.box
    Q = quantize_array(X, box, rng.random(X.shape))
    G = problem.subgradients(X)
    V = (1.0 - b_k) * X + b_k * (A.entries @ Q) - a_k * G
    X_next = np.minimum(np.maximum(V, box.lower), box.upper)
    trace = StepTrace(Q, Q - X, V, V - X_next)
    if check:
        _check_trace(trace, problem, a_k, k)
    averaged = update_running_average(state, schedule)
    return replace(averaged, iterates=X_next, round=k + 1), trace


def _check_trace(trace: StepTrace, problem: ProblemInstance, a_k: float, k: int) -> None:
    steps = problem.box.steps
    if (np.abs(trace.quant_error) > steps * (1 + 1e-12)).any():
        raise InvariantError(f"round {k}: quantization error exceeds the grid step")
    xi = np.sqrt(np.einsum("ij,ij->i", trace.projection_error, trace.projection_error))
    limit = problem.lipschitz * a_k
    if (xi > limit * (1 + 1e-9) + 1e-12).any():
        i = int(np.argmax(xi - limit))
        raise InvariantError(
            f"round {k}: projection error {xi[i]:.6g} at node {i} exceeds L_i alpha(k) = {limit[i]:.6g}"
        )


def dsg_step(state: NetworkState, problem: ProblemInstance, A: MixingMatrix, alpha_k: float) -> NetworkState:
    """Unquantized projected consensus subgradient step; averages are left untouched."""
    _check_shapes(state, problem, A)
    X = state.iterates
    V = A.entries @ X - alpha_k * problem.subgradients(X)
    X_next = np.clip(V, problem.box.lower, problem.box.upper)
    return replace(state, iterates=X_next, round=state.round + 1)


@lru_cache(maxsize=256)
def _seed_key(seed: int) -> np.ndarray:
    if seed < 0:
        raise ConfigError(f"seeds must be nonnegative, got {seed}")
    return np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)


def stream(seed: int, purpose: int) -> np.random.Generator:
    """Counter-based generator keyed by the master seed, one block per purpose.

    Philox output at a given position is a pure function of (key, counter),
    so drawing ``n * d`` uniforms per round in row-major order ties the
    number used for (round, node, coordinate) to that tuple alone.
    """
    return np.random.Generator(np.random.Philox(counter=[0, 0, purpose, 0], key=_seed_key(seed)))


def initial_state(problem: ProblemInstance, seed: int) -> NetworkState:
    """``x_i(0)`` uniform on the box, drawn from the seed's initialization stream."""
    box = problem.box
    U = stream(seed, _INIT_STREAM).random((problem.n, problem.dim))
    X0 = np.clip(box.lower + (box.upper - box.lower) * U, box.lower, box.upper)
    return NetworkState(X0)


def iterate(problem: ProblemInstance, A: MixingMatrix, schedule: StepSchedule, mode: str = "quantized",
            seed: int = 0, check: bool = True, state: NetworkState | None = None) -> Iterator[NetworkState]:
    """Yield the states at rounds 0, 1, 2, ... indefinitely.

    A supplied ``state`` is treated as the starting point and the
    quantization stream starts at its beginning.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    state = initial_state(problem, seed) if state is None else state
    rng = stream(seed, _QUANT_STREAM)
    while True:
        yield state
        if mode == "quantized":
            state, _ = quantized_step(state, problem, A, schedule, rng, check)
        else:
            k = state.round
            state = dsg_step(update_running_average(state, schedule), problem, A, alpha(schedule, k))
            if check and not problem.box.contains(state.iterates):
                raise InvariantError(f"round {k}: iterate left the box")


def default_checkpoints(rounds: int) -> list[int]:
    """``0, 1, 2, 4, 8, ...`` up to ``rounds``, plus ``rounds`` itself."""
    pts, c = [0], 1
    while c < rounds:
        pts.append(c)
        c *= 2
    if rounds > 0:
        pts.append(rounds)
    return pts


def measure(state: NetworkState, problem: ProblemInstance, schedule: StepSchedule, **labels) -> MetricRow:
    """Diagnostics of ``state``; gap columns need a reference solution on ``problem``."""
    k = state.round
    X = state.iterates
    row = dict(
        round=k,
        consensus_frobenius=consensus_error(X),
        alpha_k=alpha(schedule, k),
        beta_k=beta(schedule, k) if labels.get("algo", "quantized") == "quantized" else None,
    )
    ref = problem.reference_solution
    if ref is not None:
        Z = current_average(state, schedule)
        gaps = problem.values(Z) - ref.f_star
        dz = Z - ref.x_star
        row.update(
            optimal_distance=optimal_distance(X, ref.x_star),
            gap_max=float(gaps.max()),
            gap_mean=float(gaps.mean()),
            z_dist_max=float(np.max(np.einsum("ij,ij->i", dz, dz))),
        )
    return MetricRow(**row, **labels)


def bound_for(schedule: StepSchedule, k: int, inputs: BoundInputs | None) -> float | None:
    """The rate bound matching the schedule, or None when none applies."""
    if inputs is None:
        return None
    if schedule.kind == "convex_rate":
        return bound_convex(k, inputs)
    if schedule.kind == "strongly_convex":
        return bound_strongly_convex(k, inputs)
    return None


def run(problem: ProblemInstance, A: MixingMatrix, schedule: StepSchedule, mode: str = "quantized",
        rounds: int = 10_000, seed: int = 0, checkpoints: Sequence[int] | None = None,
        bound_inputs: BoundInputs | None = None, run_id: str | None = None,
        check: bool = True) -> list[MetricRow]:
    """
    Run ``rounds`` steps from the seeded initial state and record metrics.

    The output depends only on ``(problem, A, schedule, mode, seed)``: the
    initial point and every quantization draw come from counter-based
    streams keyed by the seed.  ``bound_inputs`` fills the bound column
    (quantized mode only).
    """
    if rounds < 0:
        raise ConfigError(f"rounds must be nonnegative, got {rounds}")
    if schedule.kind == "strongly_convex":
        schedule.check_strongly_convex(problem.mu, A.sigma2)
    cps = sorted({c for c in (default_checkpoints(rounds) if checkpoints is None else checkpoints) if 0 <= c <= rounds})
    if not cps:
        cps = [rounds]
    bits = int(problem.box.grids[0].bits) if mode == "quantized" else None
    default_id = f"quantized-b{bits}-s{seed}" if mode == "quantized" else f"dsg-s{seed}"
    labels = dict(run_id=run_id or default_id, seed=seed, algo=mode, bits=bits)
    rows = []
    todo = iter(cps)
    target = next(todo)
    for state in iterate(problem, A, schedule, mode, seed, check):
        if state.round == target:
            row = measure(state, problem, schedule, **labels)
            if mode == "quantized":
                row = replace(row, bound_value=bound_for(schedule, state.round, bound_inputs))
            rows.append(row)
            target = next(todo, None)
            if target is None:
                break
    return rows


def rounds_to_threshold(problem: ProblemInstance, A: MixingMatrix, schedule: StepSchedule, seed: int,
                        threshold: float = 0.2, cap: int = 200_000, relative: bool = True,
                        check_every: int = 1, check: bool = True) -> int:
    """First checked round at which the worst-node gap meets the threshold, or -1 at the cap.

    With ``relative`` the criterion is ``gap_max / f* <= threshold``; otherwise
    ``gap_max <= threshold``.
    """
    ref = problem.reference_solution
    if ref is None:
        raise ConfigError("threshold search needs a reference solution")
    if relative and abs(ref.f_star) <= 1e-12:
        raise ConfigError("f* = 0: relative threshold unusable")
    limit = threshold * ref.f_star if relative else threshold
    for state in iterate(problem, A, schedule, "quantized", seed, check):
        k = state.round
        if k % check_every == 0 or k == cap:
            gap = float(np.max(problem.values(current_average(state, schedule)))) - ref.f_star
            if gap <= limit:
                return k
        if k >= cap:
            return -1
    return -1  # pragma: no cover


def bound_inputs_for(problem: ProblemInstance, A: MixingMatrix, schedule: StepSchedule,
                     seeds: Sequence[int]) -> BoundInputs:
    """Bound constants with ``E r(0)``, ``E ||Y(0)||^2``, ``E ||Y(0)||`` estimated over ``seeds``."""
    ref = problem.reference_solution
    starts = [initial_state(problem, s).iterates for s in seeds]
    y = np.array([consensus_error(X) for X in starts])
    r0 = float(np.mean([optimal_distance(X, ref.x_star) for X in starts])) if ref is not None else 0.0
    kw = {}
    if schedule.kind == "strongly_convex":
        kw = dict(a=schedule.a, b=schedule.b, alpha0=alpha(schedule, 0), beta0=beta(schedule, 0))
    return BoundInputs(
        n=problem.n, sigma2=A.sigma2, L=problem.total_lipschitz, Delta=problem.box.aggregate_delta,
        mu=problem.mu, r0=r0, Y0_sq=float(np.mean(y ** 2)), Y0=float(np.mean(y)), **kw,
    )
