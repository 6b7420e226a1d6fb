"""
Trajectory diagnostics and closed-form convergence-rate bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

CSV_COLUMNS = (
    "run_id", "seed", "algo", "bits", "round", "alpha", "beta",
    "consensus_fro", "r", "gap_max", "gap_mean", "bound",
)

# beta(0) cap for the strongly convex schedule; keeps 1 - beta(0) > 0
BETA_CAP = 0.99


def format_float(x) -> str:
    """17 significant digits so values round-trip exactly; empty for missing."""
    if x is None:
        return ""
    return f"{float(x):.17g}"


@dataclass(frozen=True)
class MetricRow:
    """Diagnostics of one run at one checkpoint round.

    ``z_dist_max`` (worst node squared distance of the running average to
    ``x*``) is kept for analysis but is not part of the CSV schema.
    """

    round: int
    consensus_frobenius: float
    alpha_k: float
    beta_k: float | None
    optimal_distance: float | None = None
    gap_max: float | None = None
    gap_mean: float | None = None
    bound_value: float | None = None
    z_dist_max: float | None = None
    run_id: str = ""
    seed: int = 0
    algo: str = "quantized"
    bits: int | None = None

    def csv_fields(self) -> list[str]:
        return [
            self.run_id,
            str(self.seed),
            self.algo,
            "" if self.bits is None else str(self.bits),
            str(self.round),
            format_float(self.alpha_k),
            format_float(self.beta_k),
            format_float(self.consensus_frobenius),
            format_float(self.optimal_distance),
            format_float(self.gap_max),
            format_float(self.gap_mean),
            format_float(self.bound_value),
        ]


def consensus_error(X) -> float:
    """Frobenius norm of ``X`` minus its row mean broadcast to every row."""
    X = np.asarray(X, dtype=float)
    return float(np.linalg.norm(X - X.mean(axis=0, keepdims=True)))


def optimal_distance(X, x_star) -> float:
    """Squared distance of the node average to ``x_star``."""
    diff = np.asarray(X, dtype=float).mean(axis=0) - np.asarray(x_star, dtype=float)
    return float(diff @ diff)


def relative_error(gap: float, f_star: float, tol: float = 1e-12) -> float:
    if abs(f_star) <= tol:
        raise ConfigError("relative error undefined for f* = 0; use the absolute gap instead")
    return gap / f_star


@dataclass(frozen=True)
class BoundInputs:
    """Constants entering the rate bounds.

    ``L`` is the sum of node Lipschitz constants and ``Delta`` the sum of the
    coordinate quantization steps.  ``alpha0``/``beta0`` default to the
    strongly convex schedule values ``a / 2`` and ``min(b / 2**(2/3), 0.99)``.
    """

    n: int
    sigma2: float
    L: float
    Delta: float
    mu: float = 0.0
    a: float = 0.0
    b: float = 0.0
    r0: float = 0.0
    Y0_sq: float = 0.0
    Y0: float = 0.0
    alpha0: float | None = None
    beta0: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.sigma2 < 1.0:
            raise ConfigError(f"sigma2 must lie in [0, 1), got {self.sigma2}")
        for name in ("n", "L", "Delta", "mu", "a", "b", "r0", "Y0_sq", "Y0"):
            if getattr(self, name) < 0:
                raise ConfigError(f"bound input {name} must be nonnegative")

    @property
    def alpha_0(self) -> float:
        return self.a / 2.0 if self.alpha0 is None else self.alpha0

    @property
    def beta_0(self) -> float:
        if self.beta0 is not None:
            return self.beta0
        return min(self.b / 2.0 ** (2.0 / 3.0), BETA_CAP)


def bound_convex(k: int, inp: BoundInputs) -> float:
    """Upper bound on ``E f(z_i(k)) - f*`` for the convex-rate schedule (horizon taken as ``k``)."""
    if k < 0:
        raise ConfigError("round must be nonnegative")
    n, gap, L, D = inp.n, 1.0 - inp.sigma2, inp.L, inp.Delta
    log_term = 1.0 + math.log(k + 2)
    head = (
        n * inp.r0 / 8.0
        + n * inp.Y0_sq / (2.0 * gap)
        + 16.0 * L ** 2
        + 9.0 * n * L ** 2 * log_term / (2.0 * gap ** 2)
        + 5.0 * n ** 2 * D ** 2 * log_term / 8.0
    )
    return head / (k + 1) ** 0.25


def bound_strongly_convex(k: int, inp: BoundInputs) -> float:
    """Upper bound on ``E ||z_i(k) - x*||^2`` for the strongly convex schedule."""
    if k < 0:
        raise ConfigError("round must be nonnegative")
    if not inp.mu > 0:
        raise ConfigError("strongly convex bound needs mu > 0")
    n, s2, L, D = inp.n, inp.sigma2, inp.L, inp.Delta
    gap = 1.0 - s2
    a0, b0 = inp.alpha_0, inp.beta_0
    if not 0 < b0 < 1:
        raise ConfigError(f"strongly convex bound needs 0 < beta(0) < 1, got {b0}")
    log_term = 1.0 + math.log(k + 2)
    fast = (
        n * inp.r0
        + 4.0 * n * inp.Y0 * log_term / gap
        + 6.0 * L ** 2 * a0 ** 2 * log_term / (1.0 - b0)
    )
    slow = (
        n * D ** 2 * b0 ** 2
        + 4.0 * L ** 2 * a0 ** 2 / (b0 * inp.mu)
        + 8.0 * n ** 2 * s2 ** 2 * D ** 2 * b0 ** 2 / gap ** 2
        + 27.0 * n * L ** 2 * a0 / (b0 * gap ** 3)
    )
    return fast / (k + 2) + slow / (k + 2) ** (1.0 / 3.0)


def consensus_step_bound(Y_sq: float, n: int, sigma2: float, L: float, Delta: float,
                         alpha_k: float, beta_k: float, beta_0: float) -> float:
    """One-step bound on ``E[||Y(k+1)||^2 | F_k]`` given ``||Y(k)||^2 = Y_sq``."""
    gap = 1.0 - sigma2
    return (
        (1.0 - gap * beta_k) * Y_sq
        + n * sigma2 ** 2 * Delta ** 2 * beta_k ** 2
        + 4.0 * L ** 2 * (beta_0 + 1.0) * alpha_k ** 2 / (gap * beta_k)
    )
