"""Experiment configuration: JSON ingestion and validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .algorithm import MODES, SCHEDULE_KINDS, StepSchedule
from .errors import ConfigError
from .problems import LOSS_KINDS
from .quantizer import MAX_BITS


@dataclass(frozen=True)
class ScheduleSpec:
    """Schedule as written in a config file.

    For ``strongly_convex`` a missing ``a`` or ``b`` is filled in at run time
    with ``1/mu`` and ``1/(1 - sigma2)`` of the actual instance.
    """

    kind: str = "convex_rate"
    s: float = 0.75
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"schedule.kind: unknown kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.kind == "asymptotic" and not 0.5 < self.s < 1.0:
            raise ConfigError(f"schedule.s: must lie in the open interval (1/2, 1), got {self.s}")
        for name in ("a", "b"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"schedule.{name}: must be positive, got {v}")

    def resolve(self, mu: float, sigma2: float) -> StepSchedule:
        if self.kind == "asymptotic":
            return StepSchedule.asymptotic(self.s)
        if self.kind == "convex_rate":
            return StepSchedule.convex_rate()
        return StepSchedule.strongly_convex_for(mu, sigma2, self.a, self.b)


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 50
    d: int = 10
    radius: float = 0.4
    bits: tuple[int, ...] = (8,)
    loss_kind: str = "quadratic"
    points_per_node: int | None = None
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    rounds: int = 10_000
    seeds: tuple[int, ...] = (0,)
    ref_iterations: int = 1_000_000
    output_path: str = "out.csv"
    checkpoints: tuple[int, ...] | None = None
    mode: str = "quantized"
    instance_seed: int = 0
    lower: float = -1.0
    upper: float = 1.0
    max_attempts: int = 1000
    round_cap: int = 200_000
    threshold: float = 0.2
    abs_epsilon: float = 1e-3
    workers: int = 1
    reference_path: str | None = None

    def __post_init__(self):
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        for name in ("n", "d", "rounds", "ref_iterations", "max_attempts", "round_cap", "workers", "instance_seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                bad(name, f"must be an integer, got {v!r}")
        if self.n < 2:
            bad("n", f"distributed runs need at least 2 nodes, got {self.n}")
        if self.d < 1:
            bad("d", f"must be >= 1, got {self.d}")
        if not self.radius > 0:
            bad("radius", f"must be positive, got {self.radius}")
        if not self.bits:
            bad("bits", "list must be nonempty")
        for b in self.bits:
            if isinstance(b, bool) or not isinstance(b, int) or not 1 <= b <= MAX_BITS:
                bad("bits", f"each value must be an integer in [1, {MAX_BITS}], got {b!r}")
        if self.loss_kind not in LOSS_KINDS:
            bad("loss_kind", f"expected one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.points_per_node is not None and (
                isinstance(self.points_per_node, bool) or not isinstance(self.points_per_node, int)
                or self.points_per_node < 1):
            bad("points_per_node", f"must be a positive integer, got {self.points_per_node!r}")
        if self.rounds < 1:
            bad("rounds", f"must be >= 1, got {self.rounds}")
        if not self.seeds:
            bad("seeds", "list must be nonempty")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, int) or s < 0:
                bad("seeds", f"each seed must be a nonnegative integer, got {s!r}")
        if self.instance_seed < 0:
            bad("instance_seed", f"must be nonnegative, got {self.instance_seed}")
        if self.ref_iterations < 1:
            bad("ref_iterations", f"must be >= 1, got {self.ref_iterations}")
        if self.checkpoints is not None:
            for c in self.checkpoints:
                if isinstance(c, bool) or not isinstance(c, int) or c < 0:
                    bad("checkpoints", f"each checkpoint must be a nonnegative integer, got {c!r}")
        if self.mode not in MODES:
            bad("mode", f"expected one of {MODES}, got {self.mode!r}")
        if not self.upper > self.lower:
            bad("upper", f"must exceed lower ({self.lower}), got {self.upper}")
        if self.max_attempts < 1:
            bad("max_attempts", f"must be >= 1, got {self.max_attempts}")
        if self.round_cap < 1:
            bad("round_cap", f"must be >= 1, got {self.round_cap}")
        if not self.threshold > 0:
            bad("threshold", f"must be positive, got {self.threshold}")
        if not self.abs_epsilon > 0:
            bad("abs_epsilon", f"must be positive, got {self.abs_epsilon}")
        if self.workers < 1:
            bad("workers", f"must be >= 1, got {self.workers}")

    @property
    def m(self) -> int:
        """Training pairs per node."""
        return self.d + 2 if self.points_per_node is None else self.points_per_node

    def replace(self, **changes) -> "ExperimentConfig":
        doc = self.to_dict()
        doc.update(changes)
        return config_from_dict(doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key in ("bits", "seeds", "checkpoints"):
            if doc[key] is not None:
                doc[key] = list(doc[key])
        return doc


_FIELDS = {f.name for f in fields(ExperimentConfig)}


def _int_list(name, value):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    if isinstance(value, int) and not isinstance(value, bool):
        return (value,)
    raise ConfigError(f"{name}: expected an integer or a list of integers, got {value!r}")


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"config must be a JSON object, got {type(doc).__name__}")
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    kw = dict(doc)
    for key in ("bits", "seeds", "checkpoints"):
        if kw.get(key) is not None:
            kw[key] = _int_list(key, kw[key])
    if "schedule" in kw:
        sched = kw["schedule"]
        if isinstance(sched, str):
            sched = {"kind": sched}
        if isinstance(sched, ScheduleSpec):
            pass
        elif isinstance(sched, dict):
            extra = set(sched) - {"kind", "s", "a", "b"}
            if extra:
                raise ConfigError(f"schedule: unknown field(s) {', '.join(sorted(extra))}")
            sched = ScheduleSpec(**sched)
        else:
            raise ConfigError(f"schedule: expected a kind name or an object, got {sched!r}")
        kw["schedule"] = sched
    for key in ("radius", "lower", "upper", "threshold", "abs_epsilon"):
        if key in kw and (isinstance(kw[key], bool) or not isinstance(kw[key], (int, float))):
            raise ConfigError(f"{key}: expected a number, got {kw[key]!r}")
    return ExperimentConfig(**kw)


def parse_config(path) -> ExperimentConfig:
    """Read a JSON config; absent fields take their defaults."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return config_from_dict(doc)
