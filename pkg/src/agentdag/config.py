"""Run configuration: every tunable default in one place."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError


@dataclass
class RunConfig:
    # graph shape
    k_max: int = 5
    max_depth: int = 8
    # execution
    retries: int = 2
    max_parallel: int = 1
    task_timeout: float = 300.0
    strict_coverage: bool = False
    strict_judge: bool = False
    route_floor: float = 0.0
    # context
    token_budget: int = 8000
    tau: int | None = None  # None -> 25% of token_budget
    lm_fraction: float = 0.15
    compress_fraction: float = 0.25
    compress_floor: int = 64
    descriptor_limit: int = 512
    dump_context: bool = False
    # audit
    alpha: float = 0.9
    q0: float = 0.5
    acceptance_threshold: float = 0.7
    structural_weight: float = 0.4
    anomaly_rejections: int = 3
    anomaly_quality_drop: float = 0.2
    # evolution
    prune_threshold: float = 0.4
    min_observations: int = 5
    fuse_threshold: float = 0.8
    split_observations: int = 3
    judge_mode: str = "per_task"  # or "timer"
    judge_interval: float = 60.0
    # simulation
    seed: int = 0
    jitter_ms: float = 0.0
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.tau is None:
            self.tau = max(1, self.token_budget // 4)
        checks = [
            ("k_max", self.k_max >= 1),
            ("max_depth", self.max_depth >= 1),
            ("retries", self.retries >= 0),
            ("max_parallel", self.max_parallel >= 1),
            ("task_timeout", self.task_timeout > 0),
            ("route_floor", 0.0 <= self.route_floor < 1.0),
            ("token_budget", self.token_budget >= 1),
            ("tau", 1 <= self.tau <= self.token_budget),
            ("lm_fraction", 0.0 <= self.lm_fraction < 1.0),
            ("compress_fraction", 0.0 < self.compress_fraction <= 1.0),
            ("compress_floor", self.compress_floor >= 1),
            ("descriptor_limit", self.descriptor_limit >= 1),
            ("alpha", 0.0 <= self.alpha <= 1.0),
            ("q0", 0.0 <= self.q0 <= 1.0),
            ("acceptance_threshold", 0.0 <= self.acceptance_threshold <= 1.0),
            ("structural_weight", 0.0 <= self.structural_weight <= 1.0),
            ("anomaly_rejections", self.anomaly_rejections >= 1),
            ("anomaly_quality_drop", 0.0 <= self.anomaly_quality_drop <= 1.0),
            ("prune_threshold", 0.0 <= self.prune_threshold <= 1.0),
            ("min_observations", self.min_observations >= 0),
            ("fuse_threshold", 0.0 <= self.fuse_threshold <= 1.0),
            ("split_observations", self.split_observations >= 1),
            ("judge_mode", self.judge_mode in ("per_task", "timer")),
            ("judge_interval", self.judge_interval > 0),
            ("jitter_ms", self.jitter_ms >= 0),
        ]
        bad = [name for name, ok in checks if not ok]
        if bad:
            raise ConfigError(f"RunConfig fields out of range: {', '.join(bad)}")

    @property
    def lm_budget(self) -> int:
        return int(self.token_budget * self.lm_fraction)

    def replace(self, **changes: Any) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")
