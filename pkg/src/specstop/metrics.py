"""Session rewards, acceptance statistics, cost model, and entropy profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MismatchedOutputLength(ValueError):
    """Speedup comparison between runs with different output token counts."""


@dataclass(frozen=True)
class RewardConfig:
    """Sequence-level reward: normalized acceptance length, optionally blended
    with acceptance rate (equal weighting by default)."""

    kind: str = "blend"  # "simple" | "blend"
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in ("simple", "blend"):
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def reward(config: RewardConfig, accepted: int, drafted: int, gamma_max: int) -> float:
    """simple: |Y|/gamma.  blend: alpha*|Y|/gamma + (1-alpha)*|Y|/|X|."""
    if drafted < 1 or gamma_max < 1 or not 0 <= accepted <= drafted:
        raise ValueError(
            f"invalid counts: accepted={accepted}, drafted={drafted}, gamma_max={gamma_max}"
        )
    length_term = accepted / gamma_max
    if config.kind == "simple":
        return length_term
    return config.alpha * length_term + (1.0 - config.alpha) * (accepted / drafted)


@dataclass(frozen=True)
class CostModel:
    """Abstract per-forward costs: one unit per draft step, one target pass
    verifies a whole drafted block (the bonus token rides along for free)."""

    c_draft: float = 1.0
    c_target: float = 8.0

    def __post_init__(self):
        if not self.c_target > self.c_draft > 0.0:
            raise ValueError("need c_target > c_draft > 0")

    def session_cost(self, drafted: int) -> float:
        return drafted * self.c_draft + self.c_target


@dataclass(frozen=True)
class SessionStats:
    """Flat per-session record consumed by the metric functions."""

    tag: str
    drafted: int
    accepted: int
    emitted: int  # tokens appended to the output: |Y| plus the bonus when present
    sqrt_entropies: tuple[float, ...]
    accept_flags: tuple[bool, ...]


def total_emitted(sessions) -> int:
    return sum(s.emitted for s in sessions)


def accept_rate(sessions) -> float:
    drafted = sum(s.drafted for s in sessions)
    return sum(s.accepted for s in sessions) / drafted if drafted else 0.0


def mean_accepted(sessions) -> float:
    n = len(sessions)
    return sum(s.accepted for s in sessions) / n if n else 0.0


def run_cost(sessions, cost: CostModel) -> float:
    return sum(cost.session_cost(s.drafted) for s in sessions)


def speedup(method_sessions, baseline_sessions, cost: CostModel) -> float:
    """Baseline cost over method cost for the same delivered output."""
    method_out = total_emitted(method_sessions)
    base_out = total_emitted(baseline_sessions)
    if method_out != base_out:
        raise MismatchedOutputLength(
            f"method emitted {method_out} tokens, baseline {base_out}"
        )
    return run_cost(baseline_sessions, cost) / run_cost(method_sessions, cost)


@dataclass(frozen=True)
class RunMetrics:
    m: float  # mean accepted length per session
    accept_rate: float
    speedup: float
    sessions: int
    tokens: int


def summarize(method_sessions, baseline_sessions, cost: CostModel) -> RunMetrics:
    method_sessions = list(method_sessions)
    return RunMetrics(
        m=mean_accepted(method_sessions),
        accept_rate=accept_rate(method_sessions),
        speedup=speedup(method_sessions, baseline_sessions, cost),
        sessions=len(method_sessions),
        tokens=total_emitted(method_sessions),
    )


@dataclass(frozen=True)
class PositionStat:
    position: int  # 1-based within the session
    count: int
    mean: float
    std: float


def entropy_profile(sessions) -> dict[str, list[PositionStat]]:
    """Per-position mean/std of sqrt-entropy at accepted positions, by tag.

    Only accepted positions contribute; acceptance is a prefix, so positions
    are contiguous from 1.  Tags with no accepted tokens yield empty lists.
    """
    by_tag: dict[str, dict[int, list[float]]] = {}
    for s in sessions:
        bucket = by_tag.setdefault(s.tag, {})
        for i, (flag, sqrt_h) in enumerate(zip(s.accept_flags, s.sqrt_entropies)):
            if not flag:
                break
            bucket.setdefault(i + 1, []).append(sqrt_h)
    profile: dict[str, list[PositionStat]] = {}
    for tag in sorted(by_tag):
        rows = []
        for pos in sorted(by_tag[tag]):
            vals = np.asarray(by_tag[tag][pos])
            rows.append(
                PositionStat(
                    position=pos,
                    count=len(vals),
                    mean=float(np.mean(vals)),
                    std=float(np.std(vals)),
                )
            )
        profile[tag] = rows
    return profile
