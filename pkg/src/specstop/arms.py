"""Training-free draft-stopping rules and the adaptive-threshold state.

Each rule maps the current (and for one rule, previous) draft step to a
binary stop/continue decision.  ``decide`` returns True to stop drafting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .dists import DraftStep


class ArmKind(str, Enum):
    MAX_CONFIDENCE = "max-confidence"
    SVIP = "svip"
    ADAEDL = "adaedl"
    SVIP_DIFFERENCE = "svip-difference"
    LOGIT_MARGIN = "logit-margin"


# Fixed defaults, not tuned per dataset.  AdaEDL has no static threshold.
DEFAULT_THRESHOLDS = {
    ArmKind.MAX_CONFIDENCE: 0.8,
    ArmKind.SVIP: 0.6,
    ArmKind.SVIP_DIFFERENCE: 0.2,
    ArmKind.LOGIT_MARGIN: 0.2,
}


@dataclass(frozen=True)
class ArmConfig:
    kind: ArmKind
    threshold: float | None = None  # None picks the kind's default; unused for AdaEDL

    @property
    def h(self) -> float:
        if self.threshold is not None:
            return self.threshold
        return DEFAULT_THRESHOLDS[self.kind]

    def label(self) -> str:
        if self.kind is ArmKind.ADAEDL:
            return self.kind.value
        return f"{self.kind.value}@{self.h:g}"


@dataclass(frozen=True)
class AdaEDLState:
    """Moving threshold plus the acceptance EMA it is reported alongside.

    The update recursion adjusts lambda by a fixed epsilon step toward the
    target acceptance rate alpha; accept_rate is tracked but not consumed by
    the lambda update itself.
    """

    lambda_t: float = 0.5
    accept_rate: float = 0.0
    alpha: float = 0.85
    beta1: float = 0.9
    beta2: float = 0.9
    gamma_scale: float = 0.2
    epsilon: float = 0.01


def decide(
    arm: ArmConfig,
    current: DraftStep,
    previous: DraftStep | None = None,
    adaedl: AdaEDLState | None = None,
) -> bool:
    """True iff the arm's stopping condition holds at the current step.

    Comparisons are strict, exactly as the rules are stated.  The
    consecutive-difference rule returns continue at position 1.
    """
    kind = arm.kind
    if kind is ArmKind.MAX_CONFIDENCE:
        _, p1 = current.dist.top1()
        return p1 < arm.h
    if kind is ArmKind.SVIP:
        return current.sqrt_entropy > arm.h
    if kind is ArmKind.ADAEDL:
        if adaedl is None:
            raise ValueError("AdaEDL decision needs an AdaEDLState")
        return 1.0 - math.sqrt(adaedl.gamma_scale * current.entropy) < adaedl.lambda_t
    if kind is ArmKind.SVIP_DIFFERENCE:
        if previous is None:
            return False
        return current.sqrt_entropy - previous.sqrt_entropy > arm.h
    if kind is ArmKind.LOGIT_MARGIN:
        _, p1, _, p2 = current.dist.top2()
        return p1 - p2 < arm.h
    raise ValueError(f"unknown arm kind {kind!r}")


def adaedl_update(state: AdaEDLState, n_acc: int, n_drafted: int) -> AdaEDLState:
    """Per-draft update of the moving threshold, applied after a full draft."""
    if n_drafted < 1 or not 0 <= n_acc <= n_drafted:
        raise ValueError(f"invalid counts: n_acc={n_acc}, n_drafted={n_drafted}")
    r_t = n_acc / n_drafted
    accept_rate = state.beta1 * state.accept_rate + (1.0 - state.beta1) * r_t
    sign = 0.0 if r_t == state.alpha else math.copysign(1.0, state.alpha - r_t)
    lam = state.beta2 * state.lambda_t + (1.0 - state.beta2) * (
        state.lambda_t + state.epsilon * sign
    )
    return replace(state, lambda_t=lam, accept_rate=accept_rate)


def default_pool() -> list[ArmConfig]:
    """The five standard rules at their fixed default thresholds."""
    return [
        ArmConfig(ArmKind.MAX_CONFIDENCE),
        ArmConfig(ArmKind.SVIP),
        ArmConfig(ArmKind.ADAEDL),
        ArmConfig(ArmKind.SVIP_DIFFERENCE),
        ArmConfig(ArmKind.LOGIT_MARGIN),
    ]
