"""The drafting/verification loop with pluggable stopping policies.

One controller owns the policy state (bandits, adaptive thresholds) for a
run and is strictly sequential.  Four modes:

* ``static``: always draft ``gamma_max`` tokens (the fixed-length baseline).
* ``single-arm``: one stopping rule applied at every step.
* ``bandit-seq``: a bandit picks one rule per drafting session.
* ``bandit-token``: an independent bandit per draft position picks the rule
  applied at that position; rewards are binary per-token acceptance.

Verification is greedy prefix matching, so for any stopping policy the
generated text equals the target model's own greedy continuation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .arms import AdaEDLState, ArmConfig, ArmKind, adaedl_update, decide, default_pool
from .bandits import BanditSnapshot, make_bandit
from .dists import DraftStep, TokenId
from .metrics import RewardConfig, SessionStats, reward
from .models import ModelPair

MODES = ("static", "single-arm", "bandit-seq", "bandit-token")

DEFAULT_STATIC_GAMMA = 6
DEFAULT_DYNAMIC_GAMMA = 128


@dataclass(frozen=True)
class ControllerConfig:
    name: str
    mode: str
    gamma_max: int | None = None  # default: 6 for static, 128 otherwise
    bandit: str | None = None  # required for bandit modes
    arms: tuple[ArmConfig, ...] | None = None  # default: the standard five
    reward: RewardConfig = field(default_factory=RewardConfig)
    reset_per_prompt: bool = False
    adaedl_init: AdaEDLState = field(default_factory=AdaEDLState)
    bandit_params: dict | None = None

    def resolved_gamma(self) -> int:
        if self.gamma_max is not None:
            return self.gamma_max
        return DEFAULT_STATIC_GAMMA if self.mode == "static" else DEFAULT_DYNAMIC_GAMMA

    def resolved_arms(self) -> tuple[ArmConfig, ...]:
        if self.arms is not None:
            return tuple(self.arms)
        return tuple(default_pool())

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; known: {MODES}")
        if self.resolved_gamma() < 1:
            raise ValueError("gamma_max must be >= 1")
        if self.mode == "single-arm" and len(self.resolved_arms()) != 1:
            raise ValueError("single-arm mode takes exactly one arm")
        if self.mode.startswith("bandit"):
            if self.bandit is None:
                raise ValueError(f"{self.mode} mode needs a bandit kind")
            if not self.resolved_arms():
                raise ValueError("bandit modes need a nonempty arm pool")


@dataclass(frozen=True)
class DraftSession:
    """One drafting episode: the drafted steps and why drafting stopped."""

    context_len: int
    steps: tuple[DraftStep, ...]
    stop_cause: str  # "arm-stop" | "max-length" | "eos"
    arm: int | None = None  # sequence-level chosen arm
    position_arms: tuple[int, ...] | None = None  # token-level, one per step


@dataclass(frozen=True)
class VerificationResult:
    """Accepted prefix length, per-position flags, and the bonus token.

    ``bonus_token`` is None when the recorded target path is exhausted or
    the accepted prefix exactly fills the caller's output budget."""

    accepted: int
    accept_flags: tuple[bool, ...]
    bonus_token: TokenId | None


@dataclass(frozen=True)
class ArmValueRecord:
    """Bandit snapshot taken right after one update."""

    session: int
    position: int | None  # None in sequence-level mode
    snapshot: BanditSnapshot


@dataclass(frozen=True)
class GenerationResult:
    tokens: tuple[TokenId, ...]  # newly generated tokens (prompt excluded)
    stats: tuple[SessionStats, ...]
    sessions: tuple[tuple[DraftSession, VerificationResult], ...]


class Controller:
    def __init__(self, config: ControllerConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.gamma = config.resolved_gamma()
        self.pool = config.resolved_arms()
        self.arm_log: list[ArmValueRecord] = []
        self.session_count = 0
        self._reset_policy()

    def _reset_policy(self) -> None:
        cfg = self.config
        params = dict(cfg.bandit_params or {})
        self.bandit = None
        self.position_bandits = None
        if cfg.mode == "bandit-seq":
            self.bandit = make_bandit(cfg.bandit, len(self.pool), **params)
        elif cfg.mode == "bandit-token":
            self.position_bandits = [
                make_bandit(cfg.bandit, len(self.pool), **params) for _ in range(self.gamma)
            ]
        self._has_adaedl = any(a.kind is ArmKind.ADAEDL for a in self.pool)
        self.adaedl = cfg.adaedl_init if self._has_adaedl and cfg.mode != "static" else None

    def start_prompt(self) -> None:
        if self.config.reset_per_prompt:
            self._reset_policy()

    def choose_session_arm(self) -> int:
        if self.bandit is None:
            raise ValueError("session-level arm choice needs bandit-seq mode")
        return self.bandit.select(self.rng)

    def run_session(
        self, models: ModelPair, context: Sequence[TokenId], needed: int | None = None
    ) -> tuple[DraftSession, VerificationResult]:
        """Draft, stop, verify, reward.  ``needed`` caps the tokens this
        session may add to the output so a run can hit a budget exactly."""
        if not context:
            raise ValueError("empty context")
        mode = self.config.mode
        limit = self.gamma
        if needed is not None:
            limit = min(limit, needed)
        path_left = models.remaining(context)
        if path_left is not None:
            if path_left < 1:
                raise ValueError("target path exhausted before the session started")
            limit = min(limit, path_left)

        session_arm = self.choose_session_arm() if mode == "bandit-seq" else None
        steps: list[DraftStep] = []
        position_arms: list[int] = []
        ctx = list(context)
        prev: DraftStep | None = None
        stop_cause = "max-length"
        for i in range(1, limit + 1):
            step = DraftStep.from_dist(i, models.draft_next(ctx))
            steps.append(step)
            ctx.append(step.token)
            if mode == "static":
                stop = False
            elif mode == "single-arm":
                stop = decide(self.pool[0], step, prev, self.adaedl)
            elif mode == "bandit-seq":
                stop = decide(self.pool[session_arm], step, prev, self.adaedl)
            else:  # bandit-token
                arm = self.position_bandits[i - 1].select(self.rng)
                position_arms.append(arm)
                stop = decide(self.pool[arm], step, prev, self.adaedl)
            if models.eos_token_id is not None and step.token == models.eos_token_id:
                stop_cause = "eos"
                break
            if stop:
                stop_cause = "arm-stop"
                break
            prev = step

        # greedy prefix matching: accept while the target's next greedy token
        # equals the drafted one
        accepted = 0
        base = list(context)
        for step in steps:
            tgt = models.target_greedy(base)
            if tgt != step.token:
                break
            accepted += 1
            base.append(tgt)
        flags = (True,) * accepted + (False,) * (len(steps) - accepted)

        exhausted = path_left is not None and accepted >= path_left
        budget_filled = needed is not None and accepted >= needed
        bonus = None if exhausted or budget_filled else models.target_greedy(base)

        self.session_count += 1
        self._apply_rewards(session_arm, position_arms, accepted, len(steps), flags)

        session = DraftSession(
            context_len=len(context),
            steps=tuple(steps),
            stop_cause=stop_cause,
            arm=session_arm,
            position_arms=tuple(position_arms) if mode == "bandit-token" else None,
        )
        return session, VerificationResult(accepted=accepted, accept_flags=flags, bonus_token=bonus)

    def _apply_rewards(self, session_arm, position_arms, accepted, drafted, flags) -> None:
        cfg = self.config
        if cfg.mode == "bandit-seq":
            r = reward(cfg.reward, accepted, drafted, self.gamma)
            self.bandit.update(session_arm, r)
            self.arm_log.append(
                ArmValueRecord(self.session_count, None, self.bandit.snapshot())
            )
        elif cfg.mode == "bandit-token":
            for pos, arm in enumerate(position_arms):
                bandit = self.position_bandits[pos]
                bandit.update(arm, 1.0 if flags[pos] else 0.0)
                self.arm_log.append(
                    ArmValueRecord(self.session_count, pos + 1, bandit.snapshot())
                )
        if self.adaedl is not None and drafted >= 1:
            self.adaedl = adaedl_update(self.adaedl, accepted, drafted)

    def generate(
        self,
        models: ModelPair,
        prompt: Sequence[TokenId],
        max_new_tokens: int,
        tag: str = "",
    ) -> GenerationResult:
        """Repeat sessions until exactly ``max_new_tokens`` tokens are out,
        the draft path ends, or the target emits EOS."""
        if not prompt:
            raise ValueError("empty context")
        if max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        self.start_prompt()
        committed = list(prompt)
        out: list[TokenId] = []
        stats: list[SessionStats] = []
        sessions: list[tuple[DraftSession, VerificationResult]] = []
        done = False
        while not done and len(out) < max_new_tokens:
            left = models.remaining(committed)
            if left is not None and left < 1:
                break
            session, ver = self.run_session(models, committed, max_new_tokens - len(out))
            appended = [s.token for s in session.steps[: ver.accepted]]
            if ver.bonus_token is not None:
                appended.append(ver.bonus_token)
            emitted = 0
            for tok in appended:
                committed.append(tok)
                out.append(tok)
                emitted += 1
                if models.eos_token_id is not None and tok == models.eos_token_id:
                    done = True
                    break
            sessions.append((session, ver))
            stats.append(
                SessionStats(
                    tag=tag,
                    drafted=len(session.steps),
                    accepted=ver.accepted,
                    emitted=emitted,
                    sqrt_entropies=tuple(s.sqrt_entropy for s in session.steps),
                    accept_flags=ver.accept_flags,
                )
            )
        return GenerationResult(tokens=tuple(out), stats=tuple(stats), sessions=tuple(sessions))
